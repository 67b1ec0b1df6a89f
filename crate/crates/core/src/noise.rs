//! Synthetic sensor corruption: structured depth holes, numerical depth
//! error, and occluding clutter in front of instances. Also the
//! re-projection error statistics used to characterize a noisy corpus.
//!
//! Every injector draws one value per pixel in row-major order from its own
//! substream of `spec.seed`, so outputs depend only on the seed and raster
//! shape.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{BBox, Raster};
use crate::render::{ChannelStack, NO_FACE};
use crate::rng::{self, label};

/// Smallest depth a corrupted pixel may take.
pub const MIN_DEPTH: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NoiseError {
    #[error("mask selects no pixels")]
    EmptyMask,
    #[error("rasters have mismatched shapes")]
    ShapeMismatch,
    #[error("invalid noise spec: {0}")]
    InvalidSpec(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Per-pixel probability of seeding a hole.
    pub hole_rate: f64,
    /// Seeds are dilated to discs of this radius (pixels); 0 gives i.i.d. holes.
    pub hole_blob_radius: usize,
    /// Standard deviation of additive depth noise (meters).
    pub gaussian_sigma: f64,
    /// Depth quantization step (meters); 0 disables.
    pub quantization_step: f64,
    /// Relative depth scale error: observed ≈ (1 + scale_error)·d + offset.
    pub depth_scale_error: f64,
    /// Constant depth offset (meters).
    pub depth_offset: f64,
    /// Number of occluders painted in front of instances.
    pub clutter_count: usize,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::desk_default()
    }
}

impl NoiseSpec {
    pub const fn zero() -> Self {
        NoiseSpec {
            hole_rate: 0.0,
            hole_blob_radius: 0,
            gaussian_sigma: 0.0,
            quantization_step: 0.0,
            depth_scale_error: 0.0,
            depth_offset: 0.0,
            clutter_count: 0,
            seed: 0,
        }
    }

    /// Desk-scale defaults: 20% holes, 5 mm noise, 1 mm steps, a 1% + 1 cm
    /// affine bias and two occluders per scene.
    pub const fn desk_default() -> Self {
        NoiseSpec {
            hole_rate: 0.2,
            hole_blob_radius: 0,
            gaussian_sigma: 0.005,
            quantization_step: 0.001,
            depth_scale_error: 0.01,
            depth_offset: 0.01,
            clutter_count: 2,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), NoiseError> {
        if !(0.0..=1.0).contains(&self.hole_rate) {
            return Err(NoiseError::InvalidSpec("hole_rate must lie in [0, 1]"));
        }
        if !(self.gaussian_sigma >= 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(NoiseError::InvalidSpec("gaussian_sigma must be finite and >= 0"));
        }
        if !(self.quantization_step >= 0.0 && self.quantization_step.is_finite()) {
            return Err(NoiseError::InvalidSpec("quantization_step must be finite and >= 0"));
        }
        if !(self.depth_scale_error > -1.0 && self.depth_scale_error.is_finite()) {
            return Err(NoiseError::InvalidSpec("depth_scale_error must be finite and > -1"));
        }
        if !self.depth_offset.is_finite() {
            return Err(NoiseError::InvalidSpec("depth_offset must be finite"));
        }
        Ok(())
    }
}

/// Invalidates discs around randomly seeded pixels. Only `valid` and `depth`
/// change.
pub fn inject_holes(stack: &ChannelStack, spec: &NoiseSpec) -> ChannelStack {
    let mut out = stack.clone();
    if spec.hole_rate <= 0.0 {
        return out;
    }
    let (h, w) = (stack.height(), stack.width());
    let mut rng = rng::substream(spec.seed, &[label::HOLES]);
    let seeds = Raster::from_fn(h, w, |_, _| rng::uniform(&mut rng) < spec.hole_rate);
    let r = spec.hole_blob_radius as isize;
    let r2 = r * r;
    for (i, j, &s) in seeds.indexed() {
        if !s {
            continue;
        }
        for di in -r..=r {
            for dj in -r..=r {
                if di * di + dj * dj > r2 {
                    continue;
                }
                let (ii, jj) = (i as isize + di, j as isize + dj);
                if ii < 0 || jj < 0 || ii >= h as isize || jj >= w as isize {
                    continue;
                }
                let p = (ii as usize, jj as usize);
                out.valid[p] = false;
                out.depth[p] = 0.0;
            }
        }
    }
    out
}

/// `depth ← round((1 + scale)·d + offset + N(0, σ), step)` on valid pixels,
/// clamped to [`MIN_DEPTH`]. `xy` and `nrm` are left as they were.
pub fn inject_depth_error(stack: &ChannelStack, spec: &NoiseSpec) -> ChannelStack {
    let mut out = stack.clone();
    let clean = spec.gaussian_sigma == 0.0
        && spec.quantization_step == 0.0
        && spec.depth_scale_error == 0.0
        && spec.depth_offset == 0.0;
    if clean {
        return out;
    }
    let mut rng = rng::substream(spec.seed, &[label::DEPTH]);
    for (d, &v) in out.depth.as_mut_slice().iter_mut().zip(stack.valid.as_slice()) {
        let n = rng::normal(&mut rng);
        if !v {
            continue;
        }
        let mut z = *d * (1.0 + spec.depth_scale_error) + spec.depth_offset + spec.gaussian_sigma * n;
        if spec.quantization_step > 0.0 {
            z = quantize(z, spec.quantization_step);
        }
        *d = z.max(MIN_DEPTH);
    }
    out
}

/// Rounds to the nearest multiple of `step`.
pub fn quantize(z: f64, step: f64) -> f64 {
    (z / step).round() * step
}

/// Paints `spec.clutter_count` fronto-parallel occluders, each covering a
/// side band or a corner of one instance's bounding box (25-50% of its extent)
/// a few centimeters in front of it. Instances are visited in random order
/// without repetition. Painted pixels become valid background (`instance_id`
/// 0, no `abc`).
pub fn inject_clutter(stack: &ChannelStack, spec: &NoiseSpec) -> ChannelStack {
    let mut out = stack.clone();
    if spec.clutter_count == 0 {
        return out;
    }
    let mut rng = rng::substream(spec.seed, &[label::CLUTTER]);
    let mut ids = stack.instance_ids();
    // Fisher-Yates on the sorted ids.
    for k in (1..ids.len()).rev() {
        ids.swap(k, rng::index(&mut rng, k + 1));
    }
    for &id in ids.iter().take(spec.clutter_count) {
        let footprint = stack.instance_id.map(|&v| v == id);
        let Some(bb) = BBox::tight(&footprint, 0, 0) else { continue };
        let rect = occluder_rect(&bb, &mut rng, stack.height(), stack.width());
        let mut nearest = f64::INFINITY;
        for i in rect.row0..rect.row1 {
            for j in rect.col0..rect.col1 {
                if footprint[(i, j)] && stack.valid[(i, j)] {
                    nearest = nearest.min(stack.depth[(i, j)]);
                }
            }
        }
        if !nearest.is_finite() {
            continue;
        }
        let z = (nearest - rng::uniform_range(&mut rng, 0.03, 0.12)).max(0.05);
        let grey = rng::uniform_range(&mut rng, 0.4, 0.8);
        for i in rect.row0..rect.row1 {
            for j in rect.col0..rect.col1 {
                if out.valid[(i, j)] && out.depth[(i, j)] <= z {
                    continue;
                }
                let (u, v) = out.uv(i, j);
                let p = out.camera.backproject_unchecked(u, v, z);
                out.depth[(i, j)] = z;
                out.valid[(i, j)] = true;
                out.xy[(i, j)] = [p.x, p.y];
                out.nrm[(i, j)] = [0.0, 0.0, -1.0];
                out.rgb[(i, j)] = [grey; 3];
                out.instance_id[(i, j)] = 0;
                out.abc[(i, j)] = None;
                out.face[(i, j)] = NO_FACE;
            }
        }
    }
    out
}

fn occluder_rect(bb: &BBox, rng: &mut rng::Stream, h: usize, w: usize) -> BBox {
    let frac =
        |rng: &mut rng::Stream, n: usize| ((rng::uniform_range(rng, 0.25, 0.5) * n as f64).ceil() as usize).max(1);
    let pad = 2;
    let (r0, c0) = (bb.row0.saturating_sub(pad), bb.col0.saturating_sub(pad));
    let (r1, c1) = ((bb.row1 + pad).min(h), (bb.col1 + pad).min(w));
    let style = rng::index(rng, 8);
    let fr = frac(rng, bb.height());
    let fc = frac(rng, bb.width());
    let top = BBox::new(r0, c0, bb.row0 + fr, c1);
    let bottom = BBox::new(bb.row1 - fr, c0, r1, c1);
    let left = BBox::new(r0, c0, r1, bb.col0 + fc);
    let right = BBox::new(r0, bb.col1 - fc, r1, c1);
    match style {
        0 => top,
        1 => bottom,
        2 => left,
        3 => right,
        4 => BBox::new(r0, c0, bb.row0 + fr, bb.col0 + fc),
        5 => BBox::new(r0, bb.col1 - fc, bb.row0 + fr, c1),
        6 => BBox::new(bb.row1 - fr, c0, r1, bb.col0 + fc),
        _ => BBox::new(bb.row1 - fr, bb.col1 - fc, r1, c1),
    }
}

/// Clutter, then holes, then depth error, with independent substreams.
pub fn corrupt(stack: &ChannelStack, spec: &NoiseSpec) -> ChannelStack {
    let cluttered = inject_clutter(stack, spec);
    let holed = inject_holes(&cluttered, spec);
    inject_depth_error(&holed, spec)
}

/// Fixed-width histogram; values beyond the last edge land in the last bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(bin_width: f64, bins: usize) -> Self {
        Histogram { bin_width, counts: alloc::vec![0; bins.max(1)] }
    }

    pub fn add(&mut self, x: f64) {
        let last = self.counts.len() - 1;
        let k = if x <= 0.0 { 0 } else { ((x / self.bin_width).floor() as usize).min(last) };
        self.counts[k] += 1;
    }

    /// `(bin_low, bin_high, count)` rows.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, u64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .map(move |(k, &c)| (k as f64 * self.bin_width, (k + 1) as f64 * self.bin_width, c))
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Summary of `|observed − d′|` over valid mask pixels (meters). With no
/// valid pixels the location statistics are reported as 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub pixels: usize,
    pub holes: usize,
    pub hole_fraction: f64,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    /// Mean and standard deviation of the signed error `observed − d′`.
    pub signed_mean: f64,
    pub signed_std: f64,
    pub histogram: Histogram,
}

/// Accumulates signed re-projection errors across patches.
#[derive(Debug, Clone, Default)]
pub struct ErrorPool {
    signed: Vec<f64>,
    holes: usize,
}

impl ErrorPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        observed: &Raster<f64>,
        valid: &Raster<bool>,
        dprime: &Raster<f64>,
        mask: &Raster<bool>,
    ) -> Result<(), NoiseError> {
        if !(observed.same_shape(valid) && observed.same_shape(dprime) && observed.same_shape(mask)) {
            return Err(NoiseError::ShapeMismatch);
        }
        if !mask.as_slice().iter().any(|&m| m) {
            return Err(NoiseError::EmptyMask);
        }
        for k in 0..mask.len() {
            if !mask.as_slice()[k] {
                continue;
            }
            if valid.as_slice()[k] {
                self.signed.push(observed.as_slice()[k] - dprime.as_slice()[k]);
            } else {
                self.holes += 1;
            }
        }
        Ok(())
    }

    pub fn stats(&self, bin_width: f64, bins: usize) -> ErrorStats {
        let n = self.signed.len();
        let total = n + self.holes;
        let mut hist = Histogram::new(bin_width, bins);
        let mut abs: Vec<f64> = self.signed.iter().map(|e| e.abs()).collect();
        for &a in &abs {
            hist.add(a);
        }
        abs.sort_by(f64::total_cmp);
        let (mean, median, p95, smean, sstd) = if n == 0 {
            (0.0, 0.0, 0.0, 0.0, 0.0)
        } else {
            let mean = abs.iter().sum::<f64>() / n as f64;
            let median = if n % 2 == 1 { abs[n / 2] } else { 0.5 * (abs[n / 2 - 1] + abs[n / 2]) };
            let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
            let smean = self.signed.iter().sum::<f64>() / n as f64;
            let var = self.signed.iter().map(|e| (e - smean) * (e - smean)).sum::<f64>() / n as f64;
            (mean, median, abs[rank - 1], smean, var.sqrt())
        };
        ErrorStats {
            pixels: n,
            holes: self.holes,
            hole_fraction: if total == 0 { 0.0 } else { self.holes as f64 / total as f64 },
            mean,
            median,
            p95,
            signed_mean: smean,
            signed_std: sstd,
            histogram: hist,
        }
    }
}

/// Default histogram: 1 mm bins up to 5 cm.
pub const HIST_BIN_WIDTH: f64 = 0.001;
pub const HIST_BINS: usize = 50;

pub fn reprojection_error_stats(
    observed: &Raster<f64>,
    valid: &Raster<bool>,
    dprime: &Raster<f64>,
    mask: &Raster<bool>,
) -> Result<ErrorStats, NoiseError> {
    let mut pool = ErrorPool::new();
    pool.add(observed, valid, dprime, mask)?;
    Ok(pool.stats(HIST_BIN_WIDTH, HIST_BINS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraIntrinsics;

    fn flat(h: usize, w: usize, d: f64) -> ChannelStack {
        let cam = CameraIntrinsics::new(100.0, 100.0, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap();
        let mut s = ChannelStack::empty(cam, (0, 0), h, w);
        s.depth = Raster::filled(h, w, d);
        s.valid = Raster::filled(h, w, true);
        for i in h / 4..3 * h / 4 {
            for j in w / 4..3 * w / 4 {
                s.instance_id[(i, j)] = 1;
                s.abc[(i, j)] = Some([0.0; 3]);
            }
        }
        s.refresh_xy();
        s
    }

    #[test]
    fn zero_noise_is_identity() {
        let s = flat(20, 30, 1.234);
        let z = NoiseSpec::zero().with_seed(9);
        assert_eq!(inject_holes(&s, &z), s);
        assert_eq!(inject_depth_error(&s, &z), s);
        assert_eq!(inject_clutter(&s, &z), s);
        assert_eq!(corrupt(&s, &z), s);
    }

    #[test]
    fn saturated_holes() {
        let s = flat(10, 10, 1.0);
        let spec = NoiseSpec { hole_rate: 1.0, ..NoiseSpec::zero() };
        let o = inject_holes(&s, &spec);
        assert!(o.valid.as_slice().iter().all(|&v| !v));
        assert!(o.depth.as_slice().iter().all(|&d| d == 0.0));
        assert_eq!(o.xy, s.xy);
    }

    #[test]
    fn hole_blobs_are_discs() {
        let s = flat(41, 41, 1.0);
        // Find a seed that places exactly one hole seed, then check its disc.
        let spec = NoiseSpec { hole_rate: 1.0 / (41.0 * 41.0), hole_blob_radius: 3, ..NoiseSpec::zero() };
        for seed in 0..200 {
            let o = inject_holes(&s, &spec.with_seed(seed));
            let holes = o.valid.as_slice().iter().filter(|&&v| !v).count();
            if holes == 29 {
                // A radius-3 disc has 29 lattice points.
                return;
            }
        }
        panic!("no isolated interior seed found");
    }

    #[test]
    fn quantization_rounds() {
        let s = flat(2, 2, 1.234);
        let spec = NoiseSpec { quantization_step: 0.01, ..NoiseSpec::zero() };
        let o = inject_depth_error(&s, &spec);
        assert!((o.depth[(0, 0)] - 1.23).abs() < 1e-12);
        assert_eq!(o.valid, s.valid);
        assert_eq!(o.xy, s.xy);
    }

    #[test]
    fn affine_bias_applies() {
        let s = flat(2, 2, 1.0);
        let spec = NoiseSpec { depth_scale_error: 0.02, depth_offset: 0.01, ..NoiseSpec::zero() };
        let o = inject_depth_error(&s, &spec);
        assert!((o.depth[(1, 1)] - 1.03).abs() < 1e-12);
    }

    #[test]
    fn depth_error_skips_holes() {
        let s = inject_holes(&flat(16, 16, 1.0), &NoiseSpec { hole_rate: 0.3, ..NoiseSpec::zero() }.with_seed(4));
        let o = inject_depth_error(&s, &NoiseSpec { gaussian_sigma: 0.01, ..NoiseSpec::zero() }.with_seed(4));
        assert_eq!(o.valid, s.valid);
        for k in 0..s.depth.len() {
            if !s.valid.as_slice()[k] {
                assert_eq!(o.depth.as_slice()[k], 0.0);
            }
        }
    }

    #[test]
    fn clutter_occludes_in_front() {
        let s = flat(40, 40, 1.0);
        let spec = NoiseSpec { clutter_count: 1, ..NoiseSpec::zero() }.with_seed(3);
        let o = inject_clutter(&s, &spec);
        let lost =
            s.instance_id.as_slice().iter().zip(o.instance_id.as_slice()).filter(|(a, b)| **a == 1 && **b == 0).count();
        assert!(lost > 0);
        for k in 0..o.depth.len() {
            assert!(o.depth.as_slice()[k] <= s.depth.as_slice()[k]);
            if o.instance_id.as_slice()[k] == 0 {
                assert!(o.abc.as_slice()[k].is_none());
            }
        }
        // Every instance keeps at least half of its footprint.
        let before = s.instance_id.as_slice().iter().filter(|&&v| v == 1).count();
        assert!(before - lost >= before / 2 - 40);
    }

    #[test]
    fn stats_examples() {
        let d = Raster::filled(4, 4, 1.0);
        let v = Raster::filled(4, 4, true);
        let m = Raster::from_fn(4, 4, |i, _| i < 2);
        let st = reprojection_error_stats(&d, &v, &d, &m).unwrap();
        assert_eq!((st.mean, st.median, st.p95, st.hole_fraction), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(st.pixels, 8);

        let shifted = d.map(|x| x + 0.0035);
        let st = reprojection_error_stats(&shifted, &v, &d, &m).unwrap();
        assert!((st.mean - 0.0035).abs() < 1e-12 && (st.median - 0.0035).abs() < 1e-12);
        assert_eq!(st.histogram.counts[3], 8);

        let mut holes = v.clone();
        holes[(0, 0)] = false;
        let st = reprojection_error_stats(&d, &holes, &d, &m).unwrap();
        assert_eq!(st.holes, 1);
        assert!((st.hole_fraction - 1.0 / 8.0).abs() < 1e-15);

        let none = Raster::filled(4, 4, false);
        assert_eq!(reprojection_error_stats(&d, &v, &d, &none), Err(NoiseError::EmptyMask));
    }

    #[test]
    fn spec_validation() {
        assert!(NoiseSpec { hole_rate: 1.5, ..NoiseSpec::zero() }.validate().is_err());
        assert!(NoiseSpec { gaussian_sigma: -1.0, ..NoiseSpec::zero() }.validate().is_err());
        assert!(NoiseSpec::desk_default().validate().is_ok());
    }
}
