//! Pose estimation from abc ↔ xyd correspondences and the three training
//! losses, evaluated as functionals.

use alloc::vec::Vec;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point3, Pose};
use crate::mesh::ModelMesh;
use crate::raster::Raster;
use crate::render::{ChannelStack, ReprojectedLabels};
use crate::rng::{self, label};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("need at least 3 correspondences, got {0}")]
    TooFewPoints(usize),
    #[error("model points are collinear or coincident")]
    DegenerateConfiguration,
    #[error("mask selects no pixels")]
    EmptyMask,
    #[error("rasters have mismatched shapes")]
    ShapeMismatch,
    #[error("weights must be finite, nonnegative, one per pair, and not all zero")]
    InvalidWeights,
    #[error("loss weights must be finite and nonnegative")]
    InvalidLossWeights,
}

/// Pairs of object-frame `abc` and camera-frame `xyd` points.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrespondenceSet {
    pub pairs: Vec<(Point3, Point3)>,
    pub weights: Option<Vec<f64>>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Pairs every valid instance pixel that carries an `abc` value with its
/// camera-frame point `(x, y, d)`. With `subsample > 0` at most that many
/// pairs are kept, chosen uniformly with a stream keyed by `seed`; the kept
/// pairs stay in row-major order.
pub fn build_correspondences(
    patch: &ChannelStack,
    subsample: usize,
    seed: u64,
) -> Result<CorrespondenceSet, EstimatorError> {
    build_correspondences_where(patch, |_, _| true, subsample, seed)
}

/// [`build_correspondences`] restricted to pixels accepted by `include`.
pub fn build_correspondences_where(
    patch: &ChannelStack,
    include: impl Fn(usize, usize) -> bool,
    subsample: usize,
    seed: u64,
) -> Result<CorrespondenceSet, EstimatorError> {
    let mut pairs: Vec<(Point3, Point3)> = Vec::new();
    for (i, j, abc) in patch.abc.indexed() {
        let Some(abc) = abc else { continue };
        if !patch.valid[(i, j)] || patch.instance_id[(i, j)] == 0 || !include(i, j) {
            continue;
        }
        let [x, y] = patch.xy[(i, j)];
        pairs.push((Point3::from(*abc), Point3::new(x, y, patch.depth[(i, j)])));
    }
    if pairs.len() < 3 {
        return Err(EstimatorError::TooFewPoints(pairs.len()));
    }
    if subsample > 0 && pairs.len() > subsample {
        let mut r = rng::substream(seed, &[label::SUBSAMPLE]);
        let mut idx: Vec<usize> = (0..pairs.len()).collect();
        for k in 0..subsample {
            let pick = k + rng::index(&mut r, idx.len() - k);
            idx.swap(k, pick);
        }
        idx.truncate(subsample);
        idx.sort_unstable();
        pairs = idx.into_iter().map(|k| pairs[k]).collect();
    }
    Ok(CorrespondenceSet { pairs, weights: None })
}

/// Weighted least-squares rigid fit `argmin Σ wᵢ‖R·abcᵢ + T − xydᵢ‖²`:
/// centroid subtraction, SVD of the cross-covariance, and a determinant
/// correction against reflections.
pub fn fit_pose(c: &CorrespondenceSet) -> Result<Pose, EstimatorError> {
    let n = c.pairs.len();
    if n < 3 {
        return Err(EstimatorError::TooFewPoints(n));
    }
    let weights: Vec<f64> = match &c.weights {
        Some(w) => {
            if w.len() != n || w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                return Err(EstimatorError::InvalidWeights);
            }
            w.clone()
        }
        None => alloc::vec![1.0; n],
    };
    let wsum: f64 = weights.iter().sum();
    if !(wsum > 0.0) {
        return Err(EstimatorError::InvalidWeights);
    }

    let mut ca = Vector3::zeros();
    let mut cx = Vector3::zeros();
    for ((a, x), &w) in c.pairs.iter().zip(&weights) {
        ca += a.coords * w;
        cx += x.coords * w;
    }
    ca /= wsum;
    cx /= wsum;

    let mut h = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    for ((a, x), &w) in c.pairs.iter().zip(&weights) {
        let da = a.coords - ca;
        h += (da * (x.coords - cx).transpose()) * w;
        scatter += (da * da.transpose()) * w;
    }

    // Rank < 2 in the model points leaves a rotation free.
    let s = scatter.symmetric_eigenvalues();
    let (mut ev, max) = ([s[0], s[1], s[2]], s.amax());
    ev.sort_by(f64::total_cmp);
    if !(max > 0.0) || ev[1] <= 1e-12 * max {
        return Err(EstimatorError::DegenerateConfiguration);
    }

    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(EstimatorError::DegenerateConfiguration),
    };
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let t = cx - r * ca;
    Pose::new(r, t).or_else(|_| Pose::from_nearest_rotation(r, t)).map_err(|_| EstimatorError::DegenerateConfiguration)
}

/// Weighted residual `Σ wᵢ‖R·abcᵢ + T − xydᵢ‖²`.
pub fn fit_residual(pose: &Pose, c: &CorrespondenceSet) -> f64 {
    c.pairs
        .iter()
        .enumerate()
        .map(|(k, (a, x))| {
            let w = c.weights.as_ref().map_or(1.0, |w| w[k]);
            w * (pose.apply(a) - x).norm_squared()
        })
        .sum()
}

/// Adds object-frame Gaussian noise of standard deviation `sigma` to every
/// defined `abc` value, standing in for an imperfect abc head.
pub fn corrupt_abc(patch: &ChannelStack, sigma: f64, seed: u64) -> ChannelStack {
    let mut out = patch.clone();
    if sigma <= 0.0 {
        return out;
    }
    let mut r = rng::substream(seed, &[label::ABC]);
    for v in out.abc.as_mut_slice().iter_mut().flatten() {
        for c in v.iter_mut() {
            *c += sigma * rng::normal(&mut r);
        }
    }
    out
}

/// RT regression loss: the mean vertex displacement, identical to ADD.
pub fn loss_rt(pred: &Pose, gt: &Pose, mesh: &ModelMesh) -> f64 {
    crate::metrics::add(pred, gt, mesh)
}

fn masked_mean<T>(
    a: &Raster<T>,
    b: &Raster<T>,
    mask: &Raster<bool>,
    term: impl Fn(&T, &T) -> f64,
) -> Result<f64, EstimatorError> {
    if !a.same_shape(b) || !a.same_shape(mask) {
        return Err(EstimatorError::ShapeMismatch);
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for ((x, y), &m) in a.as_slice().iter().zip(b.as_slice()).zip(mask.as_slice()) {
        if m {
            sum += term(x, y);
            n += 1;
        }
    }
    if n == 0 {
        return Err(EstimatorError::EmptyMask);
    }
    Ok(sum / n as f64)
}

fn l1<const N: usize>(a: &[f64; N], b: &[f64; N]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Mean over the mask of `|Δa| + |Δb| + |Δc|`.
pub fn loss_abc(pred: &Raster<[f64; 3]>, gt: &Raster<[f64; 3]>, mask: &Raster<bool>) -> Result<f64, EstimatorError> {
    masked_mean(pred, gt, mask, l1)
}

/// Depth, XY and normal rasters compared by the depth loss.
#[derive(Debug, Clone, Copy)]
pub struct DepthFields<'a> {
    pub depth: &'a Raster<f64>,
    pub xy: &'a Raster<[f64; 2]>,
    pub nrm: &'a Raster<[f64; 3]>,
}

impl<'a> DepthFields<'a> {
    pub fn of_stack(s: &'a ChannelStack) -> Self {
        DepthFields { depth: &s.depth, xy: &s.xy, nrm: &s.nrm }
    }

    pub fn of_labels(l: &'a ReprojectedLabels) -> Self {
        DepthFields { depth: &l.depth, xy: &l.xy, nrm: &l.nrm }
    }
}

/// Mean over the mask of `|d−d′| + |x−x′| + |y−y′| + |Δn_x| + |Δn_y| + |Δn_z|`.
pub fn loss_depth(pred: DepthFields, labels: DepthFields, mask: &Raster<bool>) -> Result<f64, EstimatorError> {
    let shapes_ok = pred.depth.same_shape(mask)
        && pred.xy.same_shape(mask)
        && pred.nrm.same_shape(mask)
        && labels.depth.same_shape(mask)
        && labels.xy.same_shape(mask)
        && labels.nrm.same_shape(mask);
    if !shapes_ok {
        return Err(EstimatorError::ShapeMismatch);
    }
    let d = masked_mean(pred.depth, labels.depth, mask, |a, b| (a - b).abs())?;
    let xy = masked_mean(pred.xy, labels.xy, mask, l1)?;
    let n = masked_mean(pred.nrm, labels.nrm, mask, l1)?;
    Ok(d + xy + n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda0: 1.0, lambda1: 1.0, lambda2: 1.0 }
    }
}

impl LossWeights {
    pub fn new(lambda0: f64, lambda1: f64, lambda2: f64) -> Result<Self, EstimatorError> {
        let w = LossWeights { lambda0, lambda1, lambda2 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        if [self.lambda0, self.lambda1, self.lambda2].iter().all(|&x| x >= 0.0 && x.is_finite()) {
            Ok(())
        } else {
            Err(EstimatorError::InvalidLossWeights)
        }
    }
}

/// `λ₀·L_rt + λ₁·L_abc + λ₂·L_depth`.
pub fn loss_total(lrt: f64, labc: f64, ldepth: f64, w: &LossWeights) -> f64 {
    w.lambda0 * lrt + w.lambda1 * labc + w.lambda2 * ldepth
}

/// Piecewise-constant `λ₀` over 1-based epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaSchedule {
    /// `(first epoch, λ₀)` in increasing epoch order.
    pub steps: &'static [(u32, f64)],
    pub last_epoch: u32,
}

impl LambdaSchedule {
    /// 1 for epochs 1-19, 5 for 20-29, 20 for 30-37, 50 for 38-40.
    pub const MAIN: LambdaSchedule =
        LambdaSchedule { steps: &[(1, 1.0), (20, 5.0), (30, 20.0), (38, 50.0)], last_epoch: 40 };
    /// 1 for epochs 1-15, 5 for 16-25, 10 for 26-35, 20 for 36-40.
    pub const SUPPLEMENTARY: LambdaSchedule =
        LambdaSchedule { steps: &[(1, 1.0), (16, 5.0), (26, 10.0), (36, 20.0)], last_epoch: 40 };

    pub fn lambda0(&self, epoch: u32) -> Option<f64> {
        if epoch > self.last_epoch {
            return None;
        }
        self.steps.iter().rev().find(|&&(start, _)| epoch >= start).map(|&(_, l)| l)
    }

    /// Weights at `epoch` with `λ₁ = λ₂ = 1`.
    pub fn weights(&self, epoch: u32) -> Option<LossWeights> {
        self.lambda0(epoch).map(|l| LossWeights { lambda0: l, ..LossWeights::default() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraIntrinsics;
    use nalgebra::{UnitQuaternion, Vector3};

    fn tetra() -> Vec<Point3> {
        alloc::vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.1, 0.0, 0.0),
            Point3::new(0.0, 0.1, 0.0),
            Point3::new(0.0, 0.0, 0.1),
            Point3::new(0.05, 0.07, -0.02),
        ]
    }

    fn set(pose: &Pose, pts: &[Point3]) -> CorrespondenceSet {
        CorrespondenceSet { pairs: pts.iter().map(|a| (*a, pose.apply(a))).collect(), weights: None }
    }

    #[test]
    fn identity_fit() {
        let p = fit_pose(&set(&Pose::identity(), &tetra())).unwrap();
        assert!((p.rotation() - Matrix3::identity()).norm() < 1e-12);
        assert!(p.translation().norm() < 1e-12);
    }

    #[test]
    fn known_pose_recovered() {
        let gt = Pose::from_quaternion(UnitQuaternion::from_euler_angles(0.3, -1.1, 2.0), Vector3::new(0.1, -0.2, 0.8));
        let p = fit_pose(&set(&gt, &tetra())).unwrap();
        assert!((p.rotation() - gt.rotation()).norm() < 1e-9);
        assert!((p.translation() - gt.translation()).norm() < 1e-9);
    }

    #[test]
    fn planar_points_fit() {
        let gt = Pose::from_quaternion(UnitQuaternion::from_euler_angles(2.5, 0.4, -0.7), Vector3::new(0.0, 0.0, 1.0));
        let pts = [Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)];
        let p = fit_pose(&set(&gt, &pts)).unwrap();
        assert!((p.rotation() - gt.rotation()).norm() < 1e-9);
    }

    #[test]
    fn degenerate_inputs() {
        let line: Vec<Point3> = (0..5).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        assert_eq!(fit_pose(&set(&Pose::identity(), &line)), Err(EstimatorError::DegenerateConfiguration));
        let same = [Point3::origin(); 4];
        assert_eq!(fit_pose(&set(&Pose::identity(), &same)), Err(EstimatorError::DegenerateConfiguration));
        assert_eq!(fit_pose(&set(&Pose::identity(), &tetra()[..2])), Err(EstimatorError::TooFewPoints(2)));
        let mut c = set(&Pose::identity(), &tetra());
        c.weights = Some(alloc::vec![1.0, -1.0, 1.0, 1.0, 1.0]);
        assert_eq!(fit_pose(&c), Err(EstimatorError::InvalidWeights));
    }

    #[test]
    fn zero_weight_ignores_outlier() {
        let gt = Pose::from_translation(Vector3::new(0.0, 0.1, 0.5));
        let mut c = set(&gt, &tetra());
        c.pairs[0].1 += Vector3::new(5.0, 0.0, 0.0);
        c.weights = Some(alloc::vec![0.0, 1.0, 1.0, 1.0, 1.0]);
        let p = fit_pose(&c).unwrap();
        assert!((p.translation() - gt.translation()).norm() < 1e-9);
    }

    fn patch(h: usize, w: usize) -> ChannelStack {
        let cam = CameraIntrinsics::new(50.0, 50.0, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap();
        let mut s = ChannelStack::empty(cam, (0, 0), h, w);
        s.instance_id = Raster::filled(h, w, 1);
        s.valid = Raster::filled(h, w, true);
        s.depth = Raster::filled(h, w, 1.0);
        s.abc = Raster::from_fn(h, w, |i, j| Some([i as f64, j as f64, 0.0]));
        s.refresh_xy();
        s
    }

    #[test]
    fn subsample_is_exact_and_deterministic() {
        let s = patch(50, 100);
        let a = build_correspondences(&s, 100, 7).unwrap();
        assert_eq!(a.len(), 100);
        assert_eq!(a, build_correspondences(&s, 100, 7).unwrap());
        assert_ne!(a, build_correspondences(&s, 100, 8).unwrap());
        assert_eq!(build_correspondences(&s, 0, 7).unwrap().len(), 5000);
    }

    #[test]
    fn holes_are_skipped() {
        let mut s = patch(4, 4);
        s.valid[(1, 2)] = false;
        s.abc[(3, 3)] = None;
        s.instance_id[(0, 0)] = 0;
        let c = build_correspondences(&s, 0, 0).unwrap();
        assert_eq!(c.len(), 13);
        assert!(c.pairs.iter().all(|(a, _)| *a != Point3::new(1.0, 2.0, 0.0)));
        let mut empty = patch(2, 1);
        empty.valid = Raster::filled(2, 1, false);
        assert_eq!(build_correspondences(&empty, 0, 0), Err(EstimatorError::TooFewPoints(0)));
    }

    #[test]
    fn loss_examples() {
        let a = Raster::filled(2, 2, [0.1, 0.2, 0.3]);
        let b = Raster::filled(2, 2, [0.11, 0.2, 0.3]);
        let m = Raster::filled(2, 2, true);
        assert_eq!(loss_abc(&a, &a, &m).unwrap(), 0.0);
        assert!((loss_abc(&b, &a, &m).unwrap() - 0.01).abs() < 1e-12);
        assert_eq!(loss_abc(&a, &a, &Raster::filled(2, 2, false)), Err(EstimatorError::EmptyMask));

        let s = patch(3, 3);
        let mut shifted = s.clone();
        for d in shifted.depth.as_mut_slice() {
            *d += 0.02;
        }
        let f = DepthFields::of_stack(&s);
        let mask = Raster::filled(3, 3, true);
        assert_eq!(loss_depth(f, f, &mask).unwrap(), 0.0);
        assert!((loss_depth(DepthFields::of_stack(&shifted), f, &mask).unwrap() - 0.02).abs() < 1e-12);
    }

    #[test]
    fn total_and_schedules() {
        assert_eq!(loss_total(2.0, 3.0, 4.0, &LossWeights::default()), 9.0);
        assert_eq!(loss_total(2.0, 3.0, 4.0, &LossWeights::new(0.0, 0.0, 0.0).unwrap()), 0.0);
        assert!(LossWeights::new(-1.0, 0.0, 0.0).is_err());
        let m = LambdaSchedule::MAIN;
        assert_eq!(
            [1, 19, 20, 29, 30, 37, 38, 40].map(|e| m.lambda0(e).unwrap()),
            [1.0, 1.0, 5.0, 5.0, 20.0, 20.0, 50.0, 50.0]
        );
        let s = LambdaSchedule::SUPPLEMENTARY;
        assert_eq!(
            [1, 15, 16, 25, 26, 35, 36, 40].map(|e| s.lambda0(e).unwrap()),
            [1.0, 1.0, 5.0, 5.0, 10.0, 10.0, 20.0, 20.0]
        );
        assert_eq!(m.lambda0(41), None);
        assert_eq!(m.lambda0(0), None);
        assert_eq!(m.weights(1), Some(LossWeights::default()));
    }

    #[test]
    fn abc_corruption_is_seeded() {
        let s = patch(4, 4);
        assert_eq!(corrupt_abc(&s, 0.0, 1), s);
        let a = corrupt_abc(&s, 0.01, 1);
        assert_eq!(a, corrupt_abc(&s, 0.01, 1));
        assert_ne!(a.abc, s.abc);
    }
}
