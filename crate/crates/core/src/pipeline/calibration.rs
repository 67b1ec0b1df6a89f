#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::noise::MIN_DEPTH;
use crate::raster::Raster;
use crate::render::ChannelStack;

/// Affine depth correction `d ↦ alpha·d + beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub alpha: f64,
    pub beta: f64,
    /// RMS residual on the training pixels (meters).
    pub fit_residual: f64,
}

impl CalibrationModel {
    pub const IDENTITY: CalibrationModel = CalibrationModel { alpha: 1.0, beta: 0.0, fit_residual: 0.0 };

    pub fn apply(&self, d: f64) -> f64 {
        self.alpha * d + self.beta
    }
}

/// Observed depth and its re-projected label over one patch.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationSample<'a> {
    pub observed: &'a Raster<f64>,
    pub valid: &'a Raster<bool>,
    pub dprime: &'a Raster<f64>,
    pub mask: &'a Raster<bool>,
}

impl CalibrationSample<'_> {
    fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let (o, v, d, m) =
            (self.observed.as_slice(), self.valid.as_slice(), self.dprime.as_slice(), self.mask.as_slice());
        (0..o.len()).filter(move |&k| v[k] && m[k]).map(move |k| (o[k], d[k]))
    }
}

/// Closed-form least squares for `alpha·d_obs + beta ≈ d′` over the valid
/// masked pixels of every sample, summed in sample then row-major order.
pub fn fit_calibration(samples: &[CalibrationSample]) -> Result<CalibrationModel, PipelineError> {
    let pairs = || samples.iter().flat_map(|s| s.pairs());
    let mut n = 0usize;
    let (mut sx, mut sy) = (0.0, 0.0);
    for (x, y) in pairs() {
        n += 1;
        sx += x;
        sy += y;
    }
    if n < 2 {
        return Err(PipelineError::DegenerateFit);
    }
    let (mx, my) = (sx / n as f64, sy / n as f64);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in pairs() {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if !(sxx > 1e-18 * n as f64 * mx.abs().max(1.0).powi(2)) {
        return Err(PipelineError::DegenerateFit);
    }
    let alpha = sxy / sxx;
    if !(alpha > 0.0 && alpha < 10.0) {
        return Err(PipelineError::CalibrationOutOfRange(alpha));
    }
    let beta = my - alpha * mx;
    let sse: f64 = pairs().map(|(x, y)| (alpha * x + beta - y).powi(2)).sum();
    Ok(CalibrationModel { alpha, beta, fit_residual: (sse / n as f64).sqrt() })
}

/// Calibrates valid depth, then recomputes `xy` and `nrm` from it.
pub fn apply_calibration(patch: &ChannelStack, model: &CalibrationModel) -> ChannelStack {
    let mut out = patch.clone();
    for (d, &v) in out.depth.as_mut_slice().iter_mut().zip(patch.valid.as_slice()) {
        if v {
            *d = model.apply(*d).max(MIN_DEPTH);
        }
    }
    out.refresh_xy();
    out.refresh_normals();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn ramp(h: usize, w: usize) -> Raster<f64> {
        Raster::from_fn(h, w, |i, j| 0.6 + 0.01 * (i * w + j) as f64)
    }

    #[test]
    fn already_calibrated() {
        let d = ramp(6, 6);
        let v = Raster::filled(6, 6, true);
        let m = Raster::filled(6, 6, true);
        let c = fit_calibration(&[CalibrationSample { observed: &d, valid: &v, dprime: &d, mask: &m }]).unwrap();
        assert!((c.alpha - 1.0).abs() < 1e-12 && c.beta.abs() < 1e-12 && c.fit_residual < 1e-12);
    }

    #[test]
    fn pure_offset() {
        let d = ramp(6, 6);
        let obs = d.map(|x| x + 0.01);
        let v = Raster::filled(6, 6, true);
        let c = fit_calibration(&[CalibrationSample { observed: &obs, valid: &v, dprime: &d, mask: &v }]).unwrap();
        assert!((c.alpha - 1.0).abs() < 1e-9);
        assert!((c.beta + 0.01).abs() < 1e-9);
        assert!(c.fit_residual < 1e-9);
    }

    #[test]
    fn recovers_gain_under_noise() {
        // obs = 1.02·d′ + N(0, σ), so the inverse map has gain 1/1.02 ≈ 0.98;
        // the forward gain recovered by regressing obs on d′ must be 1.02.
        let (h, w) = (60, 60);
        let d = Raster::from_fn(h, w, |i, j| 0.5 + 0.5 * (i * w + j) as f64 / (h * w) as f64);
        let mut r = rng::substream(5, &[1]);
        let sigma = 0.002;
        let obs = d.map(|&x| 1.02 * x + sigma * rng::normal(&mut r));
        let v = Raster::filled(h, w, true);
        let inverse =
            fit_calibration(&[CalibrationSample { observed: &obs, valid: &v, dprime: &d, mask: &v }]).unwrap();
        let forward =
            fit_calibration(&[CalibrationSample { observed: &d, valid: &v, dprime: &obs, mask: &v }]).unwrap();
        let n = (h * w) as f64;
        let var_d = d.as_slice().iter().map(|x| (x - 0.75).powi(2)).sum::<f64>() / n;
        let se = sigma / (n * var_d).sqrt();
        assert!((forward.alpha - 1.02).abs() < 3.0 * se, "{} ± {se}", forward.alpha);
        assert!((inverse.alpha * 1.02 - 1.0).abs() < 0.01);
    }

    #[test]
    fn degenerate_and_masked_pixels() {
        let flat = Raster::filled(3, 3, 1.0);
        let v = Raster::filled(3, 3, true);
        assert_eq!(
            fit_calibration(&[CalibrationSample { observed: &flat, valid: &v, dprime: &flat, mask: &v }]),
            Err(PipelineError::DegenerateFit)
        );
        assert_eq!(fit_calibration(&[]), Err(PipelineError::DegenerateFit));
        // Invalid pixels are ignored, even with wild values.
        let mut obs = ramp(3, 3);
        obs[(0, 0)] = 100.0;
        let mut valid = v.clone();
        valid[(0, 0)] = false;
        let c = fit_calibration(&[CalibrationSample { observed: &obs, valid: &valid, dprime: &ramp(3, 3), mask: &v }])
            .unwrap();
        assert!((c.alpha - 1.0).abs() < 1e-9);
    }

    #[test]
    fn beats_the_trivial_model() {
        let d = ramp(8, 8);
        let mut r = rng::substream(1, &[2]);
        let obs = d.map(|&x| 0.97 * x + 0.02 + 0.003 * rng::normal(&mut r));
        let v = Raster::filled(8, 8, true);
        let c = fit_calibration(&[CalibrationSample { observed: &obs, valid: &v, dprime: &d, mask: &v }]).unwrap();
        let trivial =
            (obs.as_slice().iter().zip(d.as_slice()).map(|(o, t)| (o - t).powi(2)).sum::<f64>() / 64.0).sqrt();
        assert!(c.fit_residual <= trivial);
    }
}
