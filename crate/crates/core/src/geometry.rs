//! Rigid-body math and the pinhole camera model.
//!
//! Pixel convention: `(u, v)` address pixel centers, so pixel `(row i, col j)`
//! has its center at `(j + 0.5, i + 0.5)`.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point3 = nalgebra::Point3<f64>;

/// Per-entry tolerance for `RᵀR = I` and `det R = 1`.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("point has non-positive depth {0}")]
    NonPositiveDepth(f64),
    #[error("rotation is not orthonormal (max deviation {0:e})")]
    NotOrthonormal(f64),
    #[error("rotation is a reflection (det = {0})")]
    Reflection(f64),
    #[error("non-finite value in pose")]
    NonFinite,
    #[error("invalid camera intrinsics: {0}")]
    InvalidCamera(&'static str),
    #[error("cannot project a degenerate matrix onto SO(3)")]
    Degenerate,
}

/// A rigid transform `q ↦ R·q + T` from an object frame into the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

/// Row-major wire form of a pose.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseRepr {
    #[serde(rename = "R")]
    pub rotation: [f64; 9],
    #[serde(rename = "T")]
    pub translation: [f64; 3],
}

impl TryFrom<PoseRepr> for Pose {
    type Error = GeometryError;

    fn try_from(r: PoseRepr) -> Result<Self, Self::Error> {
        Pose::new(Matrix3::from_row_slice(&r.rotation), Vector3::from_column_slice(&r.translation))
    }
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        PoseRepr { rotation: p.rotation_row_major(), translation: p.translation.into() }
    }
}

impl Pose {
    /// Validates orthonormality and handedness of `rotation`.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let dev = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if dev > ORTHONORMAL_TOL {
            return Err(GeometryError::NotOrthonormal(dev));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            if det < 0.0 {
                return Err(GeometryError::Reflection(det));
            }
            return Err(GeometryError::NotOrthonormal((det - 1.0).abs()));
        }
        Ok(Pose { rotation, translation })
    }

    /// Projects an arbitrary matrix onto the nearest rotation (polar
    /// decomposition via SVD) before building the pose.
    pub fn from_nearest_rotation(m: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let rotation = nearest_rotation(&m).ok_or(GeometryError::Degenerate)?;
        Pose::new(rotation, translation)
    }

    pub fn identity() -> Self {
        Pose { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Pose { rotation: Matrix3::identity(), translation: t }
    }

    pub fn from_rotation(r: Rotation3<f64>, t: Vector3<f64>) -> Self {
        Pose { rotation: *r.matrix(), translation: t }
    }

    pub fn from_quaternion(q: UnitQuaternion<f64>, t: Vector3<f64>) -> Self {
        Pose { rotation: *q.to_rotation_matrix().matrix(), translation: t }
    }

    /// Rotation by `angle` radians about the z axis.
    pub fn rot_z(angle: f64) -> Self {
        Pose::from_rotation(Rotation3::from_axis_angle(&Vector3::z_axis(), angle), Vector3::zeros())
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]]
    }

    pub fn apply(&self, q: &Point3) -> Point3 {
        Point3::from(self.rotation * q.coords + self.translation)
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose { rotation: rt, translation: -(rt * self.translation) }
    }
}

pub fn apply_pose(p: &Pose, q: &Point3) -> Point3 {
    p.apply(q)
}

pub fn compose(p1: &Pose, p2: &Pose) -> Pose {
    p1.compose(p2)
}

pub fn invert(p: &Pose) -> Pose {
    p.inverse()
}

/// Closest rotation to `m` in Frobenius norm, or `None` if `m` is rank deficient.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let svd = m.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let s = svd.singular_values;
    if s.min() <= f64::EPSILON * s.max().max(1.0) {
        return None;
    }
    let d = (u * v_t).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    Some(u * correction * v_t)
}

/// Pinhole intrinsics with a raster size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self, GeometryError> {
        let k = CameraIntrinsics { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidCamera("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidCamera("raster must be nonempty"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidCamera("principal point outside raster"));
        }
        Ok(())
    }

    /// 160×120 desk-scale default.
    pub fn desk_default() -> Self {
        CameraIntrinsics { fx: 160.0, fy: 160.0, cx: 80.0, cy: 60.0, width: 160, height: 120 }
    }

    pub fn project(&self, q: &Point3) -> Result<(f64, f64, f64), GeometryError> {
        if !(q.z > 0.0) {
            return Err(GeometryError::NonPositiveDepth(q.z));
        }
        Ok((self.fx * q.x / q.z + self.cx, self.fy * q.y / q.z + self.cy, q.z))
    }

    pub fn backproject(&self, u: f64, v: f64, d: f64) -> Result<Point3, GeometryError> {
        if !(d > 0.0) {
            return Err(GeometryError::NonPositiveDepth(d));
        }
        Ok(self.backproject_unchecked(u, v, d))
    }

    #[inline]
    pub(crate) fn backproject_unchecked(&self, u: f64, v: f64, d: f64) -> Point3 {
        Point3::new((u - self.cx) * d / self.fx, (v - self.cy) * d / self.fy, d)
    }
}

pub fn project(k: &CameraIntrinsics, q: &Point3) -> Result<(f64, f64, f64), GeometryError> {
    k.project(q)
}

pub fn backproject(k: &CameraIntrinsics, u: f64, v: f64, d: f64) -> Result<Point3, GeometryError> {
    k.backproject(u, v, d)
}

/// Center of pixel `(row, col)` as `(u, v)`.
#[inline]
pub fn pixel_center(row: usize, col: usize) -> (f64, f64) {
    (col as f64 + 0.5, row as f64 + 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::FRAC_PI_2;

    fn k100() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap()
    }

    fn assert_pt(a: Point3, b: [f64; 3], tol: f64) {
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn apply_pose_examples() {
        let q = Point3::new(0.1, -0.2, 0.3);
        assert_pt(Pose::identity().apply(&q), [0.1, -0.2, 0.3], 0.0);
        let t = Pose::from_translation(Vector3::new(0.0, 0.0, 2.0));
        assert_pt(t.apply(&q), [0.1, -0.2, 2.3], 1e-15);
        assert_pt(Pose::rot_z(FRAC_PI_2).apply(&Point3::new(1.0, 0.0, 0.0)), [0.0, 1.0, 0.0], 1e-15);
    }

    #[test]
    fn compose_and_invert_examples() {
        let p = Pose::from_quaternion(UnitQuaternion::from_euler_angles(0.3, -1.1, 2.0), Vector3::new(0.2, -0.4, 1.5));
        assert_eq!(Pose::identity().compose(&p), p);
        let id = p.compose(&p.inverse());
        assert!((id.rotation() - Matrix3::identity()).amax() < 1e-12);
        assert!(id.translation().amax() < 1e-12);
        let half = Pose::rot_z(FRAC_PI_2).compose(&Pose::rot_z(FRAC_PI_2));
        assert!((half.rotation() - Pose::rot_z(core::f64::consts::PI).rotation()).amax() < 1e-15);

        assert_eq!(Pose::identity().inverse(), Pose::identity());
        let inv = Pose::from_translation(Vector3::new(0.0, 0.0, 2.0)).inverse();
        assert_eq!(*inv.translation(), Vector3::new(0.0, 0.0, -2.0));
    }

    #[test]
    fn project_examples() {
        let k = k100();
        assert_eq!(k.project(&Point3::new(0.0, 0.0, 1.0)).unwrap(), (50.0, 50.0, 1.0));
        assert_eq!(k.project(&Point3::new(0.5, 0.0, 1.0)).unwrap(), (100.0, 50.0, 1.0));
        assert!(matches!(k.project(&Point3::new(0.0, 0.0, 0.0)), Err(GeometryError::NonPositiveDepth(_))));
        assert!(matches!(k.project(&Point3::new(0.0, 0.0, -1.0)), Err(GeometryError::NonPositiveDepth(_))));
    }

    #[test]
    fn backproject_examples() {
        let k = k100();
        assert_pt(k.backproject(50.0, 50.0, 2.0).unwrap(), [0.0, 0.0, 2.0], 0.0);
        assert_pt(k.backproject(100.0, 50.0, 1.0).unwrap(), [0.5, 0.0, 1.0], 0.0);
        assert!(k.backproject(10.0, 10.0, 0.0).is_err());
        for i in 0..100 {
            for j in 0..100 {
                let (u, v) = pixel_center(i, j);
                let d = 0.3 + 0.027 * ((i * 7 + j) % 100) as f64;
                let (u2, v2, d2) = k.project(&k.backproject(u, v, d).unwrap()).unwrap();
                assert!((u - u2).abs() < 1e-9 && (v - v2).abs() < 1e-9 && (d - d2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_reflection_and_skew() {
        let mut m = Matrix3::identity();
        m[(2, 2)] = -1.0;
        assert!(matches!(Pose::new(m, Vector3::zeros()), Err(GeometryError::Reflection(_))));
        let mut s = Matrix3::identity();
        s[(0, 1)] = 1e-6;
        assert!(matches!(Pose::new(s, Vector3::zeros()), Err(GeometryError::NotOrthonormal(_))));
    }

    #[test]
    fn nearest_rotation_projects_perturbed_matrix() {
        let r = *Rotation3::from_euler_angles(0.4, 0.1, -0.7).matrix();
        let mut noisy = r;
        noisy[(0, 1)] += 1e-4;
        noisy[(2, 0)] -= 2e-4;
        let p = Pose::from_nearest_rotation(noisy, Vector3::zeros()).unwrap();
        assert!((p.rotation() - r).amax() < 1e-3);
        assert!(Pose::from_nearest_rotation(Matrix3::zeros(), Vector3::zeros()).is_err());
    }

    #[test]
    fn camera_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 0.0, 4, 4).is_err());
        assert!(CameraIntrinsics::desk_default().validate().is_ok());
    }

    #[test]
    fn pose_json_wire_form_is_row_major() {
        let p = Pose::rot_z(FRAC_PI_2);
        let repr = PoseRepr::from(p);
        assert!((repr.rotation[1] + 1.0).abs() < 1e-15);
        assert!((repr.rotation[3] - 1.0).abs() < 1e-15);
        assert_eq!(Pose::try_from(repr).unwrap(), p);
    }
}
