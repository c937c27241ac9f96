//! Residuals and analytic Jacobians for keypoint, brightness, Sun-sensor,
//! smoothness and prior factors.
//!
//! Jacobian blocks are taken with respect to the tangent coordinates used by
//! the variables' retractions: `(γ, τ)` for poses, the sphere basis for unit
//! vectors, and plain coordinates for points and scalars.

mod prior;
mod projection;
mod smoothness;
mod spc;
mod sun;

use nalgebra::{Matrix2, Matrix2x3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifold::Pose;

pub use prior::{LandmarkDistancePrior, PointPrior, PosePrior, ScalarPrior, UnitPrior};
pub use projection::ProjectionFactor;
pub use smoothness::SmoothnessFactor;
pub use spc::{CalibrationKeys, SpcFactor};
pub use sun::SunFactor;

/// Depth below which a point counts as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FactorError {
    #[error("point is behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("landmarks coincide")]
    CoincidentLandmarks,
    #[error("covariance is not symmetric positive definite")]
    InvalidCovariance,
    #[error("sigma must be positive and finite, got {0}")]
    InvalidSigma(f64),
}

pub(crate) fn check_sigma(sigma: f64) -> Result<f64, FactorError> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(sigma)
    } else {
        Err(FactorError::InvalidSigma(sigma))
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self { fx, fy, cx, cy }
    }

    pub fn is_valid(&self) -> bool {
        self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()
    }

    /// Pixel of a camera-frame point.
    pub fn project_camera(&self, q: &Vector3<f64>) -> Result<Vector2<f64>, FactorError> {
        if q.z <= MIN_DEPTH {
            return Err(FactorError::BehindCamera(q.z));
        }
        Ok(Vector2::new(self.fx * q.x / q.z + self.cx, self.fy * q.y / q.z + self.cy))
    }

    /// Derivative of the pixel with respect to the camera-frame point.
    pub fn projection_jacobian(&self, q: &Vector3<f64>) -> Matrix2x3<f64> {
        let iz = 1.0 / q.z;
        Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * q.x * iz * iz,
            0.0,
            self.fy * iz,
            -self.fy * q.y * iz * iz,
        )
    }

    /// Unit-depth bearing of a pixel in the camera frame.
    pub fn backproject(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy, 1.0)
    }

    pub fn matrix(&self) -> nalgebra::Matrix3<f64> {
        nalgebra::Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

/// Pixel of body-frame landmark `landmark` seen by a camera with body-frame
/// pose `pose`.
pub fn project(
    landmark: &Vector3<f64>,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
) -> Result<Vector2<f64>, FactorError> {
    intrinsics.project_camera(&pose.inverse_transform_point(landmark))
}

/// `W` with `WᵀW = Σ⁻¹`, from the Cholesky factor of `Σ`.
pub(crate) fn whitening_2x2(cov: &Matrix2<f64>) -> Result<Matrix2<f64>, FactorError> {
    if (cov[(0, 1)] - cov[(1, 0)]).abs() > 1e-12 * cov.abs().max() {
        return Err(FactorError::InvalidCovariance);
    }
    let chol = cov.cholesky().ok_or(FactorError::InvalidCovariance)?;
    chol.l().try_inverse().ok_or(FactorError::InvalidCovariance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::Rotation;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix3x4, Matrix4, Vector4};

    fn k100() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 512.0, 512.0)
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let p = project(&Vector3::new(0.0, 0.0, 10.0), &Pose::identity(), &k100()).unwrap();
        assert_eq!(p, Vector2::new(512.0, 512.0));
    }

    #[test]
    fn similar_triangles() {
        let p = project(&Vector3::new(1.0, 0.0, 10.0), &Pose::identity(), &k100()).unwrap();
        assert_relative_eq!(p, Vector2::new(522.0, 512.0), epsilon = 1e-12);
    }

    #[test]
    fn behind_camera_rejected() {
        let r = project(&Vector3::new(0.0, 0.0, -1.0), &Pose::identity(), &k100());
        assert!(matches!(r, Err(FactorError::BehindCamera(_))));
    }

    #[test]
    fn matches_homogeneous_pipeline() {
        let k = CameraIntrinsics::new(1200.0, 1100.0, 300.0, 250.0);
        let pose = Pose::new(
            Rotation::exp(&Vector3::new(0.2, -0.4, 0.1)),
            Vector3::new(1.0, -2.0, -30.0),
        );
        let l = Vector3::new(0.5, 0.7, 3.0);
        let world_to_cam: Matrix4<f64> = pose.to_matrix().try_inverse().unwrap();
        let proj = k.matrix() * Matrix3x4::identity() * world_to_cam * Vector4::new(l.x, l.y, l.z, 1.0);
        let expected = Vector2::new(proj.x / proj.z, proj.y / proj.z);
        assert_relative_eq!(project(&l, &pose, &k).unwrap(), expected, epsilon = 1e-9);
    }

    #[test]
    fn whitening_inverts_covariance() {
        let cov = Matrix2::new(4.0, 1.0, 1.0, 2.0);
        let w = whitening_2x2(&cov).unwrap();
        assert_relative_eq!(w.transpose() * w, cov.try_inverse().unwrap(), epsilon = 1e-12);
        assert!(whitening_2x2(&Matrix2::new(1.0, 0.0, 0.0, -1.0)).is_err());
    }
}
