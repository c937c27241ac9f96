use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x3, Vector2};

use super::{project, whitening_2x2, CameraIntrinsics, FactorError};
use crate::graph::{Factor, Key, Linearization, Values};
use crate::manifold::skew;

/// Keypoint reprojection residual `W·(Π(ℓ, T) − p̂)`.
#[derive(Debug, Clone)]
pub struct ProjectionFactor {
    keys: [Key; 2],
    measured: Vector2<f64>,
    intrinsics: CameraIntrinsics,
    whitening: Matrix2<f64>,
}

impl ProjectionFactor {
    pub fn new(
        pose: Key,
        landmark: Key,
        measured: Vector2<f64>,
        intrinsics: CameraIntrinsics,
        covariance: Matrix2<f64>,
    ) -> Result<Self, FactorError> {
        Ok(Self {
            keys: [pose, landmark],
            measured,
            intrinsics,
            whitening: whitening_2x2(&covariance)?,
        })
    }

    pub fn measured(&self) -> &Vector2<f64> {
        &self.measured
    }
}

impl Factor for ProjectionFactor {
    fn keys(&self) -> &[Key] {
        &self.keys
    }

    fn dim(&self) -> usize {
        2
    }

    fn linearize(&self, values: &Values) -> Option<Linearization> {
        let pose = values.pose(&self.keys[0])?;
        let landmark = values.point(&self.keys[1])?;
        let q = pose.inverse_transform_point(landmark);
        let pixel = self.intrinsics.project_camera(&q).ok()?;
        let dpix_dq = self.whitening * self.intrinsics.projection_jacobian(&q);

        // q(ζ) = Exp(−γ)(q − τ) to first order: ∂q/∂γ = [q]×, ∂q/∂τ = −I.
        let rt = pose.rotation.matrix().transpose();
        let j_rot: Matrix2x3<f64> = dpix_dq * skew(&q);
        let j_trans: Matrix2x3<f64> = -dpix_dq;
        let j_landmark: Matrix2x3<f64> = dpix_dq * rt;

        let mut j_pose = DMatrix::zeros(2, 6);
        j_pose.view_mut((0, 0), (2, 3)).copy_from(&j_rot);
        j_pose.view_mut((0, 3), (2, 3)).copy_from(&j_trans);
        let residual = self.whitening * (pixel - self.measured);
        Some(Linearization {
            residual: DVector::from_column_slice(residual.as_slice()),
            jacobians: vec![j_pose, DMatrix::from_column_slice(2, 3, j_landmark.as_slice())],
        })
    }

    fn residual(&self, values: &Values) -> Option<DVector<f64>> {
        let pose = values.pose(&self.keys[0])?;
        let landmark = values.point(&self.keys[1])?;
        let pixel = project(landmark, pose, &self.intrinsics).ok()?;
        let r = self.whitening * (pixel - self.measured);
        Some(DVector::from_column_slice(r.as_slice()))
    }
}
