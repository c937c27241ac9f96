use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x3, Vector2};

use super::{check_sigma, FactorError};
use crate::graph::{Factor, Key, Linearization, Values};
use crate::manifold::{skew, UnitVector};

/// Sun-sensor residual: the predicted camera-frame Sun direction `Rᵀs`
/// minus the measured one, expressed in the tangent plane at the
/// measurement and divided by `σ`.
#[derive(Debug, Clone)]
pub struct SunFactor {
    keys: [Key; 2],
    measured: UnitVector,
    inv_sigma: f64,
}

impl SunFactor {
    pub fn new(pose: Key, sun: Key, measured: UnitVector, sigma: f64) -> Result<Self, FactorError> {
        Ok(Self { keys: [pose, sun], measured, inv_sigma: 1.0 / check_sigma(sigma)? })
    }

    pub fn measured(&self) -> &UnitVector {
        &self.measured
    }
}

impl Factor for SunFactor {
    fn keys(&self) -> &[Key] {
        &self.keys
    }

    fn dim(&self) -> usize {
        2
    }

    fn linearize(&self, values: &Values) -> Option<Linearization> {
        let pose = values.pose(&self.keys[0])?;
        let sun = values.unit(&self.keys[1])?;
        let rt = pose.rotation.matrix().transpose();
        let p = rt * sun.as_vector();
        let bm = self.measured.basis();
        let k = self.inv_sigma;
        let residual: Vector2<f64> = k * bm.tr_mul(&(p - self.measured.as_vector()));

        // p(γ) = Exp(−γ)Rᵀs ≈ p + [p]×γ.
        let j_rot: Matrix2x3<f64> = k * bm.transpose() * skew(&p);
        let mut j_pose = DMatrix::zeros(2, 6);
        j_pose.view_mut((0, 0), (2, 3)).copy_from(&j_rot);
        let j_sun: Matrix2<f64> = k * bm.transpose() * rt * sun.basis();
        Some(Linearization {
            residual: DVector::from_column_slice(residual.as_slice()),
            jacobians: vec![j_pose, DMatrix::from_column_slice(2, 2, j_sun.as_slice())],
        })
    }
}
