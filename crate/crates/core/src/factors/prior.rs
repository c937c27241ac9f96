use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3, Vector6};

use super::{check_sigma, FactorError};
use crate::graph::{Factor, Key, Linearization, Values};
use crate::manifold::{so3_right_jacobian_inv, Pose, UnitVector};

/// Pose prior on the tangent-space offset `(γ, τ)` from the prior pose.
#[derive(Debug, Clone)]
pub struct PosePrior {
    keys: [Key; 1],
    prior: Pose,
    whitening: Matrix6<f64>,
}

impl PosePrior {
    pub fn new(key: Key, prior: Pose, covariance: &Matrix6<f64>) -> Result<Self, FactorError> {
        if (covariance - covariance.transpose()).abs().max() > 1e-12 * covariance.abs().max() {
            return Err(FactorError::InvalidCovariance);
        }
        let chol = covariance.cholesky().ok_or(FactorError::InvalidCovariance)?;
        let whitening = chol.l().try_inverse().ok_or(FactorError::InvalidCovariance)?;
        Ok(Self { keys: [key], prior, whitening })
    }

    /// Independent standard deviations on rotation (rad) and translation.
    pub fn isotropic(key: Key, prior: Pose, sigma_rotation: f64, sigma_translation: f64) -> Result<Self, FactorError> {
        let sr = check_sigma(sigma_rotation)?;
        let st = check_sigma(sigma_translation)?;
        let diag = Vector6::new(sr, sr, sr, st, st, st).map(|s| s * s);
        Self::new(key, prior, &Matrix6::from_diagonal(&diag))
    }
}

impl Factor for PosePrior {
    fn keys(&self) -> &[Key] {
        &self.keys
    }

    fn dim(&self) -> usize {
        6
    }

    fn linearize(&self, values: &Values) -> Option<Linearization> {
        let pose = values.pose(&self.keys[0])?;
        let offset = self.prior.local(pose);
        let mut j = Matrix6::zeros();
        j.fixed_view_mut::<3, 3>(0, 0).copy_from(&so3_right_jacobian_inv(&offset.rotation));
        let rel: Matrix3<f64> = self.prior.rotation.matrix().transpose() * pose.rotation.matrix();
        j.fixed_view_mut::<3, 3>(3, 3).copy_from(&rel);
        let r = self.whitening * offset.to_vector();
        let j = self.whitening * j;
        Some(Linearization {
            residual: DVector::from_column_slice(r.as_slice()),
            jacobians: vec![DMatrix::from_column_slice(6, 6, j.as_slice())],
        })
    }
}

/// Prior on a unit vector, in the tangent plane at the prior direction.
#[derive(Debug, Clone)]
pub struct UnitPrior {
    keys: [Key; 1],
    prior: UnitVector,
    inv_sigma: f64,
}

impl UnitPrior {
    pub fn new(key: Key, prior: UnitVector, sigma: f64) -> Result<Self, FactorError> {
        Ok(Self { keys: [key], prior, inv_sigma: 1.0 / check_sigma(sigma)? })
    }
}

impl Factor for UnitPrior {
    fn keys(&self) -> &[Key] {
        &self.keys
    }

    fn dim(&self) -> usize {
        2
    }

    fn linearize(&self, values: &Values) -> Option<Linearization> {
        let x = values.unit(&self.keys[0])?;
        let bp = self.prior.basis();
        let xv = x.as_vector();
        // local = θ/ρ · v with v = Bₚᵀx, ρ = ‖v‖, c = pᵀx, θ = atan2(ρ, c).
        let v = bp.tr_mul(xv);
        let c = self.prior.dot(xv).clamp(-1.0, 1.0);
        if c <= -1.0 + 1e-12 {
            return None;
        }
        let rho = v.norm();
        let theta = rho.atan2(c);
        let dx = x.basis();
        let dv = bp.transpose() * dx;
        let (ratio, jac) = if rho < 1e-8 {
            // θ/ρ → 1 and its variation is second order.
            (1.0, dv)
        } else {
            let dc = self.prior.as_vector().transpose() * dx;
            let drho = v.transpose() * dv / rho;
            let dtheta = c * drho - rho * dc;
            let dratio = (dtheta - theta / rho * drho) / rho;
            (theta / rho, (theta / rho) * dv + v * dratio)
        };
        let r = self.inv_sigma * ratio * v;
        let j = self.inv_sigma * jac;
        Some(Linearization {
            residual: DVector::from_column_slice(r.as_slice()),
            jacobians: vec![DMatrix::from_column_slice(2, 2, j.as_slice())],
        })
    }
}

/// Isotropic prior on a Euclidean point.
#[derive(Debug, Clone)]
pub struct PointPrior {
    keys: [Key; 1],
    prior: Vector3<f64>,
    inv_sigma: f64,
}

impl PointPrior {
    pub fn new(key: Key, prior: Vector3<f64>, sigma: f64) -> Result<Self, FactorError> {
        Ok(Self { keys: [key], prior, inv_sigma: 1.0 / check_sigma(sigma)? })
    }
}

impl Factor for PointPrior {
    fn keys(&self) -> &[Key] {
        &self.keys
    }

    fn dim(&self) -> usize {
        3
    }

    fn linearize(&self, values: &Values) -> Option<Linearization> {
        let x = values.point(&self.keys[0])?;
        let r = self.inv_sigma * (x - self.prior);
        Some(Linearization {
            residual: DVector::from_column_slice(r.as_slice()),
            jacobians: vec![DMatrix::from_diagonal_element(3, 3, self.inv_sigma)],
        })
    }
}

/// Prior on a scalar variable (albedo, brightness scale or bias).
#[derive(Debug, Clone)]
pub struct ScalarPrior {
    keys: [Key; 1],
    prior: f64,
    inv_sigma: f64,
}

impl ScalarPrior {
    /// # Panics
    /// If `sigma` is not positive and finite.
    pub fn new(key: Key, prior: f64, sigma: f64) -> Self {
        Self::try_new(key, prior, sigma).expect("positive sigma")
    }

    pub fn try_new(key: Key, prior: f64, sigma: f64) -> Result<Self, FactorError> {
        Ok(Self { keys: [key], prior, inv_sigma: 1.0 / check_sigma(sigma)? })
    }
}

impl Factor for ScalarPrior {
    fn keys(&self) -> &[Key] {
        &self.keys
    }

    fn dim(&self) -> usize {
        1
    }

    fn linearize(&self, values: &Values) -> Option<Linearization> {
        let x = values.scalar(&self.keys[0])?;
        Some(Linearization {
            residual: DVector::from_element(1, self.inv_sigma * (x - self.prior)),
            jacobians: vec![DMatrix::from_element(1, 1, self.inv_sigma)],
        })
    }
}

/// Fixes the distance of one landmark from an anchor point, which removes
/// the scale freedom of a monocular reconstruction once a pose is pinned.
#[derive(Debug, Clone)]
pub struct LandmarkDistancePrior {
    keys: [Key; 1],
    anchor: Vector3<f64>,
    distance: f64,
    inv_sigma: f64,
}

impl LandmarkDistancePrior {
    pub fn new(key: Key, anchor: Vector3<f64>, distance: f64, sigma: f64) -> Result<Self, FactorError> {
        Ok(Self { keys: [key], anchor, distance, inv_sigma: 1.0 / check_sigma(sigma)? })
    }
}

impl Factor for LandmarkDistancePrior {
    fn keys(&self) -> &[Key] {
        &self.keys
    }

    fn dim(&self) -> usize {
        1
    }

    fn linearize(&self, values: &Values) -> Option<Linearization> {
        let x = values.point(&self.keys[0])?;
        let v = x - self.anchor;
        let norm = v.norm();
        if norm == 0.0 {
            return None;
        }
        let j = self.inv_sigma * v / norm;
        Some(Linearization {
            residual: DVector::from_element(1, self.inv_sigma * (norm - self.distance)),
            jacobians: vec![DMatrix::from_row_slice(1, 3, j.as_slice())],
        })
    }
}
