use nalgebra::{DMatrix, DVector, RowVector3};

use super::{check_sigma, FactorError};
use crate::graph::{Factor, Key, Linearization, Values};
use crate::manifold::normalization_jacobian;

/// Separation below which two landmarks are treated as coincident.
const MIN_SEPARATION: f64 = 1e-9;

/// Penalizes a normal that is not perpendicular to the direction towards a
/// neighbouring landmark: `√η·(angle(d, n) − 90)` in degrees.
#[derive(Debug, Clone)]
pub struct SmoothnessFactor {
    // reference landmark, reference normal, neighbour landmark
    keys: [Key; 3],
    sqrt_weight: f64,
}

impl SmoothnessFactor {
    pub fn new(landmark: Key, normal: Key, neighbor: Key, weight: f64) -> Result<Self, FactorError> {
        if landmark == neighbor {
            return Err(FactorError::CoincidentLandmarks);
        }
        Ok(Self { keys: [landmark, normal, neighbor], sqrt_weight: check_sigma(weight)?.sqrt() })
    }

    pub fn weight(&self) -> f64 {
        self.sqrt_weight * self.sqrt_weight
    }
}

impl Factor for SmoothnessFactor {
    fn keys(&self) -> &[Key] {
        &self.keys
    }

    fn dim(&self) -> usize {
        1
    }

    fn linearize(&self, values: &Values) -> Option<Linearization> {
        let l = values.point(&self.keys[0])?;
        let n = values.unit(&self.keys[1])?;
        let l2 = values.point(&self.keys[2])?;
        let v = l2 - l;
        let dist = v.norm();
        if dist <= MIN_SEPARATION {
            return None;
        }
        let d = v / dist;
        let c = d.dot(n.as_vector()).clamp(-1.0, 1.0);
        let residual = self.sqrt_weight * (c.acos().to_degrees() - 90.0);

        let sin = (1.0 - c * c).max(1e-24).sqrt();
        let dr_dc = -self.sqrt_weight * (180.0 / std::f64::consts::PI) / sin;
        let dc_dv: RowVector3<f64> = n.as_vector().transpose() * normalization_jacobian(&v);
        let j_neighbor = dr_dc * dc_dv;
        let j_normal = dr_dc * d.transpose() * n.basis();
        Some(Linearization {
            residual: DVector::from_element(1, residual),
            jacobians: vec![
                DMatrix::from_row_slice(1, 3, (-j_neighbor).as_slice()),
                DMatrix::from_row_slice(1, 2, j_normal.as_slice()),
                DMatrix::from_row_slice(1, 3, j_neighbor.as_slice()),
            ],
        })
    }
}
