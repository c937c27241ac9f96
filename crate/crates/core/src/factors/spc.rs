use nalgebra::{DMatrix, DVector, RowVector3};

use super::{check_sigma, FactorError};
use crate::graph::{Factor, Key, Linearization, Values};
use crate::manifold::normalization_jacobian;
use crate::photometry::{ReflectanceModel, ViewGeometry};

/// Keys of the per-image brightness scale and bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CalibrationKeys {
    pub scale: Key,
    pub bias: Key,
}

/// Photometric residual `(λ·a·S(f, w, h) + ξ − Î)/σ_I` for one landmark seen
/// in one image.
///
/// `S` is the unit-albedo shading of the reflectance model evaluated on
/// `f = sᵀn`, `w = dᵀn`, `h = sᵀd` where `d` is the unit direction from the
/// landmark to the camera centre. Without calibration keys the image is
/// taken as radiometrically calibrated (`λ = 1`, `ξ = 0`).
///
/// Schröder shading is `Λ(φ)·P(f, w, g(φ))` with affine `g`; its `h` partial
/// gains the term `Λ'(φ)·P·dφ/dh` next to the Lunar-Lambert
/// `Λ·∂P/∂g·g'(φ)·dφ/dh`. See [`ReflectanceModel::shading`].
#[derive(Debug, Clone)]
pub struct SpcFactor {
    keys: Vec<Key>,
    measured: f64,
    inv_sigma: f64,
    model: ReflectanceModel,
    cutoff_deg: f64,
}

impl SpcFactor {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        pose: Key,
        sun: Key,
        landmark: Key,
        normal: Key,
        albedo: Key,
        calibration: Option<CalibrationKeys>,
        measured: f64,
        sigma: f64,
        model: ReflectanceModel,
        cutoff_deg: f64,
    ) -> Result<Self, FactorError> {
        let sigma = check_sigma(sigma)?;
        let mut keys = vec![pose, sun, landmark, normal, albedo];
        if let Some(c) = calibration {
            keys.push(c.scale);
            keys.push(c.bias);
        }
        Ok(Self { keys, measured, inv_sigma: 1.0 / sigma, model, cutoff_deg })
    }

    pub fn measured(&self) -> f64 {
        self.measured
    }

    fn calibration(&self, values: &Values) -> Option<(f64, f64)> {
        if self.keys.len() == 7 {
            Some((values.scalar(&self.keys[5])?, values.scalar(&self.keys[6])?))
        } else {
            Some((1.0, 0.0))
        }
    }
}

impl Factor for SpcFactor {
    fn keys(&self) -> &[Key] {
        &self.keys
    }

    fn dim(&self) -> usize {
        1
    }

    fn linearize(&self, values: &Values) -> Option<Linearization> {
        let pose = values.pose(&self.keys[0])?;
        let sun = values.unit(&self.keys[1])?;
        let landmark = values.point(&self.keys[2])?;
        let normal = values.unit(&self.keys[3])?;
        let albedo = values.scalar(&self.keys[4])?;
        let (scale, bias) = self.calibration(values)?;

        let geo = ViewGeometry::new(&pose.translation, sun, landmark, normal, self.cutoff_deg).ok()?;
        let sh = self.model.shading(geo.f, geo.w, geo.h).ok()?;
        let k = self.inv_sigma;
        let gain = k * scale * albedo;

        let n = normal.as_vector();
        let s = sun.as_vector();
        // ∂d/∂e for e = r − ℓ.
        let d_norm = normalization_jacobian(&geo.e);
        let dw_de: RowVector3<f64> = n.transpose() * d_norm;
        let dh_de: RowVector3<f64> = s.transpose() * d_norm;
        let di_de: RowVector3<f64> = gain * (sh.d_w * dw_de + sh.d_h * dh_de);

        // r(ζ) = r + R·τ, so ∂e/∂γ = 0 and ∂e/∂τ = R.
        let mut j_pose = DMatrix::zeros(1, 6);
        j_pose.view_mut((0, 3), (1, 3)).copy_from(&(di_de * pose.rotation.matrix()));

        let bs = sun.basis();
        let j_sun = gain * (sh.d_f * n.transpose() + sh.d_h * geo.d.transpose()) * bs;
        let j_landmark = -di_de;
        let bn = normal.basis();
        let j_normal = gain * (sh.d_f * s.transpose() + sh.d_w * geo.d.transpose()) * bn;

        let mut jacobians = vec![
            j_pose,
            DMatrix::from_row_slice(1, 2, j_sun.as_slice()),
            DMatrix::from_row_slice(1, 3, j_landmark.as_slice()),
            DMatrix::from_row_slice(1, 2, j_normal.as_slice()),
            DMatrix::from_element(1, 1, k * scale * sh.value),
        ];
        if self.keys.len() == 7 {
            jacobians.push(DMatrix::from_element(1, 1, k * albedo * sh.value));
            jacobians.push(DMatrix::from_element(1, 1, k));
        }
        let predicted = scale * albedo * sh.value + bias;
        Some(Linearization {
            residual: DVector::from_element(1, k * (predicted - self.measured)),
            jacobians,
        })
    }

    fn residual(&self, values: &Values) -> Option<DVector<f64>> {
        let pose = values.pose(&self.keys[0])?;
        let sun = values.unit(&self.keys[1])?;
        let landmark = values.point(&self.keys[2])?;
        let normal = values.unit(&self.keys[3])?;
        let albedo = values.scalar(&self.keys[4])?;
        let (scale, bias) = self.calibration(values)?;
        let geo = ViewGeometry::new(&pose.translation, sun, landmark, normal, self.cutoff_deg).ok()?;
        let sh = self.model.shading(geo.f, geo.w, geo.h).ok()?;
        let predicted = scale * albedo * sh.value + bias;
        Some(DVector::from_element(1, self.inv_sigma * (predicted - self.measured)))
    }
}
