//! Planetary reflectance models.
//!
//! Brightness is expressed as a radiance factor (I/F), normalized so that a
//! surface of albedo `a` lit and viewed from overhead returns exactly `a`.
//! Phase angles enter the phase weighting `g(φ)` and the surface phase
//! function `Λ(φ)` in degrees.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifold::{Pose, UnitVector};

/// Incidence and emission angles above this are treated as unobservable.
pub const DEFAULT_CUTOFF_DEG: f64 = 85.0;

const DENOMINATOR_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum PhotometryError {
    #[error("surface is not lit (cos incidence = {0})")]
    NotLit(f64),
    #[error("surface faces away from the camera (cos emission = {0})")]
    BackFacing(f64),
    #[error("degenerate viewing geometry")]
    Degenerate,
    #[error("geometry exceeds the {0}° incidence/emission cutoff")]
    BeyondCutoff(f64),
}

/// Incidence, emission and phase angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotometryAngles {
    pub incidence: f64,
    pub emission: f64,
    pub phase: f64,
}

impl PhotometryAngles {
    pub fn new(incidence: f64, emission: f64, phase: f64) -> Self {
        Self {
            incidence,
            emission,
            phase,
        }
    }

    pub fn within_cutoff(&self, cutoff_deg: f64) -> bool {
        self.incidence <= cutoff_deg && self.emission <= cutoff_deg
    }
}

/// Incidence, emission and phase from the Sun direction `s`, the
/// landmark-to-camera vector `e` and the surface normal `n`.
pub fn angles_from_vectors(
    s: &UnitVector,
    e: &Vector3<f64>,
    n: &UnitVector,
) -> Result<PhotometryAngles, PhotometryError> {
    let range = e.norm();
    if !(range > 0.0) {
        return Err(PhotometryError::Degenerate);
    }
    let d = e / range;
    let cos_i = s.dot(n.as_vector());
    let cos_e = d.dot(n.as_vector());
    if cos_i <= 0.0 {
        return Err(PhotometryError::NotLit(cos_i));
    }
    if cos_e <= 0.0 {
        return Err(PhotometryError::BackFacing(cos_e));
    }
    let cos_p = s.dot(&d);
    Ok(PhotometryAngles {
        incidence: cos_i.clamp(-1.0, 1.0).acos().to_degrees(),
        emission: cos_e.clamp(-1.0, 1.0).acos().to_degrees(),
        phase: cos_p.clamp(-1.0, 1.0).acos().to_degrees(),
    })
}

/// Coefficients of the Schröder phase weighting `g(φ) = C₀ + C₁φ` and
/// surface phase function `Λ(φ) = Σ Bᵢφⁱ` (φ in degrees).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchroderCoefficients {
    pub c0: f64,
    pub c1: f64,
    pub b: [f64; 5],
}

impl Default for SchroderCoefficients {
    /// Vesta fit, with `B` normalized so that `Λ(0) = 1`.
    fn default() -> Self {
        Self {
            c0: 0.830,
            c1: -7.22e-3,
            b: [1.0, -1.7160e-2, 1.8306e-4, -1.0399e-6, 2.3223e-9],
        }
    }
}

impl SchroderCoefficients {
    /// Surface phase function and its derivative with respect to φ (degrees).
    pub fn phase_function(&self, phase_deg: f64) -> (f64, f64) {
        let b = &self.b;
        let value = b[0] + phase_deg * (b[1] + phase_deg * (b[2] + phase_deg * (b[3] + phase_deg * b[4])));
        let slope = b[1] + phase_deg * (2.0 * b[2] + phase_deg * (3.0 * b[3] + phase_deg * 4.0 * b[4]));
        (value, slope)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ReflectanceModel {
    /// `g(φ) = exp(−φ/60)`, no surface phase function.
    #[default]
    LunarLambert,
    Schroder(SchroderCoefficients),
}

impl ReflectanceModel {
    pub fn schroder() -> Self {
        ReflectanceModel::Schroder(SchroderCoefficients::default())
    }

    pub fn name(&self) -> &'static str {
        match self {
            ReflectanceModel::LunarLambert => "lunar-lambert",
            ReflectanceModel::Schroder(_) => "schroder",
        }
    }

    /// Phase weighting `g` and `dg/dφ` (φ in degrees).
    fn phase_weight(&self, phase_deg: f64) -> (f64, f64) {
        match self {
            ReflectanceModel::LunarLambert => {
                let g = (-phase_deg / 60.0).exp();
                (g, -g / 60.0)
            }
            ReflectanceModel::Schroder(c) => (c.c0 + c.c1 * phase_deg, c.c1),
        }
    }

    /// Surface phase function `Λ` and `dΛ/dφ`.
    fn surface_phase(&self, phase_deg: f64) -> (f64, f64) {
        match self {
            ReflectanceModel::LunarLambert => (1.0, 0.0),
            ReflectanceModel::Schroder(c) => c.phase_function(phase_deg),
        }
    }

    /// Radiance factor from angles (degrees).
    pub fn radiance_factor(&self, angles: &PhotometryAngles, albedo: f64) -> Result<f64, PhotometryError> {
        let cos_i = angles.incidence.to_radians().cos();
        let cos_e = angles.emission.to_radians().cos();
        let denom = cos_i + cos_e;
        if denom <= DENOMINATOR_FLOOR {
            return Err(PhotometryError::Degenerate);
        }
        let (g, _) = self.phase_weight(angles.phase);
        let (lambda, _) = self.surface_phase(angles.phase);
        Ok(albedo * lambda * ((1.0 - g) * cos_i + g * 2.0 * cos_i / denom))
    }

    /// Unit-albedo shading evaluated from the dot products
    /// `f = sᵀn`, `w = dᵀn`, `h = sᵀd`, together with its partials.
    ///
    /// With `P = (1 − g)·f + 2g·f/(f + w)` the shading is `Λ·P`, and
    ///
    /// * `∂P/∂f = (1 − g) + 2g·w/(f + w)²`
    /// * `∂P/∂w = −2g·f/(f + w)²`
    /// * `∂P/∂g = 2f/(f + w) − f`
    ///
    /// φ = acos(h) in degrees, so `dφ/dh = −(180/π)/√(1 − h²)`. For the
    /// Schröder model `dg/dφ = C₁` and the extra `Λ(φ)` factor contributes
    /// `Λ'(φ)·P` to the `h` partial.
    pub fn shading(&self, f: f64, w: f64, h: f64) -> Result<Shading, PhotometryError> {
        let denom = f + w;
        if denom <= DENOMINATOR_FLOOR {
            return Err(PhotometryError::Degenerate);
        }
        let h = h.clamp(-1.0, 1.0);
        let phase = h.acos().to_degrees();
        let (g, dg_dphase) = self.phase_weight(phase);
        let (lambda, dlambda_dphase) = self.surface_phase(phase);
        let inv = 1.0 / denom;
        let p = (1.0 - g) * f + 2.0 * g * f * inv;
        let dp_df = (1.0 - g) + 2.0 * g * w * inv * inv;
        let dp_dw = -2.0 * g * f * inv * inv;
        let dp_dg = 2.0 * f * inv - f;
        let sin_phase = (1.0 - h * h).max(1e-24).sqrt();
        let dphase_dh = -(180.0 / std::f64::consts::PI) / sin_phase;
        Ok(Shading {
            value: lambda * p,
            d_f: lambda * dp_df,
            d_w: lambda * dp_dw,
            d_h: (dlambda_dphase * p + lambda * dp_dg * dg_dphase) * dphase_dh,
        })
    }
}

/// Unit-albedo shading and its partials with respect to the three dot products.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shading {
    pub value: f64,
    pub d_f: f64,
    pub d_w: f64,
    pub d_h: f64,
}

/// Lunar-Lambert radiance factor.
pub fn lunar_lambert(angles: &PhotometryAngles, albedo: f64) -> Result<f64, PhotometryError> {
    ReflectanceModel::LunarLambert.radiance_factor(angles, albedo)
}

/// Schröder radiance factor.
pub fn schroder(
    angles: &PhotometryAngles,
    albedo: f64,
    coefficients: &SchroderCoefficients,
) -> Result<f64, PhotometryError> {
    ReflectanceModel::Schroder(*coefficients).radiance_factor(angles, albedo)
}

/// Per-image affine brightness calibration `I = λ·r_F + ξ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageCalibration {
    pub scale: f64,
    pub bias: f64,
    pub calibrated: bool,
}

impl Default for ImageCalibration {
    fn default() -> Self {
        Self::calibrated()
    }
}

impl ImageCalibration {
    pub fn calibrated() -> Self {
        Self {
            scale: 1.0,
            bias: 0.0,
            calibrated: true,
        }
    }

    pub fn uncalibrated(scale: f64, bias: f64) -> Self {
        Self {
            scale,
            bias,
            calibrated: false,
        }
    }
}

/// Geometry shared by the brightness prediction and the photometric factor.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ViewGeometry {
    pub e: Vector3<f64>,
    pub d: Vector3<f64>,
    pub f: f64,
    pub w: f64,
    pub h: f64,
}

impl ViewGeometry {
    pub fn new(
        camera_center: &Vector3<f64>,
        sun: &UnitVector,
        landmark: &Vector3<f64>,
        normal: &UnitVector,
        cutoff_deg: f64,
    ) -> Result<Self, PhotometryError> {
        let e = camera_center - landmark;
        let range = e.norm();
        if !(range > 0.0) {
            return Err(PhotometryError::Degenerate);
        }
        let d = e / range;
        let f = sun.dot(normal.as_vector());
        let w = d.dot(normal.as_vector());
        if f <= 0.0 {
            return Err(PhotometryError::NotLit(f));
        }
        if w <= 0.0 {
            return Err(PhotometryError::BackFacing(w));
        }
        let cos_cutoff = cutoff_deg.to_radians().cos();
        if f < cos_cutoff || w < cos_cutoff {
            return Err(PhotometryError::BeyondCutoff(cutoff_deg));
        }
        Ok(Self {
            e,
            d,
            f,
            w,
            h: sun.dot(&d),
        })
    }
}

/// Predicted brightness `λ·r_F(α, β, φ, a) + ξ` of landmark `ℓ` with normal
/// `n` and albedo `a`, seen from `pose` under Sun direction `s` (body
/// frame). Geometry beyond `cutoff_deg` is rejected.
pub fn predict_brightness_with_cutoff(
    pose: &Pose,
    sun: &UnitVector,
    landmark: &Vector3<f64>,
    normal: &UnitVector,
    albedo: f64,
    calibration: &ImageCalibration,
    model: &ReflectanceModel,
    cutoff_deg: f64,
) -> Result<f64, PhotometryError> {
    let geo = ViewGeometry::new(&pose.translation, sun, landmark, normal, cutoff_deg)?;
    let shading = model.shading(geo.f, geo.w, geo.h)?;
    Ok(calibration.scale * albedo * shading.value + calibration.bias)
}

/// [`predict_brightness_with_cutoff`] with the default 85° cutoff.
pub fn predict_brightness(
    pose: &Pose,
    sun: &UnitVector,
    landmark: &Vector3<f64>,
    normal: &UnitVector,
    albedo: f64,
    calibration: &ImageCalibration,
    model: &ReflectanceModel,
) -> Result<f64, PhotometryError> {
    predict_brightness_with_cutoff(pose, sun, landmark, normal, albedo, calibration, model, DEFAULT_CUTOFF_DEG)
}
