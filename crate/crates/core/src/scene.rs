//! Synthetic crater scene and measurement simulation.
//!
//! The surface is a sphere with a smooth bowl-shaped depression and a raised
//! rim centred at the north pole `(0, 0, R)`. Heights and normals are closed
//! form. Landmarks are the surface points hit by the reference camera's
//! pixel grid; every other view observes them with keypoint, brightness and
//! Sun-sensor noise.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factors::{CameraIntrinsics, FactorError};
use crate::manifold::{Pose, Rotation, UnitVector};
use crate::photometry::{
    predict_brightness_with_cutoff, ImageCalibration, ReflectanceModel, SchroderCoefficients, DEFAULT_CUTOFF_DEG,
};
use crate::reconstruction::{Camera, LandmarkState, MeasurementSet, Observation, Reconstruction, SunMeasurement, ViewState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("invalid scene configuration: {0}")]
    InvalidConfig(String),
    #[error("view {view} sees only {count} landmarks")]
    InsufficientVisibility { view: u32, count: usize },
    #[error("reference ray for landmark {0} misses the surface")]
    RayMiss(u32),
    #[error(transparent)]
    Factor(#[from] FactorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlbedoPattern {
    Constant,
    DarkSpot,
    Gradient,
}

/// Scene geometry and viewing setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub body_radius_km: f64,
    /// Radius of the crater rim.
    pub crater_radius_km: f64,
    pub crater_depth_km: f64,
    pub rim_height_km: f64,
    pub albedo_pattern: AlbedoPattern,
    pub base_albedo: f64,
    /// Relative albedo variation of the dark-spot and gradient patterns.
    pub albedo_contrast: f64,
    pub num_views: u32,
    pub orbital_radius_km: f64,
    /// Largest angle, seen from the body centre, between a camera and the crater.
    pub max_off_nadir_deg: f64,
    /// Sun incidence at the crater centre.
    pub sun_incidence_deg: f64,
    pub sun_azimuth_deg: f64,
    /// Sun azimuth swept from the first to the last view.
    pub sun_arc_deg: f64,
    /// Landmarks form a `grid_size × grid_size` block of pixels in the reference image.
    pub grid_size: u32,
    /// Spacing of that block in pixels.
    pub grid_step_px: f64,
    pub image_width: u32,
    pub image_height: u32,
    pub focal_length_px: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            body_radius_km: 265.0,
            crater_radius_km: 7.5,
            crater_depth_km: 1.2,
            rim_height_km: 0.25,
            albedo_pattern: AlbedoPattern::DarkSpot,
            base_albedo: 0.4,
            albedo_contrast: 0.3,
            num_views: 29,
            orbital_radius_km: 950.0,
            max_off_nadir_deg: 15.0,
            sun_incidence_deg: 45.0,
            sun_azimuth_deg: 0.0,
            sun_arc_deg: 120.0,
            grid_size: 100,
            grid_step_px: 1.0,
            image_width: 1024,
            image_height: 1024,
            focal_length_px: 3500.0,
            seed: 42,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::InvalidConfig(m.to_string()));
        let positive = [
            ("body_radius_km", self.body_radius_km),
            ("crater_radius_km", self.crater_radius_km),
            ("orbital_radius_km", self.orbital_radius_km),
            ("focal_length_px", self.focal_length_px),
            ("grid_step_px", self.grid_step_px),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(&format!("scene.{name} must be positive"));
            }
        }
        if self.crater_depth_km < 0.0 || self.rim_height_km < 0.0 {
            return bad("scene crater depth and rim height must be non-negative");
        }
        if self.num_views < 2 {
            return bad("scene.num_views must be at least 2");
        }
        if self.grid_size < 2 {
            return bad("scene.grid_size must be at least 2");
        }
        if self.orbital_radius_km <= self.body_radius_km + self.rim_height_km {
            return bad("scene.orbital_radius_km must exceed the body radius");
        }
        if !(0.0..=1.0).contains(&self.base_albedo) {
            return bad("scene.base_albedo must lie in [0, 1]");
        }
        if !(0.0..90.0).contains(&self.sun_incidence_deg) {
            return bad("scene.sun_incidence_deg must lie in [0, 90)");
        }
        if !(0.0..60.0).contains(&self.max_off_nadir_deg) {
            return bad("scene.max_off_nadir_deg must lie in [0, 60)");
        }
        if self.image_width == 0 || self.image_height == 0 {
            return bad("scene image size must be positive");
        }
        Ok(())
    }

    pub fn camera(&self) -> Camera {
        Camera {
            intrinsics: CameraIntrinsics::new(
                self.focal_length_px,
                self.focal_length_px,
                self.image_width as f64 / 2.0,
                self.image_height as f64 / 2.0,
            ),
            width: self.image_width,
            height: self.image_height,
        }
    }
}

/// Measurement noise levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Keypoint noise in pixels (non-reference images).
    pub pixel_sigma: f64,
    pub brightness_sigma: f64,
    /// Sun-sensor noise per tangent axis, radians.
    pub sun_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { pixel_sigma: 1.0, brightness_sigma: 0.01, sun_sigma: 1e-3 }
    }
}

impl NoiseConfig {
    pub fn noise_free() -> Self {
        Self { pixel_sigma: 0.0, brightness_sigma: 0.0, sun_sigma: 0.0 }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        for (name, v) in [
            ("pixel_sigma", self.pixel_sigma),
            ("brightness_sigma", self.brightness_sigma),
            ("sun_sigma", self.sun_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SceneError::InvalidConfig(format!("noise.{name} must be non-negative")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelChoice {
    LunarLambert,
    Schroder,
}

/// Reflectance model and radiometric calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhotometryConfig {
    pub model: ModelChoice,
    pub calibrated: bool,
    pub cutoff_deg: f64,
    pub schroder: SchroderCoefficients,
}

impl Default for PhotometryConfig {
    fn default() -> Self {
        Self {
            model: ModelChoice::LunarLambert,
            calibrated: true,
            cutoff_deg: DEFAULT_CUTOFF_DEG,
            schroder: SchroderCoefficients::default(),
        }
    }
}

impl PhotometryConfig {
    pub fn reflectance_model(&self) -> ReflectanceModel {
        match self.model {
            ModelChoice::LunarLambert => ReflectanceModel::LunarLambert,
            ModelChoice::Schroder => ReflectanceModel::Schroder(self.schroder),
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.cutoff_deg > 0.0 && self.cutoff_deg <= 90.0) {
            return Err(SceneError::InvalidConfig("photometry.cutoff_deg must lie in (0, 90]".into()));
        }
        Ok(())
    }
}

/// Analytic crater surface.
///
/// In local coordinates around the crater centre the height above the body
/// centre is `h(x, y) = √(R² − ρ²) + D(ρ²)` with
/// `D(u) = −depth·exp(−u/(2σ²)) + rim·(u/c²)·exp(1 − u/c²)`, `σ = c/3` and
/// `c` the rim radius. `D` depends on `ρ²` so the surface is smooth at the
/// centre; the rim term peaks at `ρ = c` with height `rim`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CraterSurface {
    pub body_radius: f64,
    pub rim_radius: f64,
    pub depth: f64,
    pub rim_height: f64,
}

impl CraterSurface {
    pub fn from_config(c: &SceneConfig) -> Self {
        Self {
            body_radius: c.body_radius_km,
            rim_radius: c.crater_radius_km,
            depth: c.crater_depth_km,
            rim_height: c.rim_height_km,
        }
    }

    fn bowl_sigma2(&self) -> f64 {
        let s = self.rim_radius / 3.0;
        s * s
    }

    /// Height above the body centre.
    pub fn height(&self, x: f64, y: f64) -> f64 {
        let u = x * x + y * y;
        let c2 = self.rim_radius * self.rim_radius;
        let d = -self.depth * (-u / (2.0 * self.bowl_sigma2())).exp() + self.rim_height * (u / c2) * (1.0 - u / c2).exp();
        (self.body_radius * self.body_radius - u).sqrt() + d
    }

    /// `(∂h/∂x, ∂h/∂y)`.
    pub fn gradient(&self, x: f64, y: f64) -> Vector2<f64> {
        let u = x * x + y * y;
        let c2 = self.rim_radius * self.rim_radius;
        let s2 = self.bowl_sigma2();
        let dd_du = self.depth / (2.0 * s2) * (-u / (2.0 * s2)).exp() + self.rim_height / c2 * (1.0 - u / c2).exp() * (1.0 - u / c2);
        let k = 2.0 * dd_du - 1.0 / (self.body_radius * self.body_radius - u).sqrt();
        Vector2::new(k * x, k * y)
    }

    /// Outward unit normal `∝ (−h_x, −h_y, 1)`.
    pub fn normal(&self, x: f64, y: f64) -> UnitVector {
        let g = self.gradient(x, y);
        UnitVector::new(Vector3::new(-g.x, -g.y, 1.0)).expect("finite gradient")
    }

    /// First intersection of the ray `origin + t·dir` (`t > 0`) with the
    /// surface, for rays coming from above.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Vector3<f64>> {
        let above = |p: &Vector3<f64>| -> Option<f64> {
            if p.x * p.x + p.y * p.y >= self.body_radius * self.body_radius {
                return None;
            }
            Some(p.z - self.height(p.x, p.y))
        };
        if above(origin)? <= 0.0 || dir.z >= 0.0 {
            return None;
        }
        let floor = self.body_radius - self.depth - self.rim_height - 1.0;
        let mut hi = (origin.z - floor) / -dir.z;
        let mut lo = 0.0;
        if above(&(origin + dir * hi))? >= 0.0 {
            return None;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            match above(&(origin + dir * mid)) {
                Some(g) if g > 0.0 => lo = mid,
                Some(_) => hi = mid,
                None => return None,
            }
        }
        Some(origin + dir * hi)
    }
}

/// Albedo at surface point `(x, y)`.
pub fn albedo_at(config: &SceneConfig, x: f64, y: f64) -> f64 {
    let c = config.crater_radius_km;
    let a = match config.albedo_pattern {
        AlbedoPattern::Constant => config.base_albedo,
        AlbedoPattern::DarkSpot => {
            let (sx, sy, r) = (0.3 * c, -0.2 * c, 0.3 * c);
            let d2 = (x - sx).powi(2) + (y - sy).powi(2);
            config.base_albedo * (1.0 - config.albedo_contrast * (-d2 / (2.0 * r * r)).exp())
        }
        AlbedoPattern::Gradient => {
            config.base_albedo * (1.0 + config.albedo_contrast * (x / (2.0 * c)).clamp(-1.0, 1.0))
        }
    };
    a.clamp(0.0, 1.0)
}

/// Camera-to-body rotation of a camera at `position` looking at `target`.
pub fn look_at(position: &Vector3<f64>, target: &Vector3<f64>) -> Rotation {
    let z = (target - position).normalize();
    let up = Vector3::y();
    let x = z.cross(&up).normalize();
    let y = z.cross(&x);
    Rotation::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]))
}

/// Landmarks of the scene with their reference-image pixels.
#[derive(Debug, Clone)]
pub struct Terrain {
    pub surface: CraterSurface,
    /// `(landmark id, reference pixel, state)` in id order.
    pub landmarks: Vec<(u32, Vector2<f64>, LandmarkState)>,
}

/// Reference (nadir) camera pose.
pub fn reference_pose(config: &SceneConfig) -> Pose {
    let position = Vector3::new(0.0, 0.0, config.orbital_radius_km);
    Pose::new(look_at(&position, &Vector3::new(0.0, 0.0, config.body_radius_km)), position)
}

/// Casts the reference camera's landmark pixel grid onto the crater surface.
pub fn generate_crater_terrain(config: &SceneConfig) -> Result<Terrain, SceneError> {
    config.validate()?;
    let surface = CraterSurface::from_config(config);
    let camera = config.camera();
    let pose = reference_pose(config);
    let g = config.grid_size;
    let half = (g - 1) as f64 / 2.0;
    let mut landmarks = Vec::with_capacity((g * g) as usize);
    for row in 0..g {
        for col in 0..g {
            let id = row * g + col;
            let pixel = Vector2::new(
                camera.intrinsics.cx + (col as f64 - half) * config.grid_step_px,
                camera.intrinsics.cy + (row as f64 - half) * config.grid_step_px,
            );
            let dir = pose.rotation.matrix() * camera.intrinsics.backproject(&pixel).normalize();
            let p = surface.intersect(&pose.translation, &dir).ok_or(SceneError::RayMiss(id))?;
            let state = LandmarkState { position: p, normal: surface.normal(p.x, p.y), albedo: albedo_at(config, p.x, p.y) };
            landmarks.push((id, pixel, state));
        }
    }
    Ok(Terrain { surface, landmarks })
}

/// Camera poses and body-frame Sun directions of all views.
pub fn view_geometry(config: &SceneConfig) -> Vec<(Pose, UnitVector)> {
    let target = Vector3::new(0.0, 0.0, config.body_radius_km);
    let n = config.num_views;
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|k| {
            let pose = if k == 0 {
                reference_pose(config)
            } else {
                let frac = (k as f64 / (n - 1) as f64).sqrt();
                let theta = config.max_off_nadir_deg.to_radians() * frac;
                let psi = golden * k as f64;
                let position =
                    config.orbital_radius_km * Vector3::new(theta.sin() * psi.cos(), theta.sin() * psi.sin(), theta.cos());
                Pose::new(look_at(&position, &target), position)
            };
            let az = (config.sun_azimuth_deg + config.sun_arc_deg * k as f64 / (n - 1).max(1) as f64).to_radians();
            let inc = config.sun_incidence_deg.to_radians();
            let sun = UnitVector::new(Vector3::new(inc.sin() * az.cos(), inc.sin() * az.sin(), inc.cos())).expect("unit");
            (pose, sun)
        })
        .collect()
}

/// Simulated scene: ground truth plus noisy measurements.
#[derive(Debug, Clone)]
pub struct SimulatedScene {
    pub truth: Reconstruction,
    pub measurements: MeasurementSet,
    /// Reference-image pixel of every landmark.
    pub reference_pixels: BTreeMap<u32, Vector2<f64>>,
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    sigma * z
}

/// Renders keypoints, brightness and Sun measurements for every view.
///
/// A landmark is observed when it projects inside the image, faces the
/// camera, is lit, and both incidence and emission are within the cutoff.
/// Reference-image keypoints are exact: they define the landmarks.
pub fn simulate_measurements(
    config: &SceneConfig,
    noise: &NoiseConfig,
    photometry: &PhotometryConfig,
) -> Result<SimulatedScene, SceneError> {
    config.validate()?;
    noise.validate()?;
    photometry.validate()?;
    let terrain = generate_crater_terrain(config)?;
    let camera = config.camera();
    let model = photometry.reflectance_model();
    let views = view_geometry(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // Visible, noise-free predictions first so the uncalibrated bias can be
    // drawn relative to the mean brightness.
    let mut visible: Vec<Vec<(u32, Vector2<f64>, f64)>> = Vec::with_capacity(views.len());
    for (pose, sun) in &views {
        let mut seen = Vec::new();
        for (id, _, l) in &terrain.landmarks {
            let q = pose.inverse_transform_point(&l.position);
            let Ok(pixel) = camera.intrinsics.project_camera(&q) else { continue };
            if !camera.contains(&pixel) {
                continue;
            }
            let Ok(b) = predict_brightness_with_cutoff(
                pose,
                sun,
                &l.position,
                &l.normal,
                l.albedo,
                &ImageCalibration::calibrated(),
                &model,
                photometry.cutoff_deg,
            ) else {
                continue;
            };
            seen.push((*id, pixel, b));
        }
        visible.push(seen);
    }
    for (k, seen) in visible.iter().enumerate() {
        if seen.len() < 8 {
            return Err(SceneError::InsufficientVisibility { view: k as u32, count: seen.len() });
        }
    }

    let total: usize = visible.iter().map(Vec::len).sum();
    let mean_brightness = visible.iter().flatten().map(|v| v.2).sum::<f64>() / total as f64;
    let calibrations: Vec<ImageCalibration> = (0..views.len())
        .map(|k| {
            if photometry.calibrated {
                ImageCalibration::calibrated()
            } else if k == 0 {
                ImageCalibration::uncalibrated(1.0, 0.0)
            } else {
                let scale = rng.random_range(0.8..=1.2);
                let bias = rng.random_range(0.0..=0.05 * mean_brightness);
                ImageCalibration::uncalibrated(scale, bias)
            }
        })
        .collect();

    let reference_pixels: BTreeMap<u32, Vector2<f64>> = terrain.landmarks.iter().map(|(id, px, _)| (*id, *px)).collect();
    let mut observations = Vec::with_capacity(total);
    let mut sun_meas = Vec::with_capacity(views.len());
    for (k, seen) in visible.iter().enumerate() {
        let cal = calibrations[k];
        let (pose, sun) = &views[k];
        for &(id, pixel, _) in seen {
            let l = &terrain.landmarks[id as usize].2;
            let b = predict_brightness_with_cutoff(pose, sun, &l.position, &l.normal, l.albedo, &cal, &model, photometry.cutoff_deg)
                .expect("visible geometry");
            let pixel = if k == 0 {
                pixel
            } else {
                pixel + Vector2::new(gaussian(&mut rng, noise.pixel_sigma), gaussian(&mut rng, noise.pixel_sigma))
            };
            let brightness = b + gaussian(&mut rng, noise.brightness_sigma);
            observations.push(Observation { image: k as u32, landmark: id, pixel, brightness });
        }
        let cam_sun = UnitVector::new_unchecked(pose.rotation.matrix().transpose() * sun.as_vector());
        let xi = Vector2::new(gaussian(&mut rng, noise.sun_sigma), gaussian(&mut rng, noise.sun_sigma));
        sun_meas.push(SunMeasurement { image: k as u32, direction: cam_sun.retract(&xi) });
    }

    let truth = Reconstruction {
        views: views
            .iter()
            .zip(&calibrations)
            .map(|((pose, sun), cal)| ViewState { pose: *pose, sun: *sun, calibration: *cal })
            .collect(),
        landmarks: terrain.landmarks.iter().map(|(id, _, l)| (*id, *l)).collect(),
    };
    Ok(SimulatedScene {
        truth,
        measurements: MeasurementSet { camera, num_images: config.num_views, observations, sun: sun_meas },
        reference_pixels,
    })
}
