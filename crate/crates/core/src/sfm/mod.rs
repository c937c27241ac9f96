//! Keypoint-only structure from motion used to initialize the joint
//! geometric and photometric problem, and the end-to-end reconstruction
//! driver built on it.

pub mod essential;
pub mod homography;
pub mod init;
pub mod problem;
pub mod sim3;
pub mod triangulate;

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factors::FactorError;
use crate::graph::{optimize_lm, GraphError, Key, OptimizerConfig, OptimizerReport};
use crate::manifold::{Pose, UnitVector};
use crate::photometry::ImageCalibration;
use crate::reconstruction::{LandmarkState, MeasurementSet, Observation, Reconstruction, ViewState};
use crate::scene::PhotometryConfig;

pub use essential::{estimate_essential, recover_pose, Correspondence, EssentialEstimate, RansacConfig, RelativePose};
pub use homography::{decompose_homography, estimate_homography, model_scores, HomographyEstimate, PlanarMotion};
pub use init::{albedo_estimates, init_albedos, init_normals};
pub use problem::{build_geometric_problem, build_problem, smoothness_pairs, well_observed, FactorCounts, Problem};
pub use sim3::{karcher_mean, sim3_align, Sim3};
pub use triangulate::{triangulate_dlt, triangulate_ransac, Triangulation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SfmError {
    #[error("need at least {needed} inputs, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("degenerate configuration: {0}")]
    Degenerate(&'static str),
    #[error("two pose decompositions satisfy cheirality equally")]
    AmbiguousPose,
    #[error("views have too little parallax to triangulate")]
    InsufficientParallax,
    #[error("point cloud has {got} points, plane fits need {needed}")]
    InsufficientCloud { needed: usize, got: usize },
    #[error("landmark {0} has no view with valid photometric geometry")]
    NoValidView(u32),
    #[error("neighbourhood is collinear; no plane normal")]
    Collinear,
    #[error("no landmark qualifies for the problem")]
    EmptyGraph,
    #[error("no initial state for {0}")]
    MissingState(Key),
    #[error("reference image has no observations")]
    NoReferenceObservations,
    #[error("fewer than two views could be registered")]
    TooFewViews,
    #[error("invalid bootstrap configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Factor(#[from] FactorError),
}

/// Largest angle between plane normals read from different images that still
/// counts as the same plane.
const PLANE_NORMAL_TOLERANCE_DEG: f64 = 10.0;

/// RANSAC iterations needed to draw one all-inlier sample of `sample_size`
/// with probability `confidence` when a fraction `inlier_ratio` are inliers.
pub fn ransac_iterations(inlier_ratio: f64, sample_size: usize, confidence: f64) -> usize {
    if inlier_ratio >= 1.0 {
        return 1;
    }
    if inlier_ratio <= 0.0 {
        return usize::MAX;
    }
    let p_good = inlier_ratio.powi(sample_size as i32);
    if p_good <= 0.0 {
        return usize::MAX;
    }
    let n = (1.0 - confidence).ln() / (1.0 - p_good).ln();
    if n.is_finite() { n.ceil().max(1.0) as usize } else { usize::MAX }
}

/// Bootstrap and problem-assembly settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    /// Sampson-distance inlier threshold of the two-view RANSAC.
    pub essential_threshold_px: f64,
    /// Reprojection inlier threshold of the per-landmark triangulation.
    pub triangulation_threshold_px: f64,
    /// Register nearly planar views through a homography when it explains
    /// the correspondences about as well as the essential matrix.
    pub planar_fallback: bool,
    /// Forward transfer-error inlier threshold of the homography RANSAC.
    pub homography_threshold_px: f64,
    /// Share of the combined model score above which the homography wins.
    pub planar_score_ratio: f64,
    pub ransac_confidence: f64,
    pub ransac_max_iterations: usize,
    pub triangulation_hypotheses: usize,
    /// Keypoint-only bundle adjustment before the photometric initialization.
    pub geometric_refinement: bool,
    pub geometric_max_iterations: usize,
    pub normal_neighbors: usize,
    /// Minimum observations for a landmark to enter the problem.
    pub min_views: usize,
    pub keypoint_sigma_px: f64,
    pub brightness_sigma_calibrated: f64,
    pub brightness_sigma_uncalibrated: f64,
    pub sun_sigma: f64,
    pub smoothness: bool,
    pub smoothness_weight: f64,
    pub smoothness_radius_px: f64,
    /// Standard deviation of the gauge priors.
    pub gauge_sigma: f64,
    /// Landmarks drawn for the similarity alignment in evaluation.
    pub alignment_landmarks: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            essential_threshold_px: 0.5,
            triangulation_threshold_px: 0.5,
            planar_fallback: true,
            homography_threshold_px: 3.0,
            planar_score_ratio: 0.45,
            ransac_confidence: 0.999,
            ransac_max_iterations: 2000,
            triangulation_hypotheses: 50,
            geometric_refinement: true,
            geometric_max_iterations: 50,
            normal_neighbors: init::DEFAULT_NORMAL_NEIGHBORS,
            min_views: 8,
            keypoint_sigma_px: 1.0,
            brightness_sigma_calibrated: 0.01,
            brightness_sigma_uncalibrated: 0.5,
            sun_sigma: 1e-3,
            smoothness: true,
            smoothness_weight: 1e-4,
            smoothness_radius_px: 1.0,
            gauge_sigma: 1e-6,
            alignment_landmarks: 180,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("essential_threshold_px", self.essential_threshold_px),
            ("triangulation_threshold_px", self.triangulation_threshold_px),
            ("homography_threshold_px", self.homography_threshold_px),
            ("keypoint_sigma_px", self.keypoint_sigma_px),
            ("brightness_sigma_calibrated", self.brightness_sigma_calibrated),
            ("brightness_sigma_uncalibrated", self.brightness_sigma_uncalibrated),
            ("sun_sigma", self.sun_sigma),
            ("smoothness_weight", self.smoothness_weight),
            ("smoothness_radius_px", self.smoothness_radius_px),
            ("gauge_sigma", self.gauge_sigma),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.ransac_confidence > 0.0 && self.ransac_confidence < 1.0) {
            return Err(format!("ransac_confidence must lie in (0, 1), got {}", self.ransac_confidence));
        }
        if !(self.planar_score_ratio > 0.0 && self.planar_score_ratio < 1.0) {
            return Err(format!("planar_score_ratio must lie in (0, 1), got {}", self.planar_score_ratio));
        }
        if self.ransac_max_iterations == 0 || self.triangulation_hypotheses == 0 {
            return Err("RANSAC iteration limits must be positive".into());
        }
        if self.normal_neighbors < 2 {
            return Err(format!("normal_neighbors must be at least 2, got {}", self.normal_neighbors));
        }
        if self.min_views < 2 {
            return Err(format!("min_views must be at least 2, got {}", self.min_views));
        }
        if self.alignment_landmarks < 3 {
            return Err(format!("alignment_landmarks must be at least 3, got {}", self.alignment_landmarks));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct BootstrapReport {
    /// Image whose baseline to the reference image fixes the initial scale.
    pub scale_view: u32,
    /// Essential-matrix inliers per image; zero for the reference image.
    pub view_inliers: Vec<usize>,
    pub failed_views: Vec<u32>,
    /// Images registered through the plane-induced homography.
    pub planar_views: Vec<u32>,
    pub triangulated: usize,
    pub rejected_observations: usize,
    pub without_albedo: usize,
    pub geometric: Option<OptimizerReport>,
}

#[derive(Debug, Clone)]
pub struct Bootstrap {
    pub reconstruction: Reconstruction,
    /// Observations that survived outlier rejection, restricted to kept landmarks.
    pub observations: Vec<Observation>,
    pub report: BootstrapReport,
}

/// Two-view explanation of one image against the reference image.
enum TwoView {
    Epipolar(RelativePose),
    /// Admissible plane-induced motions, disambiguated across views later.
    Planar(Vec<PlanarMotion>),
}

struct Registration {
    model: TwoView,
    /// Inlier bearings in the reference and the registered image.
    inliers: Vec<(u32, Vector3<f64>, Vector3<f64>)>,
}

fn register_view(
    measurements: &MeasurementSet,
    reference: &BTreeMap<u32, Observation>,
    image: u32,
    config: &BootstrapConfig,
) -> Option<Registration> {
    let k = measurements.camera.intrinsics;
    let corrs: Vec<Correspondence> = measurements
        .in_image(image)
        .values()
        .filter_map(|o| {
            reference.get(&o.landmark).map(|r| Correspondence { first: r.pixel, second: o.pixel, landmark: o.landmark })
        })
        .collect();
    let ransac = |threshold_px| RansacConfig {
        threshold_px,
        confidence: config.ransac_confidence,
        max_iterations: config.ransac_max_iterations,
        seed: config.seed.wrapping_add(image as u64),
    };
    let essential = estimate_essential(&corrs, &k, &ransac(config.essential_threshold_px)).ok();
    let homography = if config.planar_fallback {
        estimate_homography(&corrs, &k, &ransac(config.homography_threshold_px)).ok()
    } else {
        None
    };
    let planar = match (&essential, &homography) {
        (Some(e), Some(h)) => {
            let (sf, sh) = model_scores(&e.essential, &h.homography, &corrs, &k, config.keypoint_sigma_px);
            sh > config.planar_score_ratio * (sf + sh)
        }
        (None, Some(_)) => true,
        _ => false,
    };
    let bearings = |mask: &[bool]| -> Vec<(u32, Vector3<f64>, Vector3<f64>)> {
        corrs
            .iter()
            .zip(mask)
            .filter(|(_, m)| **m)
            .map(|(c, _)| (c.landmark, k.backproject(&c.first), k.backproject(&c.second)))
            .collect()
    };
    if planar {
        let h = homography?;
        let inliers = bearings(&h.inliers);
        let (x1, x2): (Vec<_>, Vec<_>) = inliers.iter().map(|(_, a, b)| (*a, *b)).unzip();
        let motions: Vec<PlanarMotion> = decompose_homography(&h.homography, &x1, &x2)
            .into_iter()
            .filter(|m| m.translation.norm() > 0.0)
            .collect();
        (!motions.is_empty()).then_some(Registration { model: TwoView::Planar(motions), inliers })
    } else {
        let e = essential?;
        let relative = recover_pose(&e.essential, &corrs, &e.inliers, &k).ok()?;
        Some(Registration { model: TwoView::Epipolar(relative), inliers: bearings(&e.inliers) })
    }
}

/// Reference-camera depths of the inliers for a unit baseline.
fn unit_depths(relative: &RelativePose, inliers: &[(u32, Vector3<f64>, Vector3<f64>)]) -> BTreeMap<u32, f64> {
    let r = *relative.rotation.matrix();
    let t = *relative.translation.as_vector();
    inliers
        .iter()
        .filter_map(|(j, x1, x2)| {
            let (d1, d2) = essential::two_view_depths(&r, &t, x1, x2)?;
            (d1 > 0.0 && d2 > 0.0).then_some((*j, d1))
        })
        .collect()
}

/// Plane normal shared by the most planar registrations, each of which
/// votes with all of its admissible readings.
fn consensus_normal(registrations: &[Option<Registration>], tolerance_deg: f64) -> Option<Vector3<f64>> {
    let readings: Vec<&Vec<PlanarMotion>> = registrations
        .iter()
        .flatten()
        .filter_map(|r| match &r.model {
            TwoView::Planar(m) => Some(m),
            TwoView::Epipolar(_) => None,
        })
        .collect();
    let cos_tol = tolerance_deg.to_radians().cos();
    let support = |n: &Vector3<f64>| readings.iter().filter(|ms| ms.iter().any(|m| m.normal.dot(n) >= cos_tol)).count();
    let mut best: Option<(Vector3<f64>, usize)> = None;
    for m in readings.iter().flat_map(|ms| ms.iter()) {
        let s = support(&m.normal);
        if best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((m.normal, s));
        }
    }
    best.map(|(n, _)| n)
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Keypoint-only initialization of every variable of the joint problem.
///
/// Each image is registered against image 0 through a RANSAC essential
/// matrix, or through a plane-induced homography when that explains the
/// correspondences about as well, which is the usual case for shallow
/// terrain seen through a narrow field of view. The homography readings are
/// disambiguated by the plane normal most registrations agree on. The unit
/// baselines are brought to a common scale by the median
/// ratio of reference-camera depths shared with the best-registered image.
/// Landmarks are triangulated robustly from all registered views and,
/// optionally, refined by keypoint bundle adjustment. Normals come from
/// local plane fits, Sun directions from rotating the measured camera-frame
/// directions, and albedos from inverting the reflectance model with unit
/// gain and zero offset.
pub fn bootstrap(
    measurements: &MeasurementSet,
    config: &BootstrapConfig,
    photometry: &PhotometryConfig,
    optimizer: &OptimizerConfig,
) -> Result<Bootstrap, SfmError> {
    config.validate().map_err(SfmError::InvalidConfig)?;
    let k = measurements.camera.intrinsics;
    let reference = measurements.in_image(0);
    if reference.is_empty() {
        return Err(SfmError::NoReferenceObservations);
    }
    let n = measurements.num_images;
    let registered: Vec<Option<Registration>> = (1..n)
        .into_par_iter()
        .map(|i| register_view(measurements, &reference, i, config))
        .collect();
    let normal = consensus_normal(&registered, PLANE_NORMAL_TOLERANCE_DEG);

    let mut report = BootstrapReport { view_inliers: vec![0; n as usize], ..Default::default() };
    let resolved: Vec<Option<(RelativePose, BTreeMap<u32, f64>)>> = registered
        .iter()
        .map(|reg| {
            let reg = reg.as_ref()?;
            let relative = match &reg.model {
                TwoView::Epipolar(r) => *r,
                TwoView::Planar(motions) => {
                    let n = normal?;
                    let m = motions.iter().max_by(|a, b| a.normal.dot(&n).total_cmp(&b.normal.dot(&n)))?;
                    RelativePose { rotation: m.rotation, translation: UnitVector::new(m.translation)? }
                }
            };
            Some((relative, unit_depths(&relative, &reg.inliers)))
        })
        .collect();
    for (idx, reg) in registered.iter().enumerate() {
        if let Some(reg) = reg {
            report.view_inliers[idx + 1] = reg.inliers.len();
            if matches!(reg.model, TwoView::Planar(_)) {
                report.planar_views.push(idx as u32 + 1);
            }
        }
    }
    let (scale_idx, _) = resolved
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.as_ref().map(|(_, d)| (i, d.len())))
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .ok_or(SfmError::TooFewViews)?;
    report.scale_view = scale_idx as u32 + 1;
    let scale_depths = &resolved[scale_idx].as_ref().expect("resolved").1;

    let mut poses: Vec<Option<Pose>> = vec![None; n as usize];
    poses[0] = Some(Pose::identity());
    for (idx, res) in resolved.iter().enumerate() {
        let image = idx as u32 + 1;
        let Some((relative, depths)) = res else {
            report.failed_views.push(image);
            continue;
        };
        let ratios: Vec<f64> = depths.iter().filter_map(|(j, d)| scale_depths.get(j).map(|dr| dr / d)).collect();
        let Some(scale) = median(ratios) else {
            report.failed_views.push(image);
            continue;
        };
        let rt = relative.rotation.transpose();
        let t = scale * relative.translation.as_vector();
        poses[image as usize] = Some(Pose::new(rt, -(rt.matrix() * t)));
    }
    if poses.iter().flatten().count() < 2 {
        return Err(SfmError::TooFewViews);
    }

    let tracks: Vec<(u32, Vec<Observation>)> = measurements
        .by_landmark()
        .into_iter()
        .map(|(j, obs)| (j, obs.into_iter().filter(|o| poses.get(o.image as usize).is_some_and(|p| p.is_some())).collect()))
        .collect();
    let triangulated: Vec<Option<(u32, Vector3<f64>, Vec<Observation>)>> = tracks
        .par_iter()
        .map(|(j, obs)| {
            let input: Vec<(Pose, nalgebra::Vector2<f64>)> =
                obs.iter().map(|o| (poses[o.image as usize].expect("registered"), o.pixel)).collect();
            let tri = triangulate_ransac(
                &input,
                &k,
                config.triangulation_threshold_px,
                config.triangulation_hypotheses,
                config.seed ^ (*j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            )
            .ok()?;
            let kept: Vec<Observation> = obs.iter().zip(&tri.inliers).filter(|(_, m)| **m).map(|(o, _)| *o).collect();
            Some((*j, tri.point, kept))
        })
        .collect();

    let total_obs: usize = tracks.iter().map(|(_, o)| o.len()).sum();
    let mut observations = Vec::new();
    let mut landmarks = BTreeMap::new();
    for (j, point, kept) in triangulated.into_iter().flatten() {
        landmarks.insert(j, LandmarkState { position: point, normal: UnitVector::z(), albedo: 0.0 });
        observations.extend(kept);
    }
    report.triangulated = landmarks.len();
    report.rejected_observations = total_obs - observations.len();

    let calibration = if photometry.calibrated {
        ImageCalibration::calibrated()
    } else {
        ImageCalibration::uncalibrated(1.0, 0.0)
    };
    let mut recon = Reconstruction {
        views: (0..n)
            .map(|i| {
                let pose = poses[i as usize].unwrap_or_else(Pose::identity);
                let sun = measurements
                    .sun_for(i)
                    .map(|s| UnitVector::new(pose.rotation.matrix() * s.as_vector()).expect("unit"))
                    .unwrap_or_else(UnitVector::z);
                ViewState { pose, sun, calibration }
            })
            .collect(),
        landmarks,
    };
    let kept: BTreeSet<u32> = well_observed(&observations, config.min_views);
    recon.retain_landmarks(&kept);
    observations.retain(|o| kept.contains(&o.landmark));

    if config.geometric_refinement {
        let problem = build_geometric_problem(measurements, &observations, &recon, config)?;
        let opt = OptimizerConfig { max_iterations: config.geometric_max_iterations, ..optimizer.clone() };
        let (values, rep) = optimize_lm(&problem.graph, &problem.values, &opt)?;
        recon.update_from(&values);
        report.geometric = Some(rep);
        // Suns follow the refined rotations.
        for (i, view) in recon.views.iter_mut().enumerate() {
            if let Some(s) = measurements.sun_for(i as u32) {
                view.sun = UnitVector::new(view.pose.rotation.matrix() * s.as_vector()).expect("unit");
            }
        }
    }

    let ids: Vec<u32> = recon.landmarks.keys().copied().collect();
    let cloud: Vec<Vector3<f64>> = recon.landmarks.values().map(|l| l.position).collect();
    let normals = init_normals(&cloud, config.normal_neighbors, &recon.views[0].pose.translation)?;
    for (j, nrm) in ids.iter().zip(normals) {
        recon.landmarks.get_mut(j).expect("present").normal = nrm;
    }

    let (albedos, missing) = albedo_estimates(
        &recon.landmarks,
        &recon.views,
        &observations,
        &photometry.reflectance_model(),
        photometry.cutoff_deg,
    );
    for (j, a) in albedos {
        recon.landmarks.get_mut(&j).expect("present").albedo = a;
    }
    report.without_albedo = missing.len();
    let missing: BTreeSet<u32> = missing.into_iter().collect();
    recon.landmarks.retain(|j, _| !missing.contains(j));
    observations.retain(|o| !missing.contains(&o.landmark));
    if recon.landmarks.is_empty() {
        return Err(SfmError::EmptyGraph);
    }
    Ok(Bootstrap { reconstruction: recon, observations, report })
}

/// Outcome of the joint optimization.
#[derive(Debug, Clone)]
pub struct Solution {
    pub initial: Reconstruction,
    pub reconstruction: Reconstruction,
    pub observations: Vec<Observation>,
    pub bootstrap: BootstrapReport,
    pub optimizer: OptimizerReport,
    pub counts: FactorCounts,
    pub num_variables: usize,
}

/// Bootstrap followed by the joint keypoint and photometric optimization.
pub fn reconstruct(
    measurements: &MeasurementSet,
    config: &BootstrapConfig,
    photometry: &PhotometryConfig,
    optimizer: &OptimizerConfig,
) -> Result<Solution, SfmError> {
    let boot = bootstrap(measurements, config, photometry, optimizer)?;
    solve_from(measurements, boot, config, photometry, optimizer)
}

/// Joint optimization from an existing initialization.
pub fn solve_from(
    measurements: &MeasurementSet,
    boot: Bootstrap,
    config: &BootstrapConfig,
    photometry: &PhotometryConfig,
    optimizer: &OptimizerConfig,
) -> Result<Solution, SfmError> {
    let problem = build_problem(measurements, &boot.observations, &boot.reconstruction, config, photometry)?;
    let (values, report) = optimize_lm(&problem.graph, &problem.values, optimizer)?;
    let mut recon = boot.reconstruction.clone();
    let kept: BTreeSet<u32> = problem.landmarks.iter().copied().collect();
    recon.retain_landmarks(&kept);
    recon.update_from(&values);
    Ok(Solution {
        initial: boot.reconstruction,
        reconstruction: recon,
        observations: boot.observations,
        bootstrap: boot.report,
        optimizer: report,
        counts: problem.counts,
        num_variables: problem.graph.num_variables(),
    })
}
