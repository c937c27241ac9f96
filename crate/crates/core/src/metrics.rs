//! Accuracy of an estimated reconstruction against a reference one.

use std::collections::BTreeMap;
use std::io::{self, Write};

use kiddo::SquaredEuclidean;
use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::manifold::{se3_log_error, Pose, UnitVector};
use crate::photometry::{predict_brightness_with_cutoff, ReflectanceModel};
use crate::reconstruction::{LandmarkState, Observation, Reconstruction, ViewState};
use crate::sfm::init::Tree;
use crate::sfm::{sim3_align, SfmError, Sim3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("estimate and reference share no landmark ids")]
    NoCommonLandmarks,
    #[error("estimate has {estimate} views, reference has {reference}")]
    ViewCountMismatch { estimate: usize, reference: usize },
    #[error("alignment failed: {0}")]
    Alignment(#[from] SfmError),
}

pub fn landmark_error(estimate: &Vector3<f64>, truth: &Vector3<f64>) -> f64 {
    (estimate - truth).norm()
}

/// Angle between two unit vectors in degrees, in `[0, 180]`. Equal to
/// `acos(aᵀb)` but accurate for nearly parallel vectors.
pub fn angle_error_deg(a: &UnitVector, b: &UnitVector) -> f64 {
    let (a, b) = (a.as_vector(), b.as_vector());
    a.cross(b).norm().atan2(a.dot(b)).to_degrees()
}

pub fn normal_error_deg(estimate: &UnitVector, truth: &UnitVector) -> f64 {
    angle_error_deg(estimate, truth)
}

pub fn sun_error_deg(estimate: &UnitVector, truth: &UnitVector) -> f64 {
    angle_error_deg(estimate, truth)
}

/// Relative albedo error; undefined for a zero reference albedo.
pub fn albedo_error(estimate: f64, truth: f64) -> Option<f64> {
    (truth != 0.0).then(|| (estimate - truth).abs() / truth.abs())
}

/// Root-mean-square of `predicted − measured` over the mean measurement.
pub fn rmse_over_mean(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let n = pairs.len() as f64;
    let mean = pairs.iter().map(|(_, m)| m).sum::<f64>() / n;
    let mse = pairs.iter().map(|(p, m)| (p - m).powi(2)).sum::<f64>() / n;
    (mean != 0.0).then(|| mse.sqrt() / mean.abs())
}

/// Normalized photometric error of one landmark over the views where its
/// geometry is valid.
pub fn photometric_error(
    landmark: &LandmarkState,
    views: &[ViewState],
    observations: &[Observation],
    model: &ReflectanceModel,
    cutoff_deg: f64,
) -> Option<f64> {
    let pairs: Vec<(f64, f64)> = observations
        .iter()
        .filter_map(|o| {
            let v = views.get(o.image as usize)?;
            let p = predict_brightness_with_cutoff(
                &v.pose,
                &v.sun,
                &landmark.position,
                &landmark.normal,
                landmark.albedo,
                &v.calibration,
                model,
                cutoff_deg,
            )
            .ok()?;
            Some((p, o.brightness))
        })
        .collect();
    rmse_over_mean(&pairs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseError {
    pub rotation_deg: f64,
    pub translation: f64,
}

pub fn pose_error(estimate: &Pose, truth: &Pose) -> PoseError {
    let (dk, dr) = se3_log_error(estimate, truth);
    PoseError { rotation_deg: dk.norm().to_degrees(), translation: dr.norm() }
}

/// Per-view pose errors with their means.
pub fn pose_error_report(estimate: &[Pose], truth: &[Pose]) -> (Vec<PoseError>, PoseError) {
    let errs: Vec<PoseError> = estimate.iter().zip(truth).map(|(e, t)| pose_error(e, t)).collect();
    let n = errs.len().max(1) as f64;
    let mean = PoseError {
        rotation_deg: errs.iter().map(|e| e.rotation_deg).sum::<f64>() / n,
        translation: errs.iter().map(|e| e.translation).sum::<f64>() / n,
    };
    (errs, mean)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(Summary {
        count: values.len(),
        mean: values.iter().sum::<f64>() / values.len() as f64,
        median: quantile(&sorted, 0.5),
        p95: quantile(&sorted, 0.95),
    })
}

/// Ascending ids of a uniformly drawn subset of at most `n` ids.
pub fn alignment_subset(ids: &[u32], n: usize, seed: u64) -> Vec<u32> {
    if ids.len() <= n {
        return ids.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<u32> = sample(&mut rng, ids.len(), n).into_iter().map(|i| ids[i]).collect();
    out.sort_unstable();
    out
}

/// Similarity taking `estimate` onto `reference`, fitted on a seeded subset
/// of shared landmarks plus all camera centres.
pub fn align(estimate: &Reconstruction, reference: &Reconstruction, subset: usize, seed: u64) -> Result<Sim3, MetricsError> {
    if estimate.views.len() != reference.views.len() {
        return Err(MetricsError::ViewCountMismatch { estimate: estimate.views.len(), reference: reference.views.len() });
    }
    let common: Vec<u32> = estimate.landmarks.keys().filter(|j| reference.landmarks.contains_key(j)).copied().collect();
    if common.is_empty() {
        return Err(MetricsError::NoCommonLandmarks);
    }
    let ids = alignment_subset(&common, subset, seed);
    let src: Vec<Vector3<f64>> = ids.iter().map(|j| estimate.landmarks[j].position).collect();
    let dst: Vec<Vector3<f64>> = ids.iter().map(|j| reference.landmarks[j].position).collect();
    let sp: Vec<Pose> = estimate.views.iter().map(|v| v.pose).collect();
    let tp: Vec<Pose> = reference.views.iter().map(|v| v.pose).collect();
    Ok(sim3_align(&src, &dst, &sp, &tp)?)
}

/// Applies a similarity to every geometric quantity; albedos and
/// calibrations are unchanged.
pub fn transform_reconstruction(r: &Reconstruction, s: &Sim3) -> Reconstruction {
    Reconstruction {
        views: r
            .views
            .iter()
            .map(|v| ViewState { pose: s.apply_pose(&v.pose), sun: s.apply_direction(&v.sun), calibration: v.calibration })
            .collect(),
        landmarks: r
            .landmarks
            .iter()
            .map(|(j, l)| {
                (*j, LandmarkState { position: s.apply_point(&l.position), normal: s.apply_direction(&l.normal), albedo: l.albedo })
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkRow {
    pub id: u32,
    /// Distance to the closest reference landmark after alignment.
    pub position_error: f64,
    pub normal_error_deg: f64,
    pub albedo_error: Option<f64>,
    pub photometric_error: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewRow {
    pub image: u32,
    pub rotation_error_deg: f64,
    pub translation_error: f64,
    pub sun_error_deg: f64,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub alignment: Sim3,
    pub landmarks: Vec<LandmarkRow>,
    pub views: Vec<ViewRow>,
}

/// Metric names in report order.
pub const METRIC_NAMES: [&str; 7] = [
    "landmark_error",
    "normal_error_deg",
    "albedo_error",
    "photometric_error",
    "rotation_error_deg",
    "translation_error",
    "sun_error_deg",
];

impl Evaluation {
    pub fn values_of(&self, metric: &str) -> Vec<f64> {
        let l = &self.landmarks;
        let v = &self.views;
        match metric {
            "landmark_error" => l.iter().map(|r| r.position_error).collect(),
            "normal_error_deg" => l.iter().map(|r| r.normal_error_deg).collect(),
            "albedo_error" => l.iter().filter_map(|r| r.albedo_error).collect(),
            "photometric_error" => l.iter().filter_map(|r| r.photometric_error).collect(),
            "rotation_error_deg" => v.iter().map(|r| r.rotation_error_deg).collect(),
            "translation_error" => v.iter().map(|r| r.translation_error).collect(),
            "sun_error_deg" => v.iter().map(|r| r.sun_error_deg).collect(),
            _ => Vec::new(),
        }
    }

    pub fn summary(&self, metric: &str) -> Option<Summary> {
        summarize(&self.values_of(metric))
    }

    pub fn write_landmark_csv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "landmark,landmark_error,normal_error_deg,albedo_error,photometric_error")?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.landmarks {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.id,
                r.position_error,
                r.normal_error_deg,
                opt(r.albedo_error),
                opt(r.photometric_error)
            )?;
        }
        Ok(())
    }

    pub fn write_view_csv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "image,rotation_error_deg,translation_error,sun_error_deg")?;
        for r in &self.views {
            writeln!(w, "{},{},{},{}", r.image, r.rotation_error_deg, r.translation_error, r.sun_error_deg)?;
        }
        Ok(())
    }

    pub fn write_summary_csv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "metric,count,mean,median,p95")?;
        for name in METRIC_NAMES {
            match self.summary(name) {
                Some(s) => writeln!(w, "{name},{},{},{},{}", s.count, s.mean, s.median, s.p95)?,
                None => writeln!(w, "{name},0,,,")?,
            }
        }
        Ok(())
    }
}

/// Metrics of `estimate` against `reference` after similarity alignment.
///
/// Positions are compared with the closest reference landmark; normals and
/// albedos with the reference landmark of the same id. Photometric errors
/// use the unaligned estimate, which brightness does not depend on.
pub fn evaluate(
    estimate: &Reconstruction,
    reference: &Reconstruction,
    observations: &[Observation],
    model: &ReflectanceModel,
    cutoff_deg: f64,
    subset: usize,
    seed: u64,
) -> Result<Evaluation, MetricsError> {
    let alignment = align(estimate, reference, subset, seed)?;
    let aligned = transform_reconstruction(estimate, &alignment);

    let ref_ids: Vec<u32> = reference.landmarks.keys().copied().collect();
    let mut tree: Tree<3> = Tree::with_capacity(ref_ids.len().max(1));
    for (i, l) in reference.landmarks.values().enumerate() {
        tree.add(&[l.position.x, l.position.y, l.position.z], i as u64);
    }
    let mut by_landmark: BTreeMap<u32, Vec<Observation>> = BTreeMap::new();
    for o in observations {
        by_landmark.entry(o.landmark).or_default().push(*o);
    }

    let landmarks = aligned
        .landmarks
        .iter()
        .filter_map(|(j, l)| {
            let truth = reference.landmarks.get(j)?;
            let p = l.position;
            let nearest = tree.nearest_one::<SquaredEuclidean>(&[p.x, p.y, p.z]);
            let closest = reference.landmarks[&ref_ids[nearest.item as usize]].position;
            let obs = by_landmark.get(j).map(Vec::as_slice).unwrap_or(&[]);
            Some(LandmarkRow {
                id: *j,
                position_error: landmark_error(&p, &closest),
                normal_error_deg: normal_error_deg(&l.normal, &truth.normal),
                albedo_error: albedo_error(l.albedo, truth.albedo),
                photometric_error: photometric_error(&estimate.landmarks[j], &estimate.views, obs, model, cutoff_deg),
            })
        })
        .collect();
    let views = aligned
        .views
        .iter()
        .zip(&reference.views)
        .enumerate()
        .map(|(i, (e, t))| {
            let pe = pose_error(&e.pose, &t.pose);
            ViewRow {
                image: i as u32,
                rotation_error_deg: pe.rotation_deg,
                translation_error: pe.translation,
                sun_error_deg: sun_error_deg(&e.sun, &t.sun),
            }
        })
        .collect();
    Ok(Evaluation { alignment, landmarks, views })
}
