//! Assembly of the full reconstruction problem from measurements and an
//! initial estimate.

use std::collections::{BTreeMap, BTreeSet};

use kiddo::SquaredEuclidean;
use nalgebra::{Matrix2, Vector2};

use super::init::Tree;
use super::{BootstrapConfig, SfmError};
use crate::factors::{
    CalibrationKeys, LandmarkDistancePrior, PosePrior, ProjectionFactor, SmoothnessFactor, SpcFactor, SunFactor,
};
use crate::graph::{FactorGraph, Key, Values};
use crate::reconstruction::{MeasurementSet, Observation, Reconstruction};
use crate::scene::PhotometryConfig;

/// Relative slack on the smoothness radius so that neighbours sitting exactly
/// on the radius survive floating-point noise in their keypoints.
const RADIUS_SLACK_PX: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FactorCounts {
    pub projection: usize,
    pub photometric: usize,
    pub sun: usize,
    pub smoothness: usize,
    pub prior: usize,
}

impl FactorCounts {
    pub fn total(&self) -> usize {
        self.projection + self.photometric + self.sun + self.smoothness + self.prior
    }
}

#[derive(Debug)]
pub struct Problem {
    pub graph: FactorGraph,
    pub values: Values,
    /// Landmarks that made it into the graph, ascending.
    pub landmarks: Vec<u32>,
    /// Images with a pose variable, ascending.
    pub images: Vec<u32>,
    pub counts: FactorCounts,
}

/// Landmarks observed in at least `min_views` of `observations`.
pub fn well_observed(observations: &[Observation], min_views: usize) -> BTreeSet<u32> {
    let mut count: BTreeMap<u32, usize> = BTreeMap::new();
    for o in observations {
        *count.entry(o.landmark).or_default() += 1;
    }
    count.into_iter().filter(|(_, c)| *c >= min_views).map(|(j, _)| j).collect()
}

/// Unordered landmark pairs whose keypoints in `image` lie within
/// `radius_px`, each as `(lower id, higher id)`.
pub fn smoothness_pairs(observations: &[Observation], image: u32, landmarks: &BTreeSet<u32>, radius_px: f64) -> Vec<(u32, u32)> {
    let pts: Vec<(u32, Vector2<f64>)> = observations
        .iter()
        .filter(|o| o.image == image && landmarks.contains(&o.landmark))
        .map(|o| (o.landmark, o.pixel))
        .collect();
    if pts.is_empty() {
        return Vec::new();
    }
    let mut tree: Tree<2> = Tree::with_capacity(pts.len());
    for (i, (_, p)) in pts.iter().enumerate() {
        tree.add(&[p.x, p.y], i as u64);
    }
    let r = radius_px + RADIUS_SLACK_PX;
    let mut pairs = BTreeSet::new();
    for (j, p) in &pts {
        for nb in tree.within_unsorted::<SquaredEuclidean>(&[p.x, p.y], r * r) {
            let other = pts[nb.item as usize].0;
            if other != *j {
                pairs.insert(((*j).min(other), (*j).max(other)));
            }
        }
    }
    pairs.into_iter().collect()
}

fn add_gauge(
    graph: &mut FactorGraph,
    init: &Reconstruction,
    anchor_landmark: u32,
    sigma: f64,
    counts: &mut FactorCounts,
) -> Result<(), SfmError> {
    let pose0 = init.views.first().ok_or(SfmError::EmptyGraph)?.pose;
    graph.add_factor(PosePrior::isotropic(Key::pose(0), pose0, sigma, sigma)?)?;
    let l = init.landmarks.get(&anchor_landmark).ok_or(SfmError::EmptyGraph)?;
    let distance = (l.position - pose0.translation).norm();
    graph.add_factor(LandmarkDistancePrior::new(
        Key::landmark(anchor_landmark),
        pose0.translation,
        distance,
        sigma * distance.max(f64::MIN_POSITIVE),
    )?)?;
    counts.prior += 2;
    Ok(())
}

fn restricted_values(graph: &FactorGraph, all: &Values) -> Result<Values, SfmError> {
    let mut values = Values::new();
    for key in graph.variables() {
        let v = all.get(&key).ok_or(SfmError::MissingState(key))?;
        values.insert(key, v.clone())?;
    }
    Ok(values)
}

/// Keypoint-only bundle adjustment problem with the same gauge as the full one.
pub fn build_geometric_problem(
    measurements: &MeasurementSet,
    observations: &[Observation],
    init: &Reconstruction,
    config: &BootstrapConfig,
) -> Result<Problem, SfmError> {
    let landmarks: BTreeSet<u32> = well_observed(observations, config.min_views)
        .into_iter()
        .filter(|j| init.landmarks.contains_key(j))
        .collect();
    let anchor = *landmarks.first().ok_or(SfmError::EmptyGraph)?;
    let images: BTreeSet<u32> = observations
        .iter()
        .filter(|o| landmarks.contains(&o.landmark))
        .map(|o| o.image)
        .chain(std::iter::once(0))
        .collect();

    let mut graph = FactorGraph::new();
    let mut counts = FactorCounts::default();
    for &i in &images {
        graph.add_variable(Key::pose(i))?;
    }
    for &j in &landmarks {
        graph.add_variable(Key::landmark(j))?;
    }
    let cov = Matrix2::identity() * config.keypoint_sigma_px.powi(2);
    for o in observations.iter().filter(|o| landmarks.contains(&o.landmark)) {
        graph.add_factor(ProjectionFactor::new(
            Key::pose(o.image),
            Key::landmark(o.landmark),
            o.pixel,
            measurements.camera.intrinsics,
            cov,
        )?)?;
        counts.projection += 1;
    }
    add_gauge(&mut graph, init, anchor, config.gauge_sigma, &mut counts)?;
    let values = restricted_values(&graph, &init.to_values())?;
    Ok(Problem { graph, values, landmarks: landmarks.into_iter().collect(), images: images.into_iter().collect(), counts })
}

/// Full keypoint + photometric problem.
///
/// Every landmark with at least `min_views` observations gets position,
/// normal and albedo variables; each of its observations contributes a
/// reprojection and a photometric factor. Every image gets a pose and a
/// Sun variable tied to its Sun measurement. Normals are regularized by
/// smoothness factors between landmarks whose reference-image keypoints lie
/// within the smoothness radius. Uncalibrated runs give every image but the
/// first its own brightness scale and bias. The gauge is fixed by a tight
/// prior on the first pose and on the distance from the first camera to the
/// lowest-id landmark.
pub fn build_problem(
    measurements: &MeasurementSet,
    observations: &[Observation],
    init: &Reconstruction,
    config: &BootstrapConfig,
    photometry: &PhotometryConfig,
) -> Result<Problem, SfmError> {
    let landmarks: BTreeSet<u32> = well_observed(observations, config.min_views)
        .into_iter()
        .filter(|j| init.landmarks.contains_key(j))
        .collect();
    let anchor = *landmarks.first().ok_or(SfmError::EmptyGraph)?;
    let used: Vec<&Observation> = observations.iter().filter(|o| landmarks.contains(&o.landmark)).collect();
    let images: BTreeSet<u32> = used.iter().map(|o| o.image).chain(std::iter::once(0)).collect();
    if let Some(&i) = images.iter().find(|&&i| i as usize >= init.views.len()) {
        return Err(SfmError::MissingState(Key::pose(i)));
    }

    let model = photometry.reflectance_model();
    let calibrated = photometry.calibrated;
    let sigma_i = if calibrated { config.brightness_sigma_calibrated } else { config.brightness_sigma_uncalibrated };

    let mut graph = FactorGraph::new();
    let mut counts = FactorCounts::default();
    for &i in &images {
        graph.add_variable(Key::pose(i))?;
        graph.add_variable(Key::sun(i))?;
        if !calibrated && i != 0 {
            graph.add_variable(Key::scale(i))?;
            graph.add_variable(Key::bias(i))?;
        }
    }
    for &j in &landmarks {
        graph.add_variable(Key::landmark(j))?;
        graph.add_variable(Key::normal(j))?;
        graph.add_variable(Key::albedo(j))?;
    }

    let cov = Matrix2::identity() * config.keypoint_sigma_px.powi(2);
    for o in &used {
        graph.add_factor(ProjectionFactor::new(
            Key::pose(o.image),
            Key::landmark(o.landmark),
            o.pixel,
            measurements.camera.intrinsics,
            cov,
        )?)?;
        counts.projection += 1;
        let calib = (!calibrated && o.image != 0)
            .then(|| CalibrationKeys { scale: Key::scale(o.image), bias: Key::bias(o.image) });
        graph.add_factor(SpcFactor::new(
            Key::pose(o.image),
            Key::sun(o.image),
            Key::landmark(o.landmark),
            Key::normal(o.landmark),
            Key::albedo(o.landmark),
            calib,
            o.brightness,
            sigma_i,
            model,
            photometry.cutoff_deg,
        )?)?;
        counts.photometric += 1;
    }
    for &i in &images {
        if let Some(s) = measurements.sun_for(i) {
            graph.add_factor(SunFactor::new(Key::pose(i), Key::sun(i), s, config.sun_sigma)?)?;
            counts.sun += 1;
        }
    }
    if config.smoothness {
        for (a, b) in smoothness_pairs(observations, 0, &landmarks, config.smoothness_radius_px) {
            graph.add_factor(SmoothnessFactor::new(
                Key::landmark(a),
                Key::normal(a),
                Key::landmark(b),
                config.smoothness_weight,
            )?)?;
            counts.smoothness += 1;
        }
    }
    add_gauge(&mut graph, init, anchor, config.gauge_sigma, &mut counts)?;
    let values = restricted_values(&graph, &init.to_values())?;
    Ok(Problem { graph, values, landmarks: landmarks.into_iter().collect(), images: images.into_iter().collect(), counts })
}
