use approx::assert_relative_eq;
use nalgebra::Vector3;

use spcsfm::manifold::Rotation;
use spcsfm::metrics::*;
use spcsfm::reconstruction::Reconstruction;
use spcsfm::scene::{simulate_measurements, NoiseConfig, PhotometryConfig, SceneConfig};
use spcsfm::sfm::Sim3;

fn scene() -> (spcsfm::scene::SimulatedScene, PhotometryConfig) {
    let photometry = PhotometryConfig::default();
    let config = SceneConfig { grid_size: 30, ..Default::default() };
    (simulate_measurements(&config, &NoiseConfig::noise_free(), &photometry).unwrap(), photometry)
}

fn run(estimate: &Reconstruction, truth: &Reconstruction, sim: &spcsfm::scene::SimulatedScene, p: &PhotometryConfig) -> Evaluation {
    evaluate(estimate, truth, &sim.measurements.observations, &p.reflectance_model(), p.cutoff_deg, 180, 0).unwrap()
}

#[test]
fn truth_against_itself_is_all_zeros() {
    let (sim, p) = scene();
    let eval = run(&sim.truth, &sim.truth, &sim, &p);
    for name in METRIC_NAMES {
        let s = eval.summary(name).unwrap();
        assert!(s.mean.abs() < 1e-9 && s.p95.abs() < 1e-9, "{name}: {s:?}");
    }
}

#[test]
fn metrics_are_invariant_to_a_similarity_of_the_estimate() {
    let (sim, p) = scene();
    let mut perturbed = sim.truth.clone();
    for (j, l) in perturbed.landmarks.iter_mut() {
        l.albedo *= 1.0 + 0.01 * (*j % 7) as f64;
        l.position += Vector3::new(1e-3, -2e-3, 5e-4) * (*j % 3) as f64;
    }
    let base = run(&perturbed, &sim.truth, &sim, &p);
    let s = Sim3::new(3.0, Rotation::exp(&Vector3::new(0.3, -0.7, 1.1)), Vector3::new(100.0, -40.0, 7.0));
    let moved = transform_reconstruction(&perturbed, &s);
    let other = run(&moved, &sim.truth, &sim, &p);
    for name in ["normal_error_deg", "albedo_error", "photometric_error", "rotation_error_deg", "sun_error_deg"] {
        let (a, b) = (base.summary(name).unwrap(), other.summary(name).unwrap());
        assert_relative_eq!(a.mean, b.mean, epsilon = 1e-6);
    }
    let (a, b) = (base.summary("landmark_error").unwrap(), other.summary("landmark_error").unwrap());
    assert_relative_eq!(a.mean, b.mean, epsilon = 1e-6);
}

#[test]
fn evaluation_matches_direct_metric_calls() {
    let (sim, p) = scene();
    let mut estimate = sim.truth.clone();
    for (j, l) in estimate.landmarks.iter_mut() {
        l.albedo *= 1.0 + 0.02 * ((*j % 5) as f64 - 2.0);
    }
    let eval = run(&estimate, &sim.truth, &sim, &p);
    let by_landmark = sim.measurements.by_landmark();
    let model = p.reflectance_model();
    for row in &eval.landmarks {
        let (e, t) = (&estimate.landmarks[&row.id], &sim.truth.landmarks[&row.id]);
        assert_relative_eq!(row.albedo_error.unwrap(), albedo_error(e.albedo, t.albedo).unwrap(), epsilon = 1e-9);
        let direct = photometric_error(e, &estimate.views, &by_landmark[&row.id], &model, p.cutoff_deg).unwrap();
        assert_relative_eq!(row.photometric_error.unwrap(), direct, epsilon = 1e-12);
    }
}

#[test]
fn disjoint_ids_are_an_error() {
    let (sim, p) = scene();
    let mut other = sim.truth.clone();
    other.landmarks = other.landmarks.into_iter().map(|(j, l)| (j + 1_000_000, l)).collect();
    let err = evaluate(&other, &sim.truth, &[], &p.reflectance_model(), p.cutoff_deg, 180, 0).unwrap_err();
    assert!(matches!(err, MetricsError::NoCommonLandmarks));
}

#[test]
fn csv_reports_have_stable_headers() {
    let (sim, p) = scene();
    let eval = run(&sim.truth, &sim.truth, &sim, &p);
    let mut buf = Vec::new();
    eval.write_summary_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("metric,count,mean,median,p95"));
    assert_eq!(lines.count(), METRIC_NAMES.len());
    let mut buf = Vec::new();
    eval.write_landmark_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), sim.truth.landmarks.len() + 1);
}
