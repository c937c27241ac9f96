use approx::assert_relative_eq;
use nalgebra::{Matrix2, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spcsfm::diagnostics::check_jacobians;
use spcsfm::factors::{
    project, CalibrationKeys, CameraIntrinsics, LandmarkDistancePrior, PointPrior, PosePrior,
    ProjectionFactor, ScalarPrior, SmoothnessFactor, SpcFactor, SunFactor, UnitPrior,
};
use spcsfm::graph::{Factor, Key, Values};
use spcsfm::manifold::{Pose, Rotation, TangentPose, UnitVector};
use spcsfm::photometry::{predict_brightness, ImageCalibration, ReflectanceModel, DEFAULT_CUTOFF_DEG};

const STEP: f64 = 1e-6;
const TOL: f64 = 1e-5;
const CASES: usize = 200;

fn unit(rng: &mut ChaCha8Rng) -> UnitVector {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if v.norm() > 0.1 && v.norm() <= 1.0 {
            return UnitVector::new(v).unwrap();
        }
    }
}

/// Unit vector within `max_deg` of `axis`, at least `min_deg` away from `avoid`.
fn unit_near(rng: &mut ChaCha8Rng, axis: &UnitVector, max_deg: f64, avoid: Option<&UnitVector>, min_deg: f64) -> UnitVector {
    loop {
        let u = unit(rng);
        if u.angle_to(axis).to_degrees() > max_deg {
            continue;
        }
        if let Some(a) = avoid {
            if u.angle_to(a).to_degrees() < min_deg {
                continue;
            }
        }
        return u;
    }
}

fn rotation(rng: &mut ChaCha8Rng) -> Rotation {
    let axis = unit(rng);
    Rotation::exp(&(axis.into_inner() * rng.random_range(0.0..3.0)))
}

struct SpcCase {
    values: Values,
    truth: f64,
}

fn spc_case(rng: &mut ChaCha8Rng, model: &ReflectanceModel, calibrated: bool) -> SpcCase {
    let landmark = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
    let normal = unit(rng);
    let view = unit_near(rng, &normal, 75.0, None, 0.0);
    let sun = unit_near(rng, &normal, 75.0, Some(&view), 5.0);
    let center = landmark + view.into_inner() * rng.random_range(5.0..50.0);
    let pose = Pose::new(rotation(rng), center);
    let albedo = rng.random_range(0.1..0.9);
    let cal = if calibrated {
        ImageCalibration::calibrated()
    } else {
        ImageCalibration::uncalibrated(rng.random_range(0.8..1.2), rng.random_range(0.0..0.05))
    };
    let mut values = Values::new();
    values.insert_pose(0, pose);
    values.insert_sun(0, sun);
    values.insert_landmark(0, landmark);
    values.insert_normal(0, normal);
    values.insert_albedo(0, albedo);
    values.insert_scale(0, cal.scale);
    values.insert_bias(0, cal.bias);
    let truth = predict_brightness(&pose, &sun, &landmark, &normal, albedo, &cal, model).unwrap();
    SpcCase { values, truth }
}

fn spc_factor(model: ReflectanceModel, calibrated: bool, measured: f64, sigma: f64) -> SpcFactor {
    let cal = (!calibrated).then_some(CalibrationKeys { scale: Key::scale(0), bias: Key::bias(0) });
    SpcFactor::new(
        Key::pose(0),
        Key::sun(0),
        Key::landmark(0),
        Key::normal(0),
        Key::albedo(0),
        cal,
        measured,
        sigma,
        model,
        DEFAULT_CUTOFF_DEG,
    )
    .unwrap()
}

fn assert_jacobians(factor: &dyn Factor, values: &Values) {
    let check = check_jacobians(factor, values, STEP).expect("factor evaluates");
    assert!(
        check.max_relative_error < TOL,
        "{factor:?}: error {} analytic {:?} numerical {:?}",
        check.max_relative_error,
        check.analytic,
        check.numerical
    );
}

#[test]
fn spc_jacobians_all_variants() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for model in [ReflectanceModel::LunarLambert, ReflectanceModel::schroder()] {
        for calibrated in [true, false] {
            for _ in 0..CASES {
                let case = spc_case(&mut rng, &model, calibrated);
                let meas = case.truth + rng.random_range(-0.05..0.05);
                let f = spc_factor(model, calibrated, meas, 0.01);
                assert_jacobians(&f, &case.values);
            }
        }
    }
}

#[test]
fn spc_residual_zero_at_exact_prediction() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let case = spc_case(&mut rng, &ReflectanceModel::LunarLambert, false);
    let f = spc_factor(ReflectanceModel::LunarLambert, false, case.truth, 0.5);
    assert_eq!(f.residual(&case.values).unwrap()[0], 0.0);
}

#[test]
fn spc_albedo_derivative_is_one_overhead() {
    let mut values = Values::new();
    values.insert_pose(0, Pose::new(Rotation::identity(), Vector3::new(0.0, 0.0, 10.0)));
    values.insert_sun(0, UnitVector::z());
    values.insert_landmark(0, Vector3::zeros());
    values.insert_normal(0, UnitVector::z());
    values.insert_albedo(0, 0.3);
    for model in [ReflectanceModel::LunarLambert, ReflectanceModel::schroder()] {
        let f = spc_factor(model, true, 0.0, 1.0);
        let lin = f.linearize(&values);
        // The Sun and camera coincide here, which is the φ = 0 edge of the model;
        // the value and the albedo partial are still well defined.
        let lin = lin.unwrap();
        assert_relative_eq!(lin.jacobians[4][(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(lin.residual[0], 0.3, epsilon = 1e-12);
    }
}

#[test]
fn spc_invariant_to_rigid_rotation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let case = spc_case(&mut rng, &ReflectanceModel::schroder(), true);
        let f = spc_factor(ReflectanceModel::schroder(), true, 0.2, 0.01);
        let r0 = f.residual(&case.values).unwrap()[0];
        let q = rotation(&mut rng);
        let mut moved = case.values.clone();
        let pose = case.values.pose(&Key::pose(0)).unwrap();
        moved.insert_pose(0, Pose::new(q * pose.rotation, &q * &pose.translation));
        let rot_unit = |u: &UnitVector| UnitVector::new(&q * u.as_vector()).unwrap();
        moved.insert_sun(0, rot_unit(case.values.unit(&Key::sun(0)).unwrap()));
        moved.insert_normal(0, rot_unit(case.values.unit(&Key::normal(0)).unwrap()));
        moved.insert_landmark(0, &q * case.values.point(&Key::landmark(0)).unwrap());
        let r1 = f.residual(&moved).unwrap()[0];
        assert_relative_eq!(r0, r1, epsilon = 1e-9, max_relative = 1e-9);
    }
}

#[test]
fn whitening_scales_inversely_with_sigma() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let case = spc_case(&mut rng, &ReflectanceModel::LunarLambert, true);
    let a = spc_factor(ReflectanceModel::LunarLambert, true, case.truth + 0.1, 0.01).linearize(&case.values).unwrap();
    let b = spc_factor(ReflectanceModel::LunarLambert, true, case.truth + 0.1, 0.02).linearize(&case.values).unwrap();
    assert_relative_eq!(a.residual[0], 2.0 * b.residual[0], max_relative = 1e-14);
    for (ja, jb) in a.jacobians.iter().zip(&b.jacobians) {
        assert_relative_eq!(*ja, 2.0 * jb, max_relative = 1e-14, epsilon = 1e-300);
    }
}

fn projection_values(rng: &mut ChaCha8Rng, k: &CameraIntrinsics) -> (Values, Vector2<f64>) {
    loop {
        let pose = Pose::new(rotation(rng), Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)));
        let q = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(2.0..20.0));
        let landmark = pose.transform_point(&q);
        let mut v = Values::new();
        v.insert_pose(0, pose);
        v.insert_landmark(0, landmark);
        if let Ok(p) = project(&landmark, &pose, k) {
            return (v, p);
        }
    }
}

#[test]
fn projection_jacobians_and_residuals() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let k = CameraIntrinsics::new(800.0, 750.0, 320.0, 240.0);
    for _ in 0..CASES {
        let (values, pixel) = projection_values(&mut rng, &k);
        let cov = Matrix2::new(1.5, 0.3, 0.3, 0.8);
        let f = ProjectionFactor::new(Key::pose(0), Key::landmark(0), pixel + Vector2::new(0.7, -1.1), k, cov).unwrap();
        assert_jacobians(&f, &values);
        let exact = ProjectionFactor::new(Key::pose(0), Key::landmark(0), pixel, k, Matrix2::identity()).unwrap();
        assert!(exact.residual(&values).unwrap().norm() < 1e-9);
        let shifted = ProjectionFactor::new(Key::pose(0), Key::landmark(0), pixel - Vector2::new(1.0, 0.0), k, Matrix2::identity()).unwrap();
        assert_relative_eq!(shifted.residual(&values).unwrap()[0], 1.0, epsilon = 1e-9);
    }
}

#[test]
fn projection_invariant_to_uniform_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let k = CameraIntrinsics::new(800.0, 800.0, 320.0, 240.0);
    for _ in 0..50 {
        let (values, pixel) = projection_values(&mut rng, &k);
        let f = ProjectionFactor::new(Key::pose(0), Key::landmark(0), pixel + Vector2::new(2.0, 3.0), k, Matrix2::identity()).unwrap();
        let s = rng.random_range(0.1..10.0);
        let pose = values.pose(&Key::pose(0)).unwrap();
        let mut scaled = Values::new();
        scaled.insert_pose(0, Pose::new(pose.rotation, pose.translation * s));
        scaled.insert_landmark(0, values.point(&Key::landmark(0)).unwrap() * s);
        assert_relative_eq!(f.residual(&values).unwrap(), f.residual(&scaled).unwrap(), epsilon = 1e-8);
    }
}

#[test]
fn behind_camera_projection_is_infeasible() {
    let k = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0);
    let mut v = Values::new();
    v.insert_pose(0, Pose::identity());
    v.insert_landmark(0, Vector3::new(0.0, 0.0, -5.0));
    let f = ProjectionFactor::new(Key::pose(0), Key::landmark(0), Vector2::zeros(), k, Matrix2::identity()).unwrap();
    assert!(f.linearize(&v).is_none());
}

#[test]
fn sun_jacobians_and_small_angle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..CASES {
        let pose = Pose::new(rotation(&mut rng), Vector3::zeros());
        let sun = unit(&mut rng);
        let mut v = Values::new();
        v.insert_pose(0, pose);
        v.insert_sun(0, sun);
        let predicted = UnitVector::new(pose.rotation.matrix().transpose() * sun.as_vector()).unwrap();
        let noisy = predicted.retract(&Vector2::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)));
        let f = SunFactor::new(Key::pose(0), Key::sun(0), noisy, 1e-3).unwrap();
        assert_jacobians(&f, &v);
        let exact = SunFactor::new(Key::pose(0), Key::sun(0), predicted, 1e-3).unwrap();
        assert!(exact.residual(&v).unwrap().norm() < 1e-12);
    }
}

#[test]
fn sun_residual_tracks_small_rotation() {
    // Camera-frame Sun along x; a rotation of γ about the camera y axis moves it by γ.
    let sun = UnitVector::x();
    let mut v = Values::new();
    v.insert_sun(0, sun);
    let f = SunFactor::new(Key::pose(0), Key::sun(0), sun, 1.0).unwrap();
    for gamma in [1e-4, 1e-3, 1e-2] {
        let pose = Pose::identity().retract(&TangentPose::new(Vector3::new(0.0, gamma, 0.0), Vector3::zeros()));
        v.insert_pose(0, pose);
        let r = f.residual(&v).unwrap();
        assert_relative_eq!(r.norm(), gamma, max_relative = gamma);
    }
}

#[test]
fn smoothness_jacobians_and_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let f = SmoothnessFactor::new(Key::landmark(0), Key::normal(0), Key::landmark(1), 1e-4).unwrap();
    for _ in 0..CASES {
        let l0 = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let dir = unit(&mut rng);
        let n = unit_near(&mut rng, &dir, 175.0, Some(&dir), 5.0);
        let mut v = Values::new();
        v.insert_landmark(0, l0);
        v.insert_landmark(1, l0 + dir.into_inner() * rng.random_range(0.1..2.0));
        v.insert_normal(0, n);
        assert_jacobians(&f, &v);
    }
    let mut v = Values::new();
    v.insert_landmark(0, Vector3::zeros());
    v.insert_landmark(1, Vector3::new(1.0, 0.0, 0.0));
    v.insert_normal(0, UnitVector::z());
    assert!(f.residual(&v).unwrap()[0].abs() < 1e-12);
    v.insert_normal(0, UnitVector::x());
    assert_relative_eq!(f.residual(&v).unwrap()[0], -90.0 * 1e-2, epsilon = 1e-12);
    v.insert_landmark(1, Vector3::zeros());
    assert!(f.linearize(&v).is_none());
    assert!(SmoothnessFactor::new(Key::landmark(0), Key::normal(0), Key::landmark(0), 1e-4).is_err());
}

#[test]
fn prior_jacobians_and_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..CASES {
        let prior = Pose::new(rotation(&mut rng), Vector3::new(1.0, 2.0, 3.0));
        let zeta = TangentPose::new(
            Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)),
            Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
        );
        let mut v = Values::new();
        v.insert_pose(0, prior.retract(&zeta));
        let f = PosePrior::isotropic(Key::pose(0), prior, 0.1, 2.0).unwrap();
        assert_jacobians(&f, &v);
        let unit_cov = PosePrior::isotropic(Key::pose(0), prior, 1.0, 1.0).unwrap();
        assert_relative_eq!(
            unit_cov.residual(&v).unwrap().as_slice(),
            zeta.to_vector().as_slice(),
            epsilon = 1e-9
        );

        let p = unit(&mut rng);
        let x = unit_near(&mut rng, &p, 120.0, None, 0.0);
        v.insert_normal(0, x);
        let up = UnitPrior::new(Key::normal(0), p, 0.2).unwrap();
        assert_jacobians(&up, &v);

        v.insert_landmark(0, Vector3::new(rng.random_range(-5.0..5.0), 1.0, 2.0));
        assert_jacobians(&PointPrior::new(Key::landmark(0), Vector3::new(1.0, 1.0, 1.0), 0.3).unwrap(), &v);
        assert_jacobians(&LandmarkDistancePrior::new(Key::landmark(0), Vector3::new(0.5, 0.0, 0.0), 3.0, 0.1).unwrap(), &v);

        v.insert_albedo(0, rng.random_range(0.0..1.0));
        assert_jacobians(&ScalarPrior::new(Key::albedo(0), 0.4, 0.05), &v);
    }
    let mut v = Values::new();
    v.insert_albedo(0, 0.6);
    assert_relative_eq!(ScalarPrior::new(Key::albedo(0), 0.5, 0.1).residual(&v).unwrap()[0], 1.0, epsilon = 1e-12);
    v.insert_normal(0, UnitVector::z());
    assert_eq!(UnitPrior::new(Key::normal(0), UnitVector::z(), 1.0).unwrap().residual(&v).unwrap().norm(), 0.0);
}
