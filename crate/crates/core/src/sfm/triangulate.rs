//! Linear multi-view triangulation with a RANSAC wrapper.

use nalgebra::{DMatrix, Matrix3x4, Vector2, Vector3, Vector4};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SfmError;
use crate::factors::{project, CameraIntrinsics};
use crate::manifold::Pose;

/// Ratio of the third to the first singular value below which the views
/// carry no depth information.
const PARALLAX_CONDITION: f64 = 1e-10;

/// Direct linear transform over any number of `(pose, pixel)` observations.
pub fn triangulate_dlt(observations: &[(Pose, Vector2<f64>)], k: &CameraIntrinsics) -> Result<Vector3<f64>, SfmError> {
    if observations.len() < 2 {
        return Err(SfmError::InsufficientData { needed: 2, got: observations.len() });
    }
    // Centre and scale the camera positions for conditioning.
    let n = observations.len() as f64;
    let origin = observations.iter().fold(Vector3::zeros(), |a, (p, _)| a + p.translation) / n;
    let spread = observations.iter().map(|(p, _)| (p.translation - origin).norm()).sum::<f64>() / n;
    let scale = if spread > 0.0 { spread } else { 1.0 };

    let rows = (2 * observations.len()).max(4);
    let mut a = DMatrix::zeros(rows, 4);
    for (i, (pose, pixel)) in observations.iter().enumerate() {
        let rt = pose.rotation.matrix().transpose();
        let mut p = Matrix3x4::zeros();
        p.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        p.set_column(3, &(-rt * (pose.translation - origin) / scale));
        let x = k.backproject(pixel);
        let r0 = x.x * p.row(2) - p.row(0);
        let r1 = x.y * p.row(2) - p.row(1);
        let n0 = r0.norm();
        let n1 = r1.norm();
        a.row_mut(2 * i).copy_from(&(r0 / n0));
        a.row_mut(2 * i + 1).copy_from(&(r1 / n1));
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.ok_or(SfmError::Degenerate("triangulation SVD"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv = |r: usize| svd.singular_values[order[r]];
    if sv(2) <= PARALLAX_CONDITION * sv(0) {
        return Err(SfmError::InsufficientParallax);
    }
    let h = vt.row(order[3]);
    let h = Vector4::new(h[0], h[1], h[2], h[3]);
    if h.w.abs() < f64::EPSILON * h.norm() {
        return Err(SfmError::InsufficientParallax);
    }
    Ok(origin + scale * Vector3::new(h.x / h.w, h.y / h.w, h.z / h.w))
}

/// Reprojection error in pixels, or `None` when behind the camera.
pub fn reprojection_error(point: &Vector3<f64>, pose: &Pose, pixel: &Vector2<f64>, k: &CameraIntrinsics) -> Option<f64> {
    project(point, pose, k).ok().map(|p| (p - pixel).norm())
}

/// Robust triangulation result.
#[derive(Debug, Clone)]
pub struct Triangulation {
    pub point: Vector3<f64>,
    pub inliers: Vec<bool>,
}

/// Two-view hypotheses scored by the number of views reprojecting within
/// `threshold_px` (in front of the camera), then refit on the inliers.
pub fn triangulate_ransac(
    observations: &[(Pose, Vector2<f64>)],
    k: &CameraIntrinsics,
    threshold_px: f64,
    max_hypotheses: usize,
    seed: u64,
) -> Result<Triangulation, SfmError> {
    let m = observations.len();
    if m < 2 {
        return Err(SfmError::InsufficientData { needed: 2, got: m });
    }
    let pairs: Vec<(usize, usize)> = if m * (m - 1) / 2 <= max_hypotheses {
        (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..max_hypotheses)
            .map(|_| {
                let s = sample(&mut rng, m, 2);
                (s.index(0), s.index(1))
            })
            .collect()
    };
    let score = |x: &Vector3<f64>| -> (Vec<bool>, f64) {
        let mut total = 0.0;
        let mask = observations
            .iter()
            .map(|(pose, px)| match reprojection_error(x, pose, px, k) {
                Some(e) if e <= threshold_px => {
                    total += e;
                    true
                }
                _ => false,
            })
            .collect();
        (mask, total)
    };

    let mut best: Option<(Vec<bool>, usize, f64)> = None;
    for (i, j) in pairs {
        let Ok(x) = triangulate_dlt(&[observations[i], observations[j]], k) else { continue };
        let (mask, err) = score(&x);
        let count = mask.iter().filter(|b| **b).count();
        let better = match &best {
            None => count >= 2,
            Some((_, c, e)) => count > *c || (count == *c && err < *e),
        };
        if better {
            best = Some((mask, count, err));
        }
    }
    let (mut mask, _, _) = best.ok_or(SfmError::InsufficientParallax)?;
    let mut point = Vector3::zeros();
    for _ in 0..3 {
        let subset: Vec<(Pose, Vector2<f64>)> =
            observations.iter().zip(&mask).filter(|(_, m)| **m).map(|(o, _)| *o).collect();
        point = triangulate_dlt(&subset, k)?;
        let (m2, _) = score(&point);
        if m2.iter().filter(|b| **b).count() < 2 || m2 == mask {
            break;
        }
        mask = m2;
    }
    Ok(Triangulation { point, inliers: mask })
}
