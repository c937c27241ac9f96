//! Two-view geometry: essential matrix estimation and relative pose.

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ransac_iterations, SfmError};
use crate::factors::CameraIntrinsics;
use crate::manifold::{skew, Rotation, UnitVector};

/// Pixel correspondence between a first and a second image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub first: Vector2<f64>,
    pub second: Vector2<f64>,
    pub landmark: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    /// Inlier threshold in pixels.
    pub threshold_px: f64,
    pub confidence: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { threshold_px: 0.5, confidence: 0.999, max_iterations: 2000, seed: 0 }
    }
}

/// Essential matrix with its RANSAC inlier mask.
#[derive(Debug, Clone)]
pub struct EssentialEstimate {
    /// Maps first-camera bearings to epipolar lines in the second: `x₂ᵀEx₁ = 0`.
    pub essential: Matrix3<f64>,
    pub inliers: Vec<bool>,
}

impl EssentialEstimate {
    pub fn num_inliers(&self) -> usize {
        self.inliers.iter().filter(|b| **b).count()
    }
}

/// Similarity that centres points and scales their mean distance to √2.
fn hartley(points: &[Vector2<f64>]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
    let spread = points.iter().map(|p| (p - mean).norm()).sum::<f64>() / n;
    let s = if spread > 0.0 { std::f64::consts::SQRT_2 / spread } else { 1.0 };
    Matrix3::new(s, 0.0, -s * mean.x, 0.0, s, -s * mean.y, 0.0, 0.0, 1.0)
}

/// Closest essential matrix: singular values forced to `(1, 1, 0)`.
fn project_to_essential(e: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = e.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0)) * vt
}

fn rank_two(m: &Matrix3<f64>) -> Matrix3<f64> {
    let mut svd = m.svd(true, true);
    let (min_idx, _) = svd.singular_values.argmin();
    svd.singular_values[min_idx] = 0.0;
    svd.recompose().expect("u and v_t were computed")
}

/// Normalized eight-point estimate from normalized image coordinates.
fn eight_point(first: &[Vector2<f64>], second: &[Vector2<f64>]) -> Option<Matrix3<f64>> {
    let t1 = hartley(first);
    let t2 = hartley(second);
    // Pad with a zero row so the thin SVD always exposes the 9th right singular vector.
    let rows = first.len().max(9);
    let mut a = DMatrix::zeros(rows, 9);
    for (i, (p, q)) in first.iter().zip(second).enumerate() {
        let x1 = t1 * Vector3::new(p.x, p.y, 1.0);
        let x2 = t2 * Vector3::new(q.x, q.y, 1.0);
        for r in 0..3 {
            for c in 0..3 {
                a[(i, 3 * r + c)] = x2[r] * x1[c];
            }
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t?;
    let (min_idx, _) = svd.singular_values.argmin();
    let e = vt.row(min_idx);
    let en = Matrix3::new(e[0], e[1], e[2], e[3], e[4], e[5], e[6], e[7], e[8]);
    // Only rank two holds in the conditioned frame; equal singular values
    // are imposed after undoing the conditioning.
    let e = t2.transpose() * rank_two(&en) * t1;
    let e = project_to_essential(&e);
    e.iter().all(|v| v.is_finite()).then_some(e)
}

/// Sampson distance in pixels of a pixel correspondence under `F`.
pub fn sampson_error(f: &Matrix3<f64>, first: &Vector2<f64>, second: &Vector2<f64>) -> f64 {
    let x1 = Vector3::new(first.x, first.y, 1.0);
    let x2 = Vector3::new(second.x, second.y, 1.0);
    let fx1 = f * x1;
    let ftx2 = f.transpose() * x2;
    let num = x2.dot(&fx1);
    let den = fx1.x * fx1.x + fx1.y * fx1.y + ftx2.x * ftx2.x + ftx2.y * ftx2.y;
    if den <= 0.0 {
        return f64::INFINITY;
    }
    (num * num / den).sqrt()
}

/// Fundamental matrix of an essential matrix for a shared camera.
pub fn fundamental(e: &Matrix3<f64>, k: &CameraIntrinsics) -> Matrix3<f64> {
    let kinv = k.matrix().try_inverse().expect("valid intrinsics");
    kinv.transpose() * e * kinv
}

fn normalized(k: &CameraIntrinsics, p: &Vector2<f64>) -> Vector2<f64> {
    let b = k.backproject(p);
    Vector2::new(b.x, b.y)
}

/// Robust essential-matrix estimate: eight-point inside RANSAC with a
/// Sampson-distance inlier test, refit on the final inlier set.
pub fn estimate_essential(
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    config: &RansacConfig,
) -> Result<EssentialEstimate, SfmError> {
    if corrs.len() < 8 {
        return Err(SfmError::InsufficientData { needed: 8, got: corrs.len() });
    }
    let first: Vec<Vector2<f64>> = corrs.iter().map(|c| normalized(k, &c.first)).collect();
    let second: Vec<Vector2<f64>> = corrs.iter().map(|c| normalized(k, &c.second)).collect();
    let inliers_of = |e: &Matrix3<f64>| -> (Vec<bool>, f64) {
        let f = fundamental(e, k);
        let mut total = 0.0;
        let mask = corrs
            .iter()
            .map(|c| {
                let d = sampson_error(&f, &c.first, &c.second);
                let inlier = d <= config.threshold_px;
                if inlier {
                    total += d;
                }
                inlier
            })
            .collect();
        (mask, total)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(Matrix3<f64>, Vec<bool>, usize, f64)> = None;
    let mut needed = config.max_iterations;
    let mut iter = 0;
    let mut s1 = Vec::with_capacity(8);
    let mut s2 = Vec::with_capacity(8);
    while iter < needed.min(config.max_iterations) {
        iter += 1;
        s1.clear();
        s2.clear();
        for i in sample(&mut rng, corrs.len(), 8) {
            s1.push(first[i]);
            s2.push(second[i]);
        }
        let Some(e) = eight_point(&s1, &s2) else { continue };
        let (mask, err) = inliers_of(&e);
        let count = mask.iter().filter(|b| **b).count();
        let better = match &best {
            None => true,
            Some((_, _, c, e0)) => count > *c || (count == *c && err < *e0),
        };
        if better {
            needed = ransac_iterations(count as f64 / corrs.len() as f64, 8, config.confidence);
            best = Some((e, mask, count, err));
        }
    }
    let (mut e, mut mask, mut count, _) = best.ok_or(SfmError::Degenerate("no essential hypothesis"))?;
    if count < 8 {
        return Err(SfmError::Degenerate("fewer than eight essential-matrix inliers"));
    }
    // Refit on the consensus set until it stops growing.
    for _ in 0..5 {
        let (a, b): (Vec<_>, Vec<_>) =
            first.iter().zip(&second).zip(&mask).filter(|(_, m)| **m).map(|((p, q), _)| (*p, *q)).unzip();
        let Some(refit) = eight_point(&a, &b) else { break };
        let (m2, _) = inliers_of(&refit);
        let c2 = m2.iter().filter(|b| **b).count();
        if c2 < count {
            break;
        }
        let stable = m2 == mask;
        e = refit;
        mask = m2;
        count = c2;
        if stable {
            break;
        }
    }
    Ok(EssentialEstimate { essential: e, inliers: mask })
}

/// Relative pose `x₂ = R·x₁ + t` with unit `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    pub rotation: Rotation,
    pub translation: UnitVector,
}

/// Depths of a point in two cameras related by `(R, t)`, from normalized coordinates.
pub(crate) fn two_view_depths(r: &Matrix3<f64>, t: &Vector3<f64>, x1: &Vector3<f64>, x2: &Vector3<f64>) -> Option<(f64, f64)> {
    // Solve d₂·x₂ = d₁·R·x₁ + t in the least-squares sense.
    let a = nalgebra::Matrix3x2::from_columns(&[r * x1, -x2]);
    let ata = a.transpose() * a;
    let sol = ata.try_inverse()? * a.transpose() * (-t);
    Some((sol.x, sol.y))
}

/// Selects the decomposition of `E` that puts the most inlier points in
/// front of both cameras.
pub fn recover_pose(
    e: &Matrix3<f64>,
    corrs: &[Correspondence],
    inliers: &[bool],
    k: &CameraIntrinsics,
) -> Result<RelativePose, SfmError> {
    let svd = e.svd(true, true);
    let mut u = svd.u.ok_or(SfmError::Degenerate("essential SVD"))?;
    let mut vt = svd.v_t.ok_or(SfmError::Degenerate("essential SVD"))?;
    if u.determinant() < 0.0 {
        u = -u;
    }
    if vt.determinant() < 0.0 {
        vt = -vt;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let t = u.column(2).into_owned();
    let candidates = [
        (u * w * vt, t),
        (u * w * vt, -t),
        (u * w.transpose() * vt, t),
        (u * w.transpose() * vt, -t),
    ];
    let bearings: Vec<(Vector3<f64>, Vector3<f64>)> = corrs
        .iter()
        .zip(inliers)
        .filter(|(_, m)| **m)
        .map(|(c, _)| (k.backproject(&c.first), k.backproject(&c.second)))
        .collect();
    let mut scores: Vec<(usize, usize)> = candidates
        .iter()
        .enumerate()
        .map(|(i, (r, t))| {
            let good = bearings
                .iter()
                .filter(|(x1, x2)| matches!(two_view_depths(r, t, x1, x2), Some((d1, d2)) if d1 > 0.0 && d2 > 0.0))
                .count();
            (good, i)
        })
        .collect();
    scores.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    if scores[0].0 == 0 {
        return Err(SfmError::Degenerate("no decomposition satisfies cheirality"));
    }
    if scores[0].0 == scores[1].0 {
        return Err(SfmError::AmbiguousPose);
    }
    let (r, t) = candidates[scores[0].1];
    Ok(RelativePose {
        rotation: Rotation::from_matrix_orthonormalized(&r),
        translation: UnitVector::new(t).ok_or(SfmError::Degenerate("zero translation"))?,
    })
}

/// Essential matrix `[t]×R` of a relative pose.
pub fn essential_from_pose(r: &Rotation, t: &Vector3<f64>) -> Matrix3<f64> {
    skew(t) * r.matrix()
}
