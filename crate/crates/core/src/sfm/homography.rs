//! Plane-induced two-view geometry for scenes whose relief is small against
//! the viewing distance, where the essential matrix is poorly determined.

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::essential::{fundamental, Correspondence, RansacConfig};
use super::{ransac_iterations, SfmError};
use crate::factors::CameraIntrinsics;
use crate::manifold::{skew, Rotation};

/// Homography between normalized coordinates, `x₂ ∝ H·x₁`, with inliers.
#[derive(Debug, Clone)]
pub struct HomographyEstimate {
    pub homography: Matrix3<f64>,
    pub inliers: Vec<bool>,
}

impl HomographyEstimate {
    pub fn num_inliers(&self) -> usize {
        self.inliers.iter().filter(|b| **b).count()
    }
}

fn hartley(points: &[Vector2<f64>]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
    let spread = points.iter().map(|p| (p - mean).norm()).sum::<f64>() / n;
    let s = if spread > 0.0 { std::f64::consts::SQRT_2 / spread } else { 1.0 };
    Matrix3::new(s, 0.0, -s * mean.x, 0.0, s, -s * mean.y, 0.0, 0.0, 1.0)
}

/// Normalized DLT from four or more correspondences.
fn dlt(first: &[Vector2<f64>], second: &[Vector2<f64>]) -> Option<Matrix3<f64>> {
    let t1 = hartley(first);
    let t2 = hartley(second);
    let rows = (2 * first.len()).max(9);
    let mut a = DMatrix::zeros(rows, 9);
    for (i, (p, q)) in first.iter().zip(second).enumerate() {
        let x = t1 * Vector3::new(p.x, p.y, 1.0);
        let y = t2 * Vector3::new(q.x, q.y, 1.0);
        for c in 0..3 {
            a[(2 * i, 3 + c)] = -y.z * x[c];
            a[(2 * i, 6 + c)] = y.y * x[c];
            a[(2 * i + 1, c)] = y.z * x[c];
            a[(2 * i + 1, 6 + c)] = -y.x * x[c];
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t?;
    let (min_idx, _) = svd.singular_values.argmin();
    let h = vt.row(min_idx);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let h = t2.try_inverse()? * hn * t1;
    let norm = h.norm();
    (norm > 0.0 && h.iter().all(|v| v.is_finite())).then(|| h / norm)
}

/// Pixel distance between `second` and `first` mapped through the pixel homography.
fn transfer_error(hp: &Matrix3<f64>, first: &Vector2<f64>, second: &Vector2<f64>) -> f64 {
    let y = hp * Vector3::new(first.x, first.y, 1.0);
    if y.z.abs() < f64::EPSILON {
        return f64::INFINITY;
    }
    (Vector2::new(y.x / y.z, y.y / y.z) - second).norm()
}

fn pixel_homography(h: &Matrix3<f64>, k: &CameraIntrinsics) -> Matrix3<f64> {
    let km = k.matrix();
    km * h * km.try_inverse().expect("valid intrinsics")
}

/// Four-point RANSAC on forward transfer error, refit on the inliers.
pub fn estimate_homography(
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    config: &RansacConfig,
) -> Result<HomographyEstimate, SfmError> {
    if corrs.len() < 4 {
        return Err(SfmError::InsufficientData { needed: 4, got: corrs.len() });
    }
    let first: Vec<Vector2<f64>> = corrs.iter().map(|c| k.backproject(&c.first).xy()).collect();
    let second: Vec<Vector2<f64>> = corrs.iter().map(|c| k.backproject(&c.second).xy()).collect();
    let inliers_of = |h: &Matrix3<f64>| -> (Vec<bool>, f64) {
        let hp = pixel_homography(h, k);
        let mut total = 0.0;
        let mask = corrs
            .iter()
            .map(|c| {
                let d = transfer_error(&hp, &c.first, &c.second);
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
    while iter < needed.min(config.max_iterations) {
        iter += 1;
        let idx = sample(&mut rng, corrs.len(), 4);
        let s1: Vec<_> = idx.iter().map(|i| first[i]).collect();
        let s2: Vec<_> = idx.iter().map(|i| second[i]).collect();
        let Some(h) = dlt(&s1, &s2) else { continue };
        let (mask, err) = inliers_of(&h);
        let count = mask.iter().filter(|b| **b).count();
        let better = match &best {
            None => true,
            Some((_, _, c, e0)) => count > *c || (count == *c && err < *e0),
        };
        if better {
            needed = ransac_iterations(count as f64 / corrs.len() as f64, 4, config.confidence);
            best = Some((h, mask, count, err));
        }
    }
    let (mut h, mut mask, mut count, _) = best.ok_or(SfmError::Degenerate("no homography hypothesis"))?;
    if count < 4 {
        return Err(SfmError::Degenerate("fewer than four homography inliers"));
    }
    for _ in 0..5 {
        let (a, b): (Vec<_>, Vec<_>) =
            first.iter().zip(&second).zip(&mask).filter(|(_, m)| **m).map(|((p, q), _)| (*p, *q)).unzip();
        let Some(refit) = dlt(&a, &b) else { break };
        let (m2, _) = inliers_of(&refit);
        let c2 = m2.iter().filter(|b| **b).count();
        if c2 < count {
            break;
        }
        let stable = m2 == mask;
        h = refit;
        mask = m2;
        count = c2;
        if stable {
            break;
        }
    }
    Ok(HomographyEstimate { homography: h, inliers: mask })
}

/// One physically admissible reading of a homography: `x₂ = R·x₁ + t` for
/// points on the plane `nᵀx₁ = 1` of the first camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarMotion {
    pub rotation: Rotation,
    /// Translation divided by the distance of the plane from the first camera.
    pub translation: Vector3<f64>,
    /// Unit plane normal in the first camera frame, pointing away from it.
    pub normal: Vector3<f64>,
}

/// Decomposes `H ∝ R + t·nᵀ` and keeps the readings that put the given
/// first-camera bearings in front of the plane-facing camera.
pub fn decompose_homography(h: &Matrix3<f64>, bearings: &[Vector3<f64>], second: &[Vector3<f64>]) -> Vec<PlanarMotion> {
    let sv = h.svd(false, false).singular_values;
    let mut s = [sv[0], sv[1], sv[2]];
    s.sort_by(|a, b| b.total_cmp(a));
    if !(s[1] > 0.0) {
        return Vec::new();
    }
    let mut hn = h / s[1];
    // Fix the sign so that x₂ᵀ·H·x₁ > 0 for the observed points.
    let votes: f64 = bearings.iter().zip(second).map(|(x1, x2)| x2.dot(&(hn * x1)).signum()).sum();
    if votes < 0.0 {
        hn = -hn;
    }
    let hth = hn.transpose() * hn;
    let eig = hth.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let s1 = eig.eigenvalues[order[0]];
    let s3 = eig.eigenvalues[order[2]];
    let v1 = eig.eigenvectors.column(order[0]).into_owned();
    let v2 = eig.eigenvectors.column(order[1]).into_owned();
    let v3 = eig.eigenvectors.column(order[2]).into_owned();
    if (s1 - s3).abs() < 1e-12 {
        // Pure rotation: no plane information.
        let r = Rotation::from_matrix_orthonormalized(&hn);
        return vec![PlanarMotion { rotation: r, translation: Vector3::zeros(), normal: Vector3::z() }];
    }
    let denom = (s1 - s3).sqrt();
    let a = (1.0 - s3).max(0.0).sqrt();
    let b = (s1 - 1.0).max(0.0).sqrt();
    let u1 = (a * v1 + b * v3) / denom;
    let u2 = (a * v1 - b * v3) / denom;
    let mut out = Vec::with_capacity(4);
    for u in [u1, u2] {
        let uu = Matrix3::from_columns(&[v2, u, v2.cross(&u)]);
        let hv2 = hn * v2;
        let hu = hn * u;
        let ww = Matrix3::from_columns(&[hv2, hu, hv2.cross(&hu)]);
        let r = ww * uu.transpose();
        let n = v2.cross(&u);
        let t = (hn - r) * n;
        for sign in [1.0, -1.0] {
            let n = sign * n;
            let t = sign * t;
            let in_front = bearings.iter().filter(|x| n.dot(x) > 0.0).count();
            if 2 * in_front > bearings.len() {
                out.push(PlanarMotion { rotation: Rotation::from_matrix_orthonormalized(&r), translation: t, normal: n });
            }
        }
    }
    out
}

/// Model-selection scores of the epipolar and the planar explanation of the
/// correspondences, each a truncated sum of `Γ − d²/σ²` over both images.
pub fn model_scores(
    essential: &Matrix3<f64>,
    homography: &Matrix3<f64>,
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    sigma_px: f64,
) -> (f64, f64) {
    const GAMMA: f64 = 5.991;
    const EPIPOLAR_GATE: f64 = 3.841;
    let inv_var = 1.0 / (sigma_px * sigma_px);
    let f = fundamental(essential, k);
    let hp = pixel_homography(homography, k);
    let hp_inv = hp.try_inverse();
    let line_dist2 = |l: Vector3<f64>, p: &Vector2<f64>| {
        let num = l.x * p.x + l.y * p.y + l.z;
        num * num / (l.x * l.x + l.y * l.y)
    };
    let mut sf = 0.0;
    let mut sh = 0.0;
    for c in corrs {
        let p1 = Vector3::new(c.first.x, c.first.y, 1.0);
        let p2 = Vector3::new(c.second.x, c.second.y, 1.0);
        for d2 in [line_dist2(f * p1, &c.second), line_dist2(f.transpose() * p2, &c.first)] {
            let chi = d2 * inv_var;
            if chi < EPIPOLAR_GATE {
                sf += GAMMA - chi;
            }
        }
        let forward = transfer_error(&hp, &c.first, &c.second);
        let backward = hp_inv.map(|hi| transfer_error(&hi, &c.second, &c.first)).unwrap_or(f64::INFINITY);
        for d in [forward, backward] {
            let chi = d * d * inv_var;
            if chi < GAMMA {
                sh += GAMMA - chi;
            }
        }
    }
    (sf, sh)
}

/// Essential matrix of a planar motion, for reuse of the cheirality tools.
pub fn essential_of(m: &PlanarMotion) -> Matrix3<f64> {
    skew(&m.translation) * m.rotation.matrix()
}
