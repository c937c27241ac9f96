//! Similarity alignment between two reconstructions.

use nalgebra::{Matrix3, Vector3};

use super::SfmError;
use crate::manifold::{Pose, Rotation, UnitVector};

/// `x ↦ s·R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sim3 {
    pub scale: f64,
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Default for Sim3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Sim3 {
    pub fn identity() -> Self {
        Self { scale: 1.0, rotation: Rotation::identity(), translation: Vector3::zeros() }
    }

    pub fn new(scale: f64, rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self { scale, rotation, translation }
    }

    pub fn apply_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation.matrix() * x) + self.translation
    }

    pub fn apply_direction(&self, v: &UnitVector) -> UnitVector {
        UnitVector::new(self.rotation.matrix() * v.as_vector()).expect("rotation preserves norm")
    }

    /// Camera-to-body pose expressed in the target frame.
    pub fn apply_pose(&self, p: &Pose) -> Pose {
        Pose::new(self.rotation * p.rotation, self.apply_point(&p.translation))
    }

    pub fn inverse(&self) -> Sim3 {
        let rt = self.rotation.inverse();
        let s = 1.0 / self.scale;
        Sim3 { scale: s, rotation: rt, translation: -s * (rt.matrix() * self.translation) }
    }
}

/// Chordal-initialized Karcher mean of rotations.
pub fn karcher_mean(rotations: &[Rotation]) -> Option<Rotation> {
    if rotations.is_empty() {
        return None;
    }
    let sum = rotations.iter().fold(Matrix3::zeros(), |a, r| a + r.matrix());
    let mut mean = Rotation::from_matrix_orthonormalized(&sum);
    for _ in 0..100 {
        let step = rotations
            .iter()
            .fold(Vector3::zeros(), |a, r| a + (mean.transpose() * *r).log())
            / rotations.len() as f64;
        mean = mean * Rotation::exp(&step);
        if step.norm() < 1e-15 {
            break;
        }
    }
    Some(mean)
}

/// Least-squares rotation aligning centred `source` to centred `target`.
fn umeyama_rotation(source: &[Vector3<f64>], target: &[Vector3<f64>], ms: &Vector3<f64>, mt: &Vector3<f64>) -> Rotation {
    let cov = source
        .iter()
        .zip(target)
        .fold(Matrix3::zeros(), |a, (x, y)| a + (y - mt) * (x - ms).transpose());
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    Rotation::from_matrix_unchecked(u * d * vt)
}

/// Similarity mapping `source` onto `target`.
///
/// When poses are given, the rotation is the Karcher mean of the per-view
/// relative rotations; otherwise it comes from the point sets. Scale and
/// translation are then the closed-form least-squares fit over the points
/// and the camera centres.
pub fn sim3_align(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
    source_poses: &[Pose],
    target_poses: &[Pose],
) -> Result<Sim3, SfmError> {
    if source.len() != target.len() || source_poses.len() != target_poses.len() {
        return Err(SfmError::Degenerate("alignment sets differ in length"));
    }
    let xs: Vec<Vector3<f64>> = source.iter().copied().chain(source_poses.iter().map(|p| p.translation)).collect();
    let ys: Vec<Vector3<f64>> = target.iter().copied().chain(target_poses.iter().map(|p| p.translation)).collect();
    if xs.len() < 3 {
        return Err(SfmError::InsufficientData { needed: 3, got: xs.len() });
    }
    let n = xs.len() as f64;
    let ms = xs.iter().fold(Vector3::zeros(), |a, x| a + x) / n;
    let mt = ys.iter().fold(Vector3::zeros(), |a, y| a + y) / n;
    let var_s: f64 = xs.iter().map(|x| (x - ms).norm_squared()).sum();
    let spread = xs.iter().fold(Matrix3::zeros(), |a, x| a + (x - ms) * (x - ms).transpose());
    let sv = spread.symmetric_eigenvalues();
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(f64::total_cmp);
    if !(var_s > 0.0) || sorted[1] <= 1e-12 * sorted[2] {
        return Err(SfmError::Degenerate("alignment points are collinear"));
    }

    let rotation = if source_poses.is_empty() {
        umeyama_rotation(&xs, &ys, &ms, &mt)
    } else {
        let rel: Vec<Rotation> = source_poses
            .iter()
            .zip(target_poses)
            .map(|(s, t)| t.rotation * s.rotation.transpose())
            .collect();
        karcher_mean(&rel).expect("non-empty")
    };
    let r = rotation.matrix();
    let cross: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - mt).dot(&(r * (x - ms)))).sum();
    let scale = cross / var_s;
    if !(scale > 0.0) {
        return Err(SfmError::Degenerate("non-positive alignment scale"));
    }
    Ok(Sim3 { scale, rotation, translation: mt - scale * (r * ms) })
}
