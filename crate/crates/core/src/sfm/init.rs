//! Initial normals and albedos for a triangulated cloud.

use std::collections::BTreeMap;

use kiddo::float::kdtree::KdTree;
use kiddo::SquaredEuclidean;
use nalgebra::{Matrix3, Vector3};

use super::SfmError;
use crate::photometry::{ReflectanceModel, ViewGeometry};
use crate::reconstruction::{LandmarkState, Observation, ViewState};
use crate::manifold::UnitVector;

/// Large buckets keep the tree valid when many points share a coordinate.
pub(crate) type Tree<const K: usize> = KdTree<f64, u64, K, 256, u32>;

pub const DEFAULT_NORMAL_NEIGHBORS: usize = 32;

/// Plane-fit normal for every point of `cloud` from the point and its
/// `neighbors` nearest neighbours, oriented towards `viewpoint`.
pub fn init_normals(cloud: &[Vector3<f64>], neighbors: usize, viewpoint: &Vector3<f64>) -> Result<Vec<UnitVector>, SfmError> {
    if cloud.len() < neighbors + 1 {
        return Err(SfmError::InsufficientCloud { needed: neighbors + 1, got: cloud.len() });
    }
    let mut tree: Tree<3> = Tree::with_capacity(cloud.len());
    for (i, p) in cloud.iter().enumerate() {
        tree.add(&[p.x, p.y, p.z], i as u64);
    }
    cloud
        .iter()
        .map(|p| {
            let nn = tree.nearest_n::<SquaredEuclidean>(&[p.x, p.y, p.z], neighbors + 1);
            let pts: Vec<Vector3<f64>> = nn.iter().map(|n| cloud[n.item as usize]).collect();
            let mean = pts.iter().fold(Vector3::zeros(), |a, q| a + q) / pts.len() as f64;
            let cov = pts.iter().fold(Matrix3::zeros(), |a, q| a + (q - mean) * (q - mean).transpose());
            let eig = cov.symmetric_eigen();
            let mut order = [0usize, 1, 2];
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            // A plane needs two non-vanishing spreads.
            if eig.eigenvalues[order[1]] <= 1e-12 * eig.eigenvalues[order[2]].max(f64::MIN_POSITIVE) {
                return Err(SfmError::Collinear);
            }
            let mut n = eig.eigenvectors.column(order[0]).into_owned();
            if n.dot(&(viewpoint - p)) < 0.0 {
                n = -n;
            }
            UnitVector::new(n).ok_or(SfmError::Collinear)
        })
        .collect()
}

/// Per-landmark albedo as the mean over views of `(Î − ξ)/(λ·S)`.
///
/// Views whose geometry is beyond `cutoff_deg` are skipped; landmarks left
/// without any usable view are returned separately by id.
pub fn albedo_estimates(
    landmarks: &BTreeMap<u32, LandmarkState>,
    views: &[ViewState],
    observations: &[Observation],
    model: &ReflectanceModel,
    cutoff_deg: f64,
) -> (BTreeMap<u32, f64>, Vec<u32>) {
    let mut sums: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for o in observations {
        let (Some(l), Some(v)) = (landmarks.get(&o.landmark), views.get(o.image as usize)) else { continue };
        let Ok(geo) = ViewGeometry::new(&v.pose.translation, &v.sun, &l.position, &l.normal, cutoff_deg) else {
            continue;
        };
        let Ok(s) = model.shading(geo.f, geo.w, geo.h) else { continue };
        let denom = v.calibration.scale * s.value;
        if !(denom.abs() > 0.0) {
            continue;
        }
        let e = sums.entry(o.landmark).or_insert((0.0, 0));
        e.0 += (o.brightness - v.calibration.bias) / denom;
        e.1 += 1;
    }
    let albedos: BTreeMap<u32, f64> = sums.into_iter().map(|(j, (s, n))| (j, s / n as f64)).collect();
    let missing = landmarks.keys().filter(|j| !albedos.contains_key(j)).copied().collect();
    (albedos, missing)
}

/// [`albedo_estimates`] that fails on the first landmark without a usable view.
pub fn init_albedos(
    landmarks: &BTreeMap<u32, LandmarkState>,
    views: &[ViewState],
    observations: &[Observation],
    model: &ReflectanceModel,
    cutoff_deg: f64,
) -> Result<BTreeMap<u32, f64>, SfmError> {
    let (albedos, missing) = albedo_estimates(landmarks, views, observations, model, cutoff_deg);
    match missing.first() {
        Some(&j) => Err(SfmError::NoValidView(j)),
        None => Ok(albedos),
    }
}
