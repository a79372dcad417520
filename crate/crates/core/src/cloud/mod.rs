//! Point clouds: synthetic shape generation, perturbation injection with
//! ground-truth labels, normal estimation and nearest-neighbor indexing.

mod kdtree;
mod perturb;
mod ply;
mod shapes;

pub use kdtree::KdTree;
pub use perturb::{inject_perturbation, pose_perturbation, Concept, PerturbationLabel};
pub use ply::{read_ply, write_ply};
pub use shapes::{generate_shape, ShapeKind, ShapeParams};

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

const UNIT_TOLERANCE: f64 = 1e-6;

/// Positions with optional unit normals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
    normals: Option<Vec<Vector3<f64>>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        if points.is_empty() {
            return invalid("point cloud must be non-empty");
        }
        Ok(Self { points, normals: None })
    }

    pub fn with_normals(points: Vec<Vector3<f64>>, normals: Vec<Vector3<f64>>) -> Result<Self> {
        if normals.len() != points.len() {
            return invalid(format!("{} normals for {} points", normals.len(), points.len()));
        }
        if let Some(bad) = normals.iter().position(|n| (n.norm() - 1.0).abs() > UNIT_TOLERANCE) {
            return invalid(format!("normal {bad} is not unit length"));
        }
        let mut cloud = Self::new(points)?;
        cloud.normals = Some(normals);
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vector3<f64>]> {
        self.normals.as_deref()
    }

    pub fn without_normals(mut self) -> Self {
        self.normals = None;
        self
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.points.iter().sum::<Vector3<f64>>() / self.points.len() as f64
    }

    /// Length of the axis-aligned bounding-box diagonal.
    pub fn bbox_diameter(&self) -> f64 {
        let (lo, hi) = bbox(&self.points);
        (hi - lo).norm()
    }
}

pub(crate) fn bbox(points: &[Vector3<f64>]) -> (Vector3<f64>, Vector3<f64>) {
    points.iter().fold(
        (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY)),
        |(lo, hi), p| (lo.inf(p), hi.sup(p)),
    )
}

/// Exact nearest-neighbor index over a cloud's positions.
#[derive(Debug, Clone)]
pub struct NnIndex {
    tree: KdTree,
}

impl NnIndex {
    pub fn build(cloud: &PointCloud) -> Result<Self> {
        Ok(Self { tree: KdTree::build(cloud.points())? })
    }

    /// (point index, distance) of the true nearest neighbor.
    pub fn nearest(&self, p: &Vector3<f64>) -> (usize, f64) {
        self.tree.nearest(p)
    }

    pub fn knn(&self, p: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        self.tree.knn(p, k)
    }
}

/// Per-point normals from the least eigenvector of the covariance over the
/// `k` nearest neighbors (the point itself included), oriented away from
/// the cloud centroid.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<PointCloud> {
    if k < 3 || k >= cloud.len() {
        return invalid(format!("k = {k} must satisfy 3 <= k < {}", cloud.len()));
    }
    let index = NnIndex::build(cloud)?;
    let centroid = cloud.centroid();
    let normals = cloud
        .points()
        .iter()
        .map(|p| {
            let neighbors = index.knn(p, k);
            let mean = neighbors.iter().map(|&(i, _)| cloud.points[i]).sum::<Vector3<f64>>() / k as f64;
            let cov = neighbors.iter().fold(Matrix3::zeros(), |acc, &(i, _)| {
                let d = cloud.points[i] - mean;
                acc + d * d.transpose()
            });
            let eig = SymmetricEigen::new(cov);
            let mut n: Vector3<f64> = eig.eigenvectors.column(eig.eigenvalues.imin()).into_owned();
            n.normalize_mut();
            if n.dot(&(p - centroid)) < 0.0 {
                n = -n;
            }
            n
        })
        .collect();
    PointCloud::with_normals(cloud.points.clone(), normals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn planar_patch_normals_are_vertical() {
        let points: Vec<_> = (0..20)
            .flat_map(|i| (0..20).map(move |j| Vector3::new(i as f64 * 0.05, j as f64 * 0.05 + 0.01 * (i % 3) as f64, 0.0)))
            .collect();
        let cloud = estimate_normals(&PointCloud::new(points).unwrap(), 8).unwrap();
        for n in cloud.normals().unwrap() {
            assert!((n.z.abs() - 1.0).abs() < 1e-12, "{n:?}");
        }
    }

    #[test]
    fn sphere_normals_are_radial() {
        let mut rng = crate::rng_from_seed(9);
        let points: Vec<_> = (0..2000)
            .map(|_| {
                let v = Vector3::new(
                    rng.sample::<f64, _>(rand_distr::StandardNormal),
                    rng.sample::<f64, _>(rand_distr::StandardNormal),
                    rng.sample::<f64, _>(rand_distr::StandardNormal),
                );
                v.normalize()
            })
            .collect();
        let cloud = estimate_normals(&PointCloud::new(points.clone()).unwrap(), 10).unwrap();
        let mean_err: f64 = cloud
            .normals()
            .unwrap()
            .iter()
            .zip(&points)
            .map(|(n, p)| n.dot(p).clamp(-1.0, 1.0).acos())
            .sum::<f64>()
            / points.len() as f64;
        assert!(mean_err.to_degrees() < 5.0, "mean angular error {}", mean_err.to_degrees());
    }

    #[test]
    fn k_out_of_range_is_rejected() {
        let cloud = PointCloud::new((0..10).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect()).unwrap();
        assert!(estimate_normals(&cloud, 10).is_err());
        assert!(estimate_normals(&cloud, 2).is_err());
    }

    #[test]
    fn non_unit_normals_are_rejected() {
        let p = vec![Vector3::zeros()];
        assert!(PointCloud::with_normals(p.clone(), vec![Vector3::new(0.0, 0.0, 2.0)]).is_err());
        assert!(PointCloud::with_normals(p, vec![Vector3::z()]).is_ok());
        assert!(PointCloud::new(vec![]).is_err());
    }
}
