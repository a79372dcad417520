use std::f64::consts::TAU;

use nalgebra::{Rotation3, Unit, Vector3};
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::PointCloud;
use crate::error::{invalid, Result};

/// The three uncertainty sources a registration can suffer from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Concept {
    SensorNoise,
    PoseError,
    PartialOverlap,
}

impl Concept {
    pub const ALL: [Concept; 3] = [Concept::SensorNoise, Concept::PoseError, Concept::PartialOverlap];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Concept::SensorNoise => "sensor_noise",
            Concept::PoseError => "pose_error",
            Concept::PartialOverlap => "partial_overlap",
        }
    }
}

/// Ground-truth label of an injected perturbation.
///
/// Magnitude units: noise std-dev (m), rotation angle (rad) with an equal
/// translation norm (m), or the retained fraction of points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationLabel {
    pub concept: Concept,
    pub magnitude: f64,
}

impl PerturbationLabel {
    pub fn new(concept: Concept, magnitude: f64) -> Result<Self> {
        if !(magnitude > 0.0) || !magnitude.is_finite() {
            return invalid(format!("perturbation magnitude {magnitude} must be positive"));
        }
        if concept == Concept::PartialOverlap && magnitude > 1.0 {
            return invalid(format!("retained fraction {magnitude} exceeds 1"));
        }
        Ok(Self { concept, magnitude })
    }
}

/// The rigid motion a `PoseError` injection with this magnitude and seed applies.
pub fn pose_perturbation(magnitude: f64, seed: u64) -> (Rotation3<f64>, Vector3<f64>) {
    let mut rng = crate::rng_from_seed(seed);
    let axis = random_unit(&mut rng);
    let dir = random_unit(&mut rng);
    (Rotation3::from_axis_angle(&axis, magnitude), dir.into_inner() * magnitude)
}

fn random_unit(rng: &mut crate::Rng) -> Unit<Vector3<f64>> {
    loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        if v.norm() > 1e-6 {
            return Unit::new_normalize(v);
        }
    }
}

pub fn inject_perturbation(cloud: &PointCloud, label: PerturbationLabel, seed: u64) -> Result<PointCloud> {
    let label = PerturbationLabel::new(label.concept, label.magnitude)?;
    match label.concept {
        Concept::SensorNoise => {
            let mut rng = crate::rng_from_seed(seed);
            let normal = Normal::new(0.0, label.magnitude)
                .map_err(|e| crate::Error::InvalidArgument(e.to_string()))?;
            let points = cloud
                .points()
                .iter()
                .map(|p| p + Vector3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)))
                .collect();
            // old normals no longer describe the displaced points
            PointCloud::new(points)
        }
        Concept::PoseError => {
            let (rot, t) = pose_perturbation(label.magnitude, seed);
            let points = cloud.points().iter().map(|p| rot * p + t).collect();
            match cloud.normals() {
                Some(ns) => PointCloud::with_normals(points, ns.iter().map(|n| (rot * n).normalize()).collect()),
                None => PointCloud::new(points),
            }
        }
        Concept::PartialOverlap => {
            let mut rng = crate::rng_from_seed(seed);
            let keep = ((label.magnitude * cloud.len() as f64).round() as usize).clamp(1, cloud.len());
            let c = cloud.centroid();
            let start = TAU * rng.random::<f64>();
            let mut order: Vec<(f64, usize)> = cloud
                .points()
                .iter()
                .enumerate()
                .map(|(i, p)| (((p.y - c.y).atan2(p.x - c.x) - start).rem_euclid(TAU), i))
                .collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut kept: Vec<usize> = order[..keep].iter().map(|&(_, i)| i).collect();
            kept.sort_unstable();
            let points = kept.iter().map(|&i| cloud.points()[i]).collect();
            match cloud.normals() {
                Some(ns) => PointCloud::with_normals(points, kept.iter().map(|&i| ns[i]).collect()),
                None => PointCloud::new(points),
            }
        }
    }
}
