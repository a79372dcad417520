//! Point-to-plane ICP with robust-kernel IRLS.

mod kernel;
mod transform;

pub use kernel::{kernel_weight, KernelFamily, KernelSpec};
pub use transform::{orthonormalize, RigidTransform};

use nalgebra::{Matrix6, SymmetricEigen, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::cloud::{NnIndex, PointCloud};
use crate::error::{invalid, Error, Result};

/// Minimum number of gated correspondences for the 6-DoF update.
pub const MIN_CORRESPONDENCES: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Convergence when the rotation increment norm (rad) falls below this...
    pub rotation_tolerance: f64,
    /// ...and the translation increment norm (m) falls below this.
    pub translation_tolerance: f64,
    /// Correspondences farther than `gate_multiplier × median distance` are rejected.
    pub gate_multiplier: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self { max_iterations: 50, rotation_tolerance: 1e-7, translation_tolerance: 1e-7, gate_multiplier: 3.0 }
    }
}

/// Kernel scale chosen by an adapter for one IRLS iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleChoice {
    pub scale: f64,
    pub js: f64,
}

/// Re-optimizes the kernel scale from the current residual window.
pub trait ScaleAdapter {
    fn choose_scale(&self, residuals: &[f64], family: KernelFamily) -> Result<ScaleChoice>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub source: usize,
    pub target: usize,
    pub distance: f64,
    pub residual: f64,
}

/// Gated nearest-neighbor correspondences for one transform estimate.
#[derive(Debug, Clone)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Correspondence>,
    pub gate: f64,
    /// Fraction of source points within the gate.
    pub overlap_proxy: f64,
}

impl CorrespondenceSet {
    pub fn residuals(&self) -> Vec<f64> {
        self.pairs.iter().map(|c| c.residual).collect()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.pairs.iter().map(|c| c.distance).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub transform: RigidTransform,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub mean_abs_residual: f64,
    pub inlier_fraction: f64,
    pub overlap_proxy: f64,
    /// Final kernel used for weighting.
    pub kernel: KernelSpec,
    /// Mean |r| of the correspondences at the initial transform.
    pub initial_mean_abs_residual: f64,
    /// Distances of the final gated correspondences.
    pub correspondence_distances: Vec<f64>,
    /// Per-iteration adapted scales; empty for a fixed kernel.
    pub scale_trace: Vec<ScaleChoice>,
}

/// JSON summary: transform, residual statistics and convergence metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistrationSummary {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub residual_summary: ResidualSummary,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub count: usize,
    pub mean_abs: f64,
    pub max_abs: f64,
    pub inlier_fraction: f64,
    pub overlap_proxy: f64,
}

impl RegistrationResult {
    pub fn summary(&self) -> RegistrationSummary {
        let r = self.transform.rotation();
        let t = self.transform.translation();
        RegistrationSummary {
            rotation: [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            translation: [t.x, t.y, t.z],
            residual_summary: ResidualSummary {
                count: self.residuals.len(),
                mean_abs: self.mean_abs_residual,
                max_abs: self.residuals.iter().fold(0.0, |m, r| m.max(r.abs())),
                inlier_fraction: self.inlier_fraction,
                overlap_proxy: self.overlap_proxy,
            },
            iterations: self.iterations,
            converged: self.converged,
        }
    }
}

/// Signed point-to-plane residual `nᵀ(R p + t − q)`.
pub fn point_to_plane_residual(t: &RigidTransform, p: &Vector3<f64>, q: &Vector3<f64>, n: &Vector3<f64>) -> Result<f64> {
    if (n.norm() - 1.0).abs() > 1e-6 {
        return invalid("normal must be unit length");
    }
    Ok(n.dot(&(t.apply(p) - q)))
}

/// Gradient of the residual w.r.t. the left increment `(ω, δt)` evaluated
/// at the transformed source point `p`: `[p × n, n]`.
pub fn residual_jacobian(p: &Vector3<f64>, n: &Vector3<f64>) -> Vector6<f64> {
    let a = p.cross(n);
    Vector6::new(a.x, a.y, a.z, n.x, n.y, n.z)
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mid = values.len() / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let upper = *m;
    if values.len() % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

fn target_normals(target: &PointCloud) -> Result<&[Vector3<f64>]> {
    target.normals().ok_or_else(|| Error::InvalidArgument("target cloud needs normals".into()))
}

pub fn correspond(
    source: &PointCloud,
    target: &PointCloud,
    index: &NnIndex,
    t: &RigidTransform,
    gate_multiplier: f64,
) -> Result<CorrespondenceSet> {
    let normals = target_normals(target)?;
    let raw: Vec<(usize, usize, f64, Vector3<f64>)> = source
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let moved = t.apply(p);
            let (j, d) = index.nearest(&moved);
            (i, j, d, moved)
        })
        .collect();
    let mut dists: Vec<f64> = raw.iter().map(|r| r.2).collect();
    let gate = gate_multiplier * median(&mut dists);
    let pairs: Vec<Correspondence> = raw
        .into_iter()
        .filter(|r| r.2 <= gate)
        .map(|(i, j, d, moved)| Correspondence {
            source: i,
            target: j,
            distance: d,
            residual: normals[j].dot(&(moved - target.points()[j])),
        })
        .collect();
    let overlap_proxy = pairs.len() as f64 / source.len() as f64;
    Ok(CorrespondenceSet { pairs, gate, overlap_proxy })
}

/// Weighted Gauss-Newton increment `(ω, δt)` for fixed correspondences.
pub fn solve_increment(
    source: &PointCloud,
    target: &PointCloud,
    t: &RigidTransform,
    set: &CorrespondenceSet,
    weights: &[f64],
) -> Result<(Vector3<f64>, Vector3<f64>)> {
    if set.pairs.len() < MIN_CORRESPONDENCES {
        return Err(Error::DegenerateProblem(format!(
            "{} correspondences after gating, need {MIN_CORRESPONDENCES}",
            set.pairs.len()
        )));
    }
    let normals = target_normals(target)?;
    let mut h = Matrix6::zeros();
    let mut b = Vector6::zeros();
    for (c, &w) in set.pairs.iter().zip(weights) {
        let j = residual_jacobian(&t.apply(&source.points()[c.source]), &normals[c.target]);
        h += w * j * j.transpose();
        b -= w * c.residual * j;
    }
    let eig = SymmetricEigen::new(h);
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    if !(hi > 0.0) || lo <= 1e-12 * hi {
        return Err(Error::DegenerateProblem("rank-deficient point-to-plane system".into()));
    }
    let x = h
        .cholesky()
        .ok_or_else(|| Error::DegenerateProblem("normal equations not positive definite".into()))?
        .solve(&b);
    Ok((Vector3::new(x[0], x[1], x[2]), Vector3::new(x[3], x[4], x[5])))
}

fn weights_for(set: &CorrespondenceSet, kernel: &KernelSpec) -> Vec<f64> {
    set.pairs.iter().map(|c| kernel_weight(c.residual, kernel)).collect()
}

/// One correspondence + weighted least-squares update. Returns the updated
/// transform and the residuals re-evaluated at it.
pub fn irls_step(
    source: &PointCloud,
    target: &PointCloud,
    index: &NnIndex,
    t: &RigidTransform,
    kernel: &KernelSpec,
    gate_multiplier: f64,
) -> Result<(RigidTransform, Vec<f64>)> {
    let set = correspond(source, target, index, t, gate_multiplier)?;
    let weights = weights_for(&set, kernel);
    let (omega, delta) = solve_increment(source, target, t, &set, &weights)?;
    let next = t.retract(&omega, &delta);
    let after = correspond(source, target, index, &next, gate_multiplier)?;
    Ok((next, after.residuals()))
}

/// Iterates IRLS steps from `t0` until the increment falls below the
/// tolerances or the iteration budget runs out. With an adapter, the kernel
/// scale is re-chosen from the current residual window every iteration.
pub fn register(
    source: &PointCloud,
    target: &PointCloud,
    t0: &RigidTransform,
    kernel: KernelSpec,
    cfg: &IcpConfig,
    adapter: Option<&dyn ScaleAdapter>,
) -> Result<RegistrationResult> {
    let index = NnIndex::build(target)?;
    register_indexed(source, target, &index, t0, kernel, cfg, adapter)
}

pub fn register_indexed(
    source: &PointCloud,
    target: &PointCloud,
    index: &NnIndex,
    t0: &RigidTransform,
    mut kernel: KernelSpec,
    cfg: &IcpConfig,
    adapter: Option<&dyn ScaleAdapter>,
) -> Result<RegistrationResult> {
    let mut t = *t0;
    let mut set = correspond(source, target, index, &t, cfg.gate_multiplier)?;
    if set.pairs.is_empty() {
        return Err(Error::DegenerateProblem("no correspondences".into()));
    }
    let initial_mean_abs_residual = mean_abs(&set.residuals());
    let mut scale_trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_iterations {
        if let Some(adapter) = adapter {
            match adapter.choose_scale(&set.residuals(), kernel.family) {
                Ok(choice) => {
                    kernel = KernelSpec::new(kernel.family, choice.scale)?;
                    scale_trace.push(choice);
                }
                // keep the previous scale when no candidate is feasible
                Err(Error::NoFeasibleScale) => {}
                Err(e) => return Err(e),
            }
        }
        let weights = weights_for(&set, &kernel);
        let (omega, delta) = solve_increment(source, target, &t, &set, &weights)?;
        t = t.retract(&omega, &delta);
        debug_assert!(t.orthonormality_error() < 1e-9);
        set = correspond(source, target, index, &t, cfg.gate_multiplier)?;
        iterations += 1;
        if omega.norm() < cfg.rotation_tolerance && delta.norm() < cfg.translation_tolerance {
            converged = true;
            break;
        }
    }

    let residuals = set.residuals();
    let weights = weights_for(&set, &kernel);
    let max_w = weights.iter().copied().fold(0.0, f64::max);
    let inlier_fraction = if weights.is_empty() {
        0.0
    } else {
        weights.iter().filter(|&&w| w >= 0.5 * max_w).count() as f64 / weights.len() as f64
    };
    Ok(RegistrationResult {
        transform: t,
        mean_abs_residual: mean_abs(&residuals),
        residuals,
        iterations,
        converged,
        inlier_fraction,
        overlap_proxy: set.overlap_proxy,
        kernel,
        initial_mean_abs_residual,
        correspondence_distances: set.distances(),
        scale_trace,
    })
}

pub(crate) fn mean_abs(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().map(|r| r.abs()).sum::<f64>() / values.len() as f64
    }
}
