//! Probabilistic kernel optimization: pick the robust-kernel scale whose
//! implied inlier distribution best matches the empirical residual
//! histogram under the Jensen-Shannon divergence.

mod adapt;

pub use adapt::{
    adapt, concept_step, project_params, AdaptStatus, AdaptationConfig, AdaptationEvent, Adaptation,
    ParamBounds, RegistrationParams, TriggerFlags, ViewpointMonitor,
};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::registration::{kernel_weight, KernelFamily, KernelSpec, ScaleAdapter, ScaleChoice};

/// Normal-consistent MAD scale factor.
const MAD_TO_SIGMA: f64 = 1.4826;
/// Smoothing count added to every histogram bin.
const HISTOGRAM_PRIOR: f64 = 0.5;
/// Midpoint-rule panels per bin when integrating the kernel weight.
const PANELS_PER_BIN: usize = 64;

/// Discrete distribution over residual-magnitude bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InlierDistribution {
    pub bin_edges: Vec<f64>,
    pub probabilities: Vec<f64>,
}

fn check_bins(bins: &[f64]) -> Result<()> {
    if bins.len() < 2 {
        return invalid("need at least two bin edges");
    }
    if bins.windows(2).any(|w| !(w[1] > w[0])) {
        return invalid("bin edges must be strictly ascending");
    }
    Ok(())
}

/// `P_model(bin | c) = ∫_bin w(r; c) dr / Z_w`, composite midpoint rule.
pub fn model_inlier_dist(kernel: &KernelSpec, bins: &[f64]) -> Result<InlierDistribution> {
    check_bins(bins)?;
    let mass: Vec<f64> = bins
        .windows(2)
        .map(|w| {
            let h = (w[1] - w[0]) / PANELS_PER_BIN as f64;
            (0..PANELS_PER_BIN).map(|i| kernel_weight(w[0] + (i as f64 + 0.5) * h, kernel)).sum::<f64>() * h
        })
        .collect();
    let z_w: f64 = mass.iter().sum();
    if !(z_w > 0.0) || !z_w.is_finite() {
        return Err(Error::DegenerateDistribution(format!("kernel scale {} gives zero weight on all bins", kernel.scale)));
    }
    Ok(InlierDistribution { bin_edges: bins.to_vec(), probabilities: mass.into_iter().map(|m| m / z_w).collect() })
}

/// Histogram of `|r|` with add-one-half smoothing. Magnitudes beyond the
/// last edge are left out.
pub fn data_inlier_dist(window: &[f64], bins: &[f64]) -> Result<InlierDistribution> {
    if window.is_empty() {
        return invalid("empty residual window");
    }
    check_bins(bins)?;
    let nb = bins.len() - 1;
    let mut counts = vec![HISTOGRAM_PRIOR; nb];
    let (lo, hi) = (bins[0], bins[nb]);
    for r in window {
        let a = r.abs();
        if a < lo || a > hi {
            continue;
        }
        // last bin is closed on the right
        let j = bins[1..].partition_point(|&e| e <= a).min(nb - 1);
        counts[j] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    Ok(InlierDistribution { bin_edges: bins.to_vec(), probabilities: counts.into_iter().map(|c| c / total).collect() })
}

fn kl_to_mixture(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &mi)| pi * (pi / mi).ln())
        .sum()
}

/// `½ KL(P‖M) + ½ KL(Q‖M)` with `M = ½(P + Q)`, natural log.
pub fn js_divergence(p: &InlierDistribution, q: &InlierDistribution) -> Result<f64> {
    if p.bin_edges != q.bin_edges || p.probabilities.len() != q.probabilities.len() {
        return invalid("distributions are defined on different bins");
    }
    let m: Vec<f64> = p.probabilities.iter().zip(&q.probabilities).map(|(a, b)| 0.5 * (a + b)).collect();
    let js = 0.5 * kl_to_mixture(&p.probabilities, &m) + 0.5 * kl_to_mixture(&q.probabilities, &m);
    Ok(js.clamp(0.0, std::f64::consts::LN_2))
}

/// Exhaustive scan of `grid` for the scale minimizing
/// `JS(P_data ‖ P_model(·|c))`. Ties go to the smaller scale; grid points
/// whose model distribution is degenerate are skipped.
pub fn optimize_scale(window: &[f64], family: KernelFamily, grid: &[f64], bins: &[f64]) -> Result<(f64, f64)> {
    if grid.is_empty() {
        return invalid("empty scale grid");
    }
    let data = data_inlier_dist(window, bins)?;
    let mut best: Option<(f64, f64)> = None;
    for &c in grid {
        let model = match KernelSpec::new(family, c).and_then(|k| model_inlier_dist(&k, bins)) {
            Ok(m) => m,
            Err(Error::DegenerateDistribution(_)) => continue,
            Err(e) => return Err(e),
        };
        let js = js_divergence(&data, &model)?;
        let better = match best {
            None => true,
            Some((bc, bjs)) => js < bjs || (js == bjs && c < bc),
        };
        if better {
            best = Some((c, js));
        }
    }
    best.ok_or(Error::NoFeasibleScale)
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

pub fn linear_bins(hi: f64, n_bins: usize) -> Vec<f64> {
    (0..=n_bins).map(|i| hi * i as f64 / n_bins as f64).collect()
}

/// Robust residual spread: 1.4826 × median absolute deviation.
pub fn robust_sigma(window: &[f64]) -> f64 {
    let mut v = window.to_vec();
    let med = crate::registration::median(&mut v);
    let mut dev: Vec<f64> = window.iter().map(|r| (r - med).abs()).collect();
    MAD_TO_SIGMA * crate::registration::median(&mut dev)
}

/// Per-iteration scale adapter used inside `register`.
///
/// The candidate grid and the histogram range are both expressed relative
/// to the window's robust spread σ (floored by `noise_floor`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PkoAdapter {
    pub grid_points: usize,
    pub grid_low: f64,
    pub grid_high: f64,
    pub bins: usize,
    pub bin_range_sigmas: f64,
    pub noise_floor: f64,
    pub scale_floor: f64,
}

impl Default for PkoAdapter {
    fn default() -> Self {
        Self {
            grid_points: 32,
            grid_low: 0.1,
            grid_high: 10.0,
            bins: 16,
            bin_range_sigmas: 4.0,
            noise_floor: 1e-3,
            scale_floor: 2e-3,
        }
    }
}

impl PkoAdapter {
    /// Adapter whose floors come from the current registration parameters.
    pub fn with_params(&self, params: &RegistrationParams) -> Self {
        Self { noise_floor: params.measurement_noise, scale_floor: params.kernel_scale, ..self.clone() }
    }
}

impl ScaleAdapter for PkoAdapter {
    fn choose_scale(&self, residuals: &[f64], family: KernelFamily) -> Result<ScaleChoice> {
        let sigma = robust_sigma(residuals).max(self.noise_floor).max(1e-12);
        let grid = log_grid(self.grid_low * sigma, self.grid_high * sigma, self.grid_points);
        let bins = linear_bins(self.bin_range_sigmas * sigma, self.bins);
        let (c, js) = optimize_scale(residuals, family, &grid, &bins)?;
        Ok(ScaleChoice { scale: c.max(self.scale_floor), js })
    }
}
