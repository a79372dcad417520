use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::pko::robust_sigma;
use crate::registration::{mean_abs, median, RegistrationResult};

pub const HISTOGRAM_BINS: usize = 16;
const HISTOGRAM_RANGE_SIGMAS: f64 = 4.0;

/// Number of entries in a [`FeatureVector`].
pub const FEATURE_DIM: usize = HISTOGRAM_BINS + 12;

/// Offsets of the named entries following the histogram block.
pub mod index {
    use super::HISTOGRAM_BINS;
    pub const MEAN_ABS: usize = HISTOGRAM_BINS;
    pub const MEDIAN_ABS: usize = HISTOGRAM_BINS + 1;
    pub const MAD: usize = HISTOGRAM_BINS + 2;
    pub const INLIER_FRACTION: usize = HISTOGRAM_BINS + 3;
    pub const OVERLAP_PROXY: usize = HISTOGRAM_BINS + 4;
    pub const ITERATIONS: usize = HISTOGRAM_BINS + 5;
    pub const KERNEL_SCALE: usize = HISTOGRAM_BINS + 6;
    pub const JS: usize = HISTOGRAM_BINS + 7;
    pub const DISTANCE_Q1: usize = HISTOGRAM_BINS + 8;
    pub const DISTANCE_Q2: usize = HISTOGRAM_BINS + 9;
    pub const DISTANCE_Q3: usize = HISTOGRAM_BINS + 10;
    pub const INITIAL_MEAN_ABS: usize = HISTOGRAM_BINS + 11;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Registration statistics as a fixed-length descriptor.
///
/// The histogram holds the fraction of `|r|` in 16 equal bins over
/// `[0, 4σ]` where σ is the MAD-based spread; larger values land in the
/// last bin. Quartiles are taken over the gated correspondence distances.
pub fn extract_features(result: &RegistrationResult) -> Result<FeatureVector> {
    if result.residuals.is_empty() {
        return invalid("registration result has no residuals");
    }
    let mut abs: Vec<f64> = result.residuals.iter().map(|r| r.abs()).collect();
    let sigma = robust_sigma(&result.residuals);
    let mut f = vec![0.0; FEATURE_DIM];
    let n = abs.len() as f64;
    if sigma > 0.0 {
        let width = HISTOGRAM_RANGE_SIGMAS * sigma / HISTOGRAM_BINS as f64;
        for &a in &abs {
            let b = ((a / width) as usize).min(HISTOGRAM_BINS - 1);
            f[b] += 1.0 / n;
        }
    } else {
        f[0] = 1.0;
    }
    f[index::MEAN_ABS] = mean_abs(&result.residuals);
    f[index::MEDIAN_ABS] = median(&mut abs);
    f[index::MAD] = mad(&result.residuals);
    f[index::INLIER_FRACTION] = result.inlier_fraction;
    f[index::OVERLAP_PROXY] = result.overlap_proxy;
    f[index::ITERATIONS] = result.iterations as f64;
    f[index::KERNEL_SCALE] = result.kernel.scale;
    f[index::JS] = result.scale_trace.last().map_or(0.0, |s| s.js);
    let q = quartiles(&result.correspondence_distances);
    f[index::DISTANCE_Q1..=index::DISTANCE_Q3].copy_from_slice(&q);
    f[index::INITIAL_MEAN_ABS] = result.initial_mean_abs_residual;
    if f.iter().any(|v| !v.is_finite()) {
        return invalid("registration result produced a non-finite feature");
    }
    Ok(FeatureVector(f))
}

fn mad(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    let m = median(&mut v);
    let mut dev: Vec<f64> = values.iter().map(|x| (x - m).abs()).collect();
    median(&mut dev)
}

fn quartiles(values: &[f64]) -> [f64; 3] {
    if values.is_empty() {
        return [0.0; 3];
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |p: f64| {
        let x = p * (v.len() - 1) as f64;
        let lo = x.floor() as usize;
        let hi = x.ceil() as usize;
        v[lo] + (x - lo as f64) * (v[hi] - v[lo])
    };
    [at(0.25), at(0.5), at(0.75)]
}

/// Per-dimension z-score constants fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Constant columns get unit scale so they map to zero.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return invalid("cannot standardize an empty set");
        };
        let d = first.len();
        if rows.iter().any(|r| r.len() != d) {
            return invalid("rows have inconsistent dimension");
        }
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale = (0..d)
            .map(|j| {
                let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                let sd = var.sqrt();
                if sd > 1e-12 * (1.0 + mean[j].abs()) { sd } else { 1.0 }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn identity(d: usize) -> Self {
        Self { mean: vec![0.0; d], scale: vec![1.0; d] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return invalid(format!("feature dimension {} does not match {}", x.len(), self.dim()));
        }
        Ok(x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registration::{KernelFamily, KernelSpec, RigidTransform, ScaleChoice};

    fn result(residuals: Vec<f64>) -> RegistrationResult {
        let n = residuals.len();
        RegistrationResult {
            transform: RigidTransform::identity(),
            mean_abs_residual: mean_abs(&residuals),
            residuals,
            iterations: 7,
            converged: true,
            inlier_fraction: 0.8,
            overlap_proxy: 0.65,
            kernel: KernelSpec::new(KernelFamily::Welsch, 0.01).unwrap(),
            initial_mean_abs_residual: 0.05,
            correspondence_distances: (0..n).map(|i| i as f64 * 1e-3).collect(),
            scale_trace: vec![ScaleChoice { scale: 0.01, js: 0.02 }],
        }
    }

    fn sample() -> Vec<f64> {
        (0..200).map(|i| ((i * 37 % 101) as f64 - 50.0) * 1e-4).collect()
    }

    #[test]
    fn deterministic_and_finite() {
        let a = extract_features(&result(sample())).unwrap();
        let b = extract_features(&result(sample())).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), FEATURE_DIM);
        assert!(a.0.iter().all(|v| v.is_finite()));
        let hist: f64 = a.0[..HISTOGRAM_BINS].iter().sum();
        assert!((hist - 1.0).abs() < 1e-12);
    }

    #[test]
    fn doubling_residuals_doubles_location_and_spread() {
        let base = sample();
        let a = extract_features(&result(base.clone())).unwrap();
        let b = extract_features(&result(base.iter().map(|r| 2.0 * r).collect())).unwrap();
        for i in [index::MEAN_ABS, index::MEDIAN_ABS, index::MAD] {
            assert!((b.0[i] - 2.0 * a.0[i]).abs() <= 1e-15 * a.0[i].abs().max(1.0), "entry {i}");
        }
        let m: f64 = base.iter().map(|r| r.abs()).sum::<f64>() / base.len() as f64;
        assert!((a.0[index::MEAN_ABS] - m).abs() < 1e-15);
        assert_eq!(a.0[..HISTOGRAM_BINS], b.0[..HISTOGRAM_BINS]);
    }

    #[test]
    fn passthrough_entries() {
        let r = result(sample());
        let f = extract_features(&r).unwrap();
        assert_eq!(f.0[index::OVERLAP_PROXY], r.overlap_proxy);
        assert_eq!(f.0[index::INLIER_FRACTION], r.inlier_fraction);
        assert_eq!(f.0[index::ITERATIONS], 7.0);
        assert_eq!(f.0[index::JS], 0.02);
    }

    #[test]
    fn quartiles_of_linear_sequence() {
        assert_eq!(quartiles(&[0.0, 1.0, 2.0, 3.0, 4.0]), [1.0, 2.0, 3.0]);
        assert_eq!(quartiles(&[4.0, 0.0]), [1.0, 2.0, 3.0]);
    }

    #[test]
    fn empty_residuals_rejected() {
        assert!(extract_features(&result(vec![])).is_err());
    }

    #[test]
    fn standardizer_zero_mean_unit_variance() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64, 3.0, (i * i) as f64]).collect();
        let s = Standardizer::fit(&rows).unwrap();
        let z: Vec<Vec<f64>> = rows.iter().map(|r| s.apply(r).unwrap()).collect();
        for j in 0..3 {
            let m: f64 = z.iter().map(|r| r[j]).sum::<f64>() / 50.0;
            assert!(m.abs() < 1e-12);
        }
        assert!(z.iter().all(|r| r[1] == 0.0));
        assert!(s.apply(&[1.0]).is_err());
    }
}
