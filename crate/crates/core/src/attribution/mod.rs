//! Concept attribution over registration evidence.
//!
//! Registration statistics become a feature vector, a one-vs-rest Laplace
//! GP classifier turns it into posteriors over the three perturbation
//! concepts, and concept activation vectors give per-concept
//! sensitivities. A reject rule on entropy and peak posterior flags
//! out-of-distribution frames.

mod cav;
mod eval;
mod features;
mod gpc;

pub use cav::{concept_sensitivity, train_cav};
pub use eval::{evaluate, expected_calibration_error, reliability_table, stratified_split, Evaluation, ReliabilityBin};
pub use features::{extract_features, index, FeatureVector, Standardizer, FEATURE_DIM, HISTOGRAM_BINS};
pub use gpc::{accuracy, argmax, default_hyper_grid, select_hyper, GpcHyper, HyperScore, GpcModel, GpcModelData, MODEL_VERSION};

use serde::{Deserialize, Serialize};

use crate::cloud::Concept;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptReport {
    pub posteriors: [f64; 3],
    pub entropy: f64,
    pub dominant: Concept,
    pub sensitivities: [f64; 3],
    pub ood: bool,
}

/// Natural-log entropy with `0·ln 0 = 0`.
pub fn predictive_entropy(p: &[f64; 3]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// `u > τ_u ∨ max π < τ_p`, both strict.
pub fn ood_flag(u: f64, posteriors: &[f64; 3], th: &OodThresholds) -> bool {
    let max_pi = posteriors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    u > th.tau_u || max_pi < th.tau_p
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodThresholds {
    pub tau_u: f64,
    pub tau_p: f64,
}

impl Default for OodThresholds {
    fn default() -> Self {
        Self { tau_u: 1.0, tau_p: 0.4 }
    }
}

impl OodThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=3f64.ln()).contains(&self.tau_u) || !(0.0..=1.0).contains(&self.tau_p) {
            return invalid("tau_u must lie in [0, ln 3] and tau_p in [0, 1]");
        }
        Ok(())
    }
}

/// A trained classifier together with one concept activation vector per
/// class. This is what the training command persists.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attributor {
    pub model: GpcModel,
    pub cavs: [Vec<f64>; 3],
    pub thresholds: OodThresholds,
}

impl Attributor {
    /// Trains the classifier with fixed hyperparameters and fits each CAV
    /// on that class's standardized rows against the remaining rows.
    pub fn train(rows: &[Vec<f64>], labels: &[Concept], hyper: GpcHyper, thresholds: OodThresholds) -> Result<Self> {
        thresholds.validate()?;
        let model = GpcModel::train(rows, labels, hyper)?;
        let z = model.training_inputs();
        let cavs = [0, 1, 2].map(|c| {
            let (pos, neg): (Vec<_>, Vec<_>) = z.iter().zip(labels).partition(|(_, l)| l.index() == c);
            let pos: Vec<Vec<f64>> = pos.into_iter().map(|(r, _)| r.clone()).collect();
            let neg: Vec<Vec<f64>> = neg.into_iter().map(|(r, _)| r.clone()).collect();
            train_cav(&pos, &neg)
        });
        let [a, b, c] = cavs;
        Ok(Self { model, cavs: [a?, b?, c?], thresholds })
    }

    pub fn report(&self, features: &FeatureVector) -> Result<ConceptReport> {
        let z = self.model.standardize(features.as_slice())?;
        let posteriors = self.model.predict_standardized(&z)?;
        let entropy = predictive_entropy(&posteriors);
        let mut sensitivities = [0.0; 3];
        for (c, s) in sensitivities.iter_mut().enumerate() {
            *s = concept_sensitivity(&self.model, c, &z, &self.cavs[c])?;
        }
        Ok(ConceptReport {
            posteriors,
            entropy,
            dominant: Concept::from_index(argmax(&posteriors)).expect("index below 3"),
            sensitivities,
            ood: ood_flag(entropy, &posteriors, &self.thresholds),
        })
    }
}
