//! The configuration tree shared by every command. Unknown keys are
//! rejected at every level and missing sections take their defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attribution::{default_hyper_grid, GpcHyper, OodThresholds};
use crate::bench::{BenchConfig, DatasetConfig};
use crate::cloud::ShapeParams;
use crate::control::{ArmModel, CostWeights, MpcConfig};
use crate::error::{invalid, Error, Result};
use crate::pko::{AdaptationConfig, PkoAdapter, RegistrationParams};
use crate::registration::IcpConfig;
use crate::risk::{RiskConfig, SafetyParams};
use crate::sim::{ScenarioConfig, SimSetup};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PkoSection {
    pub adapter: PkoAdapter,
    pub adaptation: AdaptationConfig,
    /// Registration parameters before any adaptation.
    pub initial: RegistrationParams,
}

impl Default for PkoSection {
    fn default() -> Self {
        Self { adapter: PkoAdapter::default(), adaptation: AdaptationConfig::default(), initial: RegistrationParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttributionSection {
    pub dataset: DatasetConfig,
    /// Share of the generated samples held out for evaluation.
    pub holdout_fraction: f64,
    /// Hyperparameters used when `select` is off.
    pub hyper: GpcHyper,
    /// Choose hyperparameters by cross-validation over `grid`.
    pub select: bool,
    pub grid: Vec<GpcHyper>,
    pub folds: usize,
    pub thresholds: OodThresholds,
}

impl Default for AttributionSection {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            holdout_fraction: 0.25,
            hyper: GpcHyper::default(),
            select: false,
            grid: default_hyper_grid(),
            folds: 3,
            thresholds: OodThresholds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RiskSection {
    pub map: RiskConfig,
    pub safety: SafetyParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ControlSection {
    pub arm: ArmModel,
    pub weights: CostWeights,
    pub mpc: MpcConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub cloud: ShapeParams,
    pub registration: IcpConfig,
    pub pko: PkoSection,
    pub attribution: AttributionSection,
    pub risk: RiskSection,
    pub control: ControlSection,
    pub sim: ScenarioConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 42,
            cloud: ShapeParams::default(),
            registration: IcpConfig::default(),
            pko: PkoSection::default(),
            attribution: AttributionSection::default(),
            risk: RiskSection::default(),
            control: ControlSection::default(),
            sim: ScenarioConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses and validates; any failure is reported as `InvalidArgument`.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return invalid(format!("config version {} is not supported (expected {CONFIG_VERSION})", self.version));
        }
        let r = &self.registration;
        if !(r.rotation_tolerance > 0.0 && r.translation_tolerance > 0.0 && r.gate_multiplier > 0.0) {
            return invalid("registration tolerances and gate must be positive");
        }
        let p = &self.pko.adapter;
        if p.grid_points == 0 || p.bins == 0 || !(p.grid_low > 0.0 && p.grid_low < p.grid_high) || !(p.bin_range_sigmas > 0.0) {
            return invalid("pko grid and bins must be non-empty with 0 < grid_low < grid_high");
        }
        self.pko.adaptation.validate()?;
        if !self.pko.adaptation.bounds.contains(&self.pko.initial) {
            return invalid("initial registration parameters lie outside their bounds");
        }
        let a = &self.attribution;
        a.dataset.validate()?;
        a.thresholds.validate()?;
        if !(a.holdout_fraction > 0.0 && a.holdout_fraction < 1.0) {
            return invalid("holdout_fraction must lie in (0, 1)");
        }
        let hypers = std::iter::once(&a.hyper).chain(&a.grid);
        if hypers.into_iter().any(|h| !(h.length_scale > 0.0 && h.signal_std > 0.0)) {
            return invalid("GP hyperparameters must be positive");
        }
        if a.select && (a.grid.is_empty() || a.folds < 2) {
            return invalid("hyperparameter selection needs a grid and at least two folds");
        }
        self.risk.map.validate()?;
        self.risk.safety.validate()?;
        self.control.arm.validate()?;
        self.control.weights.validate()?;
        self.control.mpc.validate()?;
        self.sim.validate()?;
        self.bench.validate()
    }

    pub fn sim_setup(&self) -> SimSetup {
        SimSetup {
            icp: self.registration.clone(),
            adapter: self.pko.adapter.clone(),
            adaptation: self.pko.adaptation.clone(),
            initial_params: self.pko.initial,
            shape: self.cloud.clone(),
            risk: self.risk.map.clone(),
            safety: self.risk.safety,
            arm: self.control.arm.clone(),
            weights: self.control.weights.clone(),
            mpc: self.control.mpc.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn empty_object_means_defaults() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_rejected_at_any_depth() {
        assert!(RunConfig::from_json(r#"{"sedd": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"risk": {"map": {"beta_0": 1.0}}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"sim": {"perception": {"noise": 0.1}}}"#).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_json(r#"{"version": 2}"#).is_err());
        assert!(RunConfig::from_json(r#"{"risk": {"map": {"kappa_v": 1.5}}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"sim": {"control_period": 0.2}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"attribution": {"holdout_fraction": 1.0}}"#).is_err());
        assert!(matches!(RunConfig::from_json("not json"), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg = RunConfig::from_json(r#"{"seed": 7, "bench": {"draws": 3}}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.bench.draws, 3);
        assert_eq!(cfg.bench.n_points, BenchConfig::default().n_points);
    }
}
