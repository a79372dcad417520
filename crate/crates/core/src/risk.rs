//! Bounded risk from a concept report, and the safety parameters it inflates.

use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::attribution::ConceptReport;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskConfig {
    /// Weight on predictive entropy.
    pub beta0: f64,
    /// Per-concept weights, indexed by concept.
    pub beta: [f64; 3],
    pub kappa_r: f64,
    pub kappa_eps: f64,
    pub kappa_gamma: f64,
    pub kappa_v: f64,
    /// Largest change of ρ per perception tick.
    pub max_delta: f64,
    /// Report age (s) beyond which the report is ignored and ρ = 1.
    pub max_staleness: f64,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            beta0: 0.05,
            beta: [0.0, 0.2, 1.0],
            kappa_r: 0.25,
            kappa_eps: 0.02,
            kappa_gamma: 5.0,
            kappa_v: 0.6,
            max_delta: 0.1,
            max_staleness: 0.3,
        }
    }
}

impl RiskConfig {
    pub fn validate(&self) -> Result<()> {
        let gains = [self.beta0, self.beta[0], self.beta[1], self.beta[2], self.kappa_r, self.kappa_eps, self.kappa_gamma, self.kappa_v];
        if gains.iter().any(|g| !g.is_finite() || *g < 0.0) {
            return invalid("risk weights and inflation gains must be finite and non-negative");
        }
        if self.kappa_v > 1.0 {
            return invalid("kappa_v must not exceed 1");
        }
        if !(self.max_delta > 0.0) || !(self.max_staleness > 0.0) {
            return invalid("max_delta and max_staleness must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyParams {
    /// Obstacle radius (m).
    pub r_obs: f64,
    pub eps_env: f64,
    pub eps_self: f64,
    pub eps_sing: f64,
    /// Barrier decay rate (1/s), also the slack-penalty multiplier.
    pub gamma: f64,
    /// Desired path speed (1/s).
    pub v_des: f64,
    pub w_vs: f64,
}

impl Default for SafetyParams {
    fn default() -> Self {
        Self { r_obs: 0.05, eps_env: 0.03, eps_self: 0.02, eps_sing: 0.01, gamma: 5.0, v_des: 0.1, w_vs: 10.0 }
    }
}

impl SafetyParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.r_obs, self.eps_env, self.eps_self, self.eps_sing, self.gamma, self.v_des, self.w_vs];
        if all.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return invalid("safety parameters must be positive and finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskSource {
    Normal,
    Ood,
    Stale,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskState {
    pub rho: f64,
    pub effective: SafetyParams,
    pub source: RiskSource,
}

impl RiskState {
    pub fn nominal(base: SafetyParams) -> Self {
        Self { rho: 0.0, effective: base, source: RiskSource::Normal }
    }
}

/// `clip[0,1](β₀ u + Σ β_c π_c)`.
pub fn risk_map(u: f64, posteriors: &[f64; 3], cfg: &RiskConfig) -> f64 {
    let raw = cfg.beta0 * u + posteriors.iter().zip(&cfg.beta).map(|(p, b)| b * p).sum::<f64>();
    raw.clamp(0.0, 1.0)
}

pub fn rate_limit(rho_prev: f64, rho_raw: f64, max_delta: f64) -> f64 {
    rho_prev + (rho_raw - rho_prev).clamp(-max_delta, max_delta)
}

pub fn inflate_params(base: &SafetyParams, rho: f64, cfg: &RiskConfig) -> SafetyParams {
    if rho == 0.0 {
        return *base;
    }
    SafetyParams {
        r_obs: base.r_obs + cfg.kappa_r * rho,
        eps_env: base.eps_env + cfg.kappa_eps * rho,
        gamma: base.gamma + cfg.kappa_gamma * rho,
        v_des: base.v_des * (1.0 - cfg.kappa_v * rho),
        w_vs: base.w_vs * (1.0 - cfg.kappa_v * rho),
        ..*base
    }
}

/// Staleness first, then the OOD flag, then the rate-limited risk map.
/// Both fail-closed branches jump straight to ρ = 1.
pub fn fuse(report: &ConceptReport, staleness: f64, base: &SafetyParams, cfg: &RiskConfig, rho_prev: f64) -> RiskState {
    let (rho, source) = if !(staleness <= cfg.max_staleness) {
        (1.0, RiskSource::Stale)
    } else if report.ood {
        (1.0, RiskSource::Ood)
    } else {
        let raw = risk_map(report.entropy, &report.posteriors, cfg);
        (rate_limit(rho_prev, raw, cfg.max_delta).clamp(0.0, 1.0), RiskSource::Normal)
    };
    RiskState { rho, effective: inflate_params(base, rho, cfg), source }
}

/// Single-writer, many-reader exchange of the latest complete value.
/// Readers clone an `Arc` under a short read lock and never see a
/// partially written value.
#[derive(Debug)]
pub struct SnapshotCell<T> {
    inner: RwLock<Arc<T>>,
}

impl<T> SnapshotCell<T> {
    pub fn new(value: T) -> Self {
        Self { inner: RwLock::new(Arc::new(value)) }
    }

    pub fn publish(&self, value: T) {
        let fresh = Arc::new(value);
        *self.inner.write().unwrap_or_else(|e| e.into_inner()) = fresh;
    }

    pub fn latest(&self) -> Arc<T> {
        Arc::clone(&self.inner.read().unwrap_or_else(|e| e.into_inner()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Concept;
    use proptest::prelude::*;

    fn report(posteriors: [f64; 3], entropy: f64, ood: bool) -> ConceptReport {
        ConceptReport { posteriors, entropy, dominant: Concept::SensorNoise, sensitivities: [0.0; 3], ood }
    }

    #[test]
    fn risk_map_examples() {
        let zero = RiskConfig { beta0: 0.0, beta: [0.0; 3], ..RiskConfig::default() };
        assert_eq!(risk_map(1.0, &[0.2, 0.3, 0.5], &zero), 0.0);
        let ceil = RiskConfig { beta0: 2.0, ..zero.clone() };
        assert_eq!(risk_map(3f64.ln(), &[1.0 / 3.0; 3], &ceil), 1.0);
        let half = RiskConfig { beta0: 0.5, ..zero };
        assert_eq!(risk_map(1.0, &[0.2, 0.3, 0.5], &half), 0.5);
    }

    #[test]
    fn rate_limit_examples() {
        assert_eq!(rate_limit(0.2, 0.25, 0.1), 0.25);
        assert!((rate_limit(0.2, 0.9, 0.1) - 0.3).abs() < 1e-15);
        assert!((rate_limit(0.9, 0.0, 0.1) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn inflation_examples() {
        let base = SafetyParams::default();
        let cfg = RiskConfig { kappa_r: 0.05, ..RiskConfig::default() };
        assert_eq!(inflate_params(&base, 0.0, &cfg), base);
        let one = inflate_params(&base, 1.0, &cfg);
        assert_eq!(one.r_obs, base.r_obs + 0.05);
        assert_eq!(one.eps_env, base.eps_env + cfg.kappa_eps);
        assert_eq!(one.gamma, base.gamma + cfg.kappa_gamma);
        assert_eq!(one.v_des, base.v_des * (1.0 - cfg.kappa_v));
        assert_eq!(one.w_vs, base.w_vs * (1.0 - cfg.kappa_v));
        assert_eq!((one.eps_self, one.eps_sing), (base.eps_self, base.eps_sing));
        let speeds: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0].iter().map(|&r| inflate_params(&base, r, &cfg).v_des).collect();
        assert!(speeds.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn fuse_branches() {
        let base = SafetyParams::default();
        let cfg = RiskConfig::default();
        let calm = fuse(&report([0.98, 0.01, 0.01], 1e-3, false), 0.0, &base, &cfg, 0.0);
        assert_eq!(calm.source, RiskSource::Normal);
        assert!(calm.rho < 0.02);
        let stale = fuse(&report([0.98, 0.01, 0.01], 1e-3, false), f64::INFINITY, &base, &cfg, 0.0);
        assert_eq!((stale.rho, stale.source), (1.0, RiskSource::Stale));
        let ood = fuse(&report([0.98, 0.01, 0.01], 1e-3, true), 0.0, &base, &cfg, 0.1);
        assert_eq!((ood.rho, ood.source), (1.0, RiskSource::Ood));
        assert_eq!(ood.effective.r_obs, base.r_obs + cfg.kappa_r);
        let nan_age = fuse(&report([0.98, 0.01, 0.01], 1e-3, false), f64::NAN, &base, &cfg, 0.0);
        assert_eq!(nan_age.source, RiskSource::Stale);
    }

    #[test]
    fn config_validation() {
        assert!(RiskConfig::default().validate().is_ok());
        assert!(RiskConfig { kappa_v: 1.5, ..RiskConfig::default() }.validate().is_err());
        assert!(RiskConfig { beta0: -1.0, ..RiskConfig::default() }.validate().is_err());
        assert!(SafetyParams { r_obs: 0.0, ..SafetyParams::default() }.validate().is_err());
    }

    #[test]
    fn snapshot_readers_see_whole_values() {
        let cell = Arc::new(SnapshotCell::new((0u64, 0u64)));
        let writer = {
            let cell = Arc::clone(&cell);
            std::thread::spawn(move || {
                for i in 1..=2000u64 {
                    cell.publish((i, 2 * i));
                }
            })
        };
        let mut last = 0;
        for _ in 0..2000 {
            let snap = cell.latest();
            assert_eq!(snap.1, 2 * snap.0);
            assert!(snap.0 >= last);
            last = snap.0;
        }
        writer.join().unwrap();
        assert_eq!(*cell.latest(), (2000, 4000));
    }

    proptest! {
        #[test]
        fn rho_bounded_and_inflation_monotone(
            u in 0.0f64..1.1, a in 0.0f64..1.0, b in 0.0f64..1.0,
            r1 in 0.0f64..1.0, r2 in 0.0f64..1.0, prev in 0.0f64..1.0, ood: bool, age in 0.0f64..1.0
        ) {
            let cfg = RiskConfig::default();
            let s = a + b + 0.1;
            let pi = [a / s, b / s, 0.1 / s];
            let rho = risk_map(u, &pi, &cfg);
            prop_assert!((0.0..=1.0).contains(&rho));

            let base = SafetyParams::default();
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            let (p, q) = (inflate_params(&base, lo, &cfg), inflate_params(&base, hi, &cfg));
            prop_assert!(p.r_obs <= q.r_obs && p.eps_env <= q.eps_env && p.gamma <= q.gamma);
            prop_assert!(p.v_des >= q.v_des && p.w_vs >= q.w_vs);
            prop_assert!(q.v_des >= 0.0);

            let state = fuse(&report(pi, u, ood), age, &base, &cfg, prev);
            prop_assert!((0.0..=1.0).contains(&state.rho));
            prop_assert!(state.rho >= prev - cfg.max_delta - 1e-15);
            if age > cfg.max_staleness {
                prop_assert_eq!(state.source, RiskSource::Stale);
            }
        }
    }
}
