//! Concept-gated update of the registration parameters θ.

use serde::{Deserialize, Serialize};

use crate::cloud::Concept;
use crate::error::{invalid, Result};

/// θ: the registration parameters the concept feedback may move.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistrationParams {
    /// Lower bound on the adapted robust-kernel scale (m).
    pub kernel_scale: f64,
    /// Correspondence gate as a multiple of the median match distance.
    pub gate_multiplier: f64,
    /// Floor on the residual spread used to place the scale grid (m).
    pub measurement_noise: f64,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self { kernel_scale: 2e-3, gate_multiplier: 3.0, measurement_noise: 1e-3 }
    }
}

impl RegistrationParams {
    pub fn to_array(self) -> [f64; 3] {
        [self.kernel_scale, self.gate_multiplier, self.measurement_noise]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self { kernel_scale: v[0], gate_multiplier: v[1], measurement_noise: v[2] }
    }
}

/// Box Θ on the parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBounds {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self { lower: [5e-4, 1.5, 5e-4], upper: [5e-2, 6.0, 5e-2] }
    }
}

impl ParamBounds {
    pub fn contains(&self, p: &RegistrationParams) -> bool {
        p.to_array().iter().enumerate().all(|(i, &x)| x >= self.lower[i] && x <= self.upper[i])
    }

    pub fn widths(&self) -> [f64; 3] {
        [0, 1, 2].map(|i| self.upper[i] - self.lower[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptationConfig {
    /// η₀ of the step schedule `η_k = η₀ / (1 + decay·k)`.
    pub step_size: f64,
    pub step_decay: f64,
    /// Entropy at which `s(u) = min(1, u / u_max)` saturates.
    pub u_max: f64,
    /// α_c, indexed by concept.
    pub gains: [f64; 3],
    /// U_c in raw parameter units, indexed by concept.
    pub directions: [[f64; 3]; 3],
    pub tau_on: f64,
    pub u_min: f64,
    pub bounds: ParamBounds,
    /// Adaptation is skipped when less than this much time (s) is left.
    pub deadline_margin: f64,
    /// Frames a dominant concept must persist before a viewpoint change is requested.
    pub viewpoint_persistence: u32,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        let bounds = ParamBounds::default();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        // unit directions in box-normalized coordinates
        let unit = [[h, 0.0, h], [0.0, 1.0, 0.0], [-h, -h, 0.0]];
        let w = bounds.widths();
        let directions = unit.map(|u| [u[0] * w[0], u[1] * w[1], u[2] * w[2]]);
        Self {
            step_size: 0.05,
            step_decay: 0.0,
            u_max: 3f64.ln(),
            gains: [1.0; 3],
            directions,
            tau_on: 0.6,
            u_min: 0.1,
            bounds,
            deadline_margin: 5e-3,
            viewpoint_persistence: 5,
        }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            let (lo, hi) = (self.bounds.lower[i], self.bounds.upper[i]);
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return invalid(format!("parameter bound {i} must be finite with lower < upper"));
            }
        }
        if !(self.tau_on > 1.0 / 3.0 && self.tau_on < 1.0) {
            return invalid("tau_on must lie in (1/3, 1)");
        }
        if self.u_min < 0.0 || !(self.u_max > 0.0) || self.gains.iter().any(|&a| a < 0.0) || self.step_size < 0.0 {
            return invalid("u_min, gains and step size must be non-negative and u_max positive");
        }
        Ok(())
    }

    pub fn step_at(&self, frame: u64) -> f64 {
        self.step_size / (1.0 + self.step_decay * frame as f64)
    }

    /// s(u): 0 at u = 0, 1 from `u_max` on.
    pub fn uncertainty_scale(&self, u: f64) -> f64 {
        (u / self.u_max).clamp(0.0, 1.0)
    }
}

/// `Δθ = η_k s(u) Σ_c α_c π(c) U_c`.
pub fn concept_step(posteriors: &[f64; 3], u: f64, cfg: &AdaptationConfig, frame: u64) -> [f64; 3] {
    let scale = cfg.step_at(frame) * cfg.uncertainty_scale(u);
    let mut delta = [0.0; 3];
    if scale == 0.0 {
        return delta;
    }
    for c in 0..3 {
        let coeff = cfg.gains[c] * posteriors[c];
        for (d, u_c) in delta.iter_mut().zip(cfg.directions[c]) {
            *d += coeff * u_c;
        }
    }
    delta.map(|d| scale * d)
}

/// Componentwise clamp onto Θ.
pub fn project_params(v: [f64; 3], bounds: &ParamBounds) -> RegistrationParams {
    RegistrationParams::from_array([0, 1, 2].map(|i| v[i].clamp(bounds.lower[i], bounds.upper[i])))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptStatus {
    Adapted,
    Held,
    SkippedDeadline,
    FrozenOod,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerFlags {
    pub dominant: bool,
    pub uncertain: bool,
    pub deadline_ok: bool,
    pub ood: bool,
    pub viewpoint_request: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adaptation {
    pub params: RegistrationParams,
    pub status: AdaptStatus,
    pub flags: TriggerFlags,
}

/// Gated parameter update. Deadline pressure takes precedence over the
/// concept trigger; an OOD frame freezes θ.
pub fn adapt(
    theta: &RegistrationParams,
    posteriors: &[f64; 3],
    u: f64,
    ood: bool,
    deadline_remaining: f64,
    cfg: &AdaptationConfig,
    frame: u64,
) -> Adaptation {
    let max_pi = posteriors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let flags = TriggerFlags {
        dominant: max_pi >= cfg.tau_on,
        uncertain: u >= cfg.u_min,
        deadline_ok: deadline_remaining >= cfg.deadline_margin,
        ood,
        viewpoint_request: false,
    };
    let (params, status) = if !flags.deadline_ok {
        (*theta, AdaptStatus::SkippedDeadline)
    } else if ood {
        (*theta, AdaptStatus::FrozenOod)
    } else if !(flags.dominant && flags.uncertain) {
        (*theta, AdaptStatus::Held)
    } else {
        let delta = concept_step(posteriors, u, cfg, frame);
        let current = theta.to_array();
        let moved = [0, 1, 2].map(|i| current[i] + delta[i]);
        (project_params(moved, &cfg.bounds), AdaptStatus::Adapted)
    };
    Adaptation { params, status, flags }
}

/// Counts how long one concept has stayed dominant. Crossing the
/// persistence threshold only raises a flag in the trace.
#[derive(Debug, Clone, Default)]
pub struct ViewpointMonitor {
    current: Option<Concept>,
    run: u32,
}

impl ViewpointMonitor {
    pub fn observe(&mut self, dominant: Concept, threshold: u32) -> bool {
        if self.current == Some(dominant) {
            self.run += 1;
        } else {
            self.current = Some(dominant);
            self.run = 1;
        }
        threshold > 0 && self.run >= threshold
    }
}

/// One line of the JSON-lines adaptation trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationEvent {
    pub frame: u64,
    pub status: AdaptStatus,
    pub triggers: TriggerFlags,
    pub posteriors: [f64; 3],
    pub entropy: f64,
    pub theta_before: RegistrationParams,
    pub theta_after: RegistrationParams,
    pub c_star: Option<f64>,
    pub js_star: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> AdaptationConfig {
        AdaptationConfig::default()
    }

    #[test]
    fn default_config_is_valid_and_directions_unit_in_normalized_space() {
        let c = cfg();
        c.validate().unwrap();
        let w = c.bounds.widths();
        for d in c.directions {
            let n: f64 = (0..3).map(|i| (d[i] / w[i]).powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_entropy_gives_zero_step() {
        assert_eq!(concept_step(&[0.2, 0.5, 0.3], 0.0, &cfg(), 0), [0.0; 3]);
    }

    #[test]
    fn one_hot_unit_step_is_the_direction() {
        let c = AdaptationConfig { step_size: 1.0, gains: [1.0; 3], ..cfg() };
        let d = concept_step(&[1.0, 0.0, 0.0], c.u_max, &c, 0);
        assert_eq!(d, c.directions[0]);
    }

    #[test]
    fn mixed_step_matches_hand_combination() {
        let c = AdaptationConfig {
            step_size: 0.3,
            gains: [1.0, 2.0, 0.5],
            directions: [[1.0, 0.0, 2.0], [0.0, -1.0, 0.5], [3.0, 1.0, -1.0]],
            ..cfg()
        };
        let pi = [0.5, 0.3, 0.2];
        let u = 0.5 * c.u_max;
        let s = 0.3 * 0.5;
        let want = [
            s * (1.0 * 0.5 * 1.0 + 2.0 * 0.3 * 0.0 + 0.5 * 0.2 * 3.0),
            s * (1.0 * 0.5 * 0.0 + 2.0 * 0.3 * -1.0 + 0.5 * 0.2 * 1.0),
            s * (1.0 * 0.5 * 2.0 + 2.0 * 0.3 * 0.5 + 0.5 * 0.2 * -1.0),
        ];
        let got = concept_step(&pi, u, &c, 0);
        for i in 0..3 {
            assert!((got[i] - want[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_examples() {
        let b = ParamBounds::default();
        let inside = RegistrationParams::default();
        assert_eq!(project_params(inside.to_array(), &b), inside);
        let above = project_params([1.0, 3.0, 0.01], &b);
        assert_eq!(above.kernel_scale, b.upper[0]);
    }

    #[test]
    fn gating_rules() {
        let c = cfg();
        let theta = RegistrationParams::default();
        let held = adapt(&theta, &[0.4, 0.3, 0.3], 1.0, false, 1.0, &c, 0);
        assert_eq!(held.status, AdaptStatus::Held);
        assert_eq!(held.params, theta);

        let late = adapt(&theta, &[0.9, 0.05, 0.05], 0.5, false, 0.0, &c, 0);
        assert_eq!(late.status, AdaptStatus::SkippedDeadline);
        assert_eq!(late.params, theta);

        let frozen = adapt(&theta, &[0.9, 0.05, 0.05], 0.5, true, 1.0, &c, 0);
        assert_eq!(frozen.status, AdaptStatus::FrozenOod);
        assert_eq!(frozen.params, theta);

        let big = AdaptationConfig { step_size: 100.0, ..c.clone() };
        let pushed = adapt(&theta, &[0.0, 0.0, 1.0], 1.0, false, 1.0, &big, 0);
        assert_eq!(pushed.status, AdaptStatus::Adapted);
        assert_eq!(pushed.params.kernel_scale, c.bounds.lower[0]);
        assert_eq!(pushed.params.gate_multiplier, c.bounds.lower[1]);
    }

    #[test]
    fn viewpoint_request_after_persistence() {
        let mut m = ViewpointMonitor::default();
        let flags: Vec<bool> = (0..6).map(|_| m.observe(Concept::PartialOverlap, 5)).collect();
        assert_eq!(flags, [false, false, false, false, true, true]);
        assert!(!m.observe(Concept::SensorNoise, 5));
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = cfg();
        c.tau_on = 0.3;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.bounds.upper[1] = c.bounds.lower[1];
        assert!(c.validate().is_err());
    }

    proptest! {
        #[test]
        fn adapt_stays_in_bounds(
            k in 1e-4f64..0.1, g in 1.0f64..8.0, m in 1e-4f64..0.1,
            a in 0.0f64..1.0, b in 0.0f64..1.0, u in 0.0f64..1.2, eta in 0.0f64..50.0
        ) {
            let c = AdaptationConfig { step_size: eta, ..cfg() };
            let theta = project_params([k, g, m], &c.bounds);
            let s = a + b + 1e-3;
            let pi = [a / s, b / s, 1e-3 / s];
            let out = adapt(&theta, &pi, u, false, 1.0, &c, 0);
            prop_assert!(c.bounds.contains(&out.params));
            if out.status != AdaptStatus::Adapted {
                prop_assert_eq!(out.params, theta);
            }
        }

        #[test]
        fn projection_is_componentwise_clamp(v in prop::array::uniform3(-10.0f64..10.0)) {
            let b = ParamBounds::default();
            let p = project_params(v, &b).to_array();
            for i in 0..3 {
                prop_assert_eq!(p[i], v[i].max(b.lower[i]).min(b.upper[i]));
            }
        }
    }
}
