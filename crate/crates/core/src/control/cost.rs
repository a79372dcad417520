use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::arm::ArmModel;
use super::path::PathSpline;
use super::{ControlInput, ControllerState};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostWeights {
    pub contour: f64,
    pub lag: f64,
    pub orientation: f64,
    pub qdot: f64,
    pub qdot_change: f64,
    pub path_accel: f64,
    /// Multiplier on the tracking terms of the last stage.
    pub terminal: f64,
    /// Quadratic slack penalty per unit barrier gain.
    pub slack: f64,
    /// Linear slack penalty per unit barrier gain.
    pub slack_linear: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            contour: 400.0,
            lag: 200.0,
            orientation: 1.0,
            qdot: 0.05,
            qdot_change: 0.5,
            path_accel: 0.05,
            terminal: 5.0,
            slack: 1e6,
            slack_linear: 1e3,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.contour,
            self.lag,
            self.orientation,
            self.qdot,
            self.qdot_change,
            self.path_accel,
            self.terminal,
            self.slack,
            self.slack_linear,
        ];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return invalid("cost weights must be finite and non-negative");
        }
        Ok(())
    }
}

/// `(e_l, e_c) = (e·t, e·t⊥)` with `t⊥ = (−t_y, t_x)`.
pub fn split_error(e: &Vector2<f64>, tangent: &Vector2<f64>) -> (f64, f64) {
    (e.dot(tangent), e.x * -tangent.y + e.y * tangent.x)
}

/// Angle wrapped to `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let w = a.rem_euclid(tau);
    if w > std::f64::consts::PI { w - tau } else { w }
}

/// Tracking, orientation and regularization terms of one stage. A missing
/// previous input drops the input-change term.
#[allow(clippy::too_many_arguments)]
pub fn stage_cost(
    model: &ArmModel,
    x: &ControllerState,
    u: &ControlInput,
    u_prev: Option<&ControlInput>,
    weights: &CostWeights,
    spline: &PathSpline,
    v_des: f64,
    w_vs: f64,
) -> f64 {
    let pose = model.forward_kinematics(&x.q);
    let path = spline.eval(x.s);
    let e = path.position - pose.ee();
    let (el, ec) = split_error(&e, &path.tangent);
    let dtheta = wrap_angle(path.heading - pose.heading);
    let change: Vector3<f64> = u_prev.map_or(Vector3::zeros(), |p| u.qdot - p.qdot);
    weights.contour * ec * ec
        + weights.lag * el * el
        + w_vs * (v_des - x.v_s).powi(2)
        + weights.orientation * dtheta * dtheta
        + weights.qdot * u.qdot.norm_squared()
        + weights.qdot_change * change.norm_squared()
        + weights.path_accel * u.vs_accel * u.vs_accel
}
