//! Path-parameterized contouring MPC for a planar 3-link arm, with
//! discrete control-barrier constraints on singularity, self collision and
//! obstacle clearance.

mod arm;
mod cost;
mod mpc;
mod path;
mod qp;

pub use arm::{
    barrier_values, closest_on_segment, link_point_clearance, point_segment_distance, segment_segment_closest,
    self_clearance, ArmModel, ArmPose, BarrierSet, Margins, Obstacle,
};
pub use cost::{split_error, stage_cost, wrap_angle, CostWeights};
pub use mpc::{MpcConfig, MpcController, MpcDiagnostics, MpcOutput};
pub use path::{PathPoint, PathSpline};
pub use qp::{solve_qp, solve_qp_reference, QpProblem, QpSolution, QpStatus};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub q: Vector3<f64>,
    /// Path parameter in `[0, 1]`.
    pub s: f64,
    /// Path speed (1/s), never negative.
    pub v_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub qdot: Vector3<f64>,
    /// Path acceleration (1/s²).
    pub vs_accel: f64,
}

impl ControlInput {
    pub fn zero() -> Self {
        Self { qdot: Vector3::zeros(), vs_accel: 0.0 }
    }
}

/// One step of the kinematic model under constant input. Path progress
/// uses the mean of the old and new speed, which is exact for constant
/// acceleration.
pub fn integrate(state: &ControllerState, input: &ControlInput, dt: f64) -> Result<ControllerState> {
    if !(dt > 0.0) {
        return invalid("integration step must be positive");
    }
    let v_new = state.v_s + input.vs_accel * dt;
    let s = state.s + 0.5 * (state.v_s + v_new) * dt;
    Ok(ControllerState { q: state.q + input.qdot * dt, s: s.clamp(0.0, 1.0), v_s: v_new.max(0.0) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_advances_path_only() {
        let x = ControllerState { q: Vector3::new(0.1, -0.2, 0.3), s: 0.2, v_s: 0.15 };
        let y = integrate(&x, &ControlInput::zero(), 0.01).unwrap();
        assert_eq!(y.q, x.q);
        assert_eq!(y.v_s, x.v_s);
        assert!((y.s - (0.2 + 0.15 * 0.01)).abs() < 1e-15);
    }

    #[test]
    fn terminal_clamp() {
        let x = ControllerState { q: Vector3::zeros(), s: 1.0, v_s: 0.3 };
        assert_eq!(integrate(&x, &ControlInput::zero(), 0.01).unwrap().s, 1.0);
        let slow = ControllerState { q: Vector3::zeros(), s: 0.5, v_s: 0.001 };
        let braking = ControlInput { qdot: Vector3::zeros(), vs_accel: -1.0 };
        assert_eq!(integrate(&slow, &braking, 0.01).unwrap().v_s, 0.0);
    }

    #[test]
    fn constant_input_matches_closed_form() {
        let x = ControllerState { q: Vector3::new(0.5, 0.1, -0.1), s: 0.1, v_s: 0.2 };
        let u = ControlInput { qdot: Vector3::new(0.3, -0.4, 0.5), vs_accel: 0.7 };
        let dt = 0.02;
        let y = integrate(&x, &u, dt).unwrap();
        assert!((y.s - (x.s + x.v_s * dt + 0.5 * u.vs_accel * dt * dt)).abs() < 1e-15);
        assert!((y.v_s - (x.v_s + u.vs_accel * dt)).abs() < 1e-15);
        assert!((y.q - (x.q + u.qdot * dt)).norm() < 1e-15);
        assert!(integrate(&x, &u, 0.0).is_err());
    }
}
