use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::arm::{barrier_values, ArmModel, Margins, Obstacle};
use super::cost::{wrap_angle, CostWeights};
use super::path::PathSpline;
use super::qp::{solve_qp, QpProblem, QpStatus};
use super::{ControlInput, ControllerState};
use crate::error::{invalid, Result};
use crate::risk::SafetyParams;

const INPUTS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    pub horizon: usize,
    /// Prediction step (s).
    pub dt: f64,
    pub sqp_iterations: usize,
    /// Bound on |v̇_s| (1/s²).
    pub path_accel_max: f64,
    pub hessian_jitter: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self { horizon: 10, dt: 0.05, sqp_iterations: 2, path_accel_max: 1.0, hessian_jitter: 1e-9 }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 || !(self.dt > 0.0) || self.sqp_iterations == 0 || !(self.path_accel_max > 0.0) {
            return invalid("MPC needs horizon ≥ 2, positive step and acceleration bound, at least one SQP iteration");
        }
        if !(self.hessian_jitter >= 0.0) {
            return invalid("Hessian jitter must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcDiagnostics {
    /// Wall time of the whole step (ms).
    pub solve_ms: f64,
    pub qp_iterations: usize,
    pub active_constraints: usize,
    pub max_slack: f64,
    pub fallback: bool,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcOutput {
    pub input: ControlInput,
    pub diagnostics: MpcDiagnostics,
}

/// Everything a single step reads, fixed at entry.
struct StepContext<'a> {
    model: &'a ArmModel,
    spline: &'a PathSpline,
    weights: &'a CostWeights,
    safety: SafetyParams,
    obstacle: Option<Obstacle>,
}

/// Contouring MPC with warm-started Gauss-Newton SQP.
#[derive(Debug, Clone)]
pub struct MpcController {
    pub config: MpcConfig,
    warm: Option<DVector<f64>>,
}

impl MpcController {
    pub fn new(config: MpcConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, warm: None })
    }

    pub fn reset(&mut self) {
        self.warm = None;
    }

    fn n_vars(&self) -> usize {
        (INPUTS + 1) * self.config.horizon
    }

    /// Predicted states `x_1..x_N` for the stacked inputs `z`.
    fn rollout(&self, x0: &ControllerState, z: &DVector<f64>) -> Vec<ControllerState> {
        let dt = self.config.dt;
        let mut x = *x0;
        (0..self.config.horizon)
            .map(|k| {
                let o = INPUTS * k;
                let qdot = Vector3::new(z[o], z[o + 1], z[o + 2]);
                let v_new = x.v_s + z[o + 3] * dt;
                x = ControllerState { q: x.q + qdot * dt, s: x.s + 0.5 * (x.v_s + v_new) * dt, v_s: v_new };
                x
            })
            .collect()
    }

    /// `∂q_{k+1}/∂z` is `dt·I` on every earlier joint-rate block;
    /// `∂v_{k+1}/∂a_j = dt`; `∂s_{k+1}/∂a_j = dt²(½ + k − j)`.
    fn q_row(&self, k: usize, joint: usize, coeff: f64, row: &mut [f64]) {
        for j in 0..=k {
            row[INPUTS * j + joint] += coeff * self.config.dt;
        }
    }

    fn v_row(&self, k: usize, coeff: f64, row: &mut [f64]) {
        for j in 0..=k {
            row[INPUTS * j + 3] += coeff * self.config.dt;
        }
    }

    fn s_row(&self, k: usize, coeff: f64, row: &mut [f64]) {
        let dt = self.config.dt;
        for j in 0..=k {
            row[INPUTS * j + 3] += coeff * dt * dt * (0.5 + (k - j) as f64);
        }
    }

    /// Gauss-Newton QP around the input sequence `z_bar`, over the
    /// absolute decision vector.
    fn build_qp_at(&self, x0: &ControllerState, z_bar: &DVector<f64>, ctx: &StepContext, with_barriers: bool) -> QpProblem {
        let n = self.config.horizon;
        let nz = self.n_vars();
        let w = ctx.weights;
        let sp = &ctx.safety;
        let states = self.rollout(x0, z_bar);

        let mut jac: Vec<Vec<f64>> = Vec::new();
        let mut res: Vec<f64> = Vec::new();
        let mut push = |row: Vec<f64>, r: f64| {
            jac.push(row);
            res.push(r);
        };
        for (k, x) in states.iter().enumerate() {
            let mult = if k + 1 == n { w.terminal } else { 1.0 };
            let pose = ctx.model.forward_kinematics(&x.q);
            let jee = ctx.model.jacobian(&x.q);
            let path = ctx.spline.eval(x.s);
            let in_domain = (0.0..=1.0).contains(&x.s);
            let ds_scale = if in_domain { 1.0 } else { 0.0 };
            let e = path.position - pose.ee();
            let t = path.tangent;
            let nrm = Vector2::new(-t.y, t.x);
            for (dir, weight) in [(nrm, w.contour), (t, w.lag)] {
                let sw = (mult * weight).sqrt();
                if sw == 0.0 {
                    continue;
                }
                let mut row = vec![0.0; nz];
                let dq = -(dir.transpose() * jee);
                for joint in 0..3 {
                    self.q_row(k, joint, sw * dq[joint], &mut row);
                }
                self.s_row(k, sw * dir.dot(&path.derivative) * ds_scale, &mut row);
                push(row, sw * dir.dot(&e));
            }
            let sv = (mult * sp.w_vs).sqrt();
            if sv > 0.0 {
                let mut row = vec![0.0; nz];
                self.v_row(k, -sv, &mut row);
                push(row, sv * (sp.v_des - x.v_s));
            }
            let so = (mult * w.orientation).sqrt();
            if so > 0.0 {
                let mut row = vec![0.0; nz];
                for joint in 0..3 {
                    self.q_row(k, joint, -so, &mut row);
                }
                self.s_row(k, so * path.heading_rate * ds_scale, &mut row);
                push(row, so * wrap_angle(path.heading - pose.heading));
            }
            let o = INPUTS * k;
            let sq = w.qdot.sqrt();
            let sd = w.qdot_change.sqrt();
            for joint in 0..3 {
                if sq > 0.0 {
                    let mut row = vec![0.0; nz];
                    row[o + joint] = sq;
                    push(row, sq * z_bar[o + joint]);
                }
                if sd > 0.0 && k > 0 {
                    let mut row = vec![0.0; nz];
                    row[o + joint] = sd;
                    row[o - INPUTS + joint] = -sd;
                    push(row, sd * (z_bar[o + joint] - z_bar[o - INPUTS + joint]));
                }
            }
            let sa = w.path_accel.sqrt();
            if sa > 0.0 {
                let mut row = vec![0.0; nz];
                row[o + 3] = sa;
                push(row, sa * z_bar[o + 3]);
            }
        }

        let rj = DMatrix::from_fn(jac.len(), nz, |i, j| jac[i][j]);
        let rv = DVector::from_vec(res);
        let mut hessian = 2.0 * rj.transpose() * &rj;
        let mut gradient = 2.0 * rj.transpose() * (&rv - &rj * z_bar);
        let slack_weight = w.slack * sp.gamma;
        for k in 0..n {
            hessian[(INPUTS * n + k, INPUTS * n + k)] += 2.0 * slack_weight;
        }
        for i in 0..nz {
            hessian[(i, i)] += self.config.hessian_jitter;
        }
        for k in 0..n {
            gradient[INPUTS * n + k] = w.slack_linear * sp.gamma;
        }

        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut rhs: Vec<f64> = Vec::new();
        for k in 0..n {
            let mut row = vec![0.0; nz];
            self.v_row(k, -1.0, &mut row);
            rows.push(row);
            rhs.push(x0.v_s);
        }
        if with_barriers {
            let margins = Margins { eps_sing: sp.eps_sing, eps_self: sp.eps_self, eps_env: sp.eps_env };
            let decay = 1.0 - sp.gamma * self.config.dt;
            let at = |q: &Vector3<f64>| barrier_values(ctx.model, q, ctx.obstacle.as_ref(), &margins).all();
            let mut prev = at(&x0.q);
            for (k, x) in states.iter().enumerate() {
                let next = at(&x.q);
                for (b, (hn, gn)) in next.iter().enumerate() {
                    let (hp, gp) = prev[b];
                    let mut row = vec![0.0; nz];
                    for joint in 0..3 {
                        self.q_row(k, joint, gn[joint], &mut row);
                        if k > 0 {
                            self.q_row(k - 1, joint, -decay * gp[joint], &mut row);
                        }
                    }
                    let g_dot_zbar: f64 = row.iter().zip(z_bar.iter()).map(|(a, b)| a * b).sum();
                    let c = hn - decay * hp;
                    let mut constraint: Vec<f64> = row.iter().map(|v| -v).collect();
                    constraint[INPUTS * n + k] = -1.0;
                    rows.push(constraint);
                    rhs.push(c - g_dot_zbar);
                }
                prev = next;
            }
        }
        let a = DMatrix::from_fn(rows.len(), nz, |i, j| rows[i][j]);
        let b = DVector::from_vec(rhs);
        let mut lower = DVector::zeros(nz);
        let mut upper = DVector::zeros(nz);
        for k in 0..n {
            for joint in 0..3 {
                lower[INPUTS * k + joint] = -ctx.model.qdot_max[joint];
                upper[INPUTS * k + joint] = ctx.model.qdot_max[joint];
            }
            lower[INPUTS * k + 3] = -self.config.path_accel_max;
            upper[INPUTS * k + 3] = self.config.path_accel_max;
            lower[INPUTS * n + k] = 0.0;
            upper[INPUTS * n + k] = f64::INFINITY;
        }
        QpProblem { hessian, gradient, a, b, lower, upper }
    }

    fn initial_guess(&self) -> DVector<f64> {
        let n = self.config.horizon;
        let nz = self.n_vars();
        match &self.warm {
            Some(prev) if prev.len() == nz => {
                let mut z = DVector::zeros(nz);
                for k in 0..n {
                    let src = (k + 1).min(n - 1);
                    for i in 0..INPUTS {
                        z[INPUTS * k + i] = prev[INPUTS * src + i];
                    }
                }
                z
            }
            _ => DVector::zeros(nz),
        }
    }

    /// The first Gauss-Newton QP of a step, exposed for inspection.
    #[allow(clippy::too_many_arguments)]
    pub fn build_qp(
        &self,
        state: &ControllerState,
        model: &ArmModel,
        spline: &PathSpline,
        weights: &CostWeights,
        safety: &SafetyParams,
        obstacle: Option<Obstacle>,
        with_barriers: bool,
    ) -> QpProblem {
        let ctx = StepContext { model, spline, weights, safety: *safety, obstacle };
        self.build_qp_at(state, &self.initial_guess(), &ctx, with_barriers)
    }

    /// One control tick: a fixed number of SQP iterations from the shifted
    /// previous solution. On solver failure the input is zero and the
    /// failure is reported in the diagnostics.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        state: &ControllerState,
        model: &ArmModel,
        spline: &PathSpline,
        weights: &CostWeights,
        safety: &SafetyParams,
        obstacle: Option<Obstacle>,
    ) -> MpcOutput {
        let start = Instant::now();
        let ctx = StepContext { model, spline, weights, safety: *safety, obstacle };
        let mut z = self.initial_guess();
        let mut diagnostics =
            MpcDiagnostics { solve_ms: 0.0, qp_iterations: 0, active_constraints: 0, max_slack: 0.0, fallback: false, message: None };
        for _ in 0..self.config.sqp_iterations {
            let qp = self.build_qp_at(state, &z, &ctx, true);
            match solve_qp(&qp) {
                Ok(sol) if sol.status != QpStatus::Infeasible && sol.x.iter().all(|v| v.is_finite()) => {
                    diagnostics.qp_iterations += sol.iterations;
                    diagnostics.active_constraints = sol.active_rows.len();
                    if sol.status == QpStatus::MaxIterations {
                        diagnostics.message = Some("QP iteration cap reached".into());
                    }
                    z = sol.x;
                }
                Ok(_) => {
                    diagnostics.fallback = true;
                    diagnostics.message = Some("QP infeasible".into());
                    break;
                }
                Err(e) => {
                    diagnostics.fallback = true;
                    diagnostics.message = Some(e.to_string());
                    break;
                }
            }
        }
        let n = self.config.horizon;
        let input = if diagnostics.fallback {
            self.warm = None;
            ControlInput::zero()
        } else {
            diagnostics.max_slack = (0..n).map(|k| z[INPUTS * n + k]).fold(0.0, f64::max);
            let clamp = |v: f64, m: f64| v.clamp(-m, m);
            let input = ControlInput {
                qdot: Vector3::from_fn(|j, _| clamp(z[j], model.qdot_max[j])),
                vs_accel: clamp(z[3], self.config.path_accel_max),
            };
            self.warm = Some(z);
            input
        };
        diagnostics.solve_ms = start.elapsed().as_secs_f64() * 1e3;
        MpcOutput { input, diagnostics }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::integrate;
    use crate::risk::{inflate_params, RiskConfig};

    fn setup() -> (ArmModel, PathSpline, ControllerState) {
        let model = ArmModel::default();
        let spline = PathSpline::lemniscate(0.5, [0.0, 0.75], 16, std::f64::consts::FRAC_PI_2).unwrap();
        let q = Vector3::new(0.9, 1.2, -0.5);
        (model, spline, ControllerState { q, s: 0.0, v_s: 0.0 })
    }

    fn on_path(model: &ArmModel, spline: &PathSpline, s: f64, v_s: f64) -> ControllerState {
        let p = spline.eval(s);
        ControllerState { q: model.inverse_kinematics(&p.position, p.heading, true).unwrap(), s, v_s }
    }

    #[test]
    fn hessian_is_psd_before_jitter() {
        let (model, spline, x) = setup();
        let ctrl = MpcController::new(MpcConfig { hessian_jitter: 0.0, ..MpcConfig::default() }).unwrap();
        let qp = ctrl.build_qp(&x, &model, &spline, &CostWeights::default(), &SafetyParams::default(), None, true);
        let min = qp.hessian.symmetric_eigenvalues().min();
        assert!(min >= -1e-10, "{min}");
    }

    #[test]
    fn far_obstacle_matches_unconstrained_solution() {
        let (model, spline, _) = setup();
        let x = on_path(&model, &spline, 0.2, 0.1);
        let ctrl = MpcController::new(MpcConfig::default()).unwrap();
        let far = Obstacle { center: Vector2::new(30.0, 30.0), radius: 0.05 };
        let safety = SafetyParams::default();
        let qp = ctrl.build_qp(&x, &model, &spline, &CostWeights::default(), &safety, Some(far), true);
        let sol = solve_qp(&qp).unwrap();
        let free = QpProblem { a: DMatrix::zeros(0, qp.dim()), b: DVector::zeros(0), ..qp.clone() };
        let unconstrained = solve_qp(&free).unwrap();
        assert!(sol.active_rows.is_empty());
        assert!((sol.x - unconstrained.x).norm() < 1e-6);
    }

    #[test]
    fn pure_regularization_commands_nothing() {
        let (model, spline, x) = setup();
        let weights = CostWeights {
            contour: 0.0,
            lag: 0.0,
            orientation: 0.0,
            qdot: 1.0,
            qdot_change: 0.0,
            path_accel: 0.0,
            terminal: 0.0,
            slack: 0.0,
            slack_linear: 0.0,
        };
        let safety = SafetyParams { w_vs: 0.0, ..SafetyParams::default() };
        let mut ctrl = MpcController::new(MpcConfig { horizon: 2, ..MpcConfig::default() }).unwrap();
        let out = ctrl.step(&x, &model, &spline, &weights, &safety, None);
        assert!(!out.diagnostics.fallback);
        assert!(out.input.qdot.norm() < 1e-12);
    }

    #[test]
    fn tracking_converges_onto_path() {
        let (model, spline, mut x) = setup();
        let mut ctrl = MpcController::new(MpcConfig::default()).unwrap();
        let w = CostWeights::default();
        let safety = SafetyParams::default();
        let e0 = (spline.eval(0.0).position - model.forward_kinematics(&x.q).ee()).norm();
        for _ in 0..300 {
            let out = ctrl.step(&x, &model, &spline, &w, &safety, None);
            assert!(!out.diagnostics.fallback);
            x = integrate(&x, &out.input, 0.01).unwrap();
        }
        let e = (spline.eval(x.s).position - model.forward_kinematics(&x.q).ee()).norm();
        assert!(e < 1e-2 && e < e0, "{e0} -> {e}");
        assert!(x.s > 0.1);
    }

    #[test]
    fn higher_risk_commands_no_faster_motion() {
        let (model, spline, _) = setup();
        let base = SafetyParams::default();
        let cfg = RiskConfig::default();
        let w = CostWeights::default();
        for s in [0.05, 0.2, 0.35, 0.6, 0.85] {
            let x = on_path(&model, &spline, s, base.v_des);
            let ee = model.forward_kinematics(&x.q).ee();
            let center = ee + Vector2::new(0.0, 0.6);
            let mut speeds = Vec::new();
            for rho in [0.0, 1.0] {
                let mut ctrl = MpcController::new(MpcConfig::default()).unwrap();
                let eff = inflate_params(&base, rho, &cfg);
                let obstacle = Obstacle { center, radius: eff.r_obs };
                speeds.push(ctrl.step(&x, &model, &spline, &w, &eff, Some(obstacle)).input.qdot.norm());
            }
            assert!(speeds[1] <= speeds[0] + 1e-9, "s={s}: {speeds:?}");
        }
    }
}
