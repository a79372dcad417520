use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::perception::{Perception, PerceptionOutput};
use super::scenario::{obstacle_step, occlusion_schedule, Interval, Mode, ObstacleTrajectory, ScenarioConfig};
use crate::attribution::Attributor;
use crate::cloud::ShapeParams;
use crate::control::{
    integrate, link_point_clearance, split_error, ArmModel, ControllerState, CostWeights, MpcConfig, MpcController,
    Obstacle,
};
use crate::error::{invalid, Error, Result};
use crate::io::{read_json_lines, JsonLinesWriter};
use crate::pko::{AdaptStatus, AdaptationConfig, PkoAdapter, RegistrationParams};
use crate::registration::IcpConfig;
use crate::risk::{fuse, RiskConfig, RiskSource, RiskState, SafetyParams};
use crate::{derive_seed, rng_from_seed};

pub const LOG_VERSION: u32 = 1;

/// Everything besides the scenario that a closed-loop episode needs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimSetup {
    pub icp: IcpConfig,
    pub adapter: PkoAdapter,
    pub adaptation: AdaptationConfig,
    pub initial_params: RegistrationParams,
    pub shape: ShapeParams,
    pub risk: RiskConfig,
    pub safety: SafetyParams,
    pub arm: ArmModel,
    pub weights: CostWeights,
    pub mpc: MpcConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub version: u32,
    pub mode: Mode,
    pub seed: u64,
    pub control_period: f64,
    pub perception_period: f64,
    /// Collision threshold on `d_env`.
    pub eps_env: f64,
    /// True obstacle radius.
    pub r_obs: f64,
    pub obstacle: Option<ObstacleTrajectory>,
    pub occlusions: Vec<Interval>,
}

/// State at the start of one control tick and the input applied during it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub step: usize,
    pub t: f64,
    pub q: [f64; 3],
    pub s: f64,
    pub v_s: f64,
    pub qdot: [f64; 3],
    pub vs_accel: f64,
    pub ee: [f64; 2],
    pub contour_error: f64,
    pub obstacle: Option<[f64; 2]>,
    pub estimate: Option<[f64; 2]>,
    pub occluded: bool,
    /// Smallest clearance between a link capsule and the true obstacle disc.
    pub d_env: Option<f64>,
    pub rho: f64,
    pub source: RiskSource,
    pub solve_ms: f64,
    pub qp_iterations: usize,
    pub active_constraints: usize,
    pub max_slack: f64,
    pub fallback: bool,
    pub collision: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptionRecord {
    pub t: f64,
    pub frame: u64,
    pub output: PerceptionOutput,
    pub rho: f64,
    pub source: RiskSource,
    pub effective: SafetyParams,
    /// Age of the report the risk was computed from (s).
    pub staleness: Option<f64>,
}

/// One line of the episode JSON-lines file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Header(EpisodeHeader),
    Tick(TickRecord),
    Perception(PerceptionRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub header: EpisodeHeader,
    pub ticks: Vec<TickRecord>,
    pub perception: Vec<PerceptionRecord>,
}

pub fn clearance(model: &ArmModel, q: &Vector3<f64>, center: &Vector2<f64>, radius: f64) -> f64 {
    let pose = model.forward_kinematics(q);
    (0..3).map(|l| link_point_clearance(model, &pose, l, center).0).fold(f64::INFINITY, f64::min) - radius
}

/// Arm configuration on the path at `s = 0`, preferring the elbow-up branch.
pub fn initial_state(model: &ArmModel, spline: &crate::control::PathSpline) -> Result<ControllerState> {
    let p = spline.eval(0.0);
    let q = model
        .inverse_kinematics(&p.position, p.heading, true)
        .or_else(|| model.inverse_kinematics(&p.position, p.heading, false))
        .ok_or_else(|| Error::InvalidArgument("path start is out of reach".into()))?;
    Ok(ControllerState { q, s: 0.0, v_s: 0.0 })
}

/// Closed loop: perception every `perception_period`, control every
/// `control_period`. Collisions are logged and the episode continues.
pub fn run_episode(
    scenario: &ScenarioConfig,
    setup: &SimSetup,
    attributor: Option<&Attributor>,
    seed: u64,
) -> Result<EpisodeLog> {
    scenario.validate()?;
    setup.safety.validate()?;
    setup.risk.validate()?;
    setup.arm.validate()?;
    if scenario.mode == Mode::Guard && scenario.obstacle.is_some() && attributor.is_none() {
        return invalid("guard mode needs a trained attribution model");
    }
    let spline = scenario.path.spline()?;
    let obstacle = scenario.obstacle.as_ref().map(|o| {
        if scenario.randomize_phase {
            use rand::Rng;
            let u: f64 = rng_from_seed(derive_seed(seed, &[7])).random();
            o.with_phase(u * o.phase_span())
        } else {
            o.clone()
        }
    });
    let occlusions = if obstacle.is_some() {
        occlusion_schedule(&scenario.occlusions, scenario.episode_length, derive_seed(seed, &[8]))?
    } else {
        Vec::new()
    };
    let header = EpisodeHeader {
        version: LOG_VERSION,
        mode: scenario.mode,
        seed,
        control_period: scenario.control_period,
        perception_period: scenario.perception_period,
        eps_env: setup.safety.eps_env,
        r_obs: setup.safety.r_obs,
        obstacle: obstacle.clone(),
        occlusions: occlusions.clone(),
    };

    let mut perception = Perception::new(
        &scenario.perception,
        &setup.icp,
        &setup.adapter,
        &setup.adaptation,
        setup.initial_params,
        attributor,
        &setup.shape,
        derive_seed(seed, &[9]),
    )?;
    let mut mpc = MpcController::new(setup.mpc.clone())?;
    let mut state = initial_state(&setup.arm, &spline)?;
    let mut risk = RiskState::nominal(setup.safety);
    let mut last_report = None;
    let mut ticks = Vec::with_capacity(scenario.ticks());
    let mut records = Vec::new();
    let stride = scenario.perception_stride();
    let dt = scenario.control_period;

    for step in 0..scenario.ticks() {
        let t = step as f64 * dt;
        let truth = obstacle.as_ref().map(|o| obstacle_step(o, t));
        let occluded = occlusions.iter().any(|i| i.contains(t));
        if let (Some(truth), true) = (truth, step % stride == 0) {
            let frame = (step / stride) as u64;
            let output = perception.tick(truth, occluded);
            if let Some(report) = &output.report {
                last_report = Some((t, report.clone()));
            }
            let staleness = last_report.as_ref().map(|(at, _)| t - at);
            risk = match (scenario.mode, &last_report) {
                (Mode::Baseline, _) => RiskState::nominal(setup.safety),
                (Mode::Guard, Some((at, report))) => fuse(report, t - at, &setup.safety, &setup.risk, risk.rho),
                (Mode::Guard, None) => RiskState {
                    rho: 1.0,
                    effective: crate::risk::inflate_params(&setup.safety, 1.0, &setup.risk),
                    source: RiskSource::Stale,
                },
            };
            records.push(PerceptionRecord {
                t,
                frame,
                output,
                rho: risk.rho,
                source: risk.source,
                effective: risk.effective,
                staleness,
            });
        }
        let estimate = perception.estimate();
        let planned = estimate.map(|center| Obstacle { center, radius: risk.effective.r_obs });
        let out = mpc.step(&state, &setup.arm, &spline, &setup.weights, &risk.effective, planned);
        let pose = setup.arm.forward_kinematics(&state.q);
        let path = spline.eval(state.s);
        let contour_error = split_error(&(pose.ee() - path.position), &path.tangent).1.abs();
        let d_env = truth.map(|c| clearance(&setup.arm, &state.q, &c, setup.safety.r_obs));
        ticks.push(TickRecord {
            step,
            t,
            q: state.q.into(),
            s: state.s,
            v_s: state.v_s,
            qdot: out.input.qdot.into(),
            vs_accel: out.input.vs_accel,
            ee: pose.ee().into(),
            contour_error,
            obstacle: truth.map(Into::into),
            estimate: estimate.map(Into::into),
            occluded,
            d_env,
            rho: risk.rho,
            source: risk.source,
            solve_ms: out.diagnostics.solve_ms,
            qp_iterations: out.diagnostics.qp_iterations,
            active_constraints: out.diagnostics.active_constraints,
            max_slack: out.diagnostics.max_slack,
            fallback: out.diagnostics.fallback,
            collision: d_env.is_some_and(|d| d < setup.safety.eps_env),
        });
        state = integrate(&state, &out.input, dt)?;
    }
    Ok(EpisodeLog { header, ticks, perception: records })
}

impl EpisodeLog {
    pub fn records(&self) -> impl Iterator<Item = LogRecord> + '_ {
        std::iter::once(LogRecord::Header(self.header.clone()))
            .chain(self.perception.iter().cloned().map(LogRecord::Perception))
            .chain(self.ticks.iter().cloned().map(LogRecord::Tick))
    }

    pub fn from_records(records: Vec<LogRecord>) -> Result<Self> {
        let mut header = None;
        let (mut ticks, mut perception) = (Vec::new(), Vec::new());
        for r in records {
            match r {
                LogRecord::Header(h) if header.is_none() => header = Some(h),
                LogRecord::Header(_) => return Err(Error::Parse("episode log has two headers".into())),
                LogRecord::Tick(t) => ticks.push(t),
                LogRecord::Perception(p) => perception.push(p),
            }
        }
        let header = header.ok_or_else(|| Error::Parse("episode log has no header".into()))?;
        if header.version != LOG_VERSION {
            return Err(Error::Parse(format!("unsupported episode log version {}", header.version)));
        }
        if ticks.is_empty() {
            return Err(Error::Parse("episode log has no ticks".into()));
        }
        Ok(Self { header, ticks, perception })
    }

    pub fn write_jsonl<W: Write>(&self, out: W) -> Result<()> {
        let mut w = JsonLinesWriter::new(out);
        for r in self.records() {
            w.write(&r)?;
        }
        w.flush()
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        Self::from_records(read_json_lines(input)?)
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(file))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        use crate::io::format_f64;
        let rows: Vec<Vec<String>> = self.ticks.iter().map(|t| {
            vec![
                format_f64(t.t),
                t.d_env.map_or_else(|| "nan".into(), format_f64),
                format_f64(t.rho),
                format_f64(t.solve_ms),
            ]
        }).collect();
        crate::io::write_csv(path, &["t", "d_env", "rho", "solve_ms"], &rows)
    }

    /// Copy with wall-clock timings zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        let mut out = self.clone();
        out.ticks.iter_mut().for_each(|t| t.solve_ms = 0.0);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub mode: Mode,
    pub seed: u64,
    pub ticks: usize,
    pub min_d_env: Option<f64>,
    /// Ticks with `d_env < ε_env`.
    pub collision_ticks: usize,
    /// Separate entries into the collision region.
    pub collision_events: usize,
    pub mean_solve_ms: f64,
    pub p95_solve_ms: f64,
    pub max_solve_ms: f64,
    /// Share of ticks whose solve time exceeded the control period.
    pub overrun_fraction: f64,
    pub mean_rho: f64,
    pub s_final: f64,
    pub final_contour_error: f64,
    pub fallbacks: usize,
    pub ood_frames: usize,
    pub frozen_frames: usize,
    pub adapted_frames: usize,
}

/// Nearest-rank percentile of unsorted samples.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

pub fn metrics(log: &EpisodeLog) -> Result<EpisodeMetrics> {
    let n = log.ticks.len();
    if n == 0 {
        return invalid("metrics need a non-empty log");
    }
    let solve: Vec<f64> = log.ticks.iter().map(|t| t.solve_ms).collect();
    let min_d_env = log.ticks.iter().filter_map(|t| t.d_env).fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.min(d))));
    let collision_events = log.ticks.iter().enumerate().filter(|(i, t)| t.collision && (*i == 0 || !log.ticks[i - 1].collision)).count();
    let last = &log.ticks[n - 1];
    let status_count = |s: AdaptStatus| {
        log.perception.iter().filter(|p| p.output.adaptation.as_ref().is_some_and(|a| a.status == s)).count()
    };
    Ok(EpisodeMetrics {
        mode: log.header.mode,
        seed: log.header.seed,
        ticks: n,
        min_d_env,
        collision_ticks: log.ticks.iter().filter(|t| t.collision).count(),
        collision_events,
        mean_solve_ms: solve.iter().sum::<f64>() / n as f64,
        p95_solve_ms: percentile(&solve, 95.0),
        max_solve_ms: solve.iter().copied().fold(0.0, f64::max),
        overrun_fraction: solve.iter().filter(|&&ms| ms > log.header.control_period * 1e3).count() as f64 / n as f64,
        mean_rho: log.ticks.iter().map(|t| t.rho).sum::<f64>() / n as f64,
        s_final: last.s,
        final_contour_error: last.contour_error,
        fallbacks: log.ticks.iter().filter(|t| t.fallback).count(),
        ood_frames: log.perception.iter().filter(|p| p.output.report.as_ref().is_some_and(|r| r.ood)).count(),
        frozen_frames: status_count(AdaptStatus::FrozenOod),
        adapted_frames: status_count(AdaptStatus::Adapted),
    })
}
