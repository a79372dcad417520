use nalgebra::Vector2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bench::PerturbationRanges;
use crate::cloud::ShapeKind;
use crate::control::PathSpline;
use crate::error::{invalid, Result};
use crate::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Risk forced to zero: the controller trusts the last estimate.
    Baseline,
    Guard,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Guard => "guard",
        }
    }
}

/// Scripted obstacle motion in the arm plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ObstacleTrajectory {
    /// Back and forth between two points at constant speed. `phase` is the
    /// arc length already travelled at `t = 0`, measured along the closed
    /// out-and-back loop.
    Line { start: [f64; 2], end: [f64; 2], speed: f64, phase: f64 },
    /// Uniform circular motion starting at angle `phase`.
    Circle { center: [f64; 2], radius: f64, speed: f64, phase: f64 },
}

impl ObstacleTrajectory {
    pub fn validate(&self) -> Result<()> {
        match self {
            ObstacleTrajectory::Line { start, end, speed, phase } => {
                let len = (Vector2::from(*end) - Vector2::from(*start)).norm();
                if !(len > 0.0) || !(*speed >= 0.0) || !phase.is_finite() {
                    return invalid("line trajectory needs distinct finite end points, speed ≥ 0 and a finite phase");
                }
            }
            ObstacleTrajectory::Circle { center, radius, speed, phase } => {
                if center.iter().any(|c| !c.is_finite()) || !(*radius > 0.0) || !(*speed >= 0.0) || !phase.is_finite() {
                    return invalid("circle trajectory needs a positive radius, speed ≥ 0 and finite center and phase");
                }
            }
        }
        Ok(())
    }

    pub fn speed(&self) -> f64 {
        match self {
            ObstacleTrajectory::Line { speed, .. } | ObstacleTrajectory::Circle { speed, .. } => *speed,
        }
    }

    /// Time for one full cycle, infinite when the obstacle is at rest.
    pub fn period(&self) -> f64 {
        match self {
            ObstacleTrajectory::Line { start, end, speed, .. } => {
                2.0 * (Vector2::from(*end) - Vector2::from(*start)).norm() / speed
            }
            ObstacleTrajectory::Circle { radius, speed, .. } => std::f64::consts::TAU * radius / speed,
        }
    }

    pub fn with_phase(&self, new_phase: f64) -> Self {
        let mut out = self.clone();
        match &mut out {
            ObstacleTrajectory::Line { phase, .. } | ObstacleTrajectory::Circle { phase, .. } => *phase = new_phase,
        }
        out
    }

    /// Phase range that covers one full cycle.
    pub fn phase_span(&self) -> f64 {
        match self {
            ObstacleTrajectory::Line { start, end, .. } => 2.0 * (Vector2::from(*end) - Vector2::from(*start)).norm(),
            ObstacleTrajectory::Circle { .. } => std::f64::consts::TAU,
        }
    }
}

/// True obstacle center at time `t ≥ 0`.
pub fn obstacle_step(trajectory: &ObstacleTrajectory, t: f64) -> Vector2<f64> {
    match trajectory {
        ObstacleTrajectory::Line { start, end, speed, phase } => {
            let (a, b) = (Vector2::from(*start), Vector2::from(*end));
            let len = (b - a).norm();
            let travelled = (phase + speed * t).rem_euclid(2.0 * len);
            let along = if travelled <= len { travelled } else { 2.0 * len - travelled };
            a + (b - a) * (along / len)
        }
        ObstacleTrajectory::Circle { center, radius, speed, phase } => {
            let angle = phase + speed * t / radius;
            Vector2::from(*center) + *radius * Vector2::new(angle.cos(), angle.sin())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OcclusionSpec {
    pub count: usize,
    pub min_duration: f64,
    pub max_duration: f64,
    /// No occlusion starts before this time (s).
    pub earliest: f64,
}

impl Default for OcclusionSpec {
    fn default() -> Self {
        Self { count: 5, min_duration: 0.5, max_duration: 1.5, earliest: 1.0 }
    }
}

impl OcclusionSpec {
    pub fn validate(&self, episode_length: f64) -> Result<()> {
        if !(self.min_duration > 0.0 && self.min_duration <= self.max_duration) || !(self.earliest >= 0.0) {
            return invalid("occlusion durations must satisfy 0 < min ≤ max and earliest ≥ 0");
        }
        let needed = self.earliest + self.count as f64 * self.max_duration;
        if needed > episode_length {
            return invalid(format!("{} occlusions of up to {} s do not fit in the episode", self.count, self.max_duration));
        }
        Ok(())
    }
}

/// Sorted, non-overlapping occlusion intervals. Durations are drawn first;
/// the leftover time is then split into random gaps so every interval ends
/// before the episode does.
pub fn occlusion_schedule(spec: &OcclusionSpec, episode_length: f64, seed: u64) -> Result<Vec<Interval>> {
    spec.validate(episode_length)?;
    if spec.count == 0 {
        return Ok(Vec::new());
    }
    let mut rng = rng_from_seed(seed);
    let durations: Vec<f64> = (0..spec.count)
        .map(|_| if spec.max_duration > spec.min_duration { rng.random_range(spec.min_duration..=spec.max_duration) } else { spec.min_duration })
        .collect();
    let slack = episode_length - spec.earliest - durations.iter().sum::<f64>();
    let mut cuts: Vec<f64> = (0..spec.count).map(|_| rng.random::<f64>() * slack).collect();
    cuts.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(spec.count);
    let mut used = 0.0;
    for (i, d) in durations.iter().enumerate() {
        let start = spec.earliest + cuts[i] + used;
        out.push(Interval { start, end: start + d });
        used += d;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathConfig {
    pub half_width: f64,
    pub center: [f64; 2],
    pub control_points: usize,
    pub heading: f64,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self { half_width: 0.6, center: [0.0, 0.75], control_points: 16, heading: std::f64::consts::FRAC_PI_2 }
    }
}

impl PathConfig {
    pub fn spline(&self) -> Result<PathSpline> {
        PathSpline::lemniscate(self.half_width, self.center, self.control_points, self.heading)
    }
}

/// How the obstacle is observed at each perception tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerceptionConfig {
    pub shape: ShapeKind,
    pub n_points: usize,
    pub normal_k: usize,
    /// Meters per unit of the normalized object cloud.
    pub object_scale: f64,
    /// Sensor-noise magnitude while visible.
    pub visible_noise: f64,
    /// Retained-fraction range while occluded.
    pub occluded_overlap: [f64; 2],
    /// Magnitude of the random object pose relative to its model.
    pub pose_offset: f64,
    pub initial_scale: f64,
    /// Time budget of one perception tick (s).
    pub budget: f64,
    /// Modeled cost of one registration iteration (s), used for the
    /// adaptation deadline so that runs stay reproducible.
    pub iteration_cost: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            shape: ShapeKind::Torus,
            n_points: 400,
            normal_k: 10,
            object_scale: 0.1,
            visible_noise: 0.005,
            occluded_overlap: [0.4, 0.6],
            pose_offset: 0.02,
            initial_scale: 1.0,
            budget: 0.05,
            iteration_cost: 1e-3,
        }
    }
}

impl PerceptionConfig {
    pub fn validate(&self) -> Result<()> {
        PerturbationRanges {
            noise: [self.visible_noise; 2],
            pose: [self.pose_offset; 2],
            overlap: self.occluded_overlap,
        }
        .validate()?;
        if self.n_points < 100 || self.normal_k < 3 || !(self.object_scale > 0.0) || !(self.initial_scale > 0.0) {
            return invalid("perception needs n_points ≥ 100, normal_k ≥ 3 and positive scales");
        }
        if !(self.budget > 0.0) || !(self.iteration_cost >= 0.0) {
            return invalid("perception budget must be positive and iteration cost non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub mode: Mode,
    pub path: PathConfig,
    /// `None` runs the episode without any obstacle.
    pub obstacle: Option<ObstacleTrajectory>,
    /// Draw the obstacle's starting phase from the episode seed.
    pub randomize_phase: bool,
    pub occlusions: OcclusionSpec,
    pub perception: PerceptionConfig,
    pub perception_period: f64,
    pub control_period: f64,
    pub episode_length: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Guard,
            path: PathConfig::default(),
            obstacle: Some(ObstacleTrajectory::Circle { center: [0.3, 0.75], radius: 0.15, speed: 0.15, phase: 0.0 }),
            randomize_phase: true,
            occlusions: OcclusionSpec::default(),
            perception: PerceptionConfig::default(),
            perception_period: 0.1,
            control_period: 0.01,
            episode_length: 12.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.control_period > 0.0) || !(self.perception_period >= self.control_period) {
            return invalid("periods must satisfy 0 < control period ≤ perception period");
        }
        if !(self.episode_length > self.perception_period) {
            return invalid("episode must outlast one perception period");
        }
        let ratio = self.perception_period / self.control_period;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return invalid("perception period must be a whole number of control periods");
        }
        if let Some(o) = &self.obstacle {
            o.validate()?;
            self.occlusions.validate(self.episode_length)?;
        }
        self.path.spline()?;
        self.perception.validate()
    }

    pub fn ticks(&self) -> usize {
        (self.episode_length / self.control_period).round() as usize
    }

    pub fn perception_stride(&self) -> usize {
        (self.perception_period / self.control_period).round() as usize
    }
}
