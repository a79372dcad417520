//! Closed-loop harness: a scripted obstacle, an occlusion schedule, the
//! perception pipeline at a slow rate and the controller at a fast one.

mod episode;
mod perception;
mod scenario;

pub use episode::{
    clearance, initial_state, metrics, percentile, run_episode, EpisodeHeader, EpisodeLog, EpisodeMetrics, LogRecord,
    PerceptionRecord, SimSetup, TickRecord, LOG_VERSION,
};
pub use perception::{Perception, PerceptionOutput};
pub use scenario::{
    obstacle_step, occlusion_schedule, Interval, Mode, ObstacleTrajectory, OcclusionSpec, PathConfig, PerceptionConfig,
    ScenarioConfig,
};
