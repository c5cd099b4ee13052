mod controller;
mod episode;
mod object;
mod world;

pub use controller::{make_controller, ControllerKind, GraspController, MpcController, PdController, PdGains};
pub use episode::{
    episode_seed, mean_gap_variance, run_episode, run_suite, stability_from_trace, stability_metrics,
    success_rate, write_suite_table, write_trace_csv, EpisodeResult, EpisodeSummary, RuntimeStats,
    StabilityMetrics, SuiteConfig, TraceRow, SUCCESS_HOLD,
};
pub use object::{object_by_name, object_menu, ObjectModel};
pub use world::{
    world_step, Disturbance, DisturbanceConfig, GraspStatus, GraspWorld, Observation, StartMode,
    WorldConfig,
};
