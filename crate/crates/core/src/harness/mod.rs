//! Streaming harness: datasets, run configuration, the episode driver,
//! metrics and exports.

pub mod config;
pub mod dataset;
pub mod export;
pub mod metrics;
pub mod pool;
pub mod run;
pub mod synthetic;

pub use config::{RunConfig, CONFIG_KEYS};
pub use dataset::{load_sequence_dataset, parse_sequence_dataset, Dataset, Example, TaskKind};
pub use export::{export_results, load_episodes, load_trajectory, ExportPaths};
pub use metrics::{compute_metrics, MetricsSummary};
pub use pool::{generate_pool_lines, load_frozen_pool, save_pool_lines, PoolLine};
pub use run::{
    planner_rng, run_stream, run_stream_with, Episode, EpisodeRecord, RunOutput, TrajectoryEvent,
};
pub use synthetic::{generate_synthetic, SyntheticConfig};
