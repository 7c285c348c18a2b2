//! Run configuration, metrics output, experiment presets and sweeps.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod presets;

pub use config::{ConfigError, GammaSpec, RunConfig, RunMode};
pub use experiment::{run_experiment, sweep, HarnessError};
pub use metrics::{consensus_mk, MetricsRecord, MetricsSeries};
pub use presets::{preset, PRESET_NAMES};
