//! Run configuration: a TOML file with nested sections, schema-validated
//! with explicit error positions (the TOML parser reports line/column; the
//! semantic checks name the offending field).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::algorithms::{Algorithm, StalenessMode};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "ADPSGD_OUT_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config field {field}: {message}")]
    Invalid { field: String, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Step size: an explicit value or the prescription from the convergence
/// corollary (resolved against estimated problem constants).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaSpec {
    Corollary,
    Fixed(f64),
}

impl Serialize for GammaSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            GammaSpec::Corollary => s.serialize_str("corollary"),
            GammaSpec::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for GammaSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(GammaSpec::Fixed(v)),
            Raw::Text(s) if s == "corollary" => Ok(GammaSpec::Corollary),
            Raw::Text(s) => Err(serde::de::Error::custom(format!(
                "gamma must be a number or \"corollary\", got {s:?}"
            ))),
        }
    }
}

/// Worker weights: uniform or explicit.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightSpec {
    Uniform,
    Explicit(Vec<f64>),
}

impl WeightSpec {
    pub fn resolve(&self, n: usize) -> Vec<f64> {
        match self {
            WeightSpec::Uniform => vec![1.0 / n as f64; n],
            WeightSpec::Explicit(w) => w.clone(),
        }
    }
}

impl Serialize for WeightSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            WeightSpec::Uniform => s.serialize_str("uniform"),
            WeightSpec::Explicit(w) => w.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for WeightSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            List(Vec<f64>),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::List(w) => Ok(WeightSpec::Explicit(w)),
            Raw::Text(s) if s == "uniform" => Ok(WeightSpec::Uniform),
            Raw::Text(s) => Err(serde::de::Error::custom(format!(
                "weights must be a list or \"uniform\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TopologySpec {
    Ring { n: usize },
    SkipRing { n: usize },
    Single,
    File { path: PathBuf },
}

impl TopologySpec {
    pub fn workers_hint(&self) -> Option<usize> {
        match self {
            TopologySpec::Ring { n } | TopologySpec::SkipRing { n } => Some(*n),
            TopologySpec::Single => Some(1),
            TopologySpec::File { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemSpec {
    Quadratic {
        dimension: usize,
        condition: f64,
        num_samples: usize,
        noise: f64,
        seed: u64,
    },
    Logistic {
        csv: PathBuf,
        #[serde(default)]
        l2: f64,
    },
    SmallMlp {
        input_dim: usize,
        hidden: usize,
        num_samples: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub strategy: crate::problems::PartitionStrategy,
    pub weights: WeightSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
#[derive(Default)]
pub enum StalenessSpec {
    #[default]
    Zero,
    Fixed { tau: u32 },
    Uniform { cap: u32 },
}


impl StalenessSpec {
    pub fn to_mode(self) -> StalenessMode {
        match self {
            StalenessSpec::Zero => StalenessMode::Zero,
            StalenessSpec::Fixed { tau } => StalenessMode::Fixed(tau),
            StalenessSpec::Uniform { cap } => StalenessMode::Uniform(cap),
        }
    }

    pub fn cap(self) -> u32 {
        self.to_mode().cap()
    }
}

/// Which execution engine runs the algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    /// Iteration-indexed stepping; time is the virtual counter.
    Logical,
    /// Discrete-event wall-clock simulation (AD-PSGD).
    Event,
    /// Round-based wall-clock model (AllReduce / D-PSGD).
    Sync,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
#[derive(Default)]
pub enum ExchangeModeSpec {
    #[default]
    DeadlockFree,
    Serialized,
}


#[derive(Debug, Clone, PartialEq)]
pub enum ComputeTimeSpec {
    Uniform(f64),
    PerWorker(Vec<f64>),
}

impl Serialize for ComputeTimeSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ComputeTimeSpec::Uniform(v) => s.serialize_f64(*v),
            ComputeTimeSpec::PerWorker(v) => v.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for ComputeTimeSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            List(Vec<f64>),
        }
        Ok(match Raw::deserialize(d)? {
            Raw::Num(v) => ComputeTimeSpec::Uniform(v),
            Raw::List(v) => ComputeTimeSpec::PerWorker(v),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlowdownSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worker: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge: Option<(usize, usize)>,
    pub factor: f64,
    #[serde(default)]
    pub start: f64,
    #[serde(default = "default_end")]
    pub end: f64,
}

fn default_end() -> f64 {
    f64::INFINITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedSpec {
    #[serde(default = "default_compute")]
    pub compute_time: ComputeTimeSpec,
    #[serde(default)]
    pub link_time: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub slowdown: Vec<SlowdownSpec>,
    #[serde(default)]
    pub allreduce_alpha: f64,
    #[serde(default)]
    pub allreduce_beta: f64,
}

fn default_compute() -> ComputeTimeSpec {
    ComputeTimeSpec::Uniform(1.0)
}

impl Default for SpeedSpec {
    fn default() -> Self {
        Self {
            compute_time: default_compute(),
            link_time: 0.0,
            slowdown: Vec::new(),
            allreduce_alpha: 0.0,
            allreduce_beta: 0.0,
        }
    }
}

impl SpeedSpec {
    pub fn resolve(&self, workers: usize) -> Result<crate::simulator::SpeedModel, ConfigError> {
        use crate::simulator::{SlowTarget, SlowdownEvent, SpeedModel};
        let compute_time = match &self.compute_time {
            ComputeTimeSpec::Uniform(v) => vec![*v; workers],
            ComputeTimeSpec::PerWorker(v) => {
                if v.len() != workers {
                    return Err(invalid(
                        "speed.compute_time",
                        format!("{} entries for {workers} workers", v.len()),
                    ));
                }
                v.clone()
            }
        };
        let mut slowdowns = Vec::new();
        for (idx, s) in self.slowdown.iter().enumerate() {
            let target = match (s.worker, s.edge) {
                (Some(w), None) => SlowTarget::Worker(w),
                (None, Some((a, b))) => SlowTarget::Edge(a, b),
                _ => {
                    return Err(invalid(
                        &format!("speed.slowdown[{idx}]"),
                        "exactly one of `worker` or `edge` must be set",
                    ))
                }
            };
            slowdowns.push(SlowdownEvent {
                target,
                factor: s.factor,
                start: s.start,
                end: s.end,
            });
        }
        Ok(SpeedModel {
            compute_time,
            link_time: self.link_time,
            link_overrides: Vec::new(),
            slowdowns,
            allreduce_alpha: self.allreduce_alpha,
            allreduce_beta: self.allreduce_beta,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub event_trace: bool,
}

/// Gossip-only diagnostic runs that bypass the SGD loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DiagnosticSpec {
    /// Monte-Carlo check of the consensus-decay bound.
    ConsensusDecay { trials: u64, rounds: Vec<u32> },
}

/// A complete run description, parsed from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub mode: RunMode,
    pub iterations: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default = "default_record_every")]
    pub record_every: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub gamma: GammaSpec,
    #[serde(default)]
    pub staleness: StalenessSpec,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_loss: Option<f64>,
    #[serde(default)]
    pub track_avg_grad: bool,
    #[serde(default)]
    pub exchange_mode: ExchangeModeSpec,
    #[serde(default = "default_true")]
    pub local_compensation: bool,
    #[serde(default)]
    pub validate_invariants: bool,
    pub topology: TopologySpec,
    pub problem: ProblemSpec,
    pub partition: PartitionSpec,
    #[serde(default)]
    pub speed: SpeedSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<DiagnosticSpec>,
}

fn default_record_every() -> u64 {
    100
}
fn default_batch() -> usize {
    1
}
fn default_true() -> bool {
    true
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "at least one seed is required"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be >= 1"));
        }
        if let GammaSpec::Fixed(g) = self.gamma {
            if !(g > 0.0) {
                return Err(invalid("gamma", format!("must be > 0, got {g}")));
            }
        }
        if let Some(n) = self.topology.workers_hint() {
            if n == 0 {
                return Err(invalid("topology.n", "must be >= 1"));
            }
            if let WeightSpec::Explicit(w) = &self.partition.weights {
                if w.len() != n {
                    return Err(invalid(
                        "partition.weights",
                        format!("{} weights for {n} workers", w.len()),
                    ));
                }
            }
        }
        match self.mode {
            RunMode::Logical => {}
            RunMode::Event => {
                if self.algorithm != Algorithm::Adpsgd {
                    return Err(invalid(
                        "mode",
                        "event mode simulates adpsgd; use sync mode for the synchronous baselines",
                    ));
                }
                if self.horizon.is_none() && self.iterations == 0 {
                    return Err(invalid("horizon", "event mode needs a horizon or iterations"));
                }
            }
            RunMode::Sync => {
                if !matches!(self.algorithm, Algorithm::Allreduce | Algorithm::Dpsgd) {
                    return Err(invalid(
                        "mode",
                        "sync mode supports allreduce and dpsgd only",
                    ));
                }
            }
        }
        if matches!(self.algorithm, Algorithm::Sgd)
            && self.topology.workers_hint() != Some(1) {
                return Err(invalid("topology", "serial sgd requires a single worker"));
            }
        Ok(())
    }

    /// Output directory: explicit config value, else `ADPSGD_OUT_DIR`, else `runs/`.
    pub fn resolved_out_dir(&self) -> PathBuf {
        if let Some(dir) = &self.output.dir {
            return dir.clone();
        }
        if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
            if !dir.is_empty() {
                return PathBuf::from(dir);
            }
        }
        PathBuf::from("runs")
    }
}
