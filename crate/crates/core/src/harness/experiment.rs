//! Config resolution and experiment execution: builds the problem, topology
//! and policy from a [`RunConfig`], resolves the step size (estimating the
//! problem constants when the corollary prescription is requested), runs
//! every seed, and writes per-seed CSVs plus an aggregate JSON summary.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::algorithms::{run_logical, Algorithm, AlgoError, RunContext};
use crate::harness::config::{
    ConfigError, DiagnosticSpec, ExchangeModeSpec, GammaSpec, ProblemSpec, RunConfig, RunMode,
    TopologySpec,
};
use crate::harness::metrics::{aggregate, write_atomic, MeanStd, MetricsSeries, SeedAggregate};
use crate::problems::{
    estimate_lipschitz, estimate_variances, load_logistic_csv, make_quadratic, make_small_mlp,
    partition_data, DataPartition, Problem, ProblemError,
};
use crate::simulator::{
    simulate, simulate_synchronous, EventTrace, ExchangeMode, SimContext, SimError,
};
use crate::theory::{TheoryError, TheoryInputs, TheoryReport};
use crate::topology::{
    analyze, build_ring, build_skip_ring, build_skip_ring_bipartite, SelectionPolicy,
    TopologyError, TopologyGraph,
};

const STREAM_ESTIMATION: u64 = 32;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Algo(#[from] AlgoError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown preset {0:?}; available: {1}")]
    UnknownPreset(String, String),
}

impl HarnessError {
    /// Exit code contract: 2 for validation problems, 3 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Algo(AlgoError::Divergence { .. })
            | HarnessError::Algo(AlgoError::Drift { .. })
            | HarnessError::Sim(SimError::Deadlock(_))
            | HarnessError::Sim(SimError::Algo(_)) => 3,
            _ => 2,
        }
    }
}

/// Empirical problem constants feeding the theory checker.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EstimateBlock {
    pub lipschitz: f64,
    pub sigma_sq: f64,
    pub varsigma_sq: f64,
    pub rho: f64,
}

/// A config with every reference resolved and the step size fixed.
pub struct Resolved {
    pub config: RunConfig,
    pub problem: Problem,
    pub partition: DataPartition,
    pub graph: TopologyGraph,
    pub policy: SelectionPolicy,
    pub gamma: f64,
    pub init: DVector<f64>,
    pub estimates: EstimateBlock,
    pub warnings: Vec<String>,
}

/// Builds the topology named by the spec. In event mode with deadlock-free
/// exchanges the skip-ring drops its even offsets to keep the parity
/// bipartition; the dropped offsets are reported as a warning.
fn resolve_topology(
    config: &RunConfig,
    warnings: &mut Vec<String>,
) -> Result<TopologyGraph, HarnessError> {
    let needs_partition = config.mode == RunMode::Event
        && config.exchange_mode == ExchangeModeSpec::DeadlockFree;
    let graph = match &config.topology {
        TopologySpec::Single => TopologyGraph::single(),
        TopologySpec::Ring { n } => {
            if *n == 1 {
                TopologyGraph::single()
            } else {
                build_ring(*n)?
            }
        }
        TopologySpec::SkipRing { n } => {
            if *n == 1 {
                TopologyGraph::single()
            } else if needs_partition {
                let (graph, warning) = build_skip_ring_bipartite(*n)?;
                if let Some(w) = warning {
                    warnings.push(w);
                }
                graph
            } else {
                build_skip_ring(*n)?
            }
        }
        TopologySpec::File { path } => {
            let text = std::fs::read_to_string(path)?;
            TopologyGraph::from_json(&text)?
        }
    };
    if needs_partition && graph.n() > 1 && graph.partition().is_none() {
        return Err(ConfigError::Invalid {
            field: "topology".into(),
            message: "no bipartite partition exists for deadlock-free event mode; \
                      set exchange_mode = \"serialized\""
                .into(),
        }
        .into());
    }
    Ok(graph)
}

fn resolve_problem(spec: &ProblemSpec) -> Result<Problem, HarnessError> {
    Ok(match spec {
        ProblemSpec::Quadratic {
            dimension,
            condition,
            num_samples,
            noise,
            seed,
        } => make_quadratic(*dimension, *condition, *num_samples, *noise, *seed)?,
        ProblemSpec::Logistic { csv, l2 } => load_logistic_csv(csv, *l2)?,
        ProblemSpec::SmallMlp {
            input_dim,
            hidden,
            num_samples,
            seed,
        } => make_small_mlp(*input_dim, *hidden, *num_samples, *seed)?,
    })
}

/// Resolves every reference in a config and fixes the step size.
pub fn resolve(config: &RunConfig) -> Result<Resolved, HarnessError> {
    config.validate()?;
    let mut warnings = Vec::new();
    let graph = resolve_topology(config, &mut warnings)?;
    let n = graph.n();
    let problem = resolve_problem(&config.problem)?;
    let weights = config.partition.weights.resolve(n);
    let partition = partition_data(
        &problem,
        &weights,
        config.partition.strategy,
        config.seeds[0],
    )?;
    let policy = SelectionPolicy::new(weights, &graph)?;
    let init = DVector::zeros(problem.dimension());

    // Problem constants: exact Lipschitz path per problem kind, Monte-Carlo
    // variances at a few probe models, spectral gap from the gossip law.
    let lipschitz = estimate_lipschitz(&problem);
    let mut est_rng = ChaCha8Rng::seed_from_u64(config.seeds[0]);
    est_rng.set_stream(STREAM_ESTIMATION);
    let probes = vec![
        init.clone(),
        DVector::from_element(problem.dimension(), 0.5),
        DVector::from_element(problem.dimension(), 1.0),
    ];
    let variances = estimate_variances(&problem, &partition, &probes, 2000, &mut est_rng)?;
    let rho = if config.algorithm.is_centralized() || n == 1 {
        0.0
    } else {
        analyze(&graph, &policy)?.rho
    };
    let estimates = EstimateBlock {
        lipschitz,
        sigma_sq: variances.sigma_sq,
        varsigma_sq: variances.varsigma_sq,
        rho,
    };

    let gamma = match config.gamma {
        GammaSpec::Fixed(g) => g,
        GammaSpec::Corollary => crate::theory::corollary_gamma(
            n,
            config.batch_size,
            lipschitz,
            variances.sigma_sq,
            variances.varsigma_sq,
            config.iterations.max(1) as f64,
        ),
    };

    Ok(Resolved {
        config: config.clone(),
        problem,
        partition,
        graph,
        policy,
        gamma,
        init,
        estimates,
        warnings,
    })
}

impl Resolved {
    /// Theory report at the resolved step size (quadratics know `f*`; other
    /// problems fall back to `f* = 0`, making the gap an upper estimate).
    pub fn theory_report(&self) -> Result<TheoryReport, TheoryError> {
        let inputs = TheoryInputs {
            workers: self.graph.n(),
            batch_size: self.config.batch_size,
            lipschitz: self.estimates.lipschitz,
            staleness_cap: self.config.staleness.cap(),
            rho: self.estimates.rho,
            sigma_sq: self.estimates.sigma_sq,
            varsigma_sq: self.estimates.varsigma_sq,
            gamma: self.gamma,
            iterations: self.config.iterations.max(1),
        };
        let f0 = self.problem.loss(&self.init);
        let gap = f0 - self.problem.optimum_value().unwrap_or(0.0);
        TheoryReport::evaluate(&inputs, gap)
    }

    fn run_context(&self) -> RunContext<'_> {
        RunContext {
            algorithm: self.config.algorithm,
            problem: &self.problem,
            partition: &self.partition,
            graph: &self.graph,
            policy: &self.policy,
            gamma: self.gamma,
            batch_size: self.config.batch_size,
            staleness: self.config.staleness.to_mode(),
            iterations: self.config.iterations,
            record_every: self.config.record_every,
            init: self.init.clone(),
            track_avg_grad: self.config.track_avg_grad,
        }
    }

    fn sim_context<'a>(
        &'a self,
        speed: &'a crate::simulator::SpeedModel,
    ) -> SimContext<'a> {
        SimContext {
            problem: &self.problem,
            partition: &self.partition,
            graph: &self.graph,
            policy: &self.policy,
            speed,
            gamma: self.gamma,
            batch_size: self.config.batch_size,
            horizon: self.config.horizon.unwrap_or(f64::INFINITY),
            max_iterations: if self.config.iterations == 0 {
                u64::MAX
            } else {
                self.config.iterations
            },
            record_every: self.config.record_every,
            init: self.init.clone(),
            mode: match self.config.exchange_mode {
                ExchangeModeSpec::DeadlockFree => ExchangeMode::DeadlockFree,
                ExchangeModeSpec::Serialized => ExchangeMode::SerializedAtomic,
            },
            local_compensation: self.config.local_compensation,
            validate_invariants: self.config.validate_invariants,
        }
    }

    /// Runs one seed, returning the metrics and (for simulated modes) a trace.
    pub fn run_seed(&self, seed: u64) -> Result<(MetricsSeries, Option<EventTrace>), HarnessError> {
        match self.config.mode {
            RunMode::Logical => Ok((run_logical(&self.run_context(), seed)?, None)),
            RunMode::Event => {
                let speed = self.config.speed.resolve(self.graph.n())?;
                let (series, trace) = simulate(&self.sim_context(&speed), seed)?;
                Ok((series, Some(trace)))
            }
            RunMode::Sync => {
                let speed = self.config.speed.resolve(self.graph.n())?;
                let (series, trace) =
                    simulate_synchronous(&self.sim_context(&speed), self.config.algorithm, seed)?;
                Ok((series, Some(trace)))
            }
        }
    }
}

/// Per-epoch accounting: `n * (dataset size / M)` gradient updates make one
/// epoch-equivalent.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EpochBlock {
    pub updates_per_epoch: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_per_epoch: Option<MeanStd>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    pub algorithm: Algorithm,
    pub mode: RunMode,
    pub workers: usize,
    pub gamma: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub staleness_cap: u32,
    pub seeds: Vec<u64>,
    pub estimates: EstimateBlock,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theory: Option<TheoryReport>,
    pub aggregate: SeedAggregate,
    pub epoch: EpochBlock,
    pub warnings: Vec<String>,
}

pub struct RunArtifacts {
    pub resolved_gamma: f64,
    pub per_seed: Vec<MetricsSeries>,
    pub traces: Vec<Option<EventTrace>>,
    pub summary: ExperimentSummary,
    /// Files written, relative to the output directory.
    pub files: Vec<PathBuf>,
}

/// Runs every seed of a config and writes artifacts under `out_dir`
/// (`metrics_seed<seed>.csv`, optional `events_seed<seed>.jsonl`,
/// `summary.json`). All writes are atomic.
pub fn run_experiment(config: &RunConfig, out_dir: &Path) -> Result<RunArtifacts, HarnessError> {
    if let Some(diag) = &config.diagnostic {
        return run_diagnostic(config, diag, out_dir);
    }
    let resolved = resolve(config)?;
    let mut per_seed = Vec::new();
    let mut traces = Vec::new();
    let mut files = Vec::new();
    for &seed in &config.seeds {
        let (series, trace) = resolved.run_seed(seed)?;
        let csv_name = PathBuf::from(format!("metrics_seed{seed}.csv"));
        series.write_csv(&out_dir.join(&csv_name))?;
        files.push(csv_name);
        if config.output.event_trace {
            if let Some(t) = &trace {
                let trace_name = PathBuf::from(format!("events_seed{seed}.jsonl"));
                t.write_jsonl(&out_dir.join(&trace_name))?;
                files.push(trace_name);
            }
        }
        per_seed.push(series);
        traces.push(trace);
    }

    let agg = aggregate(&per_seed, config.target_loss);
    let updates_per_epoch = resolved.graph.n() as f64 * resolved.problem.num_samples() as f64
        / config.batch_size as f64;
    let epoch_times: Vec<f64> = per_seed
        .iter()
        .filter_map(|s| s.update_rate().map(|r| updates_per_epoch / r))
        .collect();
    let summary = ExperimentSummary {
        algorithm: config.algorithm,
        mode: config.mode,
        workers: resolved.graph.n(),
        gamma: resolved.gamma,
        batch_size: config.batch_size,
        iterations: config.iterations,
        staleness_cap: config.staleness.cap(),
        seeds: config.seeds.clone(),
        estimates: resolved.estimates,
        theory: resolved.theory_report().ok(),
        aggregate: agg,
        epoch: EpochBlock {
            updates_per_epoch,
            time_per_epoch: if epoch_times.is_empty() {
                None
            } else {
                Some(crate::harness::metrics::mean_std(&epoch_times))
            },
        },
        warnings: resolved.warnings.clone(),
    };
    let summary_json =
        serde_json::to_string_pretty(&summary).expect("summary serialization cannot fail");
    write_atomic(&out_dir.join("summary.json"), summary_json.as_bytes())?;
    files.push(PathBuf::from("summary.json"));

    Ok(RunArtifacts {
        resolved_gamma: resolved.gamma,
        per_seed,
        traces,
        summary,
        files,
    })
}

/// Gossip-only diagnostics that bypass the SGD loop.
fn run_diagnostic(
    config: &RunConfig,
    diag: &DiagnosticSpec,
    out_dir: &Path,
) -> Result<RunArtifacts, HarnessError> {
    match diag {
        DiagnosticSpec::ConsensusDecay { trials, rounds } => {
            let mut warnings = Vec::new();
            let graph = resolve_topology(config, &mut warnings)?;
            let policy = SelectionPolicy::new(
                config.partition.weights.resolve(graph.n()),
                &graph,
            )?;
            let points = crate::topology::consensus_decay_mc(
                &graph,
                &policy,
                rounds,
                *trials,
                config.seeds[0],
            )?;
            let csv = consensus_decay_csv(&points);
            write_atomic(&out_dir.join("consensus_decay.csv"), csv.as_bytes())?;
            let report = analyze(&graph, &policy)?;
            let summary = serde_json::json!({
                "diagnostic": "consensus-decay",
                "workers": graph.n(),
                "rho": report.rho,
                "trials": trials,
                "rounds": rounds,
                "points": points,
            });
            write_atomic(
                &out_dir.join("summary.json"),
                serde_json::to_string_pretty(&summary).unwrap().as_bytes(),
            )?;
            Ok(RunArtifacts {
                resolved_gamma: 0.0,
                per_seed: Vec::new(),
                traces: Vec::new(),
                summary: ExperimentSummary {
                    algorithm: config.algorithm,
                    mode: config.mode,
                    workers: graph.n(),
                    gamma: 0.0,
                    batch_size: config.batch_size,
                    iterations: 0,
                    staleness_cap: 0,
                    seeds: config.seeds.clone(),
                    estimates: EstimateBlock {
                        lipschitz: 0.0,
                        sigma_sq: 0.0,
                        varsigma_sq: 0.0,
                        rho: report.rho,
                    },
                    theory: None,
                    aggregate: aggregate(&[], None),
                    epoch: EpochBlock {
                        updates_per_epoch: 0.0,
                        time_per_epoch: None,
                    },
                    warnings,
                },
                files: vec![
                    PathBuf::from("consensus_decay.csv"),
                    PathBuf::from("summary.json"),
                ],
            })
        }
    }
}

/// One sweep variation: a dotted config key overridden to a parsed value.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: String,
    pub gamma: f64,
    pub final_loss: MeanStd,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_to_target: Option<MeanStd>,
    /// `time_to_target(first value) / time_to_target(this value)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speedup_vs_first: Option<f64>,
}

/// Applies `key = value` into a TOML tree, creating an error if the path is
/// absent (sweeps may only vary existing keys).
pub fn override_toml(base: &str, key: &str, value: &str) -> Result<String, ConfigError> {
    let mut doc: toml::Value = base
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    let parsed: toml::Value = format!("v = {value}")
        .parse::<toml::Value>()
        .ok()
        .and_then(|t| t.get("v").cloned())
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let mut cursor = &mut doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if i + 1 == parts.len() {
            let table = cursor.as_table_mut().ok_or_else(|| ConfigError::Invalid {
                field: key.to_string(),
                message: "parent is not a table".into(),
            })?;
            if !table.contains_key(*part) {
                return Err(ConfigError::Invalid {
                    field: key.to_string(),
                    message: "key not present in base config".into(),
                });
            }
            table.insert(part.to_string(), parsed.clone());
        } else {
            cursor = cursor
                .get_mut(part)
                .ok_or_else(|| ConfigError::Invalid {
                    field: key.to_string(),
                    message: format!("missing section {part:?}"),
                })?;
        }
    }
    toml::to_string_pretty(&doc).map_err(|e| ConfigError::Parse(e.to_string()))
}

/// Runs the base config once per value of `key`, writing each run under
/// `out_dir/<sanitized value>/` plus a cross-run `sweep.json` and
/// `speedup.csv` (time-to-target normalized by the first value).
pub fn sweep(
    base_toml: &str,
    key: &str,
    values: &[String],
    out_dir: &Path,
) -> Result<Vec<SweepRow>, HarnessError> {
    let mut rows: Vec<SweepRow> = Vec::new();
    for value in values {
        let text = override_toml(base_toml, key, value)?;
        let config = RunConfig::from_toml(&text)?;
        let sub = out_dir.join(sanitize(value));
        std::fs::create_dir_all(&sub)?;
        let artifacts = run_experiment(&config, &sub)?;
        rows.push(SweepRow {
            value: value.clone(),
            gamma: artifacts.resolved_gamma,
            final_loss: artifacts.summary.aggregate.final_loss,
            time_to_target: artifacts.summary.aggregate.time_to_target,
            speedup_vs_first: None,
        });
    }
    if let Some(first) = rows.first().and_then(|r| r.time_to_target.map(|t| t.mean)) {
        for row in rows.iter_mut() {
            row.speedup_vs_first = row.time_to_target.map(|t| first / t.mean);
        }
    }
    let json = serde_json::to_string_pretty(&serde_json::json!({
        "key": key,
        "rows": rows,
    }))
    .unwrap();
    write_atomic(&out_dir.join("sweep.json"), json.as_bytes())?;

    let mut csv = String::from("value,gamma,final_loss_mean,time_to_target_mean,speedup_vs_first\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.value,
            r.gamma,
            r.final_loss.mean,
            r.time_to_target.map(|t| t.mean.to_string()).unwrap_or_default(),
            r.speedup_vs_first.map(|s| s.to_string()).unwrap_or_default(),
        ));
    }
    write_atomic(&out_dir.join("speedup.csv"), csv.as_bytes())?;
    Ok(rows)
}

fn sanitize(value: &str) -> String {
    value
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

/// CSV rendering of consensus-decay measurements.
pub fn consensus_decay_csv(points: &[crate::topology::DecayPoint]) -> String {
    let mut out = String::from("rounds,start_worker,mean_sq_dist,std_err,bound\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.rounds, p.start_worker, p.mean_sq_dist, p.std_err, p.bound
        ));
    }
    out
}
