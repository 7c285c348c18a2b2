//! Named experiment presets covering the acceptance scenarios.

use crate::algorithms::Algorithm;
use crate::harness::config::{
    DiagnosticSpec, ExchangeModeSpec, GammaSpec, OutputSpec, PartitionSpec, ProblemSpec,
    RunConfig, RunMode, SlowdownSpec, SpeedSpec, StalenessSpec, TopologySpec, WeightSpec,
    ComputeTimeSpec,
};
use crate::harness::experiment::HarnessError;
use crate::problems::PartitionStrategy;

pub const PRESET_NAMES: [&str; 6] = [
    "consistency-sgd",
    "convergence-rate",
    "linear-speedup",
    "straggler",
    "consensus-decay",
    "theory-grid",
];

fn base(algorithm: Algorithm, mode: RunMode, topology: TopologySpec) -> RunConfig {
    RunConfig {
        algorithm,
        mode,
        iterations: 1000,
        horizon: None,
        record_every: 100,
        batch_size: 1,
        gamma: GammaSpec::Fixed(0.05),
        staleness: StalenessSpec::Zero,
        seeds: vec![1],
        target_loss: None,
        track_avg_grad: false,
        exchange_mode: ExchangeModeSpec::DeadlockFree,
        local_compensation: true,
        validate_invariants: false,
        topology,
        problem: ProblemSpec::Quadratic {
            dimension: 10,
            condition: 2.0,
            num_samples: 16,
            noise: 0.5,
            seed: 5,
        },
        partition: PartitionSpec {
            strategy: PartitionStrategy::Shared,
            weights: WeightSpec::Uniform,
        },
        speed: SpeedSpec::default(),
        output: OutputSpec::default(),
        diagnostic: None,
    }
}

/// Returns the fully specified configs for a named preset.
pub fn preset(name: &str) -> Result<Vec<(String, RunConfig)>, HarnessError> {
    match name {
        "consistency-sgd" => Ok(consistency_sgd()),
        "convergence-rate" => Ok(convergence_rate()),
        "linear-speedup" => Ok(linear_speedup()),
        "straggler" => Ok(straggler()),
        "consensus-decay" => Ok(consensus_decay()),
        "theory-grid" => Ok(theory_grid()),
        other => Err(HarnessError::UnknownPreset(
            other.to_string(),
            PRESET_NAMES.join(", "),
        )),
    }
}

/// AD-PSGD with one worker and zero staleness against serial SGD, shared
/// seed: the loss trajectories must match bitwise.
fn consistency_sgd() -> Vec<(String, RunConfig)> {
    let make = |algorithm| {
        let mut c = base(algorithm, RunMode::Logical, TopologySpec::Single);
        c.iterations = 10_000;
        c.record_every = 1;
        c.seeds = vec![42];
        c.problem = ProblemSpec::Quadratic {
            dimension: 6,
            condition: 3.0,
            num_samples: 16,
            noise: 0.5,
            seed: 1234,
        };
        c
    };
    vec![
        ("adpsgd-n1".to_string(), make(Algorithm::Adpsgd)),
        ("sgd".to_string(), make(Algorithm::Sgd)),
    ]
}

/// Shared noisy quadratic on the 8-ring with the corollary step size, run at
/// a base budget and at four times that budget.
fn convergence_rate() -> Vec<(String, RunConfig)> {
    let make = |iterations: u64| {
        let mut c = base(
            Algorithm::Adpsgd,
            RunMode::Logical,
            TopologySpec::Ring { n: 8 },
        );
        c.iterations = iterations;
        c.record_every = 250;
        c.gamma = GammaSpec::Corollary;
        c.track_avg_grad = true;
        c.seeds = (1..=10).collect();
        c.problem = ProblemSpec::Quadratic {
            dimension: 20,
            condition: 2.0,
            num_samples: 32,
            noise: 1.0,
            seed: 99,
        };
        c
    };
    vec![
        ("k-base".to_string(), make(2500)),
        ("k-4x".to_string(), make(10_000)),
    ]
}

/// Compute-bound event simulation over n in {1, 2, 4, 8}: simulated
/// time-to-target should scale like 1/n.
fn linear_speedup() -> Vec<(String, RunConfig)> {
    [1usize, 2, 4, 8]
        .into_iter()
        .map(|n| {
            let topology = if n == 1 {
                TopologySpec::Single
            } else {
                TopologySpec::Ring { n }
            };
            let mut c = base(Algorithm::Adpsgd, RunMode::Event, topology);
            c.iterations = 4000;
            c.horizon = Some(1e9);
            c.record_every = 20;
            c.gamma = GammaSpec::Corollary;
            c.seeds = (1..=10).collect();
            c.target_loss = Some(1.0);
            c.speed = SpeedSpec {
                compute_time: ComputeTimeSpec::Uniform(1.0),
                link_time: 0.001,
                ..SpeedSpec::default()
            };
            c.problem = ProblemSpec::Quadratic {
                dimension: 10,
                condition: 2.0,
                num_samples: 16,
                noise: 0.3,
                seed: 5,
            };
            (format!("n{n}"), c)
        })
        .collect()
}

/// One of 16 ring workers slowed by 1/2/10/100x: AD-PSGD event runs against
/// the synchronous AllReduce and D-PSGD round models.
fn straggler() -> Vec<(String, RunConfig)> {
    let mut out = Vec::new();
    for factor in [1.0f64, 2.0, 10.0, 100.0] {
        for (tag, algorithm, mode) in [
            ("adpsgd", Algorithm::Adpsgd, RunMode::Event),
            ("allreduce", Algorithm::Allreduce, RunMode::Sync),
            ("dpsgd", Algorithm::Dpsgd, RunMode::Sync),
        ] {
            let mut c = base(algorithm, mode, TopologySpec::Ring { n: 16 });
            c.iterations = 2560; // five epoch-equivalents at 16 x 32 updates
            c.horizon = Some(1e12);
            c.record_every = 256;
            c.gamma = GammaSpec::Fixed(0.01);
            c.seeds = vec![1, 2, 3];
            c.problem = ProblemSpec::Quadratic {
                dimension: 10,
                condition: 2.0,
                num_samples: 32,
                noise: 0.5,
                seed: 11,
            };
            c.speed = SpeedSpec {
                compute_time: ComputeTimeSpec::Uniform(1.0),
                link_time: 0.01,
                slowdown: if factor > 1.0 {
                    vec![SlowdownSpec {
                        worker: Some(0),
                        edge: None,
                        factor,
                        start: 0.0,
                        end: f64::INFINITY,
                    }]
                } else {
                    Vec::new()
                },
                ..SpeedSpec::default()
            };
            out.push((format!("{tag}-slow{factor:.0}"), c));
        }
    }
    out
}

/// Monte-Carlo check of the gossip consensus-decay bound on the 5-ring.
fn consensus_decay() -> Vec<(String, RunConfig)> {
    let mut c = base(
        Algorithm::Adpsgd,
        RunMode::Logical,
        TopologySpec::Ring { n: 5 },
    );
    c.iterations = 0;
    c.gamma = GammaSpec::Fixed(1.0);
    c.seeds = vec![7];
    c.diagnostic = Some(DiagnosticSpec::ConsensusDecay {
        trials: 10_000,
        rounds: vec![1, 5, 10, 25, 50],
    });
    vec![("ring5".to_string(), c)]
}

/// Validity grid for the theory checker over (n, M, T, topology).
fn theory_grid() -> Vec<(String, RunConfig)> {
    let mut out = Vec::new();
    for n in [1usize, 2, 4, 8, 16] {
        let topologies: Vec<(&str, TopologySpec)> = if n == 1 {
            vec![("single", TopologySpec::Single)]
        } else {
            vec![
                ("ring", TopologySpec::Ring { n }),
                ("skip-ring", TopologySpec::SkipRing { n }),
            ]
        };
        for (tname, topology) in topologies {
            for m in [1usize, 8] {
                for t in [0u32, 1, 4, 8] {
                    let mut c = base(Algorithm::Adpsgd, RunMode::Logical, topology.clone());
                    c.batch_size = m;
                    c.staleness = if t == 0 {
                        StalenessSpec::Zero
                    } else {
                        StalenessSpec::Fixed { tau: t }
                    };
                    c.gamma = GammaSpec::Corollary;
                    c.iterations = 1000;
                    c.problem = ProblemSpec::Quadratic {
                        dimension: 5,
                        condition: 2.0,
                        num_samples: 8,
                        noise: 1.0,
                        seed: 3,
                    };
                    out.push((format!("n{n}-m{m}-t{t}-{tname}"), c));
                }
            }
        }
    }
    out
}
