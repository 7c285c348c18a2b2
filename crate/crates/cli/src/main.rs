//! Command-line harness: run experiments, sweep parameters, inspect
//! topologies, and check the convergence theory for a config.
//!
//! Exit codes: 0 success, 2 validation error, 3 divergence or deadlock.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use adpsgd_core::harness::experiment::{run_experiment, sweep, HarnessError};
use adpsgd_core::harness::presets::preset;
use adpsgd_core::harness::{ConfigError, RunConfig};
use adpsgd_core::topology::{analyze, detect_deadlock_freedom, DeadlockVerdict, SelectionPolicy, TopologyGraph};

#[derive(Parser)]
#[command(name = "adpsgd", about = "Asynchronous decentralized parallel SGD simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of a config and write metrics, traces, and a summary.
    Run {
        /// Path to a TOML run config.
        config: PathBuf,
        /// Output directory (default: config [output].dir, else $ADPSGD_OUT_DIR, else runs/).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a config repeatedly, varying one dotted key over a value list.
    Sweep {
        config: PathBuf,
        /// Override, e.g. --vary topology.n=1,2,4,8
        #[arg(long)]
        vary: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Spectral gap, mixing constant, and deadlock analysis of a topology JSON file.
    AnalyzeTopology {
        topology: PathBuf,
        /// Also print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Evaluate the convergence-condition constants for a config.
    TheoryCheck {
        config: PathBuf,
        /// Also print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Materialize a named experiment preset.
    Preset {
        /// One of: consistency-sgd, convergence-rate, linear-speedup,
        /// straggler, consensus-decay, theory-grid.
        name: String,
        /// Write the preset's configs as TOML files into this directory.
        #[arg(long)]
        emit: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err
                .downcast_ref::<HarnessError>()
                .map(|e| e.exit_code())
                .or_else(|| err.downcast_ref::<ConfigError>().map(|_| 2))
                .unwrap_or(2);
            ExitCode::from(code as u8)
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = RunConfig::from_path(&config).map_err(HarnessError::from)?;
            let out_dir = out.unwrap_or_else(|| cfg.resolved_out_dir());
            std::fs::create_dir_all(&out_dir)?;
            let artifacts = run_experiment(&cfg, &out_dir)?;
            for w in &artifacts.summary.warnings {
                eprintln!("warning: {w}");
            }
            println!("gamma = {}", artifacts.resolved_gamma);
            for f in &artifacts.files {
                println!("wrote {}", out_dir.join(f).display());
            }
            Ok(())
        }
        Command::Sweep { config, vary, out } => {
            let (key, values) = vary.split_once('=').ok_or_else(|| {
                anyhow::anyhow!("--vary expects key=v1,v2,..., got {vary:?}")
            })?;
            let values: Vec<String> = values.split(',').map(|s| s.trim().to_string()).collect();
            if values.is_empty() {
                anyhow::bail!("--vary needs at least one value");
            }
            let base = std::fs::read_to_string(&config)?;
            // Validate the base config before looping.
            RunConfig::from_toml(&base).map_err(HarnessError::from)?;
            let out_dir = out.unwrap_or_else(|| PathBuf::from("runs/sweep"));
            std::fs::create_dir_all(&out_dir)?;
            let rows = sweep(&base, key, &values, &out_dir)?;
            println!("{:<14} {:<12} {:<14} {:<12}", "value", "gamma", "time-to-target", "speedup");
            for r in &rows {
                println!(
                    "{:<14} {:<12.6} {:<14} {:<12}",
                    r.value,
                    r.gamma,
                    r.time_to_target
                        .map(|t| format!("{:.4}", t.mean))
                        .unwrap_or_else(|| "-".into()),
                    r.speedup_vs_first
                        .map(|s| format!("{s:.3}"))
                        .unwrap_or_else(|| "-".into()),
                );
            }
            println!("wrote {}", out_dir.join("sweep.json").display());
            println!("wrote {}", out_dir.join("speedup.csv").display());
            Ok(())
        }
        Command::AnalyzeTopology { topology, json } => {
            let text = std::fs::read_to_string(&topology)?;
            let graph = TopologyGraph::from_json(&text).map_err(HarnessError::from)?;
            let policy = SelectionPolicy::uniform(&graph).map_err(HarnessError::from)?;
            let report = analyze(&graph, &policy).map_err(HarnessError::from)?;
            let verdict = detect_deadlock_freedom(&graph);
            println!("workers            {}", graph.n());
            println!("edges              {}", graph.edge_count());
            println!("max degree         {}", graph.max_degree());
            println!("connected          {}", graph.is_connected());
            println!("rho                {:.6e}", report.rho);
            println!("bar_rho            {:.6e}", report.bar_rho);
            match &verdict {
                DeadlockVerdict::DeadlockFree { active, passive } => {
                    println!("deadlock-free      true");
                    println!("active set         {active:?}");
                    println!("passive set        {passive:?}");
                }
                DeadlockVerdict::OddCycle(cycle) => {
                    println!("deadlock-free      false");
                    println!("odd cycle          {cycle:?}");
                }
            }
            if json {
                let value = serde_json::json!({
                    "workers": graph.n(),
                    "edges": graph.edge_count(),
                    "max_degree": graph.max_degree(),
                    "connected": graph.is_connected(),
                    "rho": report.rho,
                    "bar_rho": report.bar_rho,
                    "deadlock_free": verdict.is_deadlock_free(),
                });
                println!("{}", serde_json::to_string_pretty(&value)?);
            }
            Ok(())
        }
        Command::TheoryCheck { config, json } => {
            let cfg = RunConfig::from_path(&config).map_err(HarnessError::from)?;
            let resolved = adpsgd_core::harness::experiment::resolve(&cfg)?;
            let report = resolved.theory_report().map_err(HarnessError::from)?;
            print!("{}", report.render_text());
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            }
            Ok(())
        }
        Command::Preset { name, emit } => {
            let configs = preset(&name)?;
            match emit {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    for (tag, cfg) in &configs {
                        let path = dir.join(format!("{name}-{tag}.toml"));
                        std::fs::write(&path, cfg.to_toml())?;
                        println!("wrote {}", path.display());
                    }
                }
                None => {
                    for (tag, cfg) in &configs {
                        println!("# --- {name}/{tag} ---");
                        println!("{}", cfg.to_toml());
                    }
                }
            }
            Ok(())
        }
    }
}
