//! Per-run metrics records, CSV export, and cross-seed aggregation.

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use serde::Serialize;

use crate::algorithms::ModelMatrix;

/// One sampled point of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub k: u64,
    pub simulated_time: f64,
    pub loss_avg: f64,
    pub grad_norm_sq_avg: f64,
    pub consensus_mk: f64,
    pub max_staleness_so_far: u32,
    pub worker_updates: Vec<u64>,
}

/// Full metrics trajectory of one run plus end-of-run summary values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSeries {
    pub records: Vec<MetricsRecord>,
    /// Objective at the final column-average model.
    pub final_loss: f64,
    /// Squared gradient norm at the final column-average model.
    pub final_grad_norm_sq: f64,
    /// Running average of the squared gradient norm at the column-average
    /// model over all iterations, when per-step tracking was enabled.
    pub avg_grad_norm_sq: Option<f64>,
    /// Largest staleness observed anywhere in the run.
    pub max_staleness: u32,
}

impl MetricsSeries {
    /// Fixed-order CSV schema:
    /// `k,simulated_time,loss_avg_model,grad_norm_sq_avg_model,consensus_Mk,max_staleness,worker_updates_i...`
    pub fn csv_header(workers: usize) -> String {
        let mut cols = vec![
            "k".to_string(),
            "simulated_time".to_string(),
            "loss_avg_model".to_string(),
            "grad_norm_sq_avg_model".to_string(),
            "consensus_Mk".to_string(),
            "max_staleness".to_string(),
        ];
        for i in 0..workers {
            cols.push(format!("worker_updates_{i}"));
        }
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let workers = self
            .records
            .first()
            .map(|r| r.worker_updates.len())
            .unwrap_or(0);
        let mut out = Self::csv_header(workers);
        out.push('\n');
        // std's float Display is shortest-round-trip, so rows are
        // byte-reproducible across reruns.
        let float = |v: f64| {
            if v == v.trunc() && v.is_finite() && v.abs() < 1e15 {
                format!("{v:.1}")
            } else {
                format!("{v}")
            }
        };
        for r in &self.records {
            out.push_str(&r.k.to_string());
            out.push(',');
            out.push_str(&float(r.simulated_time));
            out.push(',');
            out.push_str(&float(r.loss_avg));
            out.push(',');
            out.push_str(&float(r.grad_norm_sq_avg));
            out.push(',');
            out.push_str(&float(r.consensus_mk));
            out.push(',');
            out.push_str(&r.max_staleness_so_far.to_string());
            for u in &r.worker_updates {
                out.push(',');
                out.push_str(&u.to_string());
            }
            out.push('\n');
        }
        out
    }

    /// Writes the CSV atomically (temp file in the same directory, then rename).
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    /// First simulated time at which the loss reaches `target`, linearly
    /// interpolated between bracketing records.
    pub fn time_to_target(&self, target: f64) -> Option<f64> {
        let mut prev: Option<&MetricsRecord> = None;
        for r in &self.records {
            if r.loss_avg <= target {
                return Some(match prev {
                    Some(p) if p.loss_avg > r.loss_avg => {
                        let frac = (p.loss_avg - target) / (p.loss_avg - r.loss_avg);
                        p.simulated_time + frac * (r.simulated_time - p.simulated_time)
                    }
                    _ => r.simulated_time,
                });
            }
            prev = Some(r);
        }
        None
    }

    /// Iterations per unit of simulated time over the whole run.
    pub fn update_rate(&self) -> Option<f64> {
        let last = self.records.last()?;
        if last.simulated_time > 0.0 {
            Some(last.k as f64 / last.simulated_time)
        } else {
            None
        }
    }
}

/// Consensus distance `M_k = sum_i p_i || X 1/n - x^i ||^2`.
pub fn consensus_mk(models: &ModelMatrix, p: &[f64]) -> f64 {
    let mean = models.mean_column();
    let mut acc = 0.0;
    for (i, &w) in p.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let col = models.column(i);
        let mut d = 0.0;
        for r in 0..mean.len() {
            let diff = mean[r] - col[r];
            d += diff * diff;
        }
        acc += w * d;
    }
    acc
}

/// Mean and standard deviation of per-seed scalar outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len();
    if n == 0 {
        return MeanStd {
            mean: f64::NAN,
            std: f64::NAN,
            count: 0,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    MeanStd {
        mean,
        std: var.sqrt(),
        count: n,
    }
}

/// Cross-seed aggregate at matched record indices.
#[derive(Debug, Clone, Serialize)]
pub struct SeedAggregate {
    pub seeds: usize,
    pub final_loss: MeanStd,
    pub final_grad_norm_sq: MeanStd,
    pub avg_grad_norm_sq: Option<MeanStd>,
    pub time_to_target: Option<MeanStd>,
    /// Per-record mean curves keyed by k (requires matched record schedules).
    pub curve_k: Vec<u64>,
    pub curve_loss_mean: Vec<f64>,
    pub curve_loss_std: Vec<f64>,
}

pub fn aggregate(series: &[MetricsSeries], target_loss: Option<f64>) -> SeedAggregate {
    let finals: Vec<f64> = series.iter().map(|s| s.final_loss).collect();
    let grads: Vec<f64> = series.iter().map(|s| s.final_grad_norm_sq).collect();
    let avgs: Vec<f64> = series.iter().filter_map(|s| s.avg_grad_norm_sq).collect();
    let times: Vec<f64> = match target_loss {
        Some(t) => series.iter().filter_map(|s| s.time_to_target(t)).collect(),
        None => Vec::new(),
    };
    let len = series.iter().map(|s| s.records.len()).min().unwrap_or(0);
    let mut curve_k = Vec::with_capacity(len);
    let mut curve_loss_mean = Vec::with_capacity(len);
    let mut curve_loss_std = Vec::with_capacity(len);
    for idx in 0..len {
        let ks: Vec<u64> = series.iter().map(|s| s.records[idx].k).collect();
        let losses: Vec<f64> = series.iter().map(|s| s.records[idx].loss_avg).collect();
        let ms = mean_std(&losses);
        curve_k.push(ks[0]);
        curve_loss_mean.push(ms.mean);
        curve_loss_std.push(ms.std);
    }
    SeedAggregate {
        seeds: series.len(),
        final_loss: mean_std(&finals),
        final_grad_norm_sq: mean_std(&grads),
        avg_grad_norm_sq: if avgs.is_empty() {
            None
        } else {
            Some(mean_std(&avgs))
        },
        time_to_target: if times.is_empty() {
            None
        } else {
            Some(mean_std(&times))
        },
        curve_k,
        curve_loss_mean,
        curve_loss_std,
    }
}

/// p-weighted objective `f(x) = sum_i p_i f_i(x)` over partition shards.
pub fn objective_loss(
    problem: &crate::problems::Problem,
    partition: &crate::problems::DataPartition,
    x: &DVector<f64>,
) -> f64 {
    match partition.strategy() {
        crate::problems::PartitionStrategy::Shared => problem.loss(x),
        crate::problems::PartitionStrategy::Split => partition
            .weights()
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(i, &w)| w * problem.shard_loss(partition.shard(i), x))
            .sum(),
    }
}

/// p-weighted objective gradient matching [`objective_loss`].
pub fn objective_gradient(
    problem: &crate::problems::Problem,
    partition: &crate::problems::DataPartition,
    x: &DVector<f64>,
) -> DVector<f64> {
    match partition.strategy() {
        crate::problems::PartitionStrategy::Shared => problem.full_gradient(x),
        crate::problems::PartitionStrategy::Split => {
            let mut g = DVector::zeros(problem.dimension());
            for (i, &w) in partition.weights().iter().enumerate() {
                if w > 0.0 {
                    g += w * problem.shard_gradient(partition.shard(i), x);
                }
            }
            g
        }
    }
}

/// Atomic file write: temp file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into())
    ));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}
