//! Objective functions, stochastic gradient oracles, data partitioning, and
//! empirical variance/Lipschitz estimators.
//!
//! Every problem is a finite sum over sample records with analytic per-sample
//! gradients. Stochastic gradients are batch SUMS of `M` i.i.d. uniform draws
//! (with replacement) from the worker's shard, matching the update rule's
//! `g = sum_j grad F(x; xi_j)` convention.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::SeedableRng;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid probability vector: {0}")]
    InvalidWeights(String),
    #[error("worker {worker} would receive an empty shard ({samples} samples, weight {weight})")]
    InsufficientData {
        worker: usize,
        samples: usize,
        weight: f64,
    },
    #[error("worker {0} has an empty shard")]
    EmptyShard(usize),
    #[error("label {0} is not +1 or -1")]
    BadLabel(f64),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Quadratic,
    Logistic,
    SmallMlp,
}

#[derive(Debug, Clone)]
enum SampleData {
    /// One least-squares block: 0.5 ||A x - b||^2.
    Quadratic { a: DMatrix<f64>, b: DVector<f64> },
    /// One labeled example for l2-regularized logistic loss.
    Logistic { x: DVector<f64>, y: f64 },
    /// One regression pair for the tiny tanh network.
    Mlp { x: DVector<f64>, y: f64 },
}

/// A finite-sum objective `f(x) = (1/S) sum_s loss_s(x)` with analytic
/// gradients, plus optional knowledge of its optimum.
#[derive(Debug, Clone)]
pub struct Problem {
    kind: ProblemKind,
    dimension: usize,
    samples: Vec<SampleData>,
    /// Ridge weight for logistic; unused otherwise.
    l2: f64,
    /// Hidden width for the MLP; unused otherwise.
    hidden: usize,
    /// Input dimension for the MLP; unused otherwise.
    input_dim: usize,
    optimum: Option<DVector<f64>>,
    optimum_value: Option<f64>,
}

impl Problem {
    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn num_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn optimum(&self) -> Option<&DVector<f64>> {
        self.optimum.as_ref()
    }

    pub fn optimum_value(&self) -> Option<f64> {
        self.optimum_value
    }

    /// Loss of a single sample at `model`.
    pub fn sample_loss(&self, index: usize, model: &DVector<f64>) -> f64 {
        match &self.samples[index] {
            SampleData::Quadratic { a, b } => {
                let r = a * model - b;
                0.5 * r.norm_squared()
            }
            SampleData::Logistic { x, y } => {
                let margin = y * model.dot(x);
                ln_1p_exp(-margin) + 0.5 * self.l2 * model.norm_squared()
            }
            SampleData::Mlp { x, y } => {
                let (pred, _) = self.mlp_forward(model, x);
                0.5 * (pred - y) * (pred - y)
            }
        }
    }

    /// Analytic gradient of a single sample at `model`.
    pub fn sample_gradient_at(&self, index: usize, model: &DVector<f64>) -> DVector<f64> {
        match &self.samples[index] {
            SampleData::Quadratic { a, b } => a.transpose() * (a * model - b),
            SampleData::Logistic { x, y } => {
                let margin = y * model.dot(x);
                let coeff = -y * sigmoid(-margin);
                x * coeff + model * self.l2
            }
            SampleData::Mlp { x, y } => self.mlp_gradient(model, x, *y),
        }
    }

    /// Mean loss over the full dataset.
    pub fn loss(&self, model: &DVector<f64>) -> f64 {
        let s = self.samples.len() as f64;
        (0..self.samples.len())
            .map(|i| self.sample_loss(i, model))
            .sum::<f64>()
            / s
    }

    /// Mean gradient over the full dataset.
    pub fn full_gradient(&self, model: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.dimension);
        for i in 0..self.samples.len() {
            g += self.sample_gradient_at(i, model);
        }
        g / self.samples.len() as f64
    }

    /// Mean loss over an index shard.
    pub fn shard_loss(&self, shard: &[usize], model: &DVector<f64>) -> f64 {
        shard
            .iter()
            .map(|&i| self.sample_loss(i, model))
            .sum::<f64>()
            / shard.len() as f64
    }

    /// Mean gradient over an index shard.
    pub fn shard_gradient(&self, shard: &[usize], model: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.dimension);
        for &i in shard {
            g += self.sample_gradient_at(i, model);
        }
        g / shard.len() as f64
    }

    fn mlp_shapes(&self) -> (usize, usize) {
        (self.input_dim, self.hidden)
    }

    /// Forward pass of the 1-hidden-layer tanh net; returns (prediction, hidden activations).
    ///
    /// Parameter layout: W1 row-major in `[0, h*d)`, w2 in `[h*d, h*d + h)`,
    /// b1 in `[h*d + h, h*d + 2h)`, b2 at `h*d + 2h`.
    fn mlp_forward(&self, params: &DVector<f64>, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let (d, h) = self.mlp_shapes();
        let mut act = DVector::zeros(h);
        for j in 0..h {
            let mut z = params[h * d + h + j]; // b1[j]
            for i in 0..d {
                z += params[j * d + i] * x[i];
            }
            act[j] = z.tanh();
        }
        let mut pred = params[h * d + 2 * h]; // b2
        for j in 0..h {
            pred += params[h * d + j] * act[j]; // w2[j]
        }
        (pred, act)
    }

    fn mlp_gradient(&self, params: &DVector<f64>, x: &DVector<f64>, y: f64) -> DVector<f64> {
        let (d, h) = self.mlp_shapes();
        let (pred, act) = self.mlp_forward(params, x);
        let err = pred - y;
        let mut g = DVector::zeros(self.dimension);
        for j in 0..h {
            let w2j = params[h * d + j];
            let dz = err * w2j * (1.0 - act[j] * act[j]);
            for i in 0..d {
                g[j * d + i] = dz * x[i]; // dW1
            }
            g[h * d + j] = err * act[j]; // dw2
            g[h * d + h + j] = dz; // db1
        }
        g[h * d + 2 * h] = err; // db2
        g
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + exp(z))`.
fn ln_1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Least-squares objective from explicit `(A_s, b_s)` blocks:
/// `f(x) = (1/S) sum_s 0.5 ||A_s x - b_s||^2`.
pub fn make_least_squares(
    blocks: Vec<(DMatrix<f64>, DVector<f64>)>,
) -> Result<Problem, ProblemError> {
    if blocks.is_empty() {
        return Err(ProblemError::EmptyDataset);
    }
    let dimension = blocks[0].0.ncols();
    let mut samples = Vec::with_capacity(blocks.len());
    for (a, b) in blocks {
        if a.ncols() != dimension || a.nrows() != b.len() {
            return Err(ProblemError::InvalidParameter(
                "inconsistent block shapes".into(),
            ));
        }
        samples.push(SampleData::Quadratic { a, b });
    }
    Ok(Problem {
        kind: ProblemKind::Quadratic,
        dimension,
        samples,
        l2: 0.0,
        hidden: 0,
        input_dim: 0,
        optimum: None,
        optimum_value: None,
    })
}

/// Average least-squares objective with a diagonal Hessian of prescribed
/// condition number. All sample blocks share the matrix `A` (eigenvalues
/// log-spaced in `[1, condition]` after the square), so the within-worker
/// gradient noise injected through `b_s = A 1 + noise * eps_s` has constant
/// variance in the model — the bounded-variance assumption holds exactly.
pub fn make_quadratic(
    dimension: usize,
    condition: f64,
    num_samples: usize,
    noise: f64,
    seed: u64,
) -> Result<Problem, ProblemError> {
    if dimension == 0 || num_samples == 0 {
        return Err(ProblemError::InvalidParameter(
            "dimension and num_samples must be positive".into(),
        ));
    }
    if condition < 1.0 || noise < 0.0 {
        return Err(ProblemError::InvalidParameter(format!(
            "condition {condition} must be >= 1 and noise {noise} >= 0"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = DMatrix::zeros(dimension, dimension);
    for i in 0..dimension {
        let frac = if dimension == 1 {
            0.0
        } else {
            i as f64 / (dimension - 1) as f64
        };
        a[(i, i)] = condition.powf(frac * 0.5); // eigenvalue of A'A is condition^frac
    }
    let target = DVector::from_element(dimension, 1.0);
    let base = &a * &target;
    let mut samples = Vec::with_capacity(num_samples);
    for _ in 0..num_samples {
        let eps: DVector<f64> = DVector::from_fn(dimension, |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v
        });
        samples.push(SampleData::Quadratic {
            a: a.clone(),
            b: &base + noise * eps,
        });
    }
    // Optimum of the average: A'A x = A' mean(b)  =>  x = target + noise * A^-1 mean(eps).
    let mut mean_b = DVector::zeros(dimension);
    for s in &samples {
        if let SampleData::Quadratic { b, .. } = s {
            mean_b += b;
        }
    }
    mean_b /= num_samples as f64;
    let hess = a.transpose() * &a;
    let rhs = a.transpose() * &mean_b;
    let optimum = hess
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| ProblemError::InvalidParameter("singular quadratic".into()))?;
    let mut problem = Problem {
        kind: ProblemKind::Quadratic,
        dimension,
        samples,
        l2: 0.0,
        hidden: 0,
        input_dim: 0,
        optimum: None,
        optimum_value: None,
    };
    let fstar = problem.loss(&optimum);
    problem.optimum = Some(optimum);
    problem.optimum_value = Some(fstar);
    Ok(problem)
}

/// l2-regularized logistic regression over labeled feature vectors.
pub fn make_logistic(
    dataset: Vec<(Vec<f64>, f64)>,
    l2: f64,
) -> Result<Problem, ProblemError> {
    if dataset.is_empty() {
        return Err(ProblemError::EmptyDataset);
    }
    if l2 < 0.0 {
        return Err(ProblemError::InvalidParameter(format!("l2 = {l2}")));
    }
    let dimension = dataset[0].0.len();
    if dimension == 0 {
        return Err(ProblemError::InvalidParameter("zero feature dimension".into()));
    }
    let mut samples = Vec::with_capacity(dataset.len());
    for (features, label) in dataset {
        if label != 1.0 && label != -1.0 {
            return Err(ProblemError::BadLabel(label));
        }
        if features.len() != dimension || features.iter().any(|v| !v.is_finite()) {
            return Err(ProblemError::InvalidParameter(
                "inconsistent or non-finite features".into(),
            ));
        }
        samples.push(SampleData::Logistic {
            x: DVector::from_vec(features),
            y: label,
        });
    }
    Ok(Problem {
        kind: ProblemKind::Logistic,
        dimension,
        samples,
        l2,
        hidden: 0,
        input_dim: 0,
        optimum: None,
        optimum_value: None,
    })
}

/// Tiny 1-hidden-layer tanh regression network (<= 100 parameters), used to
/// exercise nonconvex behavior. Targets come from a random teacher network.
pub fn make_small_mlp(
    input_dim: usize,
    hidden: usize,
    num_samples: usize,
    seed: u64,
) -> Result<Problem, ProblemError> {
    let dimension = hidden * input_dim + hidden + hidden + 1;
    if input_dim == 0 || hidden == 0 || num_samples == 0 {
        return Err(ProblemError::InvalidParameter(
            "input_dim, hidden, num_samples must be positive".into(),
        ));
    }
    if dimension > 100 {
        return Err(ProblemError::InvalidParameter(format!(
            "mlp has {dimension} parameters; cap is 100"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let teacher: DVector<f64> = DVector::from_fn(dimension, |_, _| {
        let v: f64 = StandardNormal.sample(&mut rng);
        v * 0.7
    });
    let shell = Problem {
        kind: ProblemKind::SmallMlp,
        dimension,
        samples: Vec::new(),
        l2: 0.0,
        hidden,
        input_dim,
        optimum: None,
        optimum_value: None,
    };
    let mut samples = Vec::with_capacity(num_samples);
    for _ in 0..num_samples {
        let x: DVector<f64> = DVector::from_fn(input_dim, |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v
        });
        let (y, _) = shell.mlp_forward(&teacher, &x);
        samples.push(SampleData::Mlp { x, y });
    }
    Ok(Problem { samples, ..shell })
}

/// Loads a logistic dataset from CSV: one sample per row, features first,
/// last column the +/-1 label.
pub fn load_logistic_csv(path: &std::path::Path, l2: f64) -> Result<Problem, ProblemError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| ProblemError::Csv(e.to_string()))?;
    let mut dataset = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| ProblemError::Csv(e.to_string()))?;
        let mut values = Vec::with_capacity(record.len());
        for field in record.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|e| ProblemError::Csv(format!("bad number {field:?}: {e}")))?;
            values.push(v);
        }
        if values.len() < 2 {
            return Err(ProblemError::Csv("row needs >= 1 feature and a label".into()));
        }
        let label = values.pop().unwrap();
        dataset.push((values, label));
    }
    make_logistic(dataset, l2)
}

/// How data is spread across workers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionStrategy {
    /// Strategy-1: every worker sees the full dataset.
    Shared,
    /// Strategy-2: disjoint shards sized proportionally to the weights.
    Split,
}

/// Per-worker index shards into a problem's dataset.
#[derive(Debug, Clone)]
pub struct DataPartition {
    shards: Vec<Vec<usize>>,
    strategy: PartitionStrategy,
    weights: Vec<f64>,
}

impl DataPartition {
    pub fn shards(&self) -> &[Vec<usize>] {
        &self.shards
    }

    pub fn shard(&self, worker: usize) -> &[usize] {
        &self.shards[worker]
    }

    pub fn strategy(&self) -> PartitionStrategy {
        self.strategy
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn num_workers(&self) -> usize {
        self.shards.len()
    }
}

fn validate_weights(p: &[f64]) -> Result<(), ProblemError> {
    if p.is_empty() {
        return Err(ProblemError::InvalidWeights("empty weight vector".into()));
    }
    let mut sum = 0.0;
    for &w in p {
        if !(w >= 0.0) {
            return Err(ProblemError::InvalidWeights(format!("weight {w}")));
        }
        sum += w;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(ProblemError::InvalidWeights(format!("weights sum to {sum}")));
    }
    Ok(())
}

/// Splits the dataset across workers.
///
/// `shared` replicates the full index list; `split` shuffles once with the
/// seed and hands out contiguous blocks sized by largest-remainder rounding
/// of `S * p_i`.
pub fn partition_data(
    problem: &Problem,
    p: &[f64],
    strategy: PartitionStrategy,
    seed: u64,
) -> Result<DataPartition, ProblemError> {
    validate_weights(p)?;
    let s = problem.num_samples();
    let n = p.len();
    let shards = match strategy {
        PartitionStrategy::Shared => vec![(0..s).collect::<Vec<_>>(); n],
        PartitionStrategy::Split => {
            let sizes = largest_remainder_sizes(s, p);
            for (worker, (&size, &weight)) in sizes.iter().zip(p.iter()).enumerate() {
                if weight > 0.0 && size == 0 {
                    return Err(ProblemError::InsufficientData {
                        worker,
                        samples: s,
                        weight,
                    });
                }
            }
            let mut order: Vec<usize> = (0..s).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Fisher-Yates
            for i in (1..s).rev() {
                let j = rng.gen_range(0..=i);
                order.swap(i, j);
            }
            let mut shards = Vec::with_capacity(n);
            let mut cursor = 0;
            for &size in &sizes {
                shards.push(order[cursor..cursor + size].to_vec());
                cursor += size;
            }
            shards
        }
    };
    Ok(DataPartition {
        shards,
        strategy,
        weights: p.to_vec(),
    })
}

/// Largest-remainder apportionment of `total` items to weights `p`.
fn largest_remainder_sizes(total: usize, p: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = p.iter().map(|&w| total as f64 * w).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|&e| e.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut remainders: Vec<(usize, f64)> = exact
        .iter()
        .enumerate()
        .map(|(i, &e)| (i, e - e.floor()))
        .collect();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for k in 0..(total - assigned) {
        sizes[remainders[k % p.len()].0] += 1;
    }
    sizes
}

/// Batch-SUM stochastic gradient: `sum_{j=1}^{M} grad F(model; xi_j)` over
/// `M` draws with replacement from the worker's shard.
pub fn sample_gradient<R: Rng>(
    problem: &Problem,
    partition: &DataPartition,
    worker: usize,
    model: &DVector<f64>,
    batch_size: usize,
    rng: &mut R,
) -> Result<DVector<f64>, ProblemError> {
    let shard = partition.shard(worker);
    if shard.is_empty() {
        return Err(ProblemError::EmptyShard(worker));
    }
    if batch_size == 0 {
        return Err(ProblemError::InvalidParameter("batch_size = 0".into()));
    }
    let mut g = DVector::zeros(problem.dimension());
    for _ in 0..batch_size {
        let idx = shard[rng.gen_range(0..shard.len())];
        g += problem.sample_gradient_at(idx, model);
    }
    Ok(g)
}

/// Empirical variance bounds entering the theory checker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceEstimate {
    /// Within-worker per-sample gradient variance bound (empirical max over probes).
    pub sigma_sq: f64,
    /// Across-worker full-gradient variance bound (exact at each probe, max over probes).
    pub varsigma_sq: f64,
    /// Monte-Carlo draws used per probe for `sigma_sq`.
    pub sample_points: usize,
}

/// Estimates the two variance constants at a set of probe models.
///
/// `sigma_sq` is the p-weighted worker average of the empirical per-sample
/// (M = 1) gradient variance, maximized over probes; `varsigma_sq` is the
/// p-weighted spread of shard full gradients around the p-weighted objective
/// gradient, computed exactly and maximized over probes.
pub fn estimate_variances<R: Rng>(
    problem: &Problem,
    partition: &DataPartition,
    probe_models: &[DVector<f64>],
    draws: usize,
    rng: &mut R,
) -> Result<VarianceEstimate, ProblemError> {
    if draws < 100 {
        return Err(ProblemError::InvalidParameter(format!(
            "draws {draws} < 100"
        )));
    }
    if probe_models.is_empty() {
        return Err(ProblemError::InvalidParameter("no probe models".into()));
    }
    let p = partition.weights();
    let mut sigma_sq: f64 = 0.0;
    let mut varsigma_sq: f64 = 0.0;
    for probe in probe_models {
        // Across-worker spread, exact from shard means.
        let shard_grads: Vec<DVector<f64>> = (0..partition.num_workers())
            .map(|i| problem.shard_gradient(partition.shard(i), probe))
            .collect();
        let mut weighted_full = DVector::zeros(problem.dimension());
        for (i, g) in shard_grads.iter().enumerate() {
            weighted_full += g * p[i];
        }
        let mut vs = 0.0;
        for (i, g) in shard_grads.iter().enumerate() {
            vs += p[i] * (g - &weighted_full).norm_squared();
        }
        varsigma_sq = varsigma_sq.max(vs);

        // Within-worker per-sample variance, Monte-Carlo.
        let mut ss = 0.0;
        for (i, shard_grad) in shard_grads.iter().enumerate() {
            if p[i] == 0.0 {
                continue;
            }
            let shard = partition.shard(i);
            let mut acc = 0.0;
            for _ in 0..draws {
                let idx = shard[rng.gen_range(0..shard.len())];
                let g = problem.sample_gradient_at(idx, probe);
                acc += (g - shard_grad).norm_squared();
            }
            ss += p[i] * acc / draws as f64;
        }
        sigma_sq = sigma_sq.max(ss);
    }
    Ok(VarianceEstimate {
        sigma_sq,
        varsigma_sq,
        sample_points: draws,
    })
}

/// Gradient Lipschitz constant.
///
/// Quadratic: top eigenvalue of the (shared) Hessian `A'A`. Logistic:
/// `lambda_max(X'X / S) / 4 + l2`. MLP: power-iteration estimate of the
/// Hessian spectral norm at sampled points via finite-difference
/// Hessian-vector products (a heuristic, reported as such).
pub fn estimate_lipschitz(problem: &Problem) -> f64 {
    match problem.kind {
        ProblemKind::Quadratic => {
            let mut hess = DMatrix::zeros(problem.dimension, problem.dimension);
            for s in &problem.samples {
                if let SampleData::Quadratic { a, .. } = s {
                    hess += a.transpose() * a;
                }
            }
            hess /= problem.samples.len() as f64;
            top_eigenvalue(&hess)
        }
        ProblemKind::Logistic => {
            let mut gram = DMatrix::zeros(problem.dimension, problem.dimension);
            for s in &problem.samples {
                if let SampleData::Logistic { x, .. } = s {
                    gram += x * x.transpose();
                }
            }
            gram /= problem.samples.len() as f64;
            0.25 * top_eigenvalue(&gram) + problem.l2
        }
        ProblemKind::SmallMlp => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x4c69_7073);
            let mut best: f64 = 0.0;
            for _ in 0..8 {
                let point: DVector<f64> = DVector::from_fn(problem.dimension, |_, _| {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    v
                });
                best = best.max(hessian_norm_power_iter(problem, &point, &mut rng));
            }
            best
        }
    }
}

fn top_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(sym.clone())
        .eigenvalues
        .iter()
        .fold(f64::MIN, |acc, &v| acc.max(v))
}

/// Power iteration on finite-difference Hessian-vector products of the mean loss.
fn hessian_norm_power_iter<R: Rng>(problem: &Problem, point: &DVector<f64>, rng: &mut R) -> f64 {
    let eps = 1e-5;
    let mut v: DVector<f64> = DVector::from_fn(problem.dimension(), |_, _| {
        let x: f64 = StandardNormal.sample(rng);
        x
    });
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..30 {
        let plus = problem.full_gradient(&(point + eps * &v));
        let minus = problem.full_gradient(&(point - eps * &v));
        let hv = (plus - minus) / (2.0 * eps);
        lambda = hv.norm();
        if lambda < 1e-12 {
            return 0.0;
        }
        v = hv / lambda;
    }
    lambda
}
