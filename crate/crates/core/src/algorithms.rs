//! Iteration-indexed update rules: AD-PSGD and its baselines.
//!
//! The virtual counter `k` advances by one per stochastic-gradient update,
//! wherever it happens. AD-PSGD's update reads a possibly stale model
//! snapshot, mixes the column-stacked models with a sampled pair-averaging
//! matrix, then applies the batch-sum gradient to the updating worker's
//! column. The synchronous baselines (D-PSGD, AllReduce) advance `k` by `n`
//! per round; the centralized baselines (A-PSGD, serial SGD) keep a single
//! model column.
//!
//! Determinism: all randomness flows through three ChaCha streams derived
//! from the run seed — data sampling, worker/neighbor selection, and
//! staleness draws — so changing how one kind of decision is sampled leaves
//! the other streams untouched. A single-worker AD-PSGD run consumes no
//! selection or staleness draws, which makes its trajectory bit-identical to
//! serial SGD under the same seed.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::metrics::{
    consensus_mk, objective_gradient, objective_loss, MetricsRecord, MetricsSeries,
};
use crate::problems::{sample_gradient, DataPartition, Problem, ProblemError};
use crate::topology::{SelectionPolicy, TopologyError, TopologyGraph};

const STREAM_DATA: u64 = 1;
const STREAM_SELECTION: u64 = 2;
const STREAM_STALENESS: u64 = 3;

/// Column spread beyond which AllReduce declares its replicas out of sync.
pub const ALLREDUCE_DRIFT_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AlgoError {
    #[error("non-finite model entry at iteration {iteration}")]
    Divergence { iteration: u64 },
    #[error("allreduce replicas drifted apart at iteration {iteration}: spread {spread:e}")]
    Drift { iteration: u64, spread: f64 },
    #[error("staleness {requested} exceeds cap {cap}")]
    StalenessBreach { requested: u32, cap: u32 },
    #[error("invalid run: {0}")]
    InvalidRun(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Adpsgd,
    Dpsgd,
    Allreduce,
    Apsgd,
    Sgd,
}

impl Algorithm {
    pub fn is_centralized(self) -> bool {
        matches!(self, Algorithm::Apsgd | Algorithm::Sgd)
    }
}

/// Column-stacked worker models `X = [x^1 .. x^n]`, one column per worker.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMatrix {
    data: DMatrix<f64>,
}

impl ModelMatrix {
    /// All columns equal to `init` ("same initialization").
    pub fn from_init(init: &DVector<f64>, workers: usize) -> Self {
        let mut data = DMatrix::zeros(init.len(), workers);
        for c in 0..workers {
            data.column_mut(c).copy_from(init);
        }
        Self { data }
    }

    pub fn dimension(&self) -> usize {
        self.data.nrows()
    }

    pub fn workers(&self) -> usize {
        self.data.ncols()
    }

    pub fn column(&self, i: usize) -> DVector<f64> {
        self.data.column(i).into_owned()
    }

    pub fn column_mut(&mut self, i: usize) -> nalgebra::DVectorViewMut<'_, f64> {
        self.data.column_mut(i)
    }

    /// `X 1_n / n`.
    pub fn mean_column(&self) -> DVector<f64> {
        let mut mean = DVector::zeros(self.dimension());
        for c in 0..self.workers() {
            mean += self.data.column(c);
        }
        mean / self.workers() as f64
    }

    /// `X 1_n`, the column sum (preserved exactly by doubly stochastic mixing).
    pub fn column_sum(&self) -> DVector<f64> {
        let mut sum = DVector::zeros(self.dimension());
        for c in 0..self.workers() {
            sum += self.data.column(c);
        }
        sum
    }

    /// Largest per-coordinate spread between any two columns.
    pub fn spread(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.dimension() {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for c in 0..self.workers() {
                let v = self.data[(r, c)];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            worst = worst.max(hi - lo);
        }
        worst
    }

    /// In-place pairwise average of columns `i` and `j`.
    pub fn average_pair(&mut self, i: usize, j: usize) {
        for r in 0..self.dimension() {
            let avg = (self.data[(r, i)] + self.data[(r, j)]) * 0.5;
            self.data[(r, i)] = avg;
            self.data[(r, j)] = avg;
        }
    }

    /// `X <- X W` for an arbitrary mixing matrix.
    pub fn apply_mixing(&mut self, w: &DMatrix<f64>) {
        self.data = &self.data * w;
    }

    pub fn column_is_finite(&self, i: usize) -> bool {
        self.data.column(i).iter().all(|v| v.is_finite())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }
}

/// Simulated staleness law for logical-mode runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StalenessMode {
    /// Always read the current models.
    Zero,
    /// Read the snapshot `tau` iterations back (clamped to the start).
    Fixed(u32),
    /// Read a uniformly random snapshot 0..=cap iterations back.
    Uniform(u32),
}

impl StalenessMode {
    /// The cap `T` of the bounded-staleness assumption.
    pub fn cap(&self) -> u32 {
        match *self {
            StalenessMode::Zero => 0,
            StalenessMode::Fixed(t) => t,
            StalenessMode::Uniform(t) => t,
        }
    }
}

/// Mutable state of a logical run: virtual counter, models, snapshot history,
/// and the three random streams.
pub struct AlgoState {
    pub k: u64,
    pub models: ModelMatrix,
    staleness: StalenessMode,
    /// Last `cap+1` snapshots, front oldest, back == current models.
    history: std::collections::VecDeque<ModelMatrix>,
    pub max_staleness_seen: u32,
    pub update_counts: Vec<u64>,
    data_rng: ChaCha8Rng,
    selection_rng: ChaCha8Rng,
    staleness_rng: ChaCha8Rng,
}

impl AlgoState {
    pub fn new(init: &DVector<f64>, workers: usize, staleness: StalenessMode, seed: u64) -> Self {
        let models = ModelMatrix::from_init(init, workers);
        let mut history = std::collections::VecDeque::new();
        history.push_back(models.clone());
        let stream = |s: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s);
            rng
        };
        Self {
            k: 0,
            models,
            staleness,
            history,
            max_staleness_seen: 0,
            update_counts: vec![0; workers],
            data_rng: stream(STREAM_DATA),
            selection_rng: stream(STREAM_SELECTION),
            staleness_rng: stream(STREAM_STALENESS),
        }
    }

    /// Overwrites the models (and resets history), for hand-set starting points.
    pub fn set_models(&mut self, models: ModelMatrix) {
        self.models = models;
        self.history.clear();
        self.history.push_back(self.models.clone());
    }

    pub fn data_rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.data_rng
    }

    pub fn selection_rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.selection_rng
    }

    /// Draws this iteration's staleness, clamped to available history.
    pub fn draw_staleness(&mut self) -> u32 {
        let raw = match self.staleness {
            StalenessMode::Zero => 0,
            StalenessMode::Fixed(t) => t,
            StalenessMode::Uniform(0) => 0,
            StalenessMode::Uniform(t) => self.staleness_rng.gen_range(0..=t),
        };
        raw.min(self.k.min(u32::MAX as u64) as u32)
    }

    /// Model snapshot from `tau` iterations back.
    fn snapshot(&self, tau: u32) -> Result<&ModelMatrix, AlgoError> {
        let cap = self.staleness.cap();
        if tau > cap {
            return Err(AlgoError::StalenessBreach {
                requested: tau,
                cap,
            });
        }
        let len = self.history.len();
        if (tau as usize) >= len {
            // Requested snapshot predates history; the clamp in
            // `draw_staleness` makes this unreachable, so treat it as an
            // invariant breach rather than silently serving the oldest.
            return Err(AlgoError::StalenessBreach {
                requested: tau,
                cap,
            });
        }
        Ok(&self.history[len - 1 - tau as usize])
    }

    fn push_snapshot(&mut self) {
        self.history.push_back(self.models.clone());
        let keep = self.staleness.cap() as usize + 1;
        while self.history.len() > keep {
            self.history.pop_front();
        }
    }

    fn note_staleness(&mut self, tau: u32) {
        if tau > self.max_staleness_seen {
            self.max_staleness_seen = tau;
        }
    }
}

/// Everything a logical run needs, already resolved.
pub struct RunContext<'a> {
    pub algorithm: Algorithm,
    pub problem: &'a Problem,
    pub partition: &'a DataPartition,
    pub graph: &'a TopologyGraph,
    pub policy: &'a SelectionPolicy,
    pub gamma: f64,
    pub batch_size: usize,
    pub staleness: StalenessMode,
    pub iterations: u64,
    pub record_every: u64,
    pub init: DVector<f64>,
    /// Accumulate `||grad f(mean)||^2` every iteration (the theorem's
    /// left-hand side); costs one full-gradient evaluation per step.
    pub track_avg_grad: bool,
}

/// `x <- x - gamma g`, the one place gradient updates touch a column.
fn apply_gradient(mut col: nalgebra::DVectorViewMut<'_, f64>, gamma: f64, g: &DVector<f64>) {
    for r in 0..g.len() {
        col[r] -= gamma * g[r];
    }
}

/// One AD-PSGD update with explicit sampled choices; the public step samples
/// them from the state's streams. Exposed for hand-traced tests.
pub fn adpsgd_apply(
    state: &mut AlgoState,
    ctx: &RunContext<'_>,
    pair: Option<(usize, usize)>,
    tau: u32,
) -> Result<(), AlgoError> {
    let worker = pair.map(|(i, _)| i).unwrap_or(0);
    let stale_model = state.snapshot(tau)?.column(worker);
    state.note_staleness(tau);
    let g = sample_gradient(
        ctx.problem,
        ctx.partition,
        worker,
        &stale_model,
        ctx.batch_size,
        &mut state.data_rng,
    )?;
    if let Some((i, j)) = pair {
        state.models.average_pair(i, j);
    }
    apply_gradient(state.models.column_mut(worker), ctx.gamma, &g);
    state.k += 1;
    state.update_counts[worker] += 1;
    state.push_snapshot();
    if !state.models.column_is_finite(worker) {
        return Err(AlgoError::Divergence { iteration: state.k });
    }
    Ok(())
}

/// One step of the logical AD-PSGD loop: sample `(i_k, neighbor)`, read the
/// stale snapshot, average, then apply the gradient to worker `i_k`'s column.
pub fn adpsgd_logical_step(state: &mut AlgoState, ctx: &RunContext<'_>) -> Result<(), AlgoError> {
    let tau = state.draw_staleness();
    let pair = ctx.policy.sample_pair(ctx.graph, &mut state.selection_rng);
    adpsgd_apply(state, ctx, pair, tau)
}

/// Symmetric doubly stochastic mixing matrix `I - L/(deg_max + 1)` for D-PSGD.
pub fn dpsgd_mixing_matrix(graph: &TopologyGraph) -> DMatrix<f64> {
    let n = graph.n();
    let scale = 1.0 / (graph.max_degree() as f64 + 1.0);
    DMatrix::identity(n, n) - graph.laplacian() * scale
}

/// One synchronous D-PSGD round: all workers compute gradients at their
/// current local models, then `X <- X W_sync - gamma G`; `k` advances by `n`.
pub fn dpsgd_step(
    state: &mut AlgoState,
    ctx: &RunContext<'_>,
    w_sync: &DMatrix<f64>,
) -> Result<(), AlgoError> {
    let n = state.models.workers();
    let mut grads = Vec::with_capacity(n);
    for i in 0..n {
        let local = state.models.column(i);
        grads.push(sample_gradient(
            ctx.problem,
            ctx.partition,
            i,
            &local,
            ctx.batch_size,
            &mut state.data_rng,
        )?);
    }
    state.models.apply_mixing(w_sync);
    for (i, g) in grads.iter().enumerate() {
        apply_gradient(state.models.column_mut(i), ctx.gamma, g);
        state.update_counts[i] += 1;
    }
    state.k += n as u64;
    state.push_snapshot();
    if !state.models.is_finite() {
        return Err(AlgoError::Divergence { iteration: state.k });
    }
    Ok(())
}

/// One AllReduce round: replicas must agree, the worker-average gradient is
/// applied to the shared model; `k` advances by `n`.
pub fn allreduce_step(state: &mut AlgoState, ctx: &RunContext<'_>) -> Result<(), AlgoError> {
    let n = state.models.workers();
    let spread = state.models.spread();
    if spread > ALLREDUCE_DRIFT_TOL {
        return Err(AlgoError::Drift {
            iteration: state.k,
            spread,
        });
    }
    let shared = state.models.column(0);
    let mut sum = DVector::zeros(state.models.dimension());
    for i in 0..n {
        let g = sample_gradient(
            ctx.problem,
            ctx.partition,
            i,
            &shared,
            ctx.batch_size,
            &mut state.data_rng,
        )?;
        sum += g;
        state.update_counts[i] += 1;
    }
    let avg = sum / n as f64;
    let mut updated = shared;
    for r in 0..updated.len() {
        updated[r] -= ctx.gamma * avg[r];
    }
    for i in 0..n {
        state.models.column_mut(i).copy_from(&updated);
    }
    state.k += n as u64;
    state.push_snapshot();
    if !state.models.column_is_finite(0) {
        return Err(AlgoError::Divergence { iteration: state.k });
    }
    Ok(())
}

/// Centralized stale-gradient step: one worker's gradient, computed at a
/// snapshot at most `T` back, lands on the single central model.
pub fn apsgd_step(state: &mut AlgoState, ctx: &RunContext<'_>) -> Result<(), AlgoError> {
    let tau = state.draw_staleness();
    let worker = if ctx.policy.worker_weights().len() > 1 {
        ctx.policy.sample_worker(&mut state.selection_rng)
    } else {
        0
    };
    let stale_model = state.snapshot(tau)?.column(0);
    state.note_staleness(tau);
    let g = sample_gradient(
        ctx.problem,
        ctx.partition,
        worker,
        &stale_model,
        ctx.batch_size,
        &mut state.data_rng,
    )?;
    apply_gradient(state.models.column_mut(0), ctx.gamma, &g);
    state.k += 1;
    state.update_counts[worker] += 1;
    state.push_snapshot();
    if !state.models.column_is_finite(0) {
        return Err(AlgoError::Divergence { iteration: state.k });
    }
    Ok(())
}

/// Plain serial SGD step on the single model column.
pub fn sgd_step(state: &mut AlgoState, ctx: &RunContext<'_>) -> Result<(), AlgoError> {
    let model = state.models.column(0);
    let g = sample_gradient(
        ctx.problem,
        ctx.partition,
        0,
        &model,
        ctx.batch_size,
        &mut state.data_rng,
    )?;
    apply_gradient(state.models.column_mut(0), ctx.gamma, &g);
    state.k += 1;
    state.update_counts[0] += 1;
    state.push_snapshot();
    if !state.models.column_is_finite(0) {
        return Err(AlgoError::Divergence { iteration: state.k });
    }
    Ok(())
}

/// Runs `K` iterations of the configured algorithm, recording metrics every
/// `record_every` iterations plus the initial and final points. Loss and
/// gradient metrics are evaluated at the column-average model.
pub fn run_logical(ctx: &RunContext<'_>, seed: u64) -> Result<MetricsSeries, AlgoError> {
    validate_context(ctx)?;
    let workers = model_columns(ctx);
    let mut state = AlgoState::new(&ctx.init, workers, ctx.staleness, seed);
    let w_sync = match ctx.algorithm {
        Algorithm::Dpsgd => Some(dpsgd_mixing_matrix(ctx.graph)),
        _ => None,
    };

    let mut records = Vec::new();
    records.push(record(&state, ctx));

    let mut lhs_sum = 0.0;
    let every = ctx.record_every.max(1);
    let mut next_record = every;
    while state.k < ctx.iterations {
        if ctx.track_avg_grad {
            let g = objective_gradient(ctx.problem, ctx.partition, &state.models.mean_column());
            let weight = match ctx.algorithm {
                Algorithm::Dpsgd | Algorithm::Allreduce => workers as f64,
                _ => 1.0,
            };
            lhs_sum += weight * g.norm_squared();
        }
        match ctx.algorithm {
            Algorithm::Adpsgd => adpsgd_logical_step(&mut state, ctx)?,
            Algorithm::Dpsgd => dpsgd_step(&mut state, ctx, w_sync.as_ref().unwrap())?,
            Algorithm::Allreduce => allreduce_step(&mut state, ctx)?,
            Algorithm::Apsgd => apsgd_step(&mut state, ctx)?,
            Algorithm::Sgd => sgd_step(&mut state, ctx)?,
        }
        if state.k >= next_record {
            records.push(record(&state, ctx));
            next_record = (state.k / every + 1) * every;
        }
    }
    if records.last().map(|r| r.k) != Some(state.k) {
        records.push(record(&state, ctx));
    }

    let mean = state.models.mean_column();
    let final_loss = objective_loss(ctx.problem, ctx.partition, &mean);
    let final_grad = objective_gradient(ctx.problem, ctx.partition, &mean).norm_squared();
    Ok(MetricsSeries {
        records,
        final_loss,
        final_grad_norm_sq: final_grad,
        avg_grad_norm_sq: if ctx.track_avg_grad && state.k > 0 {
            Some(lhs_sum / state.k as f64)
        } else {
            None
        },
        max_staleness: state.max_staleness_seen,
    })
}

fn model_columns(ctx: &RunContext<'_>) -> usize {
    if ctx.algorithm.is_centralized() {
        1
    } else {
        ctx.graph.n()
    }
}

fn validate_context(ctx: &RunContext<'_>) -> Result<(), AlgoError> {
    if !(ctx.gamma > 0.0) {
        return Err(AlgoError::InvalidRun(format!("gamma = {}", ctx.gamma)));
    }
    if ctx.batch_size == 0 {
        return Err(AlgoError::InvalidRun("batch_size = 0".into()));
    }
    if ctx.init.len() != ctx.problem.dimension() {
        return Err(AlgoError::InvalidRun(format!(
            "init has dimension {}, problem has {}",
            ctx.init.len(),
            ctx.problem.dimension()
        )));
    }
    if ctx.algorithm == Algorithm::Sgd && ctx.graph.n() != 1 {
        return Err(AlgoError::InvalidRun(
            "serial sgd runs on a single worker".into(),
        ));
    }
    if ctx.partition.num_workers() != ctx.graph.n() && !ctx.algorithm.is_centralized() {
        return Err(AlgoError::InvalidRun(format!(
            "partition has {} shards for {} workers",
            ctx.partition.num_workers(),
            ctx.graph.n()
        )));
    }
    Ok(())
}

fn record(state: &AlgoState, ctx: &RunContext<'_>) -> MetricsRecord {
    let mean = state.models.mean_column();
    let p = if state.models.workers() == ctx.policy.worker_weights().len() {
        ctx.policy.worker_weights().to_vec()
    } else {
        vec![1.0; state.models.workers()]
    };
    MetricsRecord {
        k: state.k,
        simulated_time: state.k as f64,
        loss_avg: objective_loss(ctx.problem, ctx.partition, &mean),
        grad_norm_sq_avg: objective_gradient(ctx.problem, ctx.partition, &mean).norm_squared(),
        consensus_mk: consensus_mk(&state.models, &p),
        max_staleness_so_far: state.max_staleness_seen,
        worker_updates: state.update_counts.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_least_squares, make_quadratic, partition_data, PartitionStrategy};
    use crate::topology::build_ring;

    /// f(x) = x^2 / 2 as a single least-squares block.
    fn half_square() -> Problem {
        make_least_squares(vec![(
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_vec(vec![0.0]),
        )])
        .unwrap()
    }

    fn ctx<'a>(
        algorithm: Algorithm,
        problem: &'a Problem,
        partition: &'a DataPartition,
        graph: &'a TopologyGraph,
        policy: &'a SelectionPolicy,
        gamma: f64,
        iterations: u64,
    ) -> RunContext<'a> {
        RunContext {
            algorithm,
            problem,
            partition,
            graph,
            policy,
            gamma,
            batch_size: 1,
            staleness: StalenessMode::Zero,
            iterations,
            record_every: 1,
            init: DVector::zeros(problem.dimension()),
            track_avg_grad: false,
        }
    }

    #[test]
    fn adpsgd_single_worker_is_plain_sgd_step() {
        let problem = half_square();
        let graph = TopologyGraph::single();
        let policy = SelectionPolicy::uniform(&graph).unwrap();
        let partition = partition_data(&problem, &[1.0], PartitionStrategy::Shared, 0).unwrap();
        let mut c = ctx(Algorithm::Adpsgd, &problem, &partition, &graph, &policy, 0.1, 1);
        c.init = DVector::from_vec(vec![1.0]);
        let mut state = AlgoState::new(&c.init, 1, StalenessMode::Zero, 7);
        adpsgd_logical_step(&mut state, &c).unwrap();
        assert!((state.models.column(0)[0] - 0.9).abs() < 1e-15);
        assert_eq!(state.k, 1);
    }

    #[test]
    fn adpsgd_hand_trace_two_workers() {
        // Models (1, 3), pair (0, 1) with i_k = 0, tau = 0, gamma = 0.1:
        // averaging puts both at 2; gradient at the pre-averaging read 1 is 1;
        // result (1.9, 2.0).
        let problem = half_square();
        let graph = build_ring(2).unwrap();
        let policy = SelectionPolicy::uniform(&graph).unwrap();
        let partition =
            partition_data(&problem, &[0.5, 0.5], PartitionStrategy::Shared, 0).unwrap();
        let c = ctx(Algorithm::Adpsgd, &problem, &partition, &graph, &policy, 0.1, 1);
        let mut state = AlgoState::new(&DVector::from_vec(vec![1.0]), 2, StalenessMode::Zero, 7);
        let mut models = state.models.clone();
        models.column_mut(1)[0] = 3.0;
        state.set_models(models);
        adpsgd_apply(&mut state, &c, Some((0, 1)), 0).unwrap();
        assert!((state.models.column(0)[0] - 1.9).abs() < 1e-15);
        assert!((state.models.column(1)[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn adpsgd_zero_gradient_only_mixes() {
        // At the optimum the gradient vanishes: columns mix, mean unchanged.
        let problem = make_quadratic(2, 1.0, 1, 0.0, 0).unwrap();
        let graph = build_ring(2).unwrap();
        let policy = SelectionPolicy::uniform(&graph).unwrap();
        let partition =
            partition_data(&problem, &[0.5, 0.5], PartitionStrategy::Shared, 0).unwrap();
        let c = ctx(Algorithm::Adpsgd, &problem, &partition, &graph, &policy, 0.1, 1);
        let opt = problem.optimum().unwrap().clone();
        let mut state = AlgoState::new(&opt, 2, StalenessMode::Zero, 3);
        let before = state.models.mean_column();
        adpsgd_apply(&mut state, &c, Some((1, 0)), 0).unwrap();
        let after = state.models.mean_column();
        assert!((before - after).norm() < 1e-14);
    }

    #[test]
    fn dpsgd_hand_trace_two_workers() {
        // Models (1, 3): W_sync for the 2-ring is the pair average; gradients
        // at the pre-mix models are (1, 3); result (1.9, 1.7).
        let problem = half_square();
        let graph = build_ring(2).unwrap();
        let policy = SelectionPolicy::uniform(&graph).unwrap();
        let partition =
            partition_data(&problem, &[0.5, 0.5], PartitionStrategy::Shared, 0).unwrap();
        let c = ctx(Algorithm::Dpsgd, &problem, &partition, &graph, &policy, 0.1, 2);
        let w = dpsgd_mixing_matrix(&graph);
        assert!((w[(0, 0)] - 0.5).abs() < 1e-15);
        let mut state = AlgoState::new(&DVector::from_vec(vec![1.0]), 2, StalenessMode::Zero, 7);
        let mut models = state.models.clone();
        models.column_mut(1)[0] = 3.0;
        state.set_models(models);
        dpsgd_step(&mut state, &c, &w).unwrap();
        assert!((state.models.column(0)[0] - 1.9).abs() < 1e-15);
        assert!((state.models.column(1)[0] - 1.7).abs() < 1e-15);
        assert_eq!(state.k, 2);
    }

    #[test]
    fn dpsgd_pure_mixing_contracts_spread() {
        // Zero gradients on the 4-ring: spread contracts by about |lambda_2| = 1/3.
        let problem = make_quadratic(1, 1.0, 1, 0.0, 0).unwrap();
        let graph = build_ring(4).unwrap();
        let policy = SelectionPolicy::uniform(&graph).unwrap();
        let partition =
            partition_data(&problem, &[0.25; 4], PartitionStrategy::Shared, 0).unwrap();
        let mut c = ctx(Algorithm::Dpsgd, &problem, &partition, &graph, &policy, 1.0, 0);
        c.gamma = 1e-300; // effectively zero gradient influence at the optimum
        let w = dpsgd_mixing_matrix(&graph);
        let opt = problem.optimum().unwrap().clone();
        let mut state = AlgoState::new(&opt, 4, StalenessMode::Zero, 1);
        let mut models = state.models.clone();
        for (i, off) in [1.0, -1.0, 2.0, -2.0].iter().enumerate() {
            models.column_mut(i)[0] += off;
        }
        state.set_models(models);
        let mut prev = state.models.spread();
        for _ in 0..6 {
            dpsgd_step(&mut state, &c, &w).unwrap();
            let cur = state.models.spread();
            assert!(cur <= prev * 0.67 + 1e-12, "spread {cur} vs {prev}");
            prev = cur;
        }
    }

    #[test]
    fn allreduce_hand_trace() {
        // Both at x = 2 on f = x^2/2: grads (2, 2), average 2, x' = 1.8.
        let problem = half_square();
        let graph = build_ring(2).unwrap();
        let policy = SelectionPolicy::uniform(&graph).unwrap();
        let partition =
            partition_data(&problem, &[0.5, 0.5], PartitionStrategy::Shared, 0).unwrap();
        let c = ctx(Algorithm::Allreduce, &problem, &partition, &graph, &policy, 0.1, 2);
        let mut state = AlgoState::new(&DVector::from_vec(vec![2.0]), 2, StalenessMode::Zero, 7);
        allreduce_step(&mut state, &c).unwrap();
        assert!((state.models.column(0)[0] - 1.8).abs() < 1e-15);
        assert_eq!(state.models.spread(), 0.0);
        assert_eq!(state.k, 2);
    }

    #[test]
    fn allreduce_detects_drift() {
        let problem = half_square();
        let graph = build_ring(2).unwrap();
        let policy = SelectionPolicy::uniform(&graph).unwrap();
        let partition =
            partition_data(&problem, &[0.5, 0.5], PartitionStrategy::Shared, 0).unwrap();
        let c = ctx(Algorithm::Allreduce, &problem, &partition, &graph, &policy, 0.1, 2);
        let mut state = AlgoState::new(&DVector::from_vec(vec![2.0]), 2, StalenessMode::Zero, 7);
        let mut models = state.models.clone();
        models.column_mut(1)[0] = 2.1;
        state.set_models(models);
        assert!(matches!(
            allreduce_step(&mut state, &c),
            Err(AlgoError::Drift { .. })
        ));
    }

    #[test]
    fn apsgd_fixed_staleness_hand_trace() {
        // Deterministic scalar quadratic, fixed tau = 2, gamma = 0.1, x0 = 1
        // on f = x^2/2; gradient read at snapshot x_{k - min(k,2)}:
        //   x1 = x0 - 0.1 x0 = 0.9
        //   x2 = x1 - 0.1 x0 = 0.8
        //   x3 = x2 - 0.1 x0 = 0.7
        //   x4 = x3 - 0.1 x1 = 0.61
        //   x5 = x4 - 0.1 x2 = 0.53
        let problem = half_square();
        let graph = TopologyGraph::single();
        let policy = SelectionPolicy::uniform(&graph).unwrap();
        let partition = partition_data(&problem, &[1.0], PartitionStrategy::Shared, 0).unwrap();
        let mut c = ctx(Algorithm::Apsgd, &problem, &partition, &graph, &policy, 0.1, 5);
        c.staleness = StalenessMode::Fixed(2);
        c.init = DVector::from_vec(vec![1.0]);
        let mut state = AlgoState::new(&c.init, 1, c.staleness, 5);
        let expect = [0.9, 0.8, 0.7, 0.61, 0.53];
        for e in expect {
            apsgd_step(&mut state, &c).unwrap();
            assert!(
                (state.models.column(0)[0] - e).abs() < 1e-12,
                "got {} want {e}",
                state.models.column(0)[0]
            );
        }
        assert_eq!(state.max_staleness_seen, 2);
    }

    #[test]
    fn apsgd_zero_staleness_matches_sgd() {
        let problem = make_quadratic(3, 4.0, 8, 0.5, 3).unwrap();
        let graph = TopologyGraph::single();
        let policy = SelectionPolicy::uniform(&graph).unwrap();
        let partition = partition_data(&problem, &[1.0], PartitionStrategy::Shared, 0).unwrap();
        let ca = ctx(Algorithm::Apsgd, &problem, &partition, &graph, &policy, 0.05, 50);
        let cs = ctx(Algorithm::Sgd, &problem, &partition, &graph, &policy, 0.05, 50);
        let a = run_logical(&ca, 11).unwrap();
        let s = run_logical(&cs, 11).unwrap();
        assert_eq!(a.final_loss.to_bits(), s.final_loss.to_bits());
    }

    #[test]
    fn sgd_closed_form_halving() {
        // gamma = 0.5 on 0.5 (x-1)^2 from x0 = 0: x_k = 1 - 0.5^k exactly.
        let problem = make_quadratic(1, 1.0, 1, 0.0, 0).unwrap();
        let graph = TopologyGraph::single();
        let policy = SelectionPolicy::uniform(&graph).unwrap();
        let partition = partition_data(&problem, &[1.0], PartitionStrategy::Shared, 0).unwrap();
        let c = ctx(Algorithm::Sgd, &problem, &partition, &graph, &policy, 0.5, 10);
        let series = run_logical(&c, 0).unwrap();
        for r in &series.records {
            let expect_x = 1.0 - 0.5_f64.powi(r.k as i32);
            let expect_loss = 0.5 * (expect_x - 1.0) * (expect_x - 1.0);
            assert_eq!(r.loss_avg.to_bits(), expect_loss.to_bits());
        }
    }

    #[test]
    fn run_k_zero_initial_record_only() {
        let problem = half_square();
        let graph = TopologyGraph::single();
        let policy = SelectionPolicy::uniform(&graph).unwrap();
        let partition = partition_data(&problem, &[1.0], PartitionStrategy::Shared, 0).unwrap();
        let c = ctx(Algorithm::Sgd, &problem, &partition, &graph, &policy, 0.1, 0);
        let series = run_logical(&c, 0).unwrap();
        assert_eq!(series.records.len(), 1);
        assert_eq!(series.records[0].k, 0);
    }

    #[test]
    fn divergence_reported_with_iteration() {
        let problem = half_square();
        let graph = TopologyGraph::single();
        let policy = SelectionPolicy::uniform(&graph).unwrap();
        let partition = partition_data(&problem, &[1.0], PartitionStrategy::Shared, 0).unwrap();
        // gamma far above 2/L on x^2/2 diverges geometrically to overflow.
        let mut c = ctx(Algorithm::Sgd, &problem, &partition, &graph, &policy, 1e300, 2000);
        c.init = DVector::from_vec(vec![1.0]);
        let err = run_logical(&c, 0).unwrap_err();
        assert!(matches!(err, AlgoError::Divergence { iteration } if iteration > 0));
    }

    #[test]
    fn average_pair_equals_matrix_multiply_bitwise() {
        // The in-place pair average used by the hot loop and the literal
        // X * W product agree bit for bit: rounding commutes with the exact
        // halving, so both routes land on the same floats.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let n = rng.gen_range(2..9);
            let dim = rng.gen_range(1..7);
            let i = rng.gen_range(0..n);
            let j = (i + rng.gen_range(1..n)) % n;
            let data = DMatrix::<f64>::from_fn(dim, n, |_, _| rng.gen_range(-1e6..1e6));
            let mut inplace = ModelMatrix {
                data: data.clone(),
            };
            inplace.average_pair(i, j);
            let w = crate::topology::pair_averaging_matrix(i, j, n).unwrap();
            let product = &data * w.entries();
            for r in 0..dim {
                for c in 0..n {
                    assert_eq!(
                        inplace.data[(r, c)].to_bits(),
                        product[(r, c)].to_bits(),
                        "mismatch at ({r},{c}) for pair ({i},{j})"
                    );
                }
            }
        }
    }

    #[test]
    fn mean_evolution_is_exactly_gradient_shift() {
        // Across one AD-PSGD step, X 1_n changes by exactly -gamma g.
        let problem = make_quadratic(4, 3.0, 6, 1.0, 9).unwrap();
        let graph = build_ring(4).unwrap();
        let policy = SelectionPolicy::uniform(&graph).unwrap();
        let partition =
            partition_data(&problem, &[0.25; 4], PartitionStrategy::Shared, 0).unwrap();
        let c = ctx(Algorithm::Adpsgd, &problem, &partition, &graph, &policy, 0.05, 1);
        let mut state = AlgoState::new(&DVector::from_element(4, 0.3), 4, StalenessMode::Zero, 21);
        let mut models = state.models.clone();
        for i in 0..4 {
            models.column_mut(i)[0] += i as f64;
        }
        state.set_models(models);

        // Replay the coming gradient draw on a cloned stream.
        let mut probe_rng = state.data_rng.clone();
        let before = state.models.column_sum();
        let pair = Some((2, 1));
        let stale = state.models.column(2);
        let expected_g =
            sample_gradient(&problem, &partition, 2, &stale, 1, &mut probe_rng).unwrap();
        adpsgd_apply(&mut state, &c, pair, 0).unwrap();
        let after = state.models.column_sum();
        let shift = before - after - c.gamma * expected_g;
        // Averaging contributes only the rounding of (a+b)/2 pairs.
        assert!(shift.amax() < 1e-12, "shift {}", shift.amax());
    }
}
