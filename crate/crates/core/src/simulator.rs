//! Discrete-event simulation of wall-clock training behavior.
//!
//! Each worker runs two logical threads over a shared one-slot gradient
//! buffer. The compute thread pulls the local model (optionally compensating
//! for a not-yet-flushed buffered gradient), samples a batch, and deposits
//! the finished gradient after `compute_time x slowdown`. The communication
//! thread flushes the buffer into the model (this is the global gradient
//! update that advances `k`), and on active workers follows each flush with
//! one averaging exchange against a uniformly chosen passive neighbor taking
//! `link_time x slowdown`. Passive workers serve exchange requests one at a
//! time, FIFO. Both endpoint models are set to their average atomically at
//! the averaging-complete event.
//!
//! The communication loop is paced by gradient deposits: an active worker
//! with an empty buffer waits for its compute thread instead of gossiping
//! idle, which keeps zero-latency links from generating unbounded exchange
//! events. Emergent staleness is the number of global updates between a
//! gradient's model read and its buffer flush.
//!
//! Everything is physically single-threaded: events are processed in
//! `(time, sequence)` order and all state lives in the event loop, so a
//! `(config, seed)` pair reproduces its event trace byte for byte.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::algorithms::{
    allreduce_step, dpsgd_mixing_matrix, dpsgd_step, AlgoError, AlgoState, Algorithm, ModelMatrix,
    RunContext, StalenessMode,
};
use crate::harness::metrics::{
    consensus_mk, objective_gradient, objective_loss, write_atomic, MetricsRecord, MetricsSeries,
};
use crate::problems::{sample_gradient, DataPartition, Problem};
use crate::topology::{SelectionPolicy, TopologyGraph};

const STREAM_SIM_SELECT: u64 = 8;
const STREAM_SIM_DATA_BASE: u64 = 16;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("deadlock-free mode requires a bipartite worker partition; use serialized-atomic mode for this topology")]
    NoPartition,
    #[error("wait cycle detected: {0}")]
    Deadlock(String),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Algo(#[from] AlgoError),
}

/// Per-worker compute costs, per-edge link costs, and slowdown windows.
#[derive(Debug, Clone)]
pub struct SpeedModel {
    /// Seconds per gradient batch, one entry per worker.
    pub compute_time: Vec<f64>,
    /// Seconds per model exchange (uniform base; zero means negligible).
    pub link_time: f64,
    /// Per-edge overrides of the base link time.
    pub link_overrides: Vec<(usize, usize, f64)>,
    pub slowdowns: Vec<SlowdownEvent>,
    /// AllReduce per-round synchronization cost `alpha * n + beta * model_dim`.
    pub allreduce_alpha: f64,
    pub allreduce_beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SlowTarget {
    Worker(usize),
    Edge(usize, usize),
}

/// Multiplies the base cost by `factor` while `start <= t < end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlowdownEvent {
    pub target: SlowTarget,
    pub factor: f64,
    pub start: f64,
    pub end: f64,
}

impl SpeedModel {
    pub fn homogeneous(workers: usize, compute_time: f64, link_time: f64) -> Self {
        Self {
            compute_time: vec![compute_time; workers],
            link_time,
            link_overrides: Vec::new(),
            slowdowns: Vec::new(),
            allreduce_alpha: 0.0,
            allreduce_beta: 0.0,
        }
    }

    pub fn validate(&self, workers: usize) -> Result<(), SimError> {
        if self.compute_time.len() != workers {
            return Err(SimError::InvalidConfig(format!(
                "{} compute times for {workers} workers",
                self.compute_time.len()
            )));
        }
        if self.compute_time.iter().any(|&c| !(c > 0.0)) {
            return Err(SimError::InvalidConfig("compute times must be > 0".into()));
        }
        if !(self.link_time >= 0.0) {
            return Err(SimError::InvalidConfig("link time must be >= 0".into()));
        }
        for s in &self.slowdowns {
            if !(s.factor >= 1.0) {
                return Err(SimError::InvalidConfig(format!(
                    "slowdown factor {} must be >= 1",
                    s.factor
                )));
            }
        }
        Ok(())
    }

    pub fn compute_at(&self, worker: usize, t: f64) -> f64 {
        let mut c = self.compute_time[worker];
        for s in &self.slowdowns {
            if let SlowTarget::Worker(w) = s.target {
                if w == worker && t >= s.start && t < s.end {
                    c *= s.factor;
                }
            }
        }
        c
    }

    pub fn link_at(&self, a: usize, b: usize, t: f64) -> f64 {
        let (lo, hi) = (a.min(b), a.max(b));
        let mut l = self
            .link_overrides
            .iter()
            .find(|&&(x, y, _)| (x.min(y), x.max(y)) == (lo, hi))
            .map(|&(_, _, v)| v)
            .unwrap_or(self.link_time);
        for s in &self.slowdowns {
            if let SlowTarget::Edge(x, y) = s.target {
                if (x.min(y), x.max(y)) == (lo, hi) && t >= s.start && t < s.end {
                    l *= s.factor;
                }
            }
        }
        l
    }
}

/// How averaging handshakes are arbitrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExchangeMode {
    /// Active workers request, passive workers serve FIFO; requires a
    /// bipartite partition (handshakes cannot form a wait cycle).
    DeadlockFree,
    /// The event loop applies each exchange atomically; no roles, any
    /// topology. The fallback for non-bipartite graphs.
    SerializedAtomic,
}

/// Resolved inputs for an event-driven run.
pub struct SimContext<'a> {
    pub problem: &'a Problem,
    pub partition: &'a DataPartition,
    pub graph: &'a TopologyGraph,
    pub policy: &'a SelectionPolicy,
    pub speed: &'a SpeedModel,
    pub gamma: f64,
    pub batch_size: usize,
    /// Stop once this much simulated time has elapsed.
    pub horizon: f64,
    /// Stop once this many gradient updates have been applied.
    pub max_iterations: u64,
    pub record_every: u64,
    pub init: DVector<f64>,
    pub mode: ExchangeMode,
    /// Compute thread applies `x - gamma g` locally when it pulls a model
    /// while a gradient is still buffered.
    pub local_compensation: bool,
    /// Assert exchange atomicity and flush-only sum changes at every event.
    pub validate_invariants: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EventKind {
    GradientReady { worker: usize },
    AveragingRequest { active: usize, passive: usize },
    AveragingComplete { active: usize, passive: usize },
    BufferFlush { worker: usize, k: u64, staleness: u64 },
}

/// One trace entry; `seq` is unique and assigns a total order to ties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimEvent {
    pub time: f64,
    pub seq: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventTrace {
    pub events: Vec<SimEvent>,
}

impl EventTrace {
    /// JSON-lines rendering, one event per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serialization cannot fail"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }

    pub fn flush_staleness(&self) -> impl Iterator<Item = u64> + '_ {
        self.events.iter().filter_map(|e| match e.kind {
            EventKind::BufferFlush { staleness, .. } => Some(staleness),
            _ => None,
        })
    }
}

/// Staleness summary of a trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StalenessProfile {
    pub max: u64,
    pub mean: f64,
    /// `histogram[tau]` = number of flushes with that staleness.
    pub histogram: Vec<u64>,
    pub flushes: u64,
}

/// Computes the staleness distribution from a trace's flush events.
pub fn staleness_profile(trace: &EventTrace) -> StalenessProfile {
    let mut max = 0u64;
    let mut sum = 0u64;
    let mut count = 0u64;
    let mut histogram: Vec<u64> = Vec::new();
    for tau in trace.flush_staleness() {
        max = max.max(tau);
        sum += tau;
        count += 1;
        if histogram.len() <= tau as usize {
            histogram.resize(tau as usize + 1, 0);
        }
        histogram[tau as usize] += 1;
    }
    StalenessProfile {
        max,
        mean: if count > 0 {
            sum as f64 / count as f64
        } else {
            0.0
        },
        histogram,
        flushes: count,
    }
}

impl StalenessProfile {
    pub fn within_cap(&self, cap: u64) -> bool {
        self.max <= cap
    }
}

/// A deposited gradient waiting for the communication thread.
struct PendingGrad {
    grad: DVector<f64>,
    read_k: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CommState {
    /// Waiting for a deposit (active) or for requests (passive).
    Idle,
    /// Active: exchange in flight. Passive: serving an exchange.
    Busy,
}

struct WorkerSim {
    model: DVector<f64>,
    buffer: Option<PendingGrad>,
    /// Gradient finished while the buffer was still occupied.
    overflow: Option<PendingGrad>,
    /// In-flight compute result, delivered by the next GradientReady.
    inflight: Option<PendingGrad>,
    active: bool,
    comm: CommState,
    queue: VecDeque<usize>,
    update_count: u64,
    data_rng: ChaCha8Rng,
}

#[derive(Debug, Clone, Copy)]
enum Action {
    GradientReady(usize),
    AveragingRequest { active: usize, passive: usize },
    AveragingComplete { active: usize, passive: usize },
}

struct Scheduled {
    time: f64,
    seq: u64,
    action: Action,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.seq.cmp(&other.seq))
    }
}

struct Sim<'a> {
    ctx: &'a SimContext<'a>,
    workers: Vec<WorkerSim>,
    heap: BinaryHeap<Reverse<Scheduled>>,
    seq: u64,
    k: u64,
    time: f64,
    max_staleness: u64,
    select_rng: ChaCha8Rng,
    trace: EventTrace,
    records: Vec<MetricsRecord>,
    next_record: u64,
    /// Running model-sum, updated only at flushes; checked at exchanges.
    checksum: Option<DVector<f64>>,
}

impl<'a> Sim<'a> {
    fn new(ctx: &'a SimContext<'a>, seed: u64) -> Result<Self, SimError> {
        let n = ctx.graph.n();
        ctx.speed.validate(n)?;
        if ctx.batch_size == 0 || !(ctx.gamma > 0.0) {
            return Err(SimError::InvalidConfig(
                "batch_size must be >= 1 and gamma > 0".into(),
            ));
        }
        if ctx.mode == ExchangeMode::DeadlockFree && ctx.graph.partition().is_none() {
            return Err(SimError::NoPartition);
        }
        let active_of = |i: usize| -> bool {
            match ctx.mode {
                ExchangeMode::SerializedAtomic => true,
                ExchangeMode::DeadlockFree => ctx.graph.is_active(i).unwrap_or(false),
            }
        };
        let workers = (0..n)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(STREAM_SIM_DATA_BASE + i as u64);
                WorkerSim {
                    model: ctx.init.clone(),
                    buffer: None,
                    overflow: None,
                    inflight: None,
                    active: active_of(i),
                    comm: CommState::Idle,
                    queue: VecDeque::new(),
                    update_count: 0,
                    data_rng: rng,
                }
            })
            .collect();
        let mut select_rng = ChaCha8Rng::seed_from_u64(seed);
        select_rng.set_stream(STREAM_SIM_SELECT);
        let checksum = if ctx.validate_invariants {
            let mut sum = DVector::zeros(ctx.init.len());
            for _ in 0..n {
                sum += &ctx.init;
            }
            Some(sum)
        } else {
            None
        };
        Ok(Self {
            ctx,
            workers,
            heap: BinaryHeap::new(),
            seq: 0,
            k: 0,
            time: 0.0,
            max_staleness: 0,
            select_rng,
            trace: EventTrace::default(),
            records: Vec::new(),
            next_record: ctx.record_every.max(1),
            checksum,
        })
    }

    fn schedule(&mut self, time: f64, action: Action) {
        self.seq += 1;
        self.heap.push(Reverse(Scheduled {
            time,
            seq: self.seq,
            action,
        }));
    }

    fn emit(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.trace.events.push(SimEvent {
            time,
            seq: self.seq,
            kind,
        });
    }

    fn model_matrix(&self) -> ModelMatrix {
        let mut m =
            ModelMatrix::from_init(&DVector::zeros(self.ctx.init.len()), self.workers.len());
        for (i, w) in self.workers.iter().enumerate() {
            m.column_mut(i).copy_from(&w.model);
        }
        m
    }

    fn record_metrics(&mut self, time: f64) {
        let models = self.model_matrix();
        let mean = models.mean_column();
        self.records.push(MetricsRecord {
            k: self.k,
            simulated_time: time,
            loss_avg: objective_loss(self.ctx.problem, self.ctx.partition, &mean),
            grad_norm_sq_avg: objective_gradient(self.ctx.problem, self.ctx.partition, &mean)
                .norm_squared(),
            consensus_mk: consensus_mk(&models, self.ctx.policy.worker_weights()),
            max_staleness_so_far: self.max_staleness.min(u32::MAX as u64) as u32,
            worker_updates: self.workers.iter().map(|w| w.update_count).collect(),
        });
    }

    /// Compute thread pulls the model and begins a batch; the gradient value
    /// is fixed here (the read), its delivery is the GradientReady event.
    fn start_compute(&mut self, w: usize, t: f64) -> Result<(), SimError> {
        let read_k = self.k;
        let mut model = self.workers[w].model.clone();
        if self.ctx.local_compensation {
            if let Some(pg) = &self.workers[w].buffer {
                model.axpy(-self.ctx.gamma, &pg.grad, 1.0);
            }
        }
        let grad = {
            let worker = &mut self.workers[w];
            sample_gradient(
                self.ctx.problem,
                self.ctx.partition,
                w,
                &model,
                self.ctx.batch_size,
                &mut worker.data_rng,
            )
            .map_err(AlgoError::from)?
        };
        self.workers[w].inflight = Some(PendingGrad { grad, read_k });
        let dur = self.ctx.speed.compute_at(w, t);
        self.schedule(t + dur, Action::GradientReady(w));
        Ok(())
    }

    fn on_gradient_ready(&mut self, w: usize, t: f64) -> Result<(), SimError> {
        self.emit(t, EventKind::GradientReady { worker: w });
        let pg = self.workers[w]
            .inflight
            .take()
            .expect("gradient-ready without an in-flight gradient");
        if self.workers[w].buffer.is_none() {
            self.workers[w].buffer = Some(pg);
            if self.workers[w].comm == CommState::Idle {
                self.flush(w, t)?;
            }
            // Buffer slot resolved; next batch starts immediately.
            self.start_compute(w, t)?;
        } else {
            // "Block until g = 0": hold the result, restart at the next flush.
            self.workers[w].overflow = Some(pg);
        }
        Ok(())
    }

    /// Communication thread folds the buffered gradient into the model; this
    /// is the global update that advances `k`.
    fn flush(&mut self, w: usize, t: f64) -> Result<(), SimError> {
        let Some(pg) = self.workers[w].buffer.take() else {
            return Ok(());
        };
        let tau = self.k - pg.read_k;
        self.max_staleness = self.max_staleness.max(tau);
        {
            let worker = &mut self.workers[w];
            worker.model.axpy(-self.ctx.gamma, &pg.grad, 1.0);
            worker.update_count += 1;
        }
        if let Some(sum) = &mut self.checksum {
            sum.axpy(-self.ctx.gamma, &pg.grad, 1.0);
        }
        self.k += 1;
        self.emit(
            t,
            EventKind::BufferFlush {
                worker: w,
                k: self.k,
                staleness: tau,
            },
        );
        if !self.workers[w].model.iter().all(|v| v.is_finite()) {
            return Err(AlgoError::Divergence { iteration: self.k }.into());
        }
        if self.k >= self.next_record {
            self.record_metrics(t);
            let every = self.ctx.record_every.max(1);
            self.next_record = (self.k / every + 1) * every;
        }
        self.continue_comm(w, t)?;
        // Unblock a waiting compute thread.
        if self.workers[w].buffer.is_none() {
            if let Some(pg) = self.workers[w].overflow.take() {
                self.workers[w].buffer = Some(pg);
                if self.workers[w].comm == CommState::Idle {
                    self.flush(w, t)?;
                }
                self.start_compute(w, t)?;
            }
        }
        Ok(())
    }

    /// Active comm loop: after a flush, line up the next exchange.
    fn continue_comm(&mut self, w: usize, t: f64) -> Result<(), SimError> {
        if !self.workers[w].active {
            return Ok(());
        }
        let nbrs = self.ctx.graph.neighbors(w);
        if nbrs.is_empty() {
            return Ok(());
        }
        let partner = nbrs[self.select_rng.gen_range(0..nbrs.len())];
        self.workers[w].comm = CommState::Busy;
        self.schedule(
            t,
            Action::AveragingRequest {
                active: w,
                passive: partner,
            },
        );
        Ok(())
    }

    fn on_request(&mut self, active: usize, passive: usize, t: f64) {
        self.emit(t, EventKind::AveragingRequest { active, passive });
        let dur = self.ctx.speed.link_at(active, passive, t);
        match self.ctx.mode {
            ExchangeMode::SerializedAtomic => {
                self.schedule(t + dur, Action::AveragingComplete { active, passive });
            }
            ExchangeMode::DeadlockFree => {
                if self.workers[passive].comm == CommState::Idle {
                    self.workers[passive].comm = CommState::Busy;
                    self.schedule(t + dur, Action::AveragingComplete { active, passive });
                } else {
                    self.workers[passive].queue.push_back(active);
                }
            }
        }
    }

    fn on_complete(&mut self, active: usize, passive: usize, t: f64) -> Result<(), SimError> {
        self.emit(t, EventKind::AveragingComplete { active, passive });
        // Atomic pairwise average.
        let dim = self.ctx.init.len();
        for r in 0..dim {
            let a = self.workers[active].model[r];
            let b = self.workers[passive].model[r];
            let avg = (a + b) * 0.5;
            if self.checksum.is_some() {
                // Halving and doubling are exact in binary, so averaging
                // preserves the pair sum (and the global sum) bit for bit.
                assert_eq!(
                    2.0 * avg,
                    a + b,
                    "averaging changed the pair sum at coordinate {r}"
                );
            }
            self.workers[active].model[r] = avg;
            self.workers[passive].model[r] = avg;
        }
        if self.checksum.is_some() {
            assert_eq!(
                self.workers[active].model, self.workers[passive].model,
                "endpoints unequal after averaging-complete"
            );
        }

        // Active side: flush any gradient deposited during the exchange and
        // line up the next one; otherwise wait for the compute thread.
        self.workers[active].comm = CommState::Idle;
        if self.workers[active].buffer.is_some() {
            self.flush(active, t)?;
        }

        if self.ctx.mode == ExchangeMode::DeadlockFree {
            // Passive side: opportunistic flush, then serve the next request.
            self.workers[passive].comm = CommState::Idle;
            if self.workers[passive].buffer.is_some() {
                self.flush(passive, t)?;
            }
            if let Some(next_active) = self.workers[passive].queue.pop_front() {
                self.workers[passive].comm = CommState::Busy;
                let dur = self.ctx.speed.link_at(next_active, passive, t);
                self.schedule(
                    t + dur,
                    Action::AveragingComplete {
                        active: next_active,
                        passive,
                    },
                );
            }
            // Unblock the passive compute thread if its slot just freed up.
            if self.workers[passive].buffer.is_none() {
                if let Some(pg) = self.workers[passive].overflow.take() {
                    self.workers[passive].buffer = Some(pg);
                    if self.workers[passive].comm == CommState::Idle {
                        self.flush(passive, t)?;
                    }
                    self.start_compute(passive, t)?;
                }
            }
        }
        Ok(())
    }

    fn run(mut self) -> Result<(MetricsSeries, EventTrace), SimError> {
        self.record_metrics(0.0);
        for w in 0..self.workers.len() {
            self.start_compute(w, 0.0)?;
        }
        while self.k < self.ctx.max_iterations {
            let Some(Reverse(ev)) = self.heap.pop() else {
                let states: Vec<String> = self
                    .workers
                    .iter()
                    .enumerate()
                    .map(|(i, w)| {
                        format!(
                            "worker {i}: comm {:?}, buffered {}, overflow {}, queue {:?}",
                            w.comm,
                            w.buffer.is_some(),
                            w.overflow.is_some(),
                            w.queue
                        )
                    })
                    .collect();
                return Err(SimError::Deadlock(format!(
                    "no runnable event at t = {}, k = {}; {}",
                    self.time,
                    self.k,
                    states.join("; ")
                )));
            };
            if ev.time > self.ctx.horizon {
                break;
            }
            self.time = ev.time;
            match ev.action {
                Action::GradientReady(w) => self.on_gradient_ready(w, ev.time)?,
                Action::AveragingRequest { active, passive } => {
                    self.on_request(active, passive, ev.time)
                }
                Action::AveragingComplete { active, passive } => {
                    self.on_complete(active, passive, ev.time)?
                }
            }
        }

        if let Some(sum) = &self.checksum {
            let direct = self.model_matrix().column_sum();
            let drift = (sum - &direct).amax();
            assert!(
                drift <= 1e-9 * (1.0 + direct.amax()),
                "model sum drifted outside flush updates: {drift}"
            );
        }

        let end = self.time.min(self.ctx.horizon);
        if self.records.last().map(|r| r.k) != Some(self.k) {
            self.record_metrics(end);
        }
        let models = self.model_matrix();
        let mean = models.mean_column();
        Ok((
            MetricsSeries {
                records: self.records,
                final_loss: objective_loss(self.ctx.problem, self.ctx.partition, &mean),
                final_grad_norm_sq: objective_gradient(
                    self.ctx.problem,
                    self.ctx.partition,
                    &mean,
                )
                .norm_squared(),
                avg_grad_norm_sq: None,
                max_staleness: self.max_staleness.min(u32::MAX as u64) as u32,
            },
            self.trace,
        ))
    }
}

/// Event-driven AD-PSGD run under the wait-free two-thread protocol.
pub fn simulate(ctx: &SimContext<'_>, seed: u64) -> Result<(MetricsSeries, EventTrace), SimError> {
    Sim::new(ctx, seed)?.run()
}

/// Round-based wall-clock model for the synchronous baselines.
///
/// Every round costs `max_i compute_i x slowdown` plus a synchronization
/// term: `alpha n + beta model_dim` for AllReduce, the slowest neighbor
/// exchange for D-PSGD. Model updates reuse the logical round steps.
pub fn simulate_synchronous(
    ctx: &SimContext<'_>,
    algorithm: Algorithm,
    seed: u64,
) -> Result<(MetricsSeries, EventTrace), SimError> {
    if !matches!(algorithm, Algorithm::Allreduce | Algorithm::Dpsgd) {
        return Err(SimError::InvalidConfig(format!(
            "synchronous simulation supports allreduce and dpsgd, got {algorithm:?}"
        )));
    }
    let n = ctx.graph.n();
    ctx.speed.validate(n)?;
    let run_ctx = RunContext {
        algorithm,
        problem: ctx.problem,
        partition: ctx.partition,
        graph: ctx.graph,
        policy: ctx.policy,
        gamma: ctx.gamma,
        batch_size: ctx.batch_size,
        staleness: StalenessMode::Zero,
        iterations: ctx.max_iterations,
        record_every: ctx.record_every,
        init: ctx.init.clone(),
        track_avg_grad: false,
    };
    let mut state = AlgoState::new(&ctx.init, n, StalenessMode::Zero, seed);
    let w_sync = dpsgd_mixing_matrix(ctx.graph);

    let mut trace = EventTrace::default();
    let mut seq = 0u64;
    let mut records = Vec::new();
    let mut time = 0.0f64;
    let every = ctx.record_every.max(1);
    let mut next_record = every;

    let record =
        |state: &AlgoState, time: f64, records: &mut Vec<MetricsRecord>, ctx: &SimContext<'_>| {
            let mean = state.models.mean_column();
            records.push(MetricsRecord {
                k: state.k,
                simulated_time: time,
                loss_avg: objective_loss(ctx.problem, ctx.partition, &mean),
                grad_norm_sq_avg: objective_gradient(ctx.problem, ctx.partition, &mean)
                    .norm_squared(),
                consensus_mk: consensus_mk(&state.models, ctx.policy.worker_weights()),
                max_staleness_so_far: 0,
                worker_updates: state.update_counts.clone(),
            });
        };
    record(&state, 0.0, &mut records, ctx);

    while state.k < ctx.max_iterations && time < ctx.horizon {
        let round_compute = (0..n)
            .map(|w| ctx.speed.compute_at(w, time))
            .fold(0.0f64, f64::max);
        let sync = match algorithm {
            Algorithm::Allreduce => {
                ctx.speed.allreduce_alpha * n as f64
                    + ctx.speed.allreduce_beta * ctx.init.len() as f64
            }
            Algorithm::Dpsgd => ctx
                .graph
                .edges()
                .map(|(a, b)| ctx.speed.link_at(a, b, time))
                .fold(0.0f64, f64::max),
            _ => unreachable!(),
        };
        for w in 0..n {
            seq += 1;
            trace.events.push(SimEvent {
                time: time + ctx.speed.compute_at(w, time),
                seq,
                kind: EventKind::GradientReady { worker: w },
            });
        }
        match algorithm {
            Algorithm::Allreduce => allreduce_step(&mut state, &run_ctx)?,
            Algorithm::Dpsgd => dpsgd_step(&mut state, &run_ctx, &w_sync)?,
            _ => unreachable!(),
        }
        time += round_compute + sync;
        for w in 0..n {
            seq += 1;
            trace.events.push(SimEvent {
                time,
                seq,
                kind: EventKind::BufferFlush {
                    worker: w,
                    k: state.k - (n - 1 - w) as u64,
                    staleness: 0,
                },
            });
        }
        if state.k >= next_record {
            record(&state, time, &mut records, ctx);
            next_record = (state.k / every + 1) * every;
        }
    }
    if records.last().map(|r| r.k) != Some(state.k) {
        record(&state, time, &mut records, ctx);
    }
    let mean = state.models.mean_column();
    Ok((
        MetricsSeries {
            records,
            final_loss: objective_loss(ctx.problem, ctx.partition, &mean),
            final_grad_norm_sq: objective_gradient(ctx.problem, ctx.partition, &mean)
                .norm_squared(),
            avg_grad_norm_sq: None,
            max_staleness: 0,
        },
        trace,
    ))
}
