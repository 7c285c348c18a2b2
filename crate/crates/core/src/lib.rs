//! Deterministic simulator and analysis library for asynchronous decentralized
//! parallel SGD (AD-PSGD) and its synchronous/centralized baselines.
//!
//! The crate is organized around six subsystems:
//!
//! - [`topology`] — communication graphs, bipartite partitions for deadlock
//!   freedom, doubly stochastic averaging matrices and their spectral gap.
//! - [`problems`] — objective functions with analytic gradients, data
//!   partitioning strategies, and empirical variance/Lipschitz estimators.
//! - [`algorithms`] — iteration-indexed update rules: AD-PSGD, D-PSGD,
//!   AllReduce-SGD, centralized stale-gradient A-PSGD, and serial SGD.
//! - [`simulator`] — discrete-event simulation of wall-clock behavior:
//!   per-worker compute times, link latencies, the wait-free two-thread
//!   protocol, straggler injection, and emergent staleness.
//! - [`theory`] — convergence-condition constants, learning-rate
//!   prescriptions, and the iteration-budget checker.
//! - [`harness`] — run configuration, metrics CSV/JSON output, experiment
//!   presets and sweeps.

pub mod algorithms;
pub mod harness;
pub mod problems;
pub mod simulator;
pub mod theory;
pub mod topology;
