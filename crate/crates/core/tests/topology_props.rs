//! Property and Monte-Carlo invariants of the gossip machinery: every
//! sampled averaging matrix is doubly stochastic, averaging preserves the
//! model mean, the exact expected gram matches a Monte-Carlo estimate, and
//! gossip products contract toward consensus at the spectral rate.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use adpsgd_core::topology::{
    analyze, build_ring, build_skip_ring, consensus_decay_mc, expected_gram,
    pair_averaging_matrix, spectral_gap, SelectionPolicy, TopologyGraph, STOCHASTIC_TOL,
};

fn assert_doubly_stochastic(w: &DMatrix<f64>) {
    let n = w.nrows();
    for i in 0..n {
        let mut row = 0.0;
        let mut col = 0.0;
        for j in 0..n {
            assert!(w[(i, j)] >= 0.0, "negative entry at ({i},{j})");
            row += w[(i, j)];
            col += w[(j, i)];
        }
        assert!((row - 1.0).abs() <= STOCHASTIC_TOL, "row {i} sums to {row}");
        assert!((col - 1.0).abs() <= STOCHASTIC_TOL, "col {i} sums to {col}");
    }
}

proptest! {
    #[test]
    fn sampled_pair_matrices_are_doubly_stochastic(
        n in 2usize..24,
        seed in 0u64..1000,
    ) {
        let graph = build_ring(n).unwrap();
        let policy = SelectionPolicy::uniform(&graph).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (i, j) = policy.sample_pair(&graph, &mut rng).unwrap();
        let w = pair_averaging_matrix(i, j, n).unwrap();
        assert_doubly_stochastic(w.entries());
    }

    #[test]
    fn averaging_preserves_column_sums(
        n in 2usize..12,
        dim in 1usize..6,
        seed in 0u64..1000,
    ) {
        let graph = build_ring(n).unwrap();
        let policy = SelectionPolicy::uniform(&graph).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = DMatrix::from_fn(dim, n, |_, _| rng.gen_range(-10.0..10.0));
        let before: DVector<f64> = x.column_sum();
        let (i, j) = policy.sample_pair(&graph, &mut rng).unwrap();
        let w = pair_averaging_matrix(i, j, n).unwrap();
        x = &x * w.entries();
        let after: DVector<f64> = x.column_sum();
        for r in 0..dim {
            prop_assert!(
                (before[r] - after[r]).abs() <= 1e-12 * (1.0 + before[r].abs()),
                "column sum moved: {} -> {}", before[r], after[r]
            );
        }
    }
}

#[test]
fn expected_gram_matches_monte_carlo() {
    // Exact expectation vs a 1e5-sample average of W'W, entrywise within
    // three standard errors, for small rings.
    for n in [3usize, 4, 5] {
        let graph = build_ring(n).unwrap();
        let policy = SelectionPolicy::uniform(&graph).unwrap();
        let exact = expected_gram(&graph, &policy).unwrap();
        let trials = 100_000u64;
        let mut rng = ChaCha8Rng::seed_from_u64(7 + n as u64);
        let mut mean = DMatrix::<f64>::zeros(n, n);
        let mut m2 = DMatrix::<f64>::zeros(n, n);
        for t in 0..trials {
            let (i, j) = policy.sample_pair(&graph, &mut rng).unwrap();
            let w = pair_averaging_matrix(i, j, n).unwrap();
            let gram = w.entries().transpose() * w.entries();
            // Streaming mean/variance per entry.
            let count = (t + 1) as f64;
            for r in 0..n {
                for c in 0..n {
                    let delta = gram[(r, c)] - mean[(r, c)];
                    mean[(r, c)] += delta / count;
                    m2[(r, c)] += delta * (gram[(r, c)] - mean[(r, c)]);
                }
            }
        }
        for r in 0..n {
            for c in 0..n {
                let se = (m2[(r, c)] / (trials as f64 - 1.0) / trials as f64).sqrt();
                let diff = (mean[(r, c)] - exact[(r, c)]).abs();
                assert!(
                    diff <= 3.0 * se + 1e-12,
                    "ring {n} entry ({r},{c}): exact {} vs mc {} (3se {})",
                    exact[(r, c)],
                    mean[(r, c)],
                    3.0 * se
                );
            }
        }
    }
}

#[test]
fn consensus_decay_bounded_by_spectral_rate() {
    // Monte-Carlo E||1/n - (prod W) e_i||^2 <= ((n-1)/n) rho^K + 3 SE on the
    // 5-ring for K in {1, 5, 10, 25, 50} and every start worker.
    let graph = build_ring(5).unwrap();
    let policy = SelectionPolicy::uniform(&graph).unwrap();
    let points = consensus_decay_mc(&graph, &policy, &[1, 5, 10, 25, 50], 10_000, 99).unwrap();
    assert_eq!(points.len(), 25);
    for p in &points {
        assert!(
            p.mean_sq_dist <= p.bound + 3.0 * p.std_err,
            "K={} i={}: mc {} > bound {} + 3se {}",
            p.rounds,
            p.start_worker,
            p.mean_sq_dist,
            p.bound,
            3.0 * p.std_err
        );
    }
}

#[test]
fn spectral_gap_identity_and_connected_graphs() {
    assert!((spectral_gap(&DMatrix::identity(6, 6)).unwrap() - 1.0).abs() < 1e-12);
    for graph in [
        build_ring(3).unwrap(),
        build_ring(8).unwrap(),
        build_skip_ring(8).unwrap(),
        build_skip_ring(16).unwrap(),
    ] {
        let policy = SelectionPolicy::uniform(&graph).unwrap();
        let rho = analyze(&graph, &policy).unwrap().rho;
        assert!(rho < 1.0, "connected graph must mix: rho = {rho}");
        assert!(rho >= 0.0);
    }
}

#[test]
fn skip_ring_mixes_faster_than_ring() {
    // The added skip links shrink the spectral gap.
    for n in [8usize, 16] {
        let ring = build_ring(n).unwrap();
        let skip = build_skip_ring(n).unwrap();
        let rho_ring = analyze(&ring, &SelectionPolicy::uniform(&ring).unwrap())
            .unwrap()
            .rho;
        let rho_skip = analyze(&skip, &SelectionPolicy::uniform(&skip).unwrap())
            .unwrap()
            .rho;
        assert!(
            rho_skip < rho_ring,
            "n={n}: skip-ring rho {rho_skip} !< ring rho {rho_ring}"
        );
    }
}

#[test]
fn topology_json_external_schema() {
    // The export uses the documented field names.
    let g = build_ring(4).unwrap();
    let json: serde_json::Value = serde_json::from_str(&g.to_json()).unwrap();
    assert_eq!(json["n"], 4);
    assert!(json["edges"].as_array().unwrap().len() == 4);
    assert_eq!(json["active"].as_array().unwrap().len(), 2);
    assert_eq!(json["passive"].as_array().unwrap().len(), 2);
    // And a partition-less graph round-trips without the partition keys.
    let g5 = build_ring(5).unwrap();
    let back = TopologyGraph::from_json(&g5.to_json()).unwrap();
    assert_eq!(back, g5);
}
