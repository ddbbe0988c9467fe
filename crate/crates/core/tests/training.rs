//! Training regression baselines.

use std::f64::consts::PI;

use schwarz_pinn::geometry::PointSet;
use schwarz_pinn::net::{init_net, CollocationBatch};
use schwarz_pinn::optimizer::{train, DEFAULT_LEARNING_RATE};
use schwarz_pinn::partition::{build_partition, sample_training_sets, SampleCounts};
use schwarz_pinn::problems::smooth_1d;

fn smooth_1d_batch(seed: u64) -> CollocationBatch {
    let p = smooth_1d();
    let part = build_partition(p.domain, 1, 1.0 / 3.0).unwrap();
    let counts = SampleCounts {
        interior_per_sub: 98,
        boundary_per_sub: 2,
        coarse_interior: 0,
        coarse_boundary: 0,
    };
    let sets = sample_training_sets(&part, &p, counts, seed).unwrap();
    CollocationBatch {
        rhs: sets.interior[0].iter().map(|x| 4.0 * PI * PI * (2.0 * PI * x[0]).sin()).collect(),
        interior: sets.interior[0].clone(),
        rhs_offset: None,
        boundary: PointSet::from_flat(1, vec![-1.0, 1.0]),
        targets: vec![0.0, 0.0],
    }
}

/// Loss after 100 full-batch Adam epochs, computed by an independent autograd
/// implementation from the same initial parameters and collocation points.
const LOSS_AT_100: [(u64, f64); 4] = [(0, 8.673008e2), (1, 6.837919e2), (2, 6.602049e2), (3, 7.091523e2)];

#[test]
fn first_hundred_epochs_match_autograd_reference() {
    for (seed, expected) in LOSS_AT_100 {
        let batch = smooth_1d_batch(seed);
        let net = init_net(seed, 1, 35).unwrap();
        let out = train(&net, &batch, 100, DEFAULT_LEARNING_RATE).unwrap();
        let rel = (out.final_loss - expected).abs() / expected;
        assert!(rel < 1e-6, "seed {seed}: {} vs {expected}", out.final_loss);
    }
}

#[test]
fn smooth_1d_single_network_loss_baseline() {
    // seed 0 stalls near 12 for this initialisation; seeds 1..=3 land near 2e-2
    for seed in 1..=3 {
        let batch = smooth_1d_batch(seed);
        let net = init_net(seed, 1, 35).unwrap();
        let out = train(&net, &batch, 10_000, DEFAULT_LEARNING_RATE).unwrap();
        assert!(out.losses.iter().all(|l| l.is_finite()));
        assert!(out.final_loss < 5e-2, "seed {seed}: final loss {}", out.final_loss);
        assert!(out.final_loss < 1e-3 * out.losses[0]);
    }
}
