//! Structural properties of the discrete drivers: tower property,
//! discrete isometry, and the predictable representation of the binary
//! filtration.

use proptest::prelude::*;
use volterra_core::driver::{BackendSpec, DriverState};
use volterra_core::grid::{triangle_len, TimeGrid};

fn lattice(n: usize) -> DriverState {
    DriverState::build(TimeGrid::uniform(1.0, n).unwrap(), BackendSpec::Lattice).unwrap()
}

fn tree(n: usize) -> DriverState {
    DriverState::build(TimeGrid::uniform(1.0, n).unwrap(), BackendSpec::PathTree).unwrap()
}

proptest! {
    #[test]
    fn tower_property_is_exact_on_lattice(
        n in 2usize..24,
        raw in proptest::collection::vec(-50.0f64..50.0, 25),
        seed in any::<u64>(),
    ) {
        let d = lattice(n);
        let k2 = 1 + (seed as usize) % n;
        let k1 = (seed as usize / 7) % (k2 + 1);
        let k0 = (seed as usize / 13) % (k1 + 1);
        let values: Vec<f64> = (0..d.node_count(k2)).map(|i| raw[i % raw.len()]).collect();
        let f = d.node_function(k2, values, true).unwrap();
        let two_hop = d
            .conditional_expectation(&d.conditional_expectation(&f, k1).unwrap(), k0)
            .unwrap();
        let direct = d.conditional_expectation(&f, k0).unwrap();
        // identical sequence of two-point averages: bitwise equality
        prop_assert_eq!(two_hop.values(), direct.values());
    }

    #[test]
    fn tower_property_is_exact_on_tree(
        n in 2usize..10,
        raw in proptest::collection::vec(-50.0f64..50.0, 33),
        seed in any::<u64>(),
    ) {
        let d = tree(n);
        let k2 = 1 + (seed as usize) % n;
        let k1 = (seed as usize / 7) % (k2 + 1);
        let values: Vec<f64> = (0..d.node_count(k2)).map(|i| raw[i % raw.len()]).collect();
        let f = d.node_function(k2, values, true).unwrap();
        let two_hop = d
            .conditional_expectation(&d.conditional_expectation(&f, k1).unwrap(), 0)
            .unwrap();
        let direct = d.conditional_expectation(&f, 0).unwrap();
        prop_assert_eq!(two_hop.values(), direct.values());
    }

    #[test]
    fn grid_refinement_nests_and_triangle_count_holds(n in 1usize..64) {
        let g = TimeGrid::uniform(1.3, n).unwrap();
        let r = g.refine().unwrap();
        for (k, p) in g.points().iter().enumerate() {
            prop_assert_eq!(*p, r.point(2 * k));
        }
        prop_assert_eq!(g.triangle_points().len(), triangle_len(n));
    }
}

#[test]
fn isometry_is_exact_on_tree_for_adapted_integrands() {
    // E[(sum Z_k dW)^2] = sum E[Z_k^2] dt with Z_k = sin(W_k) + 1/3
    let n = 8;
    let d = tree(n);
    let dt = d.grid().dt();
    let sqrt_dt = dt.sqrt();
    let z_fields: Vec<Vec<f64>> = (0..n)
        .map(|k| d.w_values(k).iter().map(|w| w.sin() + 1.0 / 3.0).collect())
        .collect();

    // leafwise stochastic sum
    let leaves = d.node_count(n);
    let mut lhs = 0.0;
    for leaf in 0..leaves {
        let mut s = 0.0;
        for (k, z_k) in z_fields.iter().enumerate() {
            let node = leaf & ((1usize << k) - 1);
            let dw = if (leaf >> k) & 1 == 1 { sqrt_dt } else { -sqrt_dt };
            s += z_k[node] * dw;
        }
        lhs += s * s;
    }
    lhs /= leaves as f64;

    let mut rhs = 0.0;
    for (k, z_k) in z_fields.iter().enumerate() {
        let f = d.node_function(k, z_k.clone(), true).unwrap();
        rhs += d.expectation(&f.map(|z| z * z)).unwrap() * dt;
    }
    assert!((lhs - rhs).abs() < 1e-13, "lhs {lhs} rhs {rhs}");
}

#[test]
fn isometry_holds_on_lattice_for_deterministic_integrands() {
    // deterministic per-step integrands make both sides exact algebra
    let n = 6;
    let d = lattice(n);
    let dt = d.grid().dt();
    let coefs = [0.5, -1.0, 2.0, 0.25, -0.75, 1.5];
    // sum c_k dW is a function of nothing but the increments; its second
    // moment is sum c_k^2 dt by independence, checked through the tree twin
    let t = tree(n);
    let sqrt_dt = dt.sqrt();
    let mut lhs = 0.0;
    for leaf in 0..t.node_count(n) {
        let mut s = 0.0;
        for (k, c) in coefs.iter().enumerate() {
            let dw = if (leaf >> k) & 1 == 1 { sqrt_dt } else { -sqrt_dt };
            s += c * dw;
        }
        lhs += s * s;
    }
    lhs /= t.node_count(n) as f64;
    let rhs: f64 = coefs.iter().map(|c| c * c * dt).sum();
    assert!((lhs - rhs).abs() < 1e-14);
}

#[test]
fn martingale_reconstruction_is_exact_on_tree() {
    // any terminal field equals its mean plus the stochastic sum of its
    // representation integrands, leaf by leaf
    let n = 7;
    let d = tree(n);
    let f = d.terminal_w().map(|w| (2.0 * w).sin() + 0.5 * w * w);
    let mean = d.expectation(&f).unwrap();

    let mut integrands: Vec<Vec<f64>> = Vec::new();
    let mut cur = f.clone();
    for _ in 0..n {
        integrands.push(d.increment_projection(&cur).values().to_vec());
        cur = d.one_step_expectation(&cur);
    }
    integrands.reverse();

    let sqrt_dt = d.grid().dt().sqrt();
    let mut worst: f64 = 0.0;
    for leaf in 0..d.node_count(n) {
        let mut acc = mean;
        for k in 0..n {
            let node = leaf & ((1usize << k) - 1);
            let dw = if (leaf >> k) & 1 == 1 { sqrt_dt } else { -sqrt_dt };
            acc += integrands[k][node] * dw;
        }
        worst = worst.max((acc - f.values()[leaf]).abs());
    }
    assert!(worst < 1e-12, "reconstruction residual {worst}");
}

#[test]
fn lattice_and_tree_agree_on_terminal_state_payoffs() {
    let n = 8;
    let lat = lattice(n);
    let tr = tree(n);
    let f_lat = lat.terminal_w().map(|w| (w - 0.3).max(0.0));
    let f_tr = tr.terminal_w().map(|w| (w - 0.3).max(0.0));
    for k in [0usize, 3, 5] {
        let a = lat.conditional_expectation(&f_lat, k).unwrap();
        let b = tr.conditional_expectation(&f_tr, k).unwrap();
        // match tree nodes to lattice nodes by up-move count
        for leaf in 0..tr.node_count(k) {
            let ups = (leaf as u64).count_ones() as usize;
            assert!(
                (b.values()[leaf] - a.values()[ups]).abs() < 1e-13,
                "k {k} leaf {leaf}"
            );
        }
    }
}

#[test]
fn monte_carlo_expectation_of_terminal_w_is_small() {
    let d = DriverState::build(
        TimeGrid::uniform(1.0, 16).unwrap(),
        BackendSpec::MonteCarlo {
            paths: 20_000,
            seed: 3,
            basis_degree: 4,
        },
    )
    .unwrap();
    let m = d.expectation(&d.terminal_w()).unwrap();
    assert!(m.abs() < 0.02, "sample mean {m}");
}
