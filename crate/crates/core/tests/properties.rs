use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use wdn_gft::dynsim::SignalMatrix;
use wdn_gft::gft::{build_gft, forward_gft, verify_bandlimited};
use wdn_gft::linalg;
use wdn_gft::sampling::{greedy_select, recover, sample};

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn low_rank(n: usize, k: usize, r: usize, seed: u64) -> SignalMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = gaussian(n, r, &mut rng) * gaussian(r, k, &mut rng);
    SignalMatrix::from_matrix(x).unwrap()
}

/// Largest principal angle between the column spans of two orthonormal sets.
fn largest_angle(u: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    let n = u.nrows();
    let residual = (DMatrix::identity(n, n) - u * u.transpose()) * v;
    let s = linalg::singular_values(&residual).first().copied().unwrap_or(0.0);
    s.min(1.0).asin()
}

#[test]
fn leading_block_is_the_householder_qr_of_the_selected_columns() {
    for seed in 0..20 {
        let x = low_rank(12, 9, 1 + (seed as usize % 7), seed);
        let op = build_gft(&x).unwrap();
        let r = op.cutoff();
        let xm = linalg::select_columns(x.data(), op.independent_columns());
        let qr = xm.clone().qr();
        let (q, rr) = (qr.q(), qr.r());
        let f = op.low_frequency_block();
        for j in 0..r {
            let sign = rr[(j, j)].signum();
            let diff = (f.column(j) - q.column(j) * sign).amax();
            assert!(diff < 1e-9, "seed {seed} column {j}: {diff:e}");
        }
        let tri = f.tr_mul(&xm);
        for i in 0..r {
            assert!(tri[(i, i)] > 0.0);
            for j in 0..i {
                assert!(tri[(i, j)].abs() < 1e-10 * tri.amax());
            }
        }
        assert!((f * tri - &xm).amax() < 1e-10 * xm.amax());
    }
}

#[test]
fn low_frequency_span_matches_svd() {
    for seed in 100..130 {
        let x = low_rank(15, 20, 1 + (seed as usize % 10), seed);
        let op = build_gft(&x).unwrap();
        let (_, u) = linalg::left_singular_vectors(x.data()).unwrap();
        let ur = u.columns(0, x.rank()).into_owned();
        let angle = largest_angle(&ur, &op.low_frequency_block());
        assert!(angle <= 1e-8, "seed {seed}: {angle:e}");
    }
}

#[test]
fn transport_data_keeps_its_span() {
    use wdn_gft::dynsim::{default_scenario_bank, simulate_dynamics};
    use wdn_gft::graph::SyntheticNetwork;
    let g = SyntheticNetwork::default().build().unwrap();
    let bank = default_scenario_bank(&g, 20, 168, 1).unwrap();
    for sc in &bank {
        let x = simulate_dynamics(&g, &sc.config).unwrap();
        let op = build_gft(&x).unwrap();
        let f = op.low_frequency_block();
        let residual = x.data() - &f * f.tr_mul(x.data());
        assert!(residual.amax() < 1e-10 * x.data().amax(), "{}: {:e}", sc.id, residual.amax());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn response_vanishes_beyond_the_rank(n in 2usize..16, k in 1usize..20, seed in any::<u64>()) {
        let r = 1 + (seed as usize) % n.min(k);
        let x = low_rank(n, k, r, seed);
        let op = build_gft(&x).unwrap();
        prop_assert_eq!(op.cutoff(), x.rank());
        prop_assert!(linalg::orthogonality_defect(op.basis()) <= 1e-10);
        let check = verify_bandlimited(&op, x.data(), x.rank()).unwrap();
        prop_assert!(check.holds, "residual {:e}", check.residual);
        let resp = forward_gft(&op, x.data()).unwrap();
        let back = op.basis() * &resp.coefficients;
        prop_assert!((back - x.data()).amax() <= 1e-10 * x.data().amax());
    }

    #[test]
    fn relabeling_nodes_permutes_the_leading_basis(n in 3usize..12, seed in any::<u64>()) {
        let r = 1 + (seed as usize) % (n - 1);
        let x = low_rank(n, 10, r, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let px = SignalMatrix::from_matrix(linalg::select_rows(x.data(), &perm)).unwrap();
        let op = build_gft(&x).unwrap();
        let pop = build_gft(&px).unwrap();
        prop_assert_eq!(op.independent_columns(), pop.independent_columns());
        let moved = linalg::select_rows(&op.low_frequency_block(), &perm);
        prop_assert!((moved - pop.low_frequency_block()).amax() < 1e-9);
        let plan = greedy_select(&op, r, r).unwrap();
        let pplan = greedy_select(&pop, r, r).unwrap();
        prop_assert!((plan.sigma_min - pplan.sigma_min).abs() < 1e-9);
    }

    #[test]
    fn recovery_is_exact_and_idempotent(n in 3usize..14, k in 1usize..12, seed in any::<u64>()) {
        let r = 1 + (seed as usize) % (n.min(k));
        let x = low_rank(n, k, r, seed);
        let op = build_gft(&x).unwrap();
        let plan = greedy_select(&op, op.cutoff(), op.cutoff()).unwrap();
        let first = recover(&sample(x.data(), &plan).unwrap(), &op, &plan).unwrap();
        prop_assert!((&first.estimate - x.data()).amax() <= 1e-8 * x.data().amax().max(1.0));
        let again = recover(&sample(&first.estimate, &plan).unwrap(), &op, &plan).unwrap();
        prop_assert!((again.estimate - &first.estimate).amax() <= 1e-10 * first.estimate.amax().max(1.0));
    }
}
