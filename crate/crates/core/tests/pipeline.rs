use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wdn_gft::dynsim::{default_scenario_bank, numerical_rank, simulate_dynamics, ScenarioConfig};
use wdn_gft::eval::{compare_schemes, CompareOptions, Evaluator};
use wdn_gft::gft::build_gft;
use wdn_gft::graph::{laplacian_spectrum, normalized_laplacian, Edge, NetworkGraph, Node, NodeKind, SyntheticNetwork};
use wdn_gft::sampling::{greedy_select, recover, sample, Scheme};

fn random_junction_graph(n: usize, rng: &mut ChaCha8Rng) -> NetworkGraph {
    let nodes = (0..n).map(|i| Node::new(format!("J{i}"), NodeKind::Junction)).collect();
    let mut edges: Vec<Edge> = (1..n).map(|i| Edge::new(rng.random_range(0..i), i)).collect();
    for _ in 0..n / 2 {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b {
            edges.push(Edge {
                from: a,
                to: b,
                weight: rng.random_range(0.5..2.0),
            });
        }
    }
    NetworkGraph::new(nodes, edges).unwrap()
}

/// Dense transport matrix written out from the model definition.
fn transport_matrix(g: &NetworkGraph, weight: f64, decay: f64) -> DMatrix<f64> {
    let n = g.node_count();
    let mut out = vec![0.0; n];
    for e in g.edges() {
        out[e.from] += e.weight;
    }
    let mut t = DMatrix::zeros(n, n);
    for j in 0..n {
        if out[j] > 0.0 {
            t[(j, j)] = 1.0 - weight;
        } else {
            t[(j, j)] = 1.0;
        }
    }
    for e in g.edges() {
        t[(e.to, e.from)] += weight * e.weight / out[e.from];
    }
    t * (1.0 - decay)
}

fn config(node: usize, profile: Vec<(usize, f64)>, decay: f64, weight: f64, steps: usize) -> ScenarioConfig {
    ScenarioConfig {
        injection_node: node,
        injection_profile: profile,
        decay_rate: decay,
        transport_weight: weight,
        steps,
        seed: 0,
    }
}

#[test]
fn simulation_matches_dense_recursion_and_krylov_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..25 {
        let n = rng.random_range(3..14);
        let g = random_junction_graph(n, &mut rng);
        let (weight, decay) = (rng.random_range(0.3..=1.0), rng.random_range(0.0..0.2));
        let node = rng.random_range(0..n);
        let steps = rng.random_range(1..30);
        let cfg = config(node, vec![(0, 1.5)], decay, weight, steps);
        let x = simulate_dynamics(&g, &cfg).unwrap();

        let t = transport_matrix(&g, weight, decay);
        let mut state = DVector::zeros(n);
        state[node] = 1.5;
        let mut krylov = DMatrix::zeros(n, steps);
        for k in 0..steps {
            if k > 0 {
                state = &t * state;
            }
            krylov.set_column(k, &state);
        }
        assert!((&krylov - x.data()).amax() < 1e-12, "trial {trial}");

        // single pulse: columns are exactly the Krylov sequence T^k b
        let mut b = DVector::zeros(n);
        b[node] = 1.0;
        let mut full = DMatrix::zeros(n, n);
        for k in 0..n {
            full.set_column(k, &b);
            b = &t * b;
        }
        let dim = numerical_rank(&full, 1e-10).unwrap();
        assert!(x.rank() <= dim, "trial {trial}: rank {} > krylov {dim}", x.rank());
    }
}

#[test]
fn mass_is_conserved_without_decay() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let n = rng.random_range(2..12);
        let g = random_junction_graph(n, &mut rng);
        let profile = vec![(0, 1.0), (3, 2.5), (4, 0.25)];
        let cfg = config(rng.random_range(0..n), profile, 0.0, rng.random_range(0.1..=1.0), 12);
        let x = simulate_dynamics(&g, &cfg).unwrap();
        let mut injected = 0.0;
        for k in 0..12 {
            injected += match k {
                0 => 1.0,
                3 => 2.5,
                4 => 0.25,
                _ => 0.0,
            };
            let total: f64 = x.data().column(k).sum();
            assert!((total - injected).abs() < 1e-12 * injected.max(1.0));
            assert!(x.data().column(k).iter().all(|&v| v >= 0.0));
        }
    }
}

#[test]
fn default_bank_ranks_stay_low() {
    let g = SyntheticNetwork::default().build().unwrap();
    assert_eq!(g.node_count(), 102);
    let bank = default_scenario_bank(&g, 100, 168, 1).unwrap();
    assert_eq!(bank.len(), 100);
    for sc in &bank {
        let x = simulate_dynamics(&g, &sc.config).unwrap();
        assert!((25..=65).contains(&x.rank()), "{} rank {}", sc.id, x.rank());
    }
}

#[test]
fn end_to_end_recovery_on_the_synthetic_network() {
    let g = SyntheticNetwork::default().build().unwrap();
    let bank = default_scenario_bank(&g, 3, 168, 9).unwrap();
    for sc in &bank {
        let x = simulate_dynamics(&g, &sc.config).unwrap();
        let op = build_gft(&x).unwrap();
        let r = op.cutoff();
        let plan = greedy_select(&op, r, r).unwrap();
        assert_eq!(plan.nodes.len(), r);
        let report = recover(&sample(x.data(), &plan).unwrap(), &op, &plan).unwrap();
        assert!(report.flags.is_empty());
        let err = wdn_gft::eval::rmse(&report.estimate, x.data()).unwrap();
        assert!(err < 1e-8, "{}: {err:e}", sc.id);
    }
}

#[test]
fn evaluator_edge_cases() {
    let g = SyntheticNetwork::default().build().unwrap();
    let spec = laplacian_spectrum(&normalized_laplacian(&g).unwrap()).unwrap();
    let sc = &default_scenario_bank(&g, 1, 168, 4).unwrap()[0];
    let x = simulate_dynamics(&g, &sc.config).unwrap();
    let ev = Evaluator::new(&sc.id, &x, Some(&spec), 0).unwrap();
    let n = g.node_count();
    for scheme in Scheme::ALL {
        assert_eq!(ev.min_sampling_size(scheme, f64::INFINITY).unwrap().s_min, 1);
        let full = ev.rmse_at(scheme, n, n).unwrap();
        assert!(full < 1e-10, "{scheme}: {full:e}");
    }
    let lap = ev.min_sampling_size(Scheme::Laplacian, 1e-8).unwrap();
    assert!(lap.s_min >= n * 3 / 4, "laplacian s_min {}", lap.s_min);
    let gft = ev.min_sampling_size(Scheme::Gft, 1e-8).unwrap();
    assert_eq!((gft.s_min, gft.r_min), (x.rank(), Some(x.rank())));
    assert!(ev.min_sampling_size(Scheme::Gft, 0.0).is_err());

    let opts = CompareOptions {
        schemes: vec![Scheme::Gft],
        ..CompareOptions::default()
    };
    let table = compare_schemes(&[(sc.id.clone(), x.clone())], Some(&spec), &opts, &|_| {}).unwrap();
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0].s_min_gft, Some(x.rank()));
    assert_eq!(table.rows[0].s_min_laplacian, None);
}

#[test]
fn gft_sweep_reaches_the_plateau() {
    let g = SyntheticNetwork::default().build().unwrap();
    let sc = &default_scenario_bank(&g, 1, 168, 21).unwrap()[0];
    let x = simulate_dynamics(&g, &sc.config).unwrap();
    let r = x.rank();
    let ev = Evaluator::new(&sc.id, &x, None, 0).unwrap();
    let axis = [r - 3, r - 1, r, r + 4, g.node_count()];
    let sweep = ev.sweep(Scheme::Gft, &axis, &axis).unwrap();
    let at = |b: usize, s: usize| sweep.get(b, s).unwrap().rmse.unwrap();
    assert!(at(r - 3, r) > at(r - 1, r) && at(r - 1, r) > 0.0);
    assert!(at(r, r) < 1e-8);
    assert!((at(r - 3, r) - at(r - 3, g.node_count())).abs() < 1e-10);
    for &b in &axis[2..] {
        for &s in &axis[2..] {
            assert!((at(b, s) - at(r, r)).abs() <= 1e-10);
        }
    }
}

#[test]
fn bundled_data_matches_the_generators() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let g = SyntheticNetwork::default().build().unwrap();
    assert_eq!(wdn_gft::graph::load_graph(dir.join("wdn102.json")).unwrap(), g);
    let text = std::fs::read_to_string(dir.join("bank.json")).unwrap();
    let bank = wdn_gft::dynsim::bank_from_json(&g, &text, "bank.json").unwrap();
    assert_eq!(bank, default_scenario_bank(&g, 100, 168, 1).unwrap());
}
