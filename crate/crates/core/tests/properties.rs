use gridcast::autodiff::Tensor;
use gridcast::baselines::RollingMean;
use gridcast::evaluation::{aggregate, cv, error_series, p95_abs_err, rho1, rmse_grid};
use gridcast::grid::{build_nrel118_like, load_grid, write_grid, BusKind};
use gridcast::model::{EdgeMode, Frame, GnnModel, ModelConfig, Topology};
use gridcast::powerflow::{
    build_ybus, power_injections, solve_ac_power_flow, InjectionSet, SolverOptions, BASE_MVA, EDGE_FEATURES,
    NODE_FEATURES,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_frames(n: usize, e: usize, t: usize, rng: &mut ChaCha8Rng) -> Vec<Frame> {
    (0..t)
        .map(|_| Frame {
            node: random_tensor(n, NODE_FEATURES, rng),
            edge: random_tensor(e, EDGE_FEATURES, rng),
        })
        .collect()
}

fn permutation(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, rng.random_range(0..=i));
    }
    p
}

/// Moves row `r` of `t` to row `perm[r]`.
fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let cols = t.shape()[1];
    let mut out = vec![0.0; t.len()];
    for (r, &p) in perm.iter().enumerate() {
        out[p * cols..(p + 1) * cols].copy_from_slice(&t.data()[r * cols..(r + 1) * cols]);
    }
    Tensor::matrix(t.shape()[0], cols, out).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn builder_grids_are_consistent_and_round_trip(seed in 0u64..1000) {
        let g = build_nrel118_like(seed);
        prop_assert_eq!(g.directed_edges().len(), 2 * g.n_branches());
        prop_assert_eq!(g.node_degrees().iter().sum::<usize>(), 2 * g.n_branches());
        let dir = tempfile::tempdir().unwrap();
        write_grid(&g, dir.path()).unwrap();
        let back = load_grid(dir.path().join("bus.csv"), dir.path().join("branch.csv"), dir.path().join("gen.csv"));
        prop_assert_eq!(back.unwrap(), g);
    }

    #[test]
    fn ac_solution_reproduces_injections(seed in 0u64..1000, scale in 0.2f64..1.0) {
        let g = build_nrel118_like(seed);
        let n = g.n_buses();
        let mut inj = InjectionSet::flat(n);
        let mut total = 0.0;
        for b in g.buses() {
            inj.p_inj[b.id] = -scale * b.load_mw;
            inj.q_inj[b.id] = -scale * b.load_mvar;
            total += scale * b.load_mw;
        }
        // Spread most of the load over the pv buses; the slack covers the rest.
        let pv: Vec<usize> = g.buses().iter().filter(|b| b.kind == BusKind::Pv).map(|b| b.id).collect();
        for &i in &pv {
            inj.p_inj[i] += 0.9 * total / pv.len() as f64;
        }
        let sol = solve_ac_power_flow(&g, &inj, &SolverOptions::default()).unwrap();
        for w in sol.mismatch_history.windows(2) {
            prop_assert!(w[1] < w[0]);
        }
        let s = power_injections(&build_ybus(&g), &sol.voltages());
        for b in g.buses() {
            let i = b.id;
            if b.kind != BusKind::Slack {
                prop_assert!((s[i].re * BASE_MVA - inj.p_inj[i]).abs() < 1e-8 * BASE_MVA);
            }
            if b.kind == BusKind::Pq {
                prop_assert!((s[i].im * BASE_MVA - inj.q_inj[i]).abs() < 1e-8 * BASE_MVA);
            }
        }
    }

    #[test]
    fn gnn_is_permutation_equivariant(seed in 0u64..1000, inject in any::<bool>()) {
        let branches = vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (1, 4), (2, 5)];
        let directed: Vec<(usize, usize)> = branches.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect();
        let cfg = ModelConfig {
            hidden: 6,
            seq_len: 3,
            edge_mode: if inject { EdgeMode::MeanInject } else { EdgeMode::Ignore },
            ..ModelConfig::default()
        };
        let model = GnnModel::new(cfg, Topology::new(6, &directed, &branches).unwrap(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = random_frames(6, branches.len(), 3, &mut rng);
        let base = model.predict(&frames).unwrap();

        let perm = permutation(6, &mut rng);
        let moved: Vec<(usize, usize)> = branches.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        let moved_directed: Vec<(usize, usize)> = moved.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect();
        let mut permuted = model.clone();
        permuted.topology = Topology::new(6, &moved_directed, &moved).unwrap();
        let frames_p: Vec<Frame> = frames
            .iter()
            .map(|f| Frame { node: permute_rows(&f.node, &perm), edge: f.edge.clone() })
            .collect();
        let out = permuted.predict(&frames_p).unwrap();
        let expected = permute_rows(&base, &perm);
        for (a, b) in out.data().iter().zip(expected.data()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn rolling_mean_commutes_with_bus_permutation_and_scaling(seed in 0u64..1000, window in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = random_frames(7, 3, 6, &mut rng);
        let rm = RollingMean::new(window, 6).unwrap();
        let base = rm.predict(&frames).unwrap();

        let perm = permutation(7, &mut rng);
        let permuted: Vec<Frame> = frames
            .iter()
            .map(|f| Frame { node: permute_rows(&f.node, &perm), edge: f.edge.clone() })
            .collect();
        prop_assert_eq!(rm.predict(&permuted).unwrap(), permute_rows(&base, &perm));

        let scales: Vec<f64> = (0..NODE_FEATURES).map(|_| rng.random_range(0.1..50.0)).collect();
        let scale = |t: &Tensor, inverse: bool| {
            let data = t
                .data()
                .iter()
                .enumerate()
                .map(|(i, v)| if inverse { v / scales[i % NODE_FEATURES] } else { v * scales[i % NODE_FEATURES] })
                .collect();
            Tensor::matrix(t.shape()[0], NODE_FEATURES, data).unwrap()
        };
        let scaled: Vec<Frame> = frames.iter().map(|f| Frame { node: scale(&f.node, false), edge: f.edge.clone() }).collect();
        let back = scale(&rm.predict(&scaled).unwrap(), true);
        for (a, b) in back.data().iter().zip(base.data()) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn targets_as_predictions_score_zero(seed in 0u64..1000, t_len in 3usize..10, n in 2usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let targets: Vec<Tensor> = (0..t_len).map(|_| random_tensor(n, NODE_FEATURES, &mut rng)).collect();
        let grid = rmse_grid(&targets, &targets).unwrap();
        prop_assert!(grid.data().iter().all(|&x| x == 0.0));
        prop_assert!(aggregate(&grid).iter().all(|m| m.mean == 0.0 && m.std == 0.0));
        prop_assert_eq!(p95_abs_err(&error_series(&targets, &targets).unwrap()), [0.0; NODE_FEATURES]);
    }

    #[test]
    fn metrics_are_pure(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let preds: Vec<Tensor> = (0..6).map(|_| random_tensor(5, NODE_FEATURES, &mut rng)).collect();
        let targets: Vec<Tensor> = (0..6).map(|_| random_tensor(5, NODE_FEATURES, &mut rng)).collect();
        let run = || {
            let grid = rmse_grid(&preds, &targets).unwrap();
            let errors = error_series(&preds, &targets).unwrap();
            format!("{:?}{:?}{:?}{:?}", grid, cv(&grid), p95_abs_err(&errors), rho1(&errors))
        };
        prop_assert_eq!(run(), run());
    }
}
