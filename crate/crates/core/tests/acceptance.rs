//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed. `ACCEPTANCE_ONLY=1,5` restricts the run.

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use std::collections::VecDeque;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use gridcast::autodiff::{mse, Tensor};
use gridcast::baselines::{MlpConfig, MlpModel};
use gridcast::checkpoint::{gnn_envelope, gnn_from_envelope, gnn_state_envelope, mlp_state_envelope, Envelope, GNN_MAGIC};
use gridcast::evaluation::{self, render_report, ModelKind, ReportFormats};
use gridcast::grid::{build_nrel118_like, Branch, Bus, BusKind, GridGraph};
use gridcast::model::{BnScope, EdgeMode, Frame, GnnModel, ModelConfig, Topology};
use gridcast::pipeline::{evaluate_forecasters, run_benchmark, BenchmarkConfig, Forecaster};
use gridcast::powerflow::{
    generate_dataset, solve_ac_power_flow, synthesize_profiles, write_dataset, Dataset, DatasetOptions,
    InjectionSet, ProfileConfig, SolverOptions, BASE_MVA, EDGE_FEATURES, NODE_FEATURES,
};
use gridcast::training::{
    evaluate_loss, optimizer_step, train, AdamState, LrSchedule, NormStats, PreparedData, TrainConfig, TrainState,
    Trainable,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Check); 8] = [
        (1, "power-flow correctness", power_flow),
        (2, "gradient integrity", gradient_integrity),
        (3, "overfit sanity", overfit),
        (4, "benchmark ordering", benchmark),
        (5, "equivariance and locality", equivariance_locality),
        (6, "determinism and persistence", determinism),
        (7, "metric oracles", metric_oracles),
        (8, "normalization leakage audit", norm_audit),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS [{id}] {name} ({secs:.1} s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{id}] {name} ({secs:.1} s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------
// 1. Power flow

fn bus(id: usize, kind: BusKind) -> Bus {
    Bus {
        id,
        region: 0,
        base_kv: 138.0,
        kind,
        load_mw: 0.0,
        load_mvar: 0.0,
    }
}

fn branch(from: usize, to: usize, r: f64, x: f64) -> Branch {
    Branch {
        from,
        to,
        r,
        x,
        rating_mva: 100.0,
    }
}

/// Gauss-Seidel on the bus admittance matrix, with pv buses holding |V|.
fn gauss_seidel(branches: &[(usize, usize, f64, f64)], kinds: &[BusKind], inj: &InjectionSet) -> Vec<Complex64> {
    let n = kinds.len();
    let mut y = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for &(f, t, r, x) in branches {
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(r, x);
        y[f][f] += ys;
        y[t][t] += ys;
        y[f][t] -= ys;
        y[t][f] -= ys;
    }
    let mut v: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(if kinds[i] == BusKind::Pq { 1.0 } else { inj.v_setpoint[i] }, 0.0))
        .collect();
    for _ in 0..200_000 {
        let mut change = 0.0f64;
        for i in 0..n {
            if kinds[i] == BusKind::Slack {
                continue;
            }
            let sum: Complex64 = (0..n).filter(|&j| j != i).map(|j| y[i][j] * v[j]).sum();
            let p = inj.p_inj[i] / BASE_MVA;
            let q = if kinds[i] == BusKind::Pv {
                -(v[i].conj() * (sum + y[i][i] * v[i])).im
            } else {
                inj.q_inj[i] / BASE_MVA
            };
            let mut new = (Complex64::new(p, -q) / v[i].conj() - sum) / y[i][i];
            if kinds[i] == BusKind::Pv {
                new = Complex64::from_polar(inj.v_setpoint[i], new.arg());
            }
            change = change.max((new - v[i]).norm());
            v[i] = new;
        }
        if change < 1e-15 {
            break;
        }
    }
    v
}

fn power_flow() -> Check {
    let mut notes = Vec::new();
    let start = Instant::now();

    // Two buses: closed form for the receiving-end voltage.
    let g = GridGraph::new(
        vec![bus(0, BusKind::Slack), bus(1, BusKind::Pq)],
        vec![branch(0, 1, 0.01, 0.1)],
        vec![],
    )
    .map_err(|e| e.to_string())?;
    let mut inj = InjectionSet::flat(2);
    inj.p_inj[1] = -100.0;
    inj.q_inj[1] = -20.0;
    let sol = solve_ac_power_flow(&g, &inj, &SolverOptions::default()).map_err(|e| e.to_string())?;
    let (r, x, p, q) = (0.01f64, 0.1f64, 1.0f64, 0.2f64);
    let b = 2.0 * (r * p + x * q) - 1.0;
    let c = (r * r + x * x) * (p * p + q * q);
    let u = ((-b + (b * b - 4.0 * c).sqrt()) / 2.0).sqrt();
    let delta = -(Complex64::new(u, 0.0) + Complex64::new(r, x) * Complex64::new(p, -q) / u).arg();
    let err2 = (sol.v_mag[1] - u).abs().max((sol.v_ang[1].to_radians() - delta).abs());
    ensure(sol.iterations <= 10, || format!("2-bus took {} iterations", sol.iterations))?;
    ensure(sol.final_mismatch() <= 1e-8, || format!("2-bus mismatch {:e}", sol.final_mismatch()))?;
    ensure(err2 <= 1e-6, || format!("2-bus off the closed form by {err2:e}"))?;
    notes.push(format!("2-bus {} it, |Δ| {err2:.1e}", sol.iterations));

    // Three buses in a ring with a pv unit, against Gauss-Seidel.
    let lines = [(0, 1, 0.02, 0.06), (0, 2, 0.08, 0.24), (1, 2, 0.06, 0.18)];
    let kinds = [BusKind::Slack, BusKind::Pv, BusKind::Pq];
    let g = GridGraph::new(
        (0..3).map(|i| bus(i, kinds[i])).collect(),
        lines.iter().map(|&(f, t, r, x)| branch(f, t, r, x)).collect(),
        vec![],
    )
    .map_err(|e| e.to_string())?;
    let inj = InjectionSet {
        p_inj: vec![0.0, 60.0, -120.0],
        q_inj: vec![0.0, 0.0, -40.0],
        v_setpoint: vec![1.02, 1.01, 1.0],
    };
    let sol = solve_ac_power_flow(&g, &inj, &SolverOptions::default()).map_err(|e| e.to_string())?;
    let oracle = gauss_seidel(&lines, &kinds, &inj);
    let err3 = (0..3)
        .map(|i| {
            let v = Complex64::from_polar(sol.v_mag[i], sol.v_ang[i].to_radians());
            (v - oracle[i]).norm()
        })
        .fold(0.0f64, f64::max);
    ensure(sol.iterations <= 10, || format!("3-bus took {} iterations", sol.iterations))?;
    ensure(sol.final_mismatch() <= 1e-8, || format!("3-bus mismatch {:e}", sol.final_mismatch()))?;
    ensure(err3 <= 1e-6, || format!("3-bus off Gauss-Seidel by {err3:e} p.u."))?;
    notes.push(format!("3-bus {} it, |Δ| {err3:.1e} p.u.", sol.iterations));

    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(notes.join("; "))
}

// ---------------------------------------------------------------------------
// Shared helpers for the model criteria

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

/// Five buses: a ring plus one chord.
fn small_topology() -> (Topology, Vec<(usize, usize)>) {
    let branches = vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (1, 3)];
    let directed: Vec<(usize, usize)> = branches.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect();
    (Topology::new(5, &directed, &branches).unwrap(), branches)
}

fn small_config(seq_len: usize) -> ModelConfig {
    ModelConfig {
        hidden: 8,
        seq_len,
        edge_mode: EdgeMode::MeanInject,
        ..ModelConfig::default()
    }
}

// ---------------------------------------------------------------------------
// 2. Gradients

fn gradient_integrity() -> Check {
    let start = Instant::now();
    let (topo, branches) = small_topology();
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for seed in 0..20u64 {
        let cfg = ModelConfig {
            bn_scope: if seed % 2 == 0 { BnScope::Window } else { BnScope::Timestep },
            ..small_config(3)
        };
        let mut model = GnnModel::new(cfg, topo.clone(), seed).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let frames = random_frames(5, branches.len(), 3, &mut rng);
        let target = random_tensor(5, NODE_FEATURES, &mut rng);
        let dropout_seed = 7 + seed;
        let loss_at = |m: &mut GnnModel| -> (f64, Vec<Tensor>) {
            let mut r = ChaCha8Rng::seed_from_u64(dropout_seed);
            m.loss_and_grads(&frames, &target, &mut r).unwrap()
        };
        let (_, grads) = loss_at(&mut model);
        let h = 1e-6;
        for (k, g) in grads.iter().enumerate() {
            for j in 0..g.len() {
                let mut plus = model.clone();
                plus.params.values_mut()[k].data_mut()[j] += h;
                let mut minus = model.clone();
                minus.params.values_mut()[k].data_mut()[j] -= h;
                let fd = (loss_at(&mut plus).0 - loss_at(&mut minus).0) / (2.0 * h);
                let a = g.data()[j];
                let rel = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-3);
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(worst < 1e-4, || format!("max relative error {worst:.2e}"))?;
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!("20 seeds, {checked} partials, max relative error {worst:.2e}"))
}

// ---------------------------------------------------------------------------
// 3. Overfitting one window

fn small_dataset(seed: u64, hours: usize) -> (GridGraph, Dataset) {
    let grid = build_nrel118_like(seed);
    let profiles = synthesize_profiles(&grid, hours, seed, &ProfileConfig::default()).unwrap();
    let ds = generate_dataset(&grid, &profiles, &DatasetOptions::default()).unwrap();
    (grid, ds)
}

const OVERFIT_STEPS: usize = 500;
const OVERFIT_LR: f64 = 3e-3;

/// Steps until the eval-mode training loss on the window drops below 1e-3.
fn overfit_steps<M: Trainable>(model: &mut M, frames: &[Frame], target: &Tensor) -> (Option<usize>, f64) {
    let cfg = TrainConfig {
        lr: OVERFIT_LR,
        ..TrainConfig::default()
    };
    let mut adam = AdamState::new(model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut last = f64::INFINITY;
    for step in 1..=OVERFIT_STEPS {
        let (_, grads) = model.loss_and_grads(frames, target, &mut rng).unwrap();
        optimizer_step(model, grads, &mut adam, &cfg, cfg.lr).unwrap();
        if step % 10 == 0 || step == OVERFIT_STEPS {
            let pred = model.predict(frames).unwrap();
            last = mse(&pred, target);
            if last < 1e-3 {
                return (Some(step), last);
            }
        }
    }
    (None, last)
}

fn overfit() -> Check {
    let (grid, ds) = small_dataset(0, 260);
    let data = PreparedData::new(&ds, 48, 0.8).map_err(|e| e.to_string())?;
    let w = data.train_windows[10];
    let (frames, target) = (data.inputs(&w), data.target(&w));

    let cfg = ModelConfig {
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let mut gnn = GnnModel::new(cfg, Topology::from_grid(&grid), 0).map_err(|e| e.to_string())?;
    let (g_steps, g_mse) = overfit_steps(&mut gnn, frames, target);
    let mut mlp = MlpModel::new(MlpConfig::default(), 0).map_err(|e| e.to_string())?;
    let (m_steps, m_mse) = overfit_steps(&mut mlp, frames, target);
    let g = g_steps.ok_or_else(|| format!("GNN stuck at MSE {g_mse:.2e} after {OVERFIT_STEPS} steps"))?;
    let m = m_steps.ok_or_else(|| format!("MLP stuck at MSE {m_mse:.2e} after {OVERFIT_STEPS} steps"))?;
    Ok(format!("GNN below 1e-3 after {g} steps ({g_mse:.1e}), MLP after {m} ({m_mse:.1e})"))
}

// ---------------------------------------------------------------------------
// 4. Benchmark

pub const BENCH_SEEDS: [u64; 3] = [0, 1, 2];
pub const BENCH_EPOCHS: usize = 7;
pub const BENCH_LR: f64 = 3e-3;

/// Seven epochs fit the time budget; the cosine decay lets both networks
/// settle within them. GNN and MLP share every optimizer setting. Both are
/// still underfit this early, so the GNN runs without dropout, like the MLP.
fn bench_config(seed: u64) -> BenchmarkConfig {
    let mut cfg = BenchmarkConfig::new(seed, BENCH_EPOCHS, BENCH_LR);
    cfg.train.schedule = LrSchedule::Cosine;
    cfg.model.dropout = 0.0;
    cfg
}

fn benchmark() -> Check {
    let start = Instant::now();
    let labels = ["v_mag", "v_ang", "p", "q"];
    let mut sums = [[0.0f64; NODE_FEATURES]; 4];
    for seed in BENCH_SEEDS {
        let out = run_benchmark(&bench_config(seed)).map_err(|e| format!("seed {seed}: {e}"))?;
        for m in &out.report.models {
            let row = ModelKind::ALL.iter().position(|&k| k == m.kind).unwrap();
            for f in 0..NODE_FEATURES {
                sums[row][f] += m.aggregate[f].mean;
            }
            println!(
                "  seed {seed} {:>3}: {}",
                m.kind.label(),
                (0..NODE_FEATURES)
                    .map(|f| format!("{}={:.4e}", labels[f], m.aggregate[f].mean))
                    .collect::<Vec<_>>()
                    .join(" ")
            );
        }
        println!(
            "  seed {seed}: gnn best epoch {} val {:.5}, mlp best epoch {} val {:.5}, {:.0} s elapsed",
            out.gnn.best_epoch,
            out.gnn.best_val,
            out.mlp.best_epoch,
            out.mlp.best_val,
            start.elapsed().as_secs_f64()
        );
    }
    let k = BENCH_SEEDS.len() as f64;
    let mean = |row: usize, f: usize| sums[row][f] / k;
    let (gnn, mlp, rm) = (0, 1, 3);
    let beats_rm = (0..NODE_FEATURES).filter(|&f| mean(gnn, f) < mean(rm, f)).count();
    let beats_mlp = (0..NODE_FEATURES).filter(|&f| mean(gnn, f) < mean(mlp, f)).count();
    let table = (0..NODE_FEATURES)
        .map(|f| format!("{} GNN {:.4e} NN {:.4e} RM {:.4e}", labels[f], mean(gnn, f), mean(mlp, f), mean(rm, f)))
        .collect::<Vec<_>>()
        .join("; ");
    let elapsed = start.elapsed();
    ensure(beats_rm == NODE_FEATURES, || format!("GNN beats rolling mean on {beats_rm}/4 only: {table}"))?;
    ensure(beats_mlp >= 3, || format!("GNN beats MLP on {beats_mlp}/4 only: {table}"))?;
    ensure(elapsed < Duration::from_secs(45 * 60), || format!("took {elapsed:?}"))?;
    Ok(format!("3-seed means, GNN beats RM 4/4 and NN {beats_mlp}/4: {table}"))
}

// ---------------------------------------------------------------------------
// 5. Equivariance and locality

/// A few training steps so the running batch-norm statistics are not trivial.
fn warmed_model(cfg: ModelConfig, topo: Topology, n_edges: usize, seed: u64) -> GnnModel {
    let mut model = GnnModel::new(cfg, topo.clone(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 99);
    let mut adam = AdamState::new(Trainable::params(&model));
    let tc = TrainConfig {
        lr: 1e-2,
        ..TrainConfig::default()
    };
    for _ in 0..5 {
        let frames = random_frames(topo.n_nodes, n_edges, cfg.seq_len, &mut rng);
        let target = random_tensor(topo.n_nodes, NODE_FEATURES, &mut rng);
        let (_, g) = model.loss_and_grads(&frames, &target, &mut rng).unwrap();
        optimizer_step(&mut model, g, &mut adam, &tc, tc.lr).unwrap();
    }
    model
}

fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    // Row i of the result is row perm^-1(i) of t, i.e. old row r moves to perm[r].
    let cols = t.shape()[1];
    let mut out = vec![0.0; t.len()];
    for (r, &p) in perm.iter().enumerate() {
        out[p * cols..(p + 1) * cols].copy_from_slice(&t.data()[r * cols..(r + 1) * cols]);
    }
    Tensor::matrix(t.shape()[0], cols, out).unwrap()
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, rng.random_range(0..=i));
    }
    p
}

fn equivariance_on(grid_branches: &[(usize, usize)], n: usize, cfg: ModelConfig, seed: u64) -> f64 {
    let directed: Vec<(usize, usize)> = grid_branches.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect();
    let topo = Topology::new(n, &directed, grid_branches).unwrap();
    let model = warmed_model(cfg, topo, grid_branches.len(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
    let frames = random_frames(n, grid_branches.len(), cfg.seq_len, &mut rng);
    let base = model.predict(&frames).unwrap();

    let node_perm = shuffled(n, &mut rng);
    let edge_perm = shuffled(grid_branches.len(), &mut rng);
    let mut new_branches = vec![(0, 0); grid_branches.len()];
    for (e, &(a, b)) in grid_branches.iter().enumerate() {
        new_branches[edge_perm[e]] = (node_perm[a], node_perm[b]);
    }
    let mut new_directed: Vec<(usize, usize)> = new_branches.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect();
    new_directed.reverse();
    let topo_p = Topology::new(n, &new_directed, &new_branches).unwrap();
    let mut permuted = model.clone();
    permuted.topology = topo_p;
    let frames_p: Vec<Frame> = frames
        .iter()
        .map(|f| Frame {
            node: permute_rows(&f.node, &node_perm),
            edge: permute_rows(&f.edge, &edge_perm),
        })
        .collect();
    let out = permuted.predict(&frames_p).unwrap();
    let expected = permute_rows(&base, &node_perm);
    out.data().iter().zip(expected.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn hop_distances(n: usize, branches: &[(usize, usize)], from: usize) -> Vec<usize> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in branches {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut dist = vec![usize::MAX; n];
    dist[from] = 0;
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        for &w in &adj[u] {
            if dist[w] == usize::MAX {
                dist[w] = dist[u] + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}

fn equivariance_locality() -> Check {
    let (_, small_branches) = small_topology();
    let grid = build_nrel118_like(0);
    let branches: Vec<(usize, usize)> = grid.branches().iter().map(|b| (b.from, b.to)).collect();
    let mut worst = 0.0f64;
    for (seed, scope) in [(1, BnScope::Window), (2, BnScope::Timestep)] {
        let cfg = ModelConfig {
            bn_scope: scope,
            ..small_config(3)
        };
        worst = worst.max(equivariance_on(&small_branches, 5, cfg, seed));
        let cfg118 = ModelConfig {
            seq_len: 4,
            edge_mode: EdgeMode::MeanInject,
            bn_scope: scope,
            ..ModelConfig::default()
        };
        worst = worst.max(equivariance_on(&branches, 118, cfg118, seed + 10));
    }
    ensure(worst <= 1e-12, || format!("permutation error {worst:e}"))?;

    // Locality: with two graph layers, bus v only sees buses within two hops
    // (and, with edge injection, branches touching them).
    let n = grid.n_buses();
    let mut checked = 0;
    for mode in [EdgeMode::Ignore, EdgeMode::MeanInject] {
        let cfg = ModelConfig {
            seq_len: 4,
            edge_mode: mode,
            ..ModelConfig::default()
        };
        let model = warmed_model(cfg, Topology::from_grid(&grid), branches.len(), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let frames = random_frames(n, branches.len(), 4, &mut rng);
        let base = model.predict(&frames).unwrap();
        for v in [0, 17, 58, 101] {
            let dist = hop_distances(n, &branches, v);
            let mut far = frames.clone();
            for f in far.iter_mut() {
                for u in (0..n).filter(|&u| dist[u] > 2) {
                    for c in 0..NODE_FEATURES {
                        f.node.data_mut()[u * NODE_FEATURES + c] += 5.0;
                    }
                }
                for (e, &(a, b)) in branches.iter().enumerate() {
                    if dist[a] > 2 && dist[b] > 2 {
                        for c in 0..EDGE_FEATURES {
                            f.edge.data_mut()[e * EDGE_FEATURES + c] -= 3.0;
                        }
                    }
                }
            }
            let out = model.predict(&far).unwrap();
            let row = |t: &Tensor| t.data()[v * NODE_FEATURES..(v + 1) * NODE_FEATURES].to_vec();
            let same = row(&out).iter().zip(row(&base)).all(|(a, b)| a.to_bits() == b.to_bits());
            ensure(same, || format!("{mode:?}: bus {v} moved when buses beyond two hops changed"))?;

            // And something two hops away does reach it.
            let two = (0..n).find(|&u| dist[u] == 2).expect("118-bus grid has two-hop neighbours");
            let mut near = frames.clone();
            for f in near.iter_mut() {
                f.node.data_mut()[two * NODE_FEATURES] += 5.0;
            }
            let out = model.predict(&near).unwrap();
            ensure(row(&out) != row(&base), || format!("bus {v} ignores two-hop bus {two}"))?;
            checked += 1;
        }
    }
    Ok(format!("max permutation error {worst:.1e}; {checked} locality probes exact"))
}

// ---------------------------------------------------------------------------
// 6. Determinism

fn dataset_bytes(ds: &Dataset) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(ds, dir.path()).unwrap();
    let mut out = std::fs::read(dir.path().join("nodes.csv")).unwrap();
    out.extend(std::fs::read(dir.path().join("edges.csv")).unwrap());
    out
}

fn determinism() -> Check {
    let (grid, ds) = small_dataset(3, 72);
    let (_, again) = small_dataset(3, 72);
    ensure(dataset_bytes(&ds) == dataset_bytes(&again), || "datasets differ".into())?;
    let (_, other) = small_dataset(4, 72);
    ensure(dataset_bytes(&ds) != dataset_bytes(&other), || "seed has no effect".into())?;

    let data = PreparedData::new(&ds, 8, 0.8).map_err(|e| e.to_string())?;
    let cfg = ModelConfig {
        seq_len: 8,
        ..ModelConfig::default()
    };
    let tc = TrainConfig {
        lr: 1e-3,
        epochs: 2,
        seed: 3,
        ..TrainConfig::default()
    };
    let fit_gnn = || {
        let m = GnnModel::new(cfg, Topology::from_grid(&grid), 3).unwrap();
        train(TrainState::new(m), &data, &tc, |_| Ok(())).unwrap()
    };
    let fit_mlp = || {
        let m = MlpModel::new(MlpConfig { seq_len: 8, ..MlpConfig::default() }, 3).unwrap();
        train(TrainState::new(m), &data, &tc, |_| Ok(())).unwrap()
    };
    let (g1, g2) = (fit_gnn(), fit_gnn());
    let (m1, m2) = (fit_mlp(), fit_mlp());
    let gb = gnn_state_envelope(&g1, &data.stats).to_bytes();
    ensure(gb == gnn_state_envelope(&g2, &data.stats).to_bytes(), || "GNN checkpoints differ".into())?;
    ensure(
        mlp_state_envelope(&m1, &data.stats).to_bytes() == mlp_state_envelope(&m2, &data.stats).to_bytes(),
        || "MLP checkpoints differ".into(),
    )?;

    // Save, load, evaluate.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gnn.ckpt");
    gnn_envelope(&g1.best, &data.stats).write(&path).map_err(|e| e.to_string())?;
    let env = Envelope::read(&path, GNN_MAGIC).map_err(|e| e.to_string())?;
    let (loaded, stats) = gnn_from_envelope(&env, Topology::from_grid(&grid)).map_err(|e| e.to_string())?;
    ensure(stats == data.stats, || "stats changed on reload".into())?;
    let before = evaluate_loss(&g1.best, &data, &data.val_windows).unwrap();
    let after = evaluate_loss(&loaded, &data, &data.val_windows).unwrap();
    ensure((before - after).abs() <= 1e-12, || format!("val MSE {before} vs {after} after reload"))?;

    // Reports.
    let linear =
        gridcast::baselines::LinearModel::fit(&data.frames[..data.n_train], 8, gridcast::baselines::LINEAR_RIDGE)
            .unwrap();
    let rolling = gridcast::baselines::RollingMean::new(8, 8).unwrap();
    let models = [
        Forecaster::Gnn(g1.best.clone()),
        Forecaster::Mlp(m1.best.clone()),
        Forecaster::Linear(linear),
        Forecaster::Rolling(rolling),
    ];
    let fmt = ReportFormats { json: true, svg: true };
    let r1 = render_report(&evaluate_forecasters(&models, &grid, &ds, &data, None).unwrap(), fmt).unwrap();
    let r2 = render_report(&evaluate_forecasters(&models, &grid, &ds, &data, None).unwrap(), fmt).unwrap();
    ensure(r1 == r2, || "reports differ".into())?;
    Ok(format!(
        "dataset, {}-byte GNN checkpoint and {}-file report byte-identical; reload |Δ val MSE| {:.1e}",
        gb.len(),
        r1.len(),
        (before - after).abs()
    ))
}

// ---------------------------------------------------------------------------
// 7. Metric oracles

fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for i in 0..x.len() {
        num += (x[i] - mx) * (y[i] - my);
        dx += (x[i] - mx).powi(2);
        dy += (y[i] - my).powi(2);
    }
    num / (dx * dy).sqrt()
}

fn oracle_quantile(v: &mut [f64], q: f64) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (v.len() - 1) as f64;
    let i = pos as usize;
    if i + 1 >= v.len() {
        return v[v.len() - 1];
    }
    v[i] * (1.0 - (pos - i as f64)) + v[i + 1] * (pos - i as f64)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * b.abs().max(1.0)
}

fn metric_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for inst in 0..100 {
        let t_len = rng.random_range(4..12usize);
        let n = rng.random_range(3..9usize);
        let preds: Vec<Tensor> = (0..t_len).map(|_| random_tensor(n, NODE_FEATURES, &mut rng)).collect();
        let targets: Vec<Tensor> = (0..t_len).map(|_| random_tensor(n, NODE_FEATURES, &mut rng)).collect();
        let degrees: Vec<usize> = (0..n).map(|_| rng.random_range(1..6)).collect();
        let e = |t: usize, b: usize, f: usize| {
            preds[t].data()[b * NODE_FEATURES + f] - targets[t].data()[b * NODE_FEATURES + f]
        };

        let grid = evaluation::rmse_grid(&preds, &targets).unwrap();
        let errors = evaluation::error_series(&preds, &targets).unwrap();
        let cv = evaluation::cv(&grid);
        let p95 = evaluation::p95_abs_err(&errors);
        let rho = evaluation::rho1(&errors);
        let dc = evaluation::degree_corr(&grid, &degrees);
        let xc = evaluation::cross_var_corr(&errors);
        for f in 0..NODE_FEATURES {
            let mut rm = vec![0.0; n];
            for (b, r) in rm.iter_mut().enumerate() {
                let mut s = 0.0;
                for t in 0..t_len {
                    s += e(t, b, f).powi(2);
                }
                *r = (s / t_len as f64).sqrt();
                ensure(close(grid.data()[b * NODE_FEATURES + f], *r), || format!("instance {inst}: rmse"))?;
            }
            let m = rm.iter().sum::<f64>() / n as f64;
            let sd = (rm.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64).sqrt();
            ensure(close(cv[f].unwrap(), sd / m), || format!("instance {inst}: cv"))?;

            let mut abs: Vec<f64> = (0..t_len).flat_map(|t| (0..n).map(move |b| (t, b))).map(|(t, b)| e(t, b, f).abs()).collect();
            ensure(close(p95[f], oracle_quantile(&mut abs, 0.95)), || format!("instance {inst}: p95"))?;

            let series: Vec<f64> = (0..t_len).map(|t| (0..n).map(|b| e(t, b, f)).sum::<f64>() / n as f64).collect();
            let r1 = oracle_pearson(&series[..t_len - 1], &series[1..]);
            ensure(close(rho[f].unwrap(), r1), || format!("instance {inst}: rho1"))?;

            let d: Vec<f64> = degrees.iter().map(|&x| x as f64).collect();
            if d.iter().any(|&x| x != d[0]) {
                ensure(close(dc[f].unwrap(), oracle_pearson(&d, &rm)), || format!("instance {inst}: degree corr"))?;
            } else {
                ensure(dc[f].is_none(), || format!("instance {inst}: degree corr on constant degrees"))?;
            }
        }
        let p: Vec<f64> = (0..t_len).flat_map(|t| (0..n).map(move |b| (t, b))).map(|(t, b)| e(t, b, 2)).collect();
        let th: Vec<f64> = (0..t_len).flat_map(|t| (0..n).map(move |b| (t, b))).map(|(t, b)| e(t, b, 1)).collect();
        ensure(close(xc.unwrap(), oracle_pearson(&p, &th)), || format!("instance {inst}: cross-variable corr"))?;
    }
    Ok("rmse, CV, p95, rho1, degree and cross-variable correlation on 100 instances".into())
}

// ---------------------------------------------------------------------------
// 8. Normalization

fn norm_audit() -> Check {
    let (grid, ds) = small_dataset(6, 96);
    let data = PreparedData::new(&ds, 8, 0.8).map_err(|e| e.to_string())?;
    let model = GnnModel::new(ModelConfig { seq_len: 8, ..ModelConfig::default() }, Topology::from_grid(&grid), 0)
        .map_err(|e| e.to_string())?;
    let bytes = gnn_envelope(&model, &data.stats).to_bytes();
    let stored = Envelope::from_bytes(&bytes, GNN_MAGIC).and_then(|e| e.norm()).map_err(|e| e.to_string())?;

    // Scalar recomputation over the training prefix only.
    let train = &ds.snapshots[..data.n_train];
    let column = |width: usize, slices: &[&[f64]], c: usize| -> (f64, f64) {
        let mut sum = 0.0;
        let mut count = 0.0;
        for x in slices {
            for row in x.chunks_exact(width) {
                sum += row[c];
                count += 1.0;
            }
        }
        let mean = sum / count;
        let mut ss = 0.0;
        for x in slices {
            for row in x.chunks_exact(width) {
                ss += (row[c] - mean) * (row[c] - mean);
            }
        }
        (mean, (ss / count).sqrt())
    };
    let nodes: Vec<&[f64]> = train.iter().map(|s| s.node.as_slice()).collect();
    let edges: Vec<&[f64]> = train.iter().map(|s| s.edge.as_slice()).collect();
    for c in 0..NODE_FEATURES {
        let (m, s) = column(NODE_FEATURES, &nodes, c);
        ensure(stored.mu_v[c].to_bits() == m.to_bits() && stored.sigma_v[c].to_bits() == s.to_bits(), || {
            format!("node feature {c}: stored ({}, {}) vs recomputed ({m}, {s})", stored.mu_v[c], stored.sigma_v[c])
        })?;
    }
    for c in 0..EDGE_FEATURES {
        let (m, s) = column(EDGE_FEATURES, &edges, c);
        ensure(stored.mu_e[c].to_bits() == m.to_bits() && stored.sigma_e[c].to_bits() == s.to_bits(), || {
            format!("edge feature {c}: stored vs recomputed differ")
        })?;
    }
    let full = NormStats::compute(&ds.snapshots).map_err(|e| e.to_string())?;
    ensure(full != stored, || "statistics do not depend on the split".into())?;

    let mut worst = 0.0f64;
    for s in &ds.snapshots {
        let back = stored.denormalize_nodes(&stored.normalize_nodes(&s.node));
        for (i, (a, b)) in s.node.iter().zip(back.data()).enumerate() {
            if stored.sigma_v[i % NODE_FEATURES] > 1e-6 {
                worst = worst.max((a - b).abs() / a.abs().max(1.0));
            }
        }
    }
    ensure(worst <= 1e-12, || format!("round trip error {worst:e}"))?;
    Ok(format!("stats bit-exact over {} training snapshots; round trip error {worst:.1e}", data.n_train))
}
