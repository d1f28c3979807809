use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gridcast::checkpoint::{gnn_from_envelope, Envelope, GNN_MAGIC};
use gridcast::grid::load_grid;
use gridcast::model::Topology;
use gridcast::pipeline::{predict_windows, Forecaster};
use gridcast::powerflow::read_dataset;
use gridcast::training::PreparedData;

fn gridcast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridcast"))
        .args(args)
        .env_remove("GRIDCAST_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn ok(o: Output) -> Output {
    assert_eq!(code(&o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Every file under `dir`, keyed by relative path.
fn snapshot_tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// A short run with eight-hour windows so that 72 hours split cleanly.
fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(
        &path,
        "seed = 7\n\n[data]\nhours = 72\n\n[model]\nseq_len = 8\n\n[train]\nlr = 0.001\nepochs = 2\n",
    )
    .unwrap();
    path
}

fn generated(dir: &Path) -> (PathBuf, PathBuf) {
    let cfg = small_config(dir);
    let out = dir.join("run");
    ok(gridcast(&["--config", p(&cfg), "--out", p(&out), "generate"]));
    (cfg, out)
}

#[test]
fn help_matches_golden() {
    let mut text = String::new();
    for cmd in ["", "generate", "train", "evaluate", "predict", "report"] {
        let mut args: Vec<&str> = Vec::new();
        if !cmd.is_empty() {
            args.push(cmd);
        }
        args.push("--help");
        let o = ok(gridcast(&args));
        let head = if cmd.is_empty() { "gridcast --help".to_string() } else { format!("gridcast {cmd} --help") };
        text.push_str(&format!("==== {head}\n"));
        text.push_str(&String::from_utf8(o.stdout).unwrap());
    }
    let golden = include_str!("golden/help.txt");
    assert_eq!(text, golden);
}

#[test]
fn unknown_flag_is_usage_error() {
    assert_eq!(code(&gridcast(&["generate", "--horizon", "3"])), 1);
    assert_eq!(code(&gridcast(&["frobnicate"])), 1);
}

#[test]
fn generate_writes_72_snapshots_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let o = ok(gridcast(&["generate", "--grid", "nrel118", "--hours", "72", "--seed", "7", "--seq-len", "8", "--out", p(out)]));
        assert!(String::from_utf8_lossy(&o.stdout).contains("72 snapshots"));
    }
    let ds = read_dataset(a.join("data")).unwrap();
    assert_eq!(ds.len(), 72);
    assert_eq!(ds.n_nodes, 118);

    let first = snapshot_tree(&a);
    ok(gridcast(&["generate", "--grid", "nrel118", "--hours", "72", "--seed", "7", "--seq-len", "8", "--out", p(&a)]));
    assert_eq!(snapshot_tree(&a), first);
    // Only the echoed config names the output directory.
    let other = snapshot_tree(&b);
    for (name, bytes) in &first {
        if name != Path::new("generate_config.json") {
            assert_eq!(Some(bytes), other.get(name), "{}", name.display());
        }
    }
}

#[test]
fn seed_env_is_a_fallback() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    ok(gridcast(&["generate", "--hours", "60", "--seed", "5", "--out", p(&a)]));
    let env_run = Command::new(env!("CARGO_BIN_EXE_gridcast"))
        .args(["generate", "--hours", "60", "--out", p(&b)])
        .env("GRIDCAST_SEED", "5")
        .output()
        .unwrap();
    ok(env_run);
    // An explicit flag wins over the variable.
    let flag_run = Command::new(env!("CARGO_BIN_EXE_gridcast"))
        .args(["generate", "--hours", "60", "--seed", "6", "--out", p(&c)])
        .env("GRIDCAST_SEED", "5")
        .output()
        .unwrap();
    ok(flag_run);
    let read = |d: &Path| fs::read(d.join("data/nodes.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn short_horizon_fails_before_solving() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = gridcast(&["generate", "--hours", "10", "--out", p(&out)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--hours 10"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn csv_grid_source_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    ok(gridcast(&["generate", "--hours", "60", "--seed", "2", "--out", p(&a)]));
    let b = tmp.path().join("b");
    let grid = a.join("grid");
    ok(gridcast(&["generate", "--hours", "60", "--seed", "2", "--grid", p(&grid), "--out", p(&b)]));
    assert_eq!(fs::read(a.join("data/nodes.csv")).unwrap(), fs::read(b.join("data/nodes.csv")).unwrap());
    let o = gridcast(&["generate", "--grid", p(&tmp.path().join("nowhere")), "--out", p(&b)]);
    assert_eq!(code(&o), 1);
}

#[test]
fn train_without_data_is_training_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gridcast(&["train", "--out", p(&tmp.path().join("empty"))]);
    assert_eq!(code(&o), 3);
}

#[test]
fn evaluate_lists_every_missing_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, out) = generated(tmp.path());
    let o = gridcast(&["--config", p(&cfg), "--out", p(&out), "evaluate"]);
    assert_eq!(code(&o), 4);
    let err = stderr(&o);
    for magic in ["GNNCKPT1", "MLPBASE1", "LINREG01", "RMEAN001"] {
        assert!(err.contains(magic), "{err}");
    }
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, out) = generated(tmp.path());
    let base = ["--config", p(&cfg), "--out", p(&out)];
    let with = |extra: &[&str]| -> Vec<String> { base.iter().chain(extra).map(|s| s.to_string()).collect() };
    let run = |extra: &[&str]| {
        let args = with(extra);
        gridcast(&args.iter().map(String::as_str).collect::<Vec<_>>())
    };

    ok(run(&["train", "--model", "all"]));
    let ck = out.join("checkpoints");
    for f in ["gnn.ckpt", "mlp.ckpt", "linear.ckpt", "rolling.ckpt", "loss_gnn.csv", "loss_mlp.csv", "norm_stats.json"] {
        assert!(ck.join(f).is_file(), "{f}");
    }
    let loss = fs::read_to_string(ck.join("loss_gnn.csv")).unwrap();
    assert_eq!(loss.lines().count(), 3);
    assert!(loss.starts_with("epoch,train_mse,val_mse\n"));

    ok(run(&["evaluate"]));
    let report = out.join("report");
    let table = fs::read_to_string(report.join("table1.csv")).unwrap();
    let rows: Vec<&str> = table.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 5, "{table}");
    for (row, label) in rows[1..].iter().zip(["GNN", "NN", "LR", "RM"]) {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells[0], label);
        let numeric = cells[1..].iter().filter(|c| c.parse::<f64>().is_ok()).count();
        assert!(numeric >= 4, "{row}");
    }

    let first = snapshot_tree(&report);
    ok(run(&["evaluate"]));
    assert_eq!(snapshot_tree(&report), first);

    // The report command re-renders identical files from report.json.
    let rerender = tmp.path().join("rerender");
    ok(run(&["report", "--input", p(&report.join("report.json")), "--dest", p(&rerender)]));
    assert_eq!(snapshot_tree(&rerender), first);

    // predict goes through the same code path as evaluation.
    let grid_dir = out.join("grid");
    let grid = load_grid(grid_dir.join("bus.csv"), grid_dir.join("branch.csv"), grid_dir.join("gen.csv")).unwrap();
    let ds = read_dataset(out.join("data")).unwrap();
    let env = Envelope::read(ck.join("gnn.ckpt"), GNN_MAGIC).unwrap();
    let (gnn, _) = gnn_from_envelope(&env, Topology::from_grid(&grid)).unwrap();
    let data = PreparedData::new(&ds, 8, 0.8).unwrap();
    let w = data.train_windows[5];
    let expected = predict_windows(&Forecaster::Gnn(gnn), &data, &[w]).unwrap().remove(0);
    let pred_path = tmp.path().join("pred.csv");
    ok(run(&["predict", "--start", &w.start.to_string(), "--output", p(&pred_path)]));
    let csv = fs::read_to_string(&pred_path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("bus,v_mag_pu,v_ang_deg,p_mw,q_mvar"));
    let got: Vec<f64> = lines
        .flat_map(|l| l.split(',').skip(1).map(|c| c.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .collect();
    assert_eq!(got.len(), 118 * 4);
    for (a, b) in got.iter().zip(expected.data()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }

    // A window directory of the right length gives the same answer.
    let win_dir = tmp.path().join("window");
    let mut win = ds.clone();
    win.snapshots = ds.snapshots[w.inputs()].to_vec();
    gridcast::powerflow::write_dataset(&win, &win_dir).unwrap();
    let pred2 = tmp.path().join("pred2.csv");
    ok(run(&["predict", "--window", p(&win_dir), "--output", p(&pred2)]));
    assert_eq!(fs::read(&pred2).unwrap(), csv.as_bytes());

    // Truncated window.
    win.snapshots.pop();
    let short_dir = tmp.path().join("short");
    gridcast::powerflow::write_dataset(&win, &short_dir).unwrap();
    let o = run(&["predict", "--window", p(&short_dir)]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("exactly 8"), "{}", stderr(&o));

    // Baselines predict too.
    for m in ["mlp", "linear", "rolling"] {
        ok(run(&["predict", "--model", m, "--start", "0", "--output", p(&tmp.path().join(format!("{m}.csv")))]));
    }

    // Stats that do not belong to the checkpoint.
    let stats_path = ck.join("norm_stats.json");
    let mut stats: gridcast::training::NormStats = serde_json::from_str(&fs::read_to_string(&stats_path).unwrap()).unwrap();
    stats.mu_v[2] += 1.0;
    let bad = tmp.path().join("bad_stats.json");
    fs::write(&bad, serde_json::to_string(&stats).unwrap()).unwrap();
    let o = run(&["predict", "--start", "0", "--stats", p(&bad)]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("hash"), "{}", stderr(&o));

    // A missing checkpoint is named by its magic.
    fs::remove_file(ck.join("mlp.ckpt")).unwrap();
    let o = run(&["evaluate"]);
    assert_eq!(code(&o), 4);
    let err = stderr(&o);
    assert!(err.contains("MLPBASE1") && err.contains("mlp.ckpt"), "{err}");
    assert!(!err.contains("GNNCKPT1"), "{err}");
}

#[test]
fn resumed_training_matches_unbroken_run() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, out) = generated(tmp.path());
    let copy = tmp.path().join("copy");
    for sub in ["grid", "data"] {
        fs::create_dir_all(copy.join(sub)).unwrap();
        for e in fs::read_dir(out.join(sub)).unwrap() {
            let e = e.unwrap();
            fs::copy(e.path(), copy.join(sub).join(e.file_name())).unwrap();
        }
    }
    for model in ["gnn", "mlp"] {
        ok(gridcast(&["--config", p(&cfg), "--out", p(&out), "train", "--model", model, "--epochs", "3"]));
        ok(gridcast(&["--config", p(&cfg), "--out", p(&copy), "train", "--model", model, "--epochs", "2"]));
        ok(gridcast(&["--config", p(&cfg), "--out", p(&copy), "train", "--model", model, "--epochs", "3", "--resume"]));
        let curve = |d: &Path| -> Vec<Vec<f64>> {
            fs::read_to_string(d.join(format!("checkpoints/loss_{model}.csv")))
                .unwrap()
                .lines()
                .skip(1)
                .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
                .collect()
        };
        let (a, b) = (curve(&out), curve(&copy));
        assert_eq!(a.len(), 3);
        assert_eq!(a.len(), b.len());
        for (ra, rb) in a.iter().zip(&b) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((x - y).abs() <= 1e-9, "{model}: {x} vs {y}");
            }
        }
        let ckpt = format!("checkpoints/{model}.ckpt");
        assert_eq!(fs::read(out.join(&ckpt)).unwrap(), fs::read(copy.join(&ckpt)).unwrap());
    }
    let o = gridcast(&["--config", p(&cfg), "--out", p(&tmp.path().join("fresh")), "train", "--resume"]);
    assert_ne!(code(&o), 0);
}
