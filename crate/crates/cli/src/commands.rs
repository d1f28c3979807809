use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gridcast::autodiff::Tensor;
use gridcast::baselines::{LinearModel, MlpModel, RollingMean, LINEAR_LAG, LINEAR_RIDGE, ROLLING_WINDOW};
use gridcast::checkpoint::{
    gnn_envelope, gnn_from_envelope, gnn_state_envelope, gnn_state_from, linear_envelope, linear_from_envelope,
    mlp_envelope, mlp_from_envelope, mlp_state_envelope, mlp_state_from, rolling_envelope, rolling_from_envelope,
    Envelope, GNN_MAGIC, LINEAR_MAGIC, MLP_MAGIC, ROLLING_MAGIC,
};
use gridcast::evaluation::{emit_report, EvalReport, ReportFormats};
use gridcast::grid::{build_nrel118_like, load_grid, write_grid, GridGraph};
use gridcast::model::{GnnModel, Topology};
use gridcast::pipeline::{evaluate_forecasters, target_conditions, Forecaster};
use gridcast::powerflow::{
    generate_dataset, read_dataset, read_profiles, synthesize_profiles, write_dataset, write_profiles, Dataset,
    DatasetOptions, NODE_FEATURES,
};
use gridcast::training::{
    loss_curve_csv, train, LrSchedule, NormStats, PreparedData, TrainState, Trainable,
};
use sha2::{Digest, Sha256};

use crate::config::{resolve_seed, GridSource, RunConfig};
use crate::{exit, Cli, CliError, Command, EvaluateArgs, GenerateArgs, ModelArg, PredictArgs, ReportArgs, ScheduleArg, TrainArgs};

pub const PREDICTION_HEADER: &str = "bus,v_mag_pu,v_ang_deg,p_mw,q_mvar";

struct Run {
    cfg: RunConfig,
    seed: u64,
    out: PathBuf,
}

impl Run {
    fn grid_dir(&self) -> PathBuf {
        self.out.join("grid")
    }
    fn data_dir(&self) -> PathBuf {
        self.out.join("data")
    }
    fn profiles_path(&self) -> PathBuf {
        self.out.join("profiles.csv")
    }
    fn ckpt_dir(&self) -> PathBuf {
        self.out.join("checkpoints")
    }
    fn report_dir(&self) -> PathBuf {
        self.out.join("report")
    }

    fn load_grid(&self, code: u8) -> Result<GridGraph, CliError> {
        let d = self.grid_dir();
        load_grid(d.join("bus.csv"), d.join("branch.csv"), d.join("gen.csv"))
            .map_err(|e| CliError::new(code, format!("grid snapshot in {}: {e}", d.display())))
    }

    fn load_dataset(&self, code: u8) -> Result<Dataset, CliError> {
        let d = self.data_dir();
        read_dataset(&d).map_err(|e| CliError::new(code, format!("dataset in {}: {e}", d.display())))
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = resolve_seed(cli.seed, cfg.seed)?;
    cfg.seed = Some(seed);
    let out = cli.out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("run"));
    cfg.out = Some(out.clone());
    let mut run = Run { cfg, seed, out };
    match cli.command {
        Command::Generate(a) => generate(&mut run, a),
        Command::Train(a) => train_cmd(&mut run, a),
        Command::Evaluate(a) => evaluate_cmd(&mut run, a),
        Command::Predict(a) => predict(&run, a),
        Command::Report(a) => report(&run, a),
    }
}

fn io_err(code: u8, path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::new(code, format!("{}: {e}", path.display()))
}

fn write_file(code: u8, path: &Path, body: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, body).map_err(|e| io_err(code, path, e))
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of the canonical JSON form; equal stats give equal digests.
pub fn stats_digest(stats: &NormStats) -> String {
    sha256_hex(&serde_json::to_vec(stats).expect("plain data serializes"))
}

fn generate(run: &mut Run, a: GenerateArgs) -> Result<(), CliError> {
    let cfg = &mut run.cfg;
    if let Some(g) = a.grid {
        cfg.grid = GridSource::parse_flag(&g);
    }
    if let Some(h) = a.hours {
        cfg.data.hours = h;
    }
    if let Some(t) = a.seq_len {
        cfg.model.seq_len = t;
    }
    cfg.validate()?;
    let hours = cfg.data.hours;
    if hours < cfg.model.seq_len + 1 {
        return Err(CliError::usage(format!(
            "--hours {hours} is shorter than one window plus its target ({} hours)",
            cfg.model.seq_len + 1
        )));
    }

    let code = exit::GENERATION;
    let grid = match &cfg.grid {
        GridSource::Nrel118 => build_nrel118_like(run.seed),
        GridSource::Csv { dir } => load_grid(dir.join("bus.csv"), dir.join("branch.csv"), dir.join("gen.csv"))
            .map_err(|e| CliError::new(code, format!("grid {}: {e}", dir.display())))?,
    };
    let profiles = synthesize_profiles(&grid, hours, run.seed, &cfg.profiles)
        .map_err(|e| CliError::new(code, format!("profile synthesis: {e}")))?;
    let ds = generate_dataset(&grid, &profiles, &DatasetOptions::default())
        .map_err(|e| CliError::new(code, format!("dataset generation: {e}")))?;

    fs::create_dir_all(&run.out).map_err(|e| io_err(code, &run.out, e))?;
    write_grid(&grid, run.grid_dir()).map_err(|e| CliError::new(code, e.to_string()))?;
    write_dataset(&ds, run.data_dir()).map_err(|e| io_err(code, &run.data_dir(), e))?;
    write_profiles(&profiles, run.profiles_path()).map_err(|e| io_err(code, &run.profiles_path(), e))?;

    let log = &ds.log;
    let mut csv = String::from("t,iterations,final_mismatch_pu,retries\n");
    for (t, (it, mis)) in log.iterations.iter().zip(&log.final_mismatch).enumerate() {
        let retries = log.retried.iter().find(|r| r.0 == t).map_or(0, |r| r.1);
        let _ = writeln!(csv, "{t},{it},{mis:e},{retries}");
    }
    write_file(code, &run.out.join("solver_log.csv"), csv)?;
    write_file(code, &run.out.join("generate_config.json"), to_json(&run.cfg))?;

    let max_it = log.iterations.iter().max().copied().unwrap_or(0);
    let mean_it = log.iterations.iter().sum::<usize>() as f64 / log.iterations.len().max(1) as f64;
    let max_mis = log.final_mismatch.iter().fold(0.0f64, |m, &x| m.max(x));
    println!(
        "{} snapshots on {} buses / {} branches; Newton iterations mean {mean_it:.2}, max {max_it}; \
         max mismatch {max_mis:.2e} p.u.; {} retried timesteps",
        ds.len(),
        grid.n_buses(),
        grid.n_branches(),
        log.retried.len()
    );
    println!("wrote {}", run.out.display());
    Ok(())
}

fn selected(m: ModelArg) -> Vec<ModelArg> {
    match m {
        ModelArg::All => vec![ModelArg::Gnn, ModelArg::Mlp, ModelArg::Linear, ModelArg::Rolling],
        one => vec![one],
    }
}

fn file_stem(m: ModelArg) -> &'static str {
    match m {
        ModelArg::Gnn => "gnn",
        ModelArg::Mlp => "mlp",
        ModelArg::Linear => "linear",
        ModelArg::Rolling => "rolling",
        ModelArg::All => "all",
    }
}

fn magic_of(m: ModelArg) -> [u8; 8] {
    match m {
        ModelArg::Gnn => GNN_MAGIC,
        ModelArg::Mlp => MLP_MAGIC,
        ModelArg::Linear => LINEAR_MAGIC,
        ModelArg::Rolling | ModelArg::All => ROLLING_MAGIC,
    }
}

fn magic_str(m: [u8; 8]) -> String {
    String::from_utf8_lossy(&m).into_owned()
}

fn write_envelope(env: &Envelope, path: &Path, code: u8) -> Result<(), CliError> {
    env.write(path).map_err(|e| io_err(code, path, e))
}

fn read_envelope(path: &Path, magic: [u8; 8], code: u8) -> Result<Envelope, CliError> {
    if !path.is_file() {
        return Err(CliError::new(code, format!("missing artifact {} ({})", path.display(), magic_str(magic))));
    }
    Envelope::read(path, magic).map_err(|e| io_err(code, path, e))
}

fn train_cmd(run: &mut Run, a: TrainArgs) -> Result<(), CliError> {
    let cfg = &mut run.cfg;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr = lr;
    }
    if let Some(s) = a.schedule {
        cfg.train.schedule = match s {
            ScheduleArg::Constant => LrSchedule::Constant,
            ScheduleArg::Cosine => LrSchedule::Cosine,
        };
    }
    if a.patience.is_some() {
        cfg.train.patience = a.patience;
    }
    if let Some(p) = a.dropout {
        if !(0.0..1.0).contains(&p) {
            return Err(CliError::usage(format!("--dropout {p} outside [0, 1)")));
        }
        cfg.model.dropout = p;
    }
    if let Some(t) = a.split.seq_len {
        cfg.model.seq_len = t;
    }
    if let Some(f) = a.split.train_frac {
        cfg.data.train_frac = f;
    }
    cfg.train.seed = run.seed;
    cfg.validate()?;

    let code = exit::TRAINING;
    let grid = run.load_grid(code)?;
    let ds = run.load_dataset(code)?;
    let cfg = &run.cfg;
    let seq_len = cfg.model.seq_len;
    let data = PreparedData::new(&ds, seq_len, cfg.data.train_frac).map_err(|e| CliError::new(code, e.to_string()))?;
    let dir = run.ckpt_dir();
    fs::create_dir_all(&dir).map_err(|e| io_err(code, &dir, e))?;
    write_file(code, &dir.join("norm_stats.json"), to_json(&data.stats))?;
    write_file(code, &dir.join("train_config.json"), to_json(cfg))?;
    let stats = &data.stats;

    for kind in selected(a.model) {
        let path = |suffix: &str| dir.join(format!("{}{suffix}", file_stem(kind)));
        match kind {
            ModelArg::Gnn => {
                let topo = Topology::from_grid(&grid);
                let state = if a.resume {
                    let last = read_envelope(&path(".last.ckpt"), GNN_MAGIC, code)?;
                    let best = read_envelope(&path(".ckpt"), GNN_MAGIC, code)?;
                    let (state, old) = gnn_state_from(&last, &best, topo).map_err(|e| CliError::new(code, e.to_string()))?;
                    check_stats(&old, stats, "gnn checkpoint", code)?;
                    state
                } else {
                    let model = GnnModel::new(cfg.model, topo, run.seed).map_err(|e| CliError::new(code, e.to_string()))?;
                    TrainState::new(model)
                };
                let state = fit(state, &data, run, &path(".last.ckpt"), &path(".ckpt"), &path(""), |s| {
                    (gnn_state_envelope(s, stats), gnn_envelope(&s.best, stats))
                })?;
                report_fit("gnn", &state);
            }
            ModelArg::Mlp => {
                let state = if a.resume {
                    let last = read_envelope(&path(".last.ckpt"), MLP_MAGIC, code)?;
                    let best = read_envelope(&path(".ckpt"), MLP_MAGIC, code)?;
                    let (state, old) = mlp_state_from(&last, &best).map_err(|e| CliError::new(code, e.to_string()))?;
                    check_stats(&old, stats, "mlp checkpoint", code)?;
                    state
                } else {
                    let model = MlpModel::new(cfg.mlp_config(), run.seed).map_err(|e| CliError::new(code, e.to_string()))?;
                    TrainState::new(model)
                };
                let state = fit(state, &data, run, &path(".last.ckpt"), &path(".ckpt"), &path(""), |s| {
                    (mlp_state_envelope(s, stats), mlp_envelope(&s.best, stats))
                })?;
                report_fit("mlp", &state);
            }
            ModelArg::Linear => {
                let lag = LINEAR_LAG.min(seq_len);
                let model = LinearModel::fit(&data.frames[..data.n_train], lag, LINEAR_RIDGE)
                    .map_err(|e| CliError::new(code, format!("linear fit: {e}")))?;
                write_envelope(&linear_envelope(&model, stats), &path(".ckpt"), code)?;
                println!("linear: lag {lag}, ridge {LINEAR_RIDGE:e}");
            }
            ModelArg::Rolling => {
                // Nothing to fit; the file marks the baseline as part of the run.
                let model = RollingMean::new(ROLLING_WINDOW.min(seq_len), seq_len)
                    .map_err(|e| CliError::new(code, e.to_string()))?;
                write_envelope(&rolling_envelope(&model, stats), &path(".ckpt"), code)?;
                println!("rolling mean: window {}", model.window);
            }
            ModelArg::All => unreachable!("expanded by selected()"),
        }
    }
    Ok(())
}

fn check_stats(found: &NormStats, expected: &NormStats, what: &str, code: u8) -> Result<(), CliError> {
    let (a, b) = (stats_digest(found), stats_digest(expected));
    if a != b {
        return Err(CliError::new(
            code,
            format!("{what}: normalization stats hash {a} does not match {b}"),
        ));
    }
    Ok(())
}

/// Trains to the configured epoch count, rewriting the last and best
/// checkpoints and the loss curve after every epoch.
fn fit<M: Trainable>(
    state: TrainState<M>,
    data: &PreparedData,
    run: &Run,
    last_path: &Path,
    best_path: &Path,
    stem: &Path,
    envelopes: impl Fn(&TrainState<M>) -> (Envelope, Envelope),
) -> Result<TrainState<M>, CliError> {
    let loss_path = stem.with_file_name(format!(
        "loss_{}.csv",
        stem.file_name().and_then(|s| s.to_str()).unwrap_or("model")
    ));
    let state = train(state, data, &run.cfg.train, |s| {
        let (last, best) = envelopes(s);
        let io = |e: gridcast::checkpoint::CheckpointError| std::io::Error::other(e.to_string());
        last.write(last_path).map_err(io)?;
        best.write(best_path).map_err(io)?;
        fs::write(&loss_path, loss_curve_csv(&s.history))
    })
    .map_err(|e| CliError::new(exit::TRAINING, e.to_string()))?;
    Ok(state)
}

fn report_fit<M>(name: &str, s: &TrainState<M>) {
    if let Some(h) = s.history.last() {
        println!(
            "{name}: {} epochs, last train {:.6} val {:.6}; best val {:.6} at epoch {}",
            s.epoch, h.train_mse, h.val_mse, s.best_val, s.best_epoch
        );
    } else {
        println!("{name}: already at {} epochs, nothing to do", s.epoch);
    }
}

struct LoadedModels {
    models: Vec<Forecaster>,
    stats: NormStats,
    seq_len: usize,
}

/// Loads all four checkpoints, listing every missing one in a single error.
fn load_all(run: &Run, grid: &GridGraph, code: u8) -> Result<LoadedModels, CliError> {
    let dir = run.ckpt_dir();
    let kinds = selected(ModelArg::All);
    let missing: Vec<String> = kinds
        .iter()
        .map(|&k| (k, dir.join(format!("{}.ckpt", file_stem(k)))))
        .filter(|(_, p)| !p.is_file())
        .map(|(k, p)| format!("{} ({})", p.display(), magic_str(magic_of(k))))
        .collect();
    if !missing.is_empty() {
        return Err(CliError::new(code, format!("missing artifacts: {}", missing.join(", "))));
    }
    let ce = |e: gridcast::checkpoint::CheckpointError| CliError::new(code, e.to_string());
    let read = |k: ModelArg| read_envelope(&dir.join(format!("{}.ckpt", file_stem(k))), magic_of(k), code);

    let (gnn, stats) = gnn_from_envelope(&read(ModelArg::Gnn)?, Topology::from_grid(grid)).map_err(ce)?;
    let (mlp, s_mlp) = mlp_from_envelope(&read(ModelArg::Mlp)?).map_err(ce)?;
    let (linear, s_lin) = linear_from_envelope(&read(ModelArg::Linear)?).map_err(ce)?;
    let (rolling, s_roll) = rolling_from_envelope(&read(ModelArg::Rolling)?).map_err(ce)?;
    for (s, what) in [(&s_mlp, "mlp"), (&s_lin, "linear"), (&s_roll, "rolling")] {
        check_stats(s, &stats, &format!("{what} checkpoint vs gnn checkpoint"), code)?;
    }
    let seq_len = gnn.config.seq_len;
    if mlp.config.seq_len != seq_len {
        return Err(CliError::new(
            code,
            format!("mlp window {} differs from the gnn window {seq_len}", mlp.config.seq_len),
        ));
    }
    Ok(LoadedModels {
        models: vec![
            Forecaster::Gnn(gnn),
            Forecaster::Mlp(mlp),
            Forecaster::Linear(linear),
            Forecaster::Rolling(rolling),
        ],
        stats,
        seq_len,
    })
}

fn evaluate_cmd(run: &mut Run, a: EvaluateArgs) -> Result<(), CliError> {
    if let Some(f) = a.train_frac {
        run.cfg.data.train_frac = f;
    }
    run.cfg.validate()?;
    let code = exit::EVALUATION;
    let grid = run.load_grid(code)?;
    let loaded = load_all(run, &grid, code)?;
    let ds = run.load_dataset(code)?;
    let profiles = read_profiles(run.profiles_path()).map_err(|e| io_err(code, &run.profiles_path(), e))?;
    let data = PreparedData::new(&ds, loaded.seq_len, run.cfg.data.train_frac)
        .map_err(|e| CliError::new(code, e.to_string()))?;
    check_stats(&loaded.stats, &data.stats, "checkpoints vs dataset training split", code)?;

    let conditions = target_conditions(&ds, &profiles, &data.val_windows);
    let report = evaluate_forecasters(&loaded.models, &grid, &ds, &data, Some(&conditions))
        .map_err(|e| CliError::new(code, e.to_string()))?;
    let dir = run.report_dir();
    emit_report(&report, &dir, ReportFormats { json: true, svg: a.svg }).map_err(|e| CliError::new(code, e.to_string()))?;
    let table = fs::read_to_string(dir.join("table1.txt")).map_err(|e| io_err(code, &dir, e))?;
    print!("{table}");
    println!("{} validation windows; report in {}", report.steps, dir.display());
    Ok(())
}

fn predict(run: &Run, a: PredictArgs) -> Result<(), CliError> {
    if a.model == ModelArg::All {
        return Err(CliError::usage("predict needs a single --model"));
    }
    let code = exit::EVALUATION;
    let kind = a.model;
    let ckpt = a
        .checkpoint
        .unwrap_or_else(|| run.ckpt_dir().join(format!("{}.ckpt", file_stem(kind))));
    let stats_path = a.stats.unwrap_or_else(|| run.ckpt_dir().join("norm_stats.json"));
    let grid = run.load_grid(code)?;
    let env = read_envelope(&ckpt, magic_of(kind), code)?;
    let ce = |e: gridcast::checkpoint::CheckpointError| io_err(code, &ckpt, e);
    let (model, stats, seq_len) = match kind {
        ModelArg::Gnn => {
            let (m, s) = gnn_from_envelope(&env, Topology::from_grid(&grid)).map_err(ce)?;
            let t = m.config.seq_len;
            (Forecaster::Gnn(m), s, t)
        }
        ModelArg::Mlp => {
            let (m, s) = mlp_from_envelope(&env).map_err(ce)?;
            let t = m.config.seq_len;
            (Forecaster::Mlp(m), s, t)
        }
        ModelArg::Linear => {
            let (m, s) = linear_from_envelope(&env).map_err(ce)?;
            (Forecaster::Linear(m), s, run.cfg.model.seq_len)
        }
        ModelArg::Rolling | ModelArg::All => {
            let (m, s) = rolling_from_envelope(&env).map_err(ce)?;
            (Forecaster::Rolling(m), s, run.cfg.model.seq_len)
        }
    };
    let text = fs::read_to_string(&stats_path).map_err(|e| io_err(code, &stats_path, e))?;
    let file_stats: NormStats = serde_json::from_str(&text).map_err(|e| io_err(code, &stats_path, e))?;
    check_stats(&stats, &file_stats, &format!("{} vs {}", ckpt.display(), stats_path.display()), code)?;

    let snapshots = match (&a.window, a.start) {
        (Some(dir), _) => {
            let ds = read_dataset(dir).map_err(|e| io_err(code, dir, e))?;
            if ds.len() != seq_len {
                return Err(CliError::new(
                    code,
                    format!("window has {} snapshots, the model needs exactly {seq_len}", ds.len()),
                ));
            }
            ds.snapshots
        }
        (None, Some(start)) => {
            let ds = run.load_dataset(code)?;
            if start + seq_len > ds.len() {
                return Err(CliError::new(
                    code,
                    format!("window {start}..{} runs past the {} snapshots", start + seq_len, ds.len()),
                ));
            }
            ds.snapshots[start..start + seq_len].to_vec()
        }
        (None, None) => return Err(CliError::usage("predict needs --window or --start")),
    };
    if let Some(s) = snapshots.iter().find(|s| s.n_nodes() != grid.n_buses()) {
        return Err(CliError::new(
            code,
            format!("snapshot t={} has {} buses, the grid {}", s.t, s.n_nodes(), grid.n_buses()),
        ));
    }
    let frames: Vec<_> = snapshots.iter().map(|s| stats.normalize(s)).collect();
    let pred = model.predict(&frames).map_err(|e| CliError::new(code, e.to_string()))?;
    let pred = stats.denormalize_nodes(&pred);

    let out = a.output.unwrap_or_else(|| run.out.join("prediction.csv"));
    write_file(code, &out, prediction_csv(&grid, &pred))?;
    println!(
        "predicted hour {} from {} snapshots with {}; wrote {}",
        snapshots.last().map_or(0, |s| s.t + 1),
        seq_len,
        model.kind().label(),
        out.display()
    );
    Ok(())
}

pub fn prediction_csv(grid: &GridGraph, pred: &Tensor) -> String {
    let mut out = format!("{PREDICTION_HEADER}\n");
    for (v, bus) in grid.buses().iter().enumerate() {
        let r = &pred.data()[v * NODE_FEATURES..(v + 1) * NODE_FEATURES];
        let _ = writeln!(out, "{},{},{},{},{}", bus.id, r[0], r[1], r[2], r[3]);
    }
    out
}

fn report(run: &Run, a: ReportArgs) -> Result<(), CliError> {
    let code = exit::EVALUATION;
    let input = a.input.unwrap_or_else(|| run.report_dir().join("report.json"));
    if !input.is_file() {
        return Err(CliError::new(code, format!("missing artifact {}", input.display())));
    }
    let text = fs::read_to_string(&input).map_err(|e| io_err(code, &input, e))?;
    let rep: EvalReport = serde_json::from_str(&text).map_err(|e| io_err(code, &input, e))?;
    let dest = a.dest.unwrap_or_else(|| run.report_dir());
    let files = emit_report(&rep, &dest, ReportFormats { json: true, svg: a.svg })
        .map_err(|e| CliError::new(code, e.to_string()))?;
    println!("wrote {} files to {}", files.len(), dest.display());
    Ok(())
}
