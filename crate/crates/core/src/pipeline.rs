//! Shared plumbing between the command line and the benchmark: one
//! forecaster type over all four models, validation scoring on common
//! windows, and the seeded end-to-end benchmark run.

use crate::autodiff::Tensor;
use crate::baselines::{LinearModel, MlpConfig, MlpModel, RollingMean, LINEAR_LAG, LINEAR_RIDGE};
use crate::evaluation::{evaluate, Conditions, EvalError, EvalInputs, EvalReport, ModelKind};
use crate::grid::{build_nrel118_like, GridGraph};
use crate::model::{Frame, GnnModel, ModelConfig, ModelError, Topology};
use crate::powerflow::{
    generate_dataset, synthesize_profiles, system_conditions, Dataset, DatasetOptions, PowerFlowError, ProfileConfig,
    ProfileSeries, NODE_FEATURES,
};
use crate::training::{train, PreparedData, SequenceWindow, TrainConfig, TrainError, TrainState, Trainable};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone)]
pub enum Forecaster {
    Gnn(GnnModel),
    Mlp(MlpModel),
    Linear(LinearModel),
    Rolling(RollingMean),
}

impl Forecaster {
    pub fn kind(&self) -> ModelKind {
        match self {
            Forecaster::Gnn(_) => ModelKind::Gnn,
            Forecaster::Mlp(_) => ModelKind::Mlp,
            Forecaster::Linear(_) => ModelKind::Linear,
            Forecaster::Rolling(_) => ModelKind::RollingMean,
        }
    }

    /// Next-step node features in normalized units.
    pub fn predict(&self, frames: &[Frame]) -> Result<Tensor, ModelError> {
        match self {
            Forecaster::Gnn(m) => m.predict(frames),
            Forecaster::Mlp(m) => Trainable::predict(m, frames),
            Forecaster::Linear(m) => Ok(m.predict(frames)?),
            Forecaster::Rolling(m) => Ok(m.predict(frames)?),
        }
    }
}

/// De-normalized predictions for each window.
pub fn predict_windows(
    model: &Forecaster,
    data: &PreparedData,
    windows: &[SequenceWindow],
) -> Result<Vec<Tensor>, ModelError> {
    windows
        .iter()
        .map(|w| Ok(data.stats.denormalize_nodes(&model.predict(data.inputs(w))?)))
        .collect()
}

/// Raw node features at each window's target step.
pub fn raw_targets(ds: &Dataset, windows: &[SequenceWindow]) -> Vec<Tensor> {
    windows
        .iter()
        .map(|w| {
            let s = &ds.snapshots[w.target()];
            Tensor::matrix(s.n_nodes(), NODE_FEATURES, s.node.clone()).expect("node rows")
        })
        .collect()
}

/// Load and renewable share at each window's target hour.
pub fn target_conditions(ds: &Dataset, profiles: &ProfileSeries, windows: &[SequenceWindow]) -> Conditions {
    let (load, share) = system_conditions(profiles);
    let hours: Vec<usize> = windows.iter().map(|w| ds.snapshots[w.target()].t).collect();
    Conditions {
        load: hours.iter().map(|&t| load[t]).collect(),
        renewable_share: hours.iter().map(|&t| share[t]).collect(),
    }
}

/// Scores every forecaster on the validation windows.
pub fn evaluate_forecasters(
    models: &[Forecaster],
    grid: &GridGraph,
    ds: &Dataset,
    data: &PreparedData,
    conditions: Option<&Conditions>,
) -> Result<EvalReport, PipelineError> {
    let windows = &data.val_windows;
    let targets = raw_targets(ds, windows);
    let preds = models
        .iter()
        .map(|m| Ok((m.kind(), predict_windows(m, data, windows)?)))
        .collect::<Result<Vec<_>, ModelError>>()?;
    let bus_ids: Vec<usize> = grid.buses().iter().map(|b| b.id).collect();
    let degrees = grid.node_degrees();
    let scale = std::array::from_fn(|f| data.stats.sigma_v[f] + data.stats.eps);
    let inputs = EvalInputs {
        targets: &targets,
        bus_ids: &bus_ids,
        degrees: &degrees,
        scale,
        conditions,
    };
    Ok(evaluate(&preds, &inputs)?)
}

/// Seeded synthetic benchmark: data generation, all four models on one
/// split, validation report.
#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub seed: u64,
    pub hours: usize,
    pub train_frac: f64,
    pub model: ModelConfig,
    pub mlp: MlpConfig,
    pub train: TrainConfig,
    pub profiles: ProfileConfig,
}

impl BenchmarkConfig {
    pub fn new(seed: u64, epochs: usize, lr: f64) -> Self {
        BenchmarkConfig {
            seed,
            hours: 2160,
            train_frac: 0.8,
            model: ModelConfig::default(),
            mlp: MlpConfig::default(),
            train: TrainConfig {
                lr,
                epochs,
                seed,
                ..TrainConfig::default()
            },
            profiles: ProfileConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutcome {
    pub report: EvalReport,
    pub gnn: TrainState<GnnModel>,
    pub mlp: TrainState<MlpModel>,
}

pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkOutcome, PipelineError> {
    let grid = build_nrel118_like(cfg.seed);
    let profiles = synthesize_profiles(&grid, cfg.hours, cfg.seed, &cfg.profiles)?;
    let ds = generate_dataset(&grid, &profiles, &DatasetOptions::default())?;
    let data = PreparedData::new(&ds, cfg.model.seq_len, cfg.train_frac)?;

    let train_frames = &data.frames[..data.n_train];
    let linear = LinearModel::fit(train_frames, LINEAR_LAG.min(cfg.model.seq_len), LINEAR_RIDGE).map_err(ModelError::from)?;
    let rolling = RollingMean::new(crate::baselines::ROLLING_WINDOW.min(cfg.model.seq_len), cfg.model.seq_len).map_err(ModelError::from)?;

    let mlp_cfg = MlpConfig {
        seq_len: cfg.model.seq_len,
        ..cfg.mlp
    };
    let mlp = MlpModel::new(mlp_cfg, cfg.seed).map_err(ModelError::from)?;
    let mlp = train(TrainState::new(mlp), &data, &cfg.train, |_| Ok(()))?;

    let gnn = GnnModel::new(cfg.model, Topology::from_grid(&grid), cfg.seed)?;
    let gnn = train(TrainState::new(gnn), &data, &cfg.train, |_| Ok(()))?;

    let models = [
        Forecaster::Gnn(gnn.best.clone()),
        Forecaster::Mlp(mlp.best.clone()),
        Forecaster::Linear(linear),
        Forecaster::Rolling(rolling),
    ];
    let conditions = target_conditions(&ds, &profiles, &data.val_windows);
    let report = evaluate_forecasters(&models, &grid, &ds, &data, Some(&conditions))?;
    Ok(BenchmarkOutcome { report, gnn, mlp })
}
