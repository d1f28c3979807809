//! Normalization, chronological windowing and the optimization loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{mse, Tensor};
use crate::model::{Frame, ModelError};
use crate::powerflow::{Dataset, Snapshot, EDGE_FEATURES, NODE_FEATURES};

pub const NORM_EPS: f64 = 1e-8;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Data(String),
    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Divergence {
        epoch: usize,
        step: usize,
        detail: String,
    },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("checkpoint callback failed: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-feature mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mu_v: Vec<f64>,
    pub sigma_v: Vec<f64>,
    pub mu_e: Vec<f64>,
    pub sigma_e: Vec<f64>,
    pub eps: f64,
}

fn column_stats<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, width: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; width];
    let mut count = 0usize;
    for r in rows.clone() {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
        count += 1;
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let mut var = vec![0.0; width];
    for r in rows {
        for ((s, x), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (x - m) * (x - m);
        }
    }
    let sd = var.iter().map(|s| (s / count as f64).sqrt()).collect();
    (mean, sd)
}

impl NormStats {
    /// Two-pass statistics over every (node, time) and (edge, time) cell.
    pub fn compute(snapshots: &[Snapshot]) -> Result<Self, TrainError> {
        if snapshots.is_empty() {
            return Err(TrainError::Data("cannot compute statistics of an empty split".into()));
        }
        let nodes = snapshots.iter().flat_map(|s| s.node.chunks_exact(NODE_FEATURES));
        let (mu_v, sigma_v) = column_stats(nodes, NODE_FEATURES);
        let edges = snapshots.iter().flat_map(|s| s.edge.chunks_exact(EDGE_FEATURES));
        let (mu_e, sigma_e) = if snapshots[0].edge.is_empty() {
            (vec![0.0; EDGE_FEATURES], vec![0.0; EDGE_FEATURES])
        } else {
            column_stats(edges, EDGE_FEATURES)
        };
        Ok(NormStats {
            mu_v,
            sigma_v,
            mu_e,
            sigma_e,
            eps: NORM_EPS,
        })
    }

    fn apply(x: &[f64], mu: &[f64], sigma: &[f64], eps: f64) -> Vec<f64> {
        let w = mu.len();
        x.iter()
            .enumerate()
            .map(|(i, v)| (v - mu[i % w]) / (sigma[i % w] + eps))
            .collect()
    }

    pub fn normalize(&self, s: &Snapshot) -> Frame {
        let n = s.n_nodes();
        let e = s.n_edges();
        Frame {
            node: Tensor::matrix(n, NODE_FEATURES, Self::apply(&s.node, &self.mu_v, &self.sigma_v, self.eps))
                .expect("node rows"),
            edge: Tensor::matrix(e, EDGE_FEATURES, Self::apply(&s.edge, &self.mu_e, &self.sigma_e, self.eps))
                .expect("edge rows"),
        }
    }

    /// Normalized node features only, N×4.
    pub fn normalize_nodes(&self, node: &[f64]) -> Tensor {
        Tensor::matrix(
            node.len() / NODE_FEATURES,
            NODE_FEATURES,
            Self::apply(node, &self.mu_v, &self.sigma_v, self.eps),
        )
        .expect("node rows")
    }

    /// Inverse of the node normalization: x̃·(σ+ε) + μ.
    pub fn denormalize_nodes(&self, x: &Tensor) -> Tensor {
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let f = i % NODE_FEATURES;
                v * (self.sigma_v[f] + self.eps) + self.mu_v[f]
            })
            .collect();
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    }
}

/// Number of leading snapshots assigned to training.
pub fn chronological_split(n: usize, train_frac: f64, seq_len: usize) -> Result<usize, TrainError> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(TrainError::Config(format!("train fraction {train_frac} outside (0, 1)")));
    }
    if n < seq_len + 2 {
        return Err(TrainError::Data(format!(
            "{n} snapshots cannot be split for sequence length {seq_len}"
        )));
    }
    Ok((n as f64 * train_frac).round() as usize)
}

/// Consecutive inputs `start..start+len` predicting snapshot `start+len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceWindow {
    pub start: usize,
    pub len: usize,
}

impl SequenceWindow {
    pub fn target(&self) -> usize {
        self.start + self.len
    }

    pub fn inputs(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Stride-1 windows that stay inside `range`; `range.len() - seq_len` of them.
pub fn make_windows(range: std::ops::Range<usize>, seq_len: usize) -> Result<Vec<SequenceWindow>, TrainError> {
    if range.len() < seq_len + 1 {
        return Err(TrainError::Data(format!(
            "split of {} snapshots is too short for windows of {seq_len} plus a target",
            range.len()
        )));
    }
    Ok((range.start..range.end - seq_len)
        .map(|start| SequenceWindow { start, len: seq_len })
        .collect())
}

/// Normalized frames and the windows over them, shared by every model.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub stats: NormStats,
    pub frames: Vec<Frame>,
    pub n_train: usize,
    pub train_windows: Vec<SequenceWindow>,
    pub val_windows: Vec<SequenceWindow>,
}

impl PreparedData {
    pub fn new(ds: &Dataset, seq_len: usize, train_frac: f64) -> Result<Self, TrainError> {
        let n_train = chronological_split(ds.len(), train_frac, seq_len)?;
        let stats = NormStats::compute(&ds.snapshots[..n_train])?;
        let frames = ds.snapshots.iter().map(|s| stats.normalize(s)).collect();
        Ok(PreparedData {
            train_windows: make_windows(0..n_train, seq_len)?,
            val_windows: make_windows(n_train..ds.len(), seq_len)?,
            stats,
            frames,
            n_train,
        })
    }

    pub fn inputs(&self, w: &SequenceWindow) -> &[Frame] {
        &self.frames[w.inputs()]
    }

    pub fn target(&self, w: &SequenceWindow) -> &Tensor {
        &self.frames[w.target()].node
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Stop after this many epochs without validation improvement.
    pub patience: Option<usize>,
    pub schedule: LrSchedule,
}

/// Learning-rate schedule over the whole run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from `lr` down to zero at the last step of the last epoch.
    Cosine,
}

impl LrSchedule {
    /// Rate for 0-based optimizer step `step` of `total`.
    pub fn rate(self, lr: f64, step: u64, total: u64) -> f64 {
        match self {
            LrSchedule::Constant => lr,
            LrSchedule::Cosine => {
                let frac = (step as f64 / total.max(1) as f64).min(1.0);
                0.5 * lr * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            weight_decay: 1e-5,
            clip_norm: 0.5,
            epochs: 100,
            seed: 0,
            patience: None,
            schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0) {
            return Err(TrainError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(TrainError::Config(format!("clip_norm must be positive, got {}", self.clip_norm)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(TrainError::Config("weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let zeros: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One Adam update with the L2 term `λ·w` added to the (already clipped)
/// gradient and bias-corrected moments.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TrainError::Config(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(TrainError::Divergence {
            epoch: 0,
            step: state.step as usize,
            detail: "non-finite gradient".into(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (k, p) in params.iter_mut().enumerate() {
        let w = p.data_mut();
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        for (i, g) in grads[k].data().iter().enumerate() {
            let g = g + weight_decay * w[i];
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            w[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Anything the loop can optimize: the graph model and the MLP baseline.
pub trait Trainable: Clone {
    fn seq_len(&self) -> usize;
    /// Training-mode loss and gradients aligned with `params_mut`.
    fn loss_and_grads(
        &mut self,
        frames: &[Frame],
        target: &Tensor,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, Vec<Tensor>), ModelError>;
    /// Eval-mode prediction in normalized units.
    fn predict(&self, frames: &[Frame]) -> Result<Tensor, ModelError>;
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
}

impl Trainable for crate::model::GnnModel {
    fn seq_len(&self) -> usize {
        self.config.seq_len
    }

    fn loss_and_grads(
        &mut self,
        frames: &[Frame],
        target: &Tensor,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, Vec<Tensor>), ModelError> {
        crate::model::GnnModel::loss_and_grads(self, frames, target, rng)
    }

    fn predict(&self, frames: &[Frame]) -> Result<Tensor, ModelError> {
        crate::model::GnnModel::predict(self, frames)
    }

    fn params(&self) -> Vec<&Tensor> {
        self.params.named().into_iter().map(|(_, t)| t).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.params.values_mut()
    }
}

/// Clips, applies Adam at rate `lr`, and returns the pre-clip gradient norm.
pub fn optimizer_step<M: Trainable>(
    model: &mut M,
    mut grads: Vec<Tensor>,
    state: &mut AdamState,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<f64, TrainError> {
    let norm = clip_gradients(&mut grads, cfg.clip_norm);
    let mut params = model.params_mut();
    adam_step(&mut params, &grads, state, lr, cfg.weight_decay)?;
    Ok(norm)
}

/// Mean Eq.-11 loss over windows in eval mode.
pub fn evaluate_loss<M: Trainable>(model: &M, data: &PreparedData, windows: &[SequenceWindow]) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for w in windows {
        let pred = model.predict(data.inputs(w))?;
        total += mse(&pred, data.target(w));
    }
    Ok(total / windows.len().max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone)]
pub struct TrainState<M> {
    pub model: M,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub best: M,
    pub best_epoch: usize,
    pub best_val: f64,
    pub history: Vec<EpochLog>,
}

impl<M: Trainable> TrainState<M> {
    pub fn new(model: M) -> Self {
        TrainState {
            adam: AdamState::new(model.params()),
            best: model.clone(),
            model,
            epoch: 0,
            best_epoch: 0,
            best_val: f64::INFINITY,
            history: Vec::new(),
        }
    }
}

fn epoch_rng(seed: u64, epoch: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch as u64));
    rng.set_stream(stream);
    rng
}

/// Runs epochs `state.epoch+1 ..= cfg.epochs`. Each epoch visits the
/// training windows once, in an order shuffled from `(seed, epoch)`, with
/// one window per optimizer step, then scores the validation windows in
/// eval mode. `on_epoch` runs after every epoch (for checkpoints); on
/// divergence the error is returned and the last state handed to
/// `on_epoch` remains the last good one.
pub fn train<M: Trainable>(
    mut state: TrainState<M>,
    data: &PreparedData,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&TrainState<M>) -> std::io::Result<()>,
) -> Result<TrainState<M>, TrainError> {
    cfg.validate()?;
    if state.model.seq_len() != data.train_windows[0].len {
        return Err(TrainError::Config(format!(
            "model sequence length {} differs from the data windows ({})",
            state.model.seq_len(),
            data.train_windows[0].len
        )));
    }
    let mut since_best = 0;
    let total_steps = (cfg.epochs * data.train_windows.len()) as u64;
    while state.epoch < cfg.epochs {
        let epoch = state.epoch + 1;
        let mut order = data.train_windows.clone();
        order.shuffle(&mut epoch_rng(cfg.seed, epoch, 1));
        let mut dropout_rng = epoch_rng(cfg.seed, epoch, 2);
        let mut total = 0.0;
        for (step, w) in order.iter().enumerate() {
            let (loss, grads) = state
                .model
                .loss_and_grads(data.inputs(w), data.target(w), &mut dropout_rng)?;
            if !loss.is_finite() {
                return Err(TrainError::Divergence {
                    epoch,
                    step,
                    detail: format!("loss {loss}"),
                });
            }
            let lr = cfg.schedule.rate(cfg.lr, state.adam.step, total_steps);
            optimizer_step(&mut state.model, grads, &mut state.adam, cfg, lr).map_err(|e| match e {
                TrainError::Divergence { detail, .. } => TrainError::Divergence { epoch, step, detail },
                other => other,
            })?;
            total += loss;
        }
        let train_mse = total / order.len() as f64;
        let val_mse = evaluate_loss(&state.model, data, &data.val_windows)?;
        if !val_mse.is_finite() {
            return Err(TrainError::Divergence {
                epoch,
                step: order.len(),
                detail: format!("validation loss {val_mse}"),
            });
        }
        state.epoch = epoch;
        state.history.push(EpochLog {
            epoch,
            train_mse,
            val_mse,
        });
        if val_mse < state.best_val {
            state.best_val = val_mse;
            state.best_epoch = epoch;
            state.best = state.model.clone();
            since_best = 0;
        } else {
            since_best += 1;
        }
        on_epoch(&state)?;
        if cfg.patience.is_some_and(|p| since_best >= p) {
            break;
        }
    }
    Ok(state)
}

pub const LOSS_CSV_HEADER: &str = "epoch,train_mse,val_mse";

pub fn loss_curve_csv(history: &[EpochLog]) -> String {
    let mut out = format!("{LOSS_CSV_HEADER}\n");
    for h in history {
        out.push_str(&format!("{},{},{}\n", h.epoch, h.train_mse, h.val_mse));
    }
    out
}
