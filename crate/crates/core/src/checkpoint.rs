//! Binary checkpoint envelope shared by the graph model and the baselines.
//!
//! Layout, all little-endian: 8-byte magic; u32 `d_v`, `d_e`, `hidden`,
//! `sage_layers`, `seq_len`; f64 `dropout`; u32 tensor count followed by
//! tensors; then the optimizer section: u64 step, u32 tensor count,
//! tensors. A tensor is u32 name length, UTF-8 name, u32 rank, u32 dims,
//! f64 data.

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::baselines::{LinearModel, MlpConfig, MlpModel, RollingMean, MLP_TENSOR_NAMES};
use crate::model::{BnRunning, BnScope, EdgeMode, GnnModel, ModelConfig, Params, Topology};
use crate::powerflow::{EDGE_FEATURES, NODE_FEATURES};
use crate::training::{AdamState, EpochLog, NormStats, TrainState, Trainable};

pub const GNN_MAGIC: [u8; 8] = *b"GNNCKPT1";
pub const ROLLING_MAGIC: [u8; 8] = *b"RMEAN001";
pub const LINEAR_MAGIC: [u8; 8] = *b"LINREG01";
pub const MLP_MAGIC: [u8; 8] = *b"MLPBASE1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic: expected {expected}, found {found}")]
    BadMagic { expected: String, found: String },
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint lacks tensor {0:?}")]
    Missing(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Header {
    pub d_v: u32,
    pub d_e: u32,
    pub hidden: u32,
    pub sage_layers: u32,
    pub seq_len: u32,
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub magic: [u8; 8],
    pub header: Header,
    pub tensors: Vec<(String, Tensor)>,
    pub opt_step: u64,
    pub opt_tensors: Vec<(String, Tensor)>,
}

fn put_tensors(out: &mut Vec<u8>, tensors: &[(String, Tensor)]) {
    out.extend((tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend((name.len() as u32).to_le_bytes());
        out.extend(name.as_bytes());
        out.extend((t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend((d as u32).to_le_bytes());
        }
        for x in t.data() {
            out.extend(x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(CheckpointError::Truncated(self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensors(&mut self) -> Result<Vec<(String, Tensor)>, CheckpointError> {
        let count = self.u32()? as usize;
        let mut out = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = self.u32()? as usize;
            let name = std::str::from_utf8(self.take(len)?)
                .map_err(|e| CheckpointError::Format(format!("tensor name: {e}")))?
                .to_string();
            let rank = self.u32()? as usize;
            let shape = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            if n.checked_mul(8).is_none_or(|b| b > self.buf.len() - self.pos) {
                return Err(CheckpointError::Truncated(self.pos));
            }
            let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>, _>>()?;
            let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Format(e.to_string()))?;
            out.push((name, t));
        }
        Ok(out)
    }
}

impl Envelope {
    pub fn new(magic: [u8; 8], header: Header) -> Self {
        Envelope {
            magic,
            header,
            tensors: Vec::new(),
            opt_step: 0,
            opt_tensors: Vec::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(self.magic);
        let h = &self.header;
        for x in [h.d_v, h.d_e, h.hidden, h.sage_layers, h.seq_len] {
            out.extend(x.to_le_bytes());
        }
        out.extend(h.dropout.to_le_bytes());
        put_tensors(&mut out, &self.tensors);
        out.extend(self.opt_step.to_le_bytes());
        put_tensors(&mut out, &self.opt_tensors);
        out
    }

    pub fn from_bytes(buf: &[u8], expected: [u8; 8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { buf, pos: 0 };
        let magic: [u8; 8] = r.take(8)?.try_into().expect("8 bytes");
        if magic != expected {
            return Err(CheckpointError::BadMagic {
                expected: String::from_utf8_lossy(&expected).into(),
                found: String::from_utf8_lossy(&magic).into(),
            });
        }
        let header = Header {
            d_v: r.u32()?,
            d_e: r.u32()?,
            hidden: r.u32()?,
            sage_layers: r.u32()?,
            seq_len: r.u32()?,
            dropout: r.f64()?,
        };
        let tensors = r.tensors()?;
        let opt_step = r.u64()?;
        let opt_tensors = r.tensors()?;
        if r.pos != buf.len() {
            return Err(CheckpointError::Format(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Envelope {
            magic,
            header,
            tensors,
            opt_step,
            opt_tensors,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        Ok(fs::write(path, self.to_bytes())?)
    }

    pub fn read(path: impl AsRef<Path>, expected: [u8; 8]) -> Result<Self, CheckpointError> {
        Envelope::from_bytes(&fs::read(path)?, expected)
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, CheckpointError> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))
    }

    fn opt(&self, name: &str) -> Result<&Tensor, CheckpointError> {
        self.opt_tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))
    }

    fn scalar(&self, name: &str) -> Result<f64, CheckpointError> {
        Ok(self.get(name)?.item())
    }

    pub fn push_norm(&mut self, stats: &NormStats) {
        let v = |x: &[f64]| Tensor::new(vec![x.len()], x.to_vec()).expect("vector");
        self.push("norm.mu_v", v(&stats.mu_v));
        self.push("norm.sigma_v", v(&stats.sigma_v));
        self.push("norm.mu_e", v(&stats.mu_e));
        self.push("norm.sigma_e", v(&stats.sigma_e));
        self.push("norm.eps", Tensor::scalar(stats.eps));
    }

    pub fn norm(&self) -> Result<NormStats, CheckpointError> {
        Ok(NormStats {
            mu_v: self.get("norm.mu_v")?.data().to_vec(),
            sigma_v: self.get("norm.sigma_v")?.data().to_vec(),
            mu_e: self.get("norm.mu_e")?.data().to_vec(),
            sigma_e: self.get("norm.sigma_e")?.data().to_vec(),
            eps: self.scalar("norm.eps")?,
        })
    }

    fn push_adam(&mut self, names: &[String], adam: &AdamState) {
        self.opt_step = adam.step;
        for (n, m) in names.iter().zip(&adam.m) {
            self.opt_tensors.push((format!("m.{n}"), m.clone()));
        }
        for (n, v) in names.iter().zip(&adam.v) {
            self.opt_tensors.push((format!("v.{n}"), v.clone()));
        }
    }

    fn adam(&self, names: &[String]) -> Result<AdamState, CheckpointError> {
        let get = |prefix: &str| {
            names
                .iter()
                .map(|n| self.opt(&format!("{prefix}.{n}")).cloned())
                .collect::<Result<Vec<_>, _>>()
        };
        Ok(AdamState {
            step: self.opt_step,
            m: get("m")?,
            v: get("v")?,
        })
    }

    fn push_progress<M>(&mut self, state: &TrainState<M>) {
        self.push("meta.epoch", Tensor::scalar(state.epoch as f64));
        self.push("meta.best_epoch", Tensor::scalar(state.best_epoch as f64));
        self.push("meta.best_val", Tensor::scalar(state.best_val));
        let rows: Vec<f64> = state
            .history
            .iter()
            .flat_map(|h| [h.epoch as f64, h.train_mse, h.val_mse])
            .collect();
        self.push("meta.history", Tensor::matrix(state.history.len(), 3, rows).expect("history"));
    }

    fn progress(&self) -> Result<(usize, usize, f64, Vec<EpochLog>), CheckpointError> {
        let h = self.get("meta.history")?;
        let history = (0..h.rows())
            .map(|r| EpochLog {
                epoch: h.get(r, 0) as usize,
                train_mse: h.get(r, 1),
                val_mse: h.get(r, 2),
            })
            .collect();
        Ok((
            self.scalar("meta.epoch")? as usize,
            self.scalar("meta.best_epoch")? as usize,
            self.scalar("meta.best_val")?,
            history,
        ))
    }
}

fn expect_shape(name: &str, t: &Tensor, shape: &[usize]) -> Result<(), CheckpointError> {
    if t.shape() != shape {
        return Err(CheckpointError::Format(format!(
            "{name} has shape {:?}, expected {shape:?}",
            t.shape()
        )));
    }
    Ok(())
}

fn gnn_names(model: &GnnModel) -> Vec<String> {
    model.params.named().into_iter().map(|(n, _)| n).collect()
}

/// Graph model with its running statistics and normalization.
pub fn gnn_envelope(model: &GnnModel, stats: &NormStats) -> Envelope {
    let c = &model.config;
    let mut env = Envelope::new(
        GNN_MAGIC,
        Header {
            d_v: c.d_v as u32,
            d_e: c.d_e as u32,
            hidden: c.hidden as u32,
            sage_layers: c.sage_layers as u32,
            seq_len: c.seq_len as u32,
            dropout: c.dropout,
        },
    );
    for (name, t) in model.params.named() {
        env.push(name, t.clone());
    }
    for l in 0..c.sage_layers {
        let v = |x: &[f64]| Tensor::new(vec![x.len()], x.to_vec()).expect("vector");
        env.push(format!("sage.{l}.running_mean"), v(&model.running.mean[l]));
        env.push(format!("sage.{l}.running_var"), v(&model.running.var[l]));
    }
    let mode = match c.edge_mode {
        EdgeMode::Ignore => 0.0,
        EdgeMode::MeanInject => 1.0,
    };
    env.push("meta.edge_mode", Tensor::scalar(mode));
    let scope = match c.bn_scope {
        BnScope::Timestep => 0.0,
        BnScope::Window => 1.0,
    };
    env.push("meta.bn_scope", Tensor::scalar(scope));
    env.push_norm(stats);
    env
}

pub fn gnn_from_envelope(env: &Envelope, topology: Topology) -> Result<(GnnModel, NormStats), CheckpointError> {
    let h = &env.header;
    let config = ModelConfig {
        d_v: h.d_v as usize,
        d_e: h.d_e as usize,
        hidden: h.hidden as usize,
        sage_layers: h.sage_layers as usize,
        seq_len: h.seq_len as usize,
        dropout: h.dropout,
        edge_mode: if env.scalar("meta.edge_mode")? == 1.0 {
            EdgeMode::MeanInject
        } else {
            EdgeMode::Ignore
        },
        bn_scope: if env.scalar("meta.bn_scope")? == 1.0 {
            BnScope::Window
        } else {
            BnScope::Timestep
        },
    };
    config.validate().map_err(|e| CheckpointError::Format(e.to_string()))?;
    let template = crate::model::ModelParams::zeros_like(&config);
    let mut params: Params<Tensor> = template.clone();
    for ((name, slot), (_, shape)) in gnn_names_of(&template)
        .into_iter()
        .zip(params.values_mut())
        .zip(template.named())
    {
        let t = env.get(&name)?;
        expect_shape(&name, t, shape.shape())?;
        *slot = t.clone();
    }
    let mut running = BnRunning::new(&config);
    for l in 0..config.sage_layers {
        let m = env.get(&format!("sage.{l}.running_mean"))?;
        let v = env.get(&format!("sage.{l}.running_var"))?;
        expect_shape("running_mean", m, &[config.hidden])?;
        expect_shape("running_var", v, &[config.hidden])?;
        running.mean[l] = m.data().to_vec();
        running.var[l] = v.data().to_vec();
    }
    if topology.n_nodes == 0 {
        return Err(CheckpointError::Format("empty topology".into()));
    }
    Ok((
        GnnModel {
            config,
            params,
            running,
            topology,
        },
        env.norm()?,
    ))
}

fn gnn_names_of(p: &crate::model::ModelParams) -> Vec<String> {
    p.named().into_iter().map(|(n, _)| n).collect()
}

/// Last-epoch training state: model, Adam moments and epoch history.
pub fn gnn_state_envelope(state: &TrainState<GnnModel>, stats: &NormStats) -> Envelope {
    let mut env = gnn_envelope(&state.model, stats);
    env.push_progress(state);
    env.push_adam(&gnn_names(&state.model), &state.adam);
    env
}

/// Rebuilds a training state from the last and best checkpoints.
pub fn gnn_state_from(
    last: &Envelope,
    best: &Envelope,
    topology: Topology,
) -> Result<(TrainState<GnnModel>, NormStats), CheckpointError> {
    let (model, stats) = gnn_from_envelope(last, topology.clone())?;
    let (best_model, _) = gnn_from_envelope(best, topology)?;
    let adam = last.adam(&gnn_names(&model))?;
    let (epoch, best_epoch, best_val, history) = last.progress()?;
    Ok((
        TrainState {
            model,
            adam,
            epoch,
            best: best_model,
            best_epoch,
            best_val,
            history,
        },
        stats,
    ))
}

fn baseline_header(hidden: usize, seq_len: usize) -> Header {
    Header {
        d_v: NODE_FEATURES as u32,
        d_e: EDGE_FEATURES as u32,
        hidden: hidden as u32,
        sage_layers: 0,
        seq_len: seq_len as u32,
        dropout: 0.0,
    }
}

/// The rolling mean has no weights; its file records the window.
pub fn rolling_envelope(model: &RollingMean, stats: &NormStats) -> Envelope {
    let mut env = Envelope::new(ROLLING_MAGIC, baseline_header(0, model.window));
    env.push("window", Tensor::scalar(model.window as f64));
    env.push_norm(stats);
    env
}

pub fn rolling_from_envelope(env: &Envelope) -> Result<(RollingMean, NormStats), CheckpointError> {
    let window = env.scalar("window")? as usize;
    if window == 0 {
        return Err(CheckpointError::Format("rolling window is zero".into()));
    }
    Ok((RollingMean { window }, env.norm()?))
}

pub fn linear_envelope(model: &LinearModel, stats: &NormStats) -> Envelope {
    let mut env = Envelope::new(LINEAR_MAGIC, baseline_header(0, model.lag));
    env.push("coef", model.coef.clone());
    env.push("intercept", model.intercept.clone());
    env.push_norm(stats);
    env
}

pub fn linear_from_envelope(env: &Envelope) -> Result<(LinearModel, NormStats), CheckpointError> {
    let coef = env.get("coef")?.clone();
    let intercept = env.get("intercept")?.clone();
    let lag = env.header.seq_len as usize;
    expect_shape("coef", &coef, &[intercept.len(), lag])?;
    Ok((LinearModel { lag, coef, intercept }, env.norm()?))
}

fn mlp_names() -> Vec<String> {
    MLP_TENSOR_NAMES.iter().map(|s| s.to_string()).collect()
}

pub fn mlp_envelope(model: &MlpModel, stats: &NormStats) -> Envelope {
    let mut env = Envelope::new(MLP_MAGIC, baseline_header(model.config.hidden, model.config.seq_len));
    for (n, t) in MLP_TENSOR_NAMES.iter().zip(&model.weights) {
        env.push(*n, t.clone());
    }
    env.push_norm(stats);
    env
}

pub fn mlp_from_envelope(env: &Envelope) -> Result<(MlpModel, NormStats), CheckpointError> {
    let config = MlpConfig {
        seq_len: env.header.seq_len as usize,
        hidden: env.header.hidden as usize,
        zero_init_output: false,
    };
    let template = MlpModel::new(config, 0).map_err(|e| CheckpointError::Format(e.to_string()))?;
    let mut weights = Vec::with_capacity(6);
    for (n, t) in MLP_TENSOR_NAMES.iter().zip(&template.weights) {
        let w = env.get(n)?;
        expect_shape(n, w, t.shape())?;
        weights.push(w.clone());
    }
    Ok((MlpModel { config, weights }, env.norm()?))
}

pub fn mlp_state_envelope(state: &TrainState<MlpModel>, stats: &NormStats) -> Envelope {
    let mut env = mlp_envelope(&state.model, stats);
    env.push_progress(state);
    env.push_adam(&mlp_names(), &state.adam);
    env
}

pub fn mlp_state_from(last: &Envelope, best: &Envelope) -> Result<(TrainState<MlpModel>, NormStats), CheckpointError> {
    let (model, stats) = mlp_from_envelope(last)?;
    let (best_model, _) = mlp_from_envelope(best)?;
    let adam = last.adam(&mlp_names())?;
    if adam.m.len() != model.params().len() {
        return Err(CheckpointError::Format("optimizer state does not match the model".into()));
    }
    let (epoch, best_epoch, best_val, history) = last.progress()?;
    Ok((
        TrainState {
            model,
            adam,
            epoch,
            best: best_model,
            best_epoch,
            best_val,
            history,
        },
        stats,
    ))
}
