//! Comparison forecasters: trailing mean, per-series ridge autoregression
//! and a per-bus MLP on the flattened window.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::model::{dense_relu, Frame, ModelError};
use crate::powerflow::NODE_FEATURES;
use crate::training::Trainable;

pub const ROLLING_WINDOW: usize = 24;
pub const LINEAR_LAG: usize = 24;
pub const LINEAR_RIDGE: f64 = 1e-6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BaselineError {
    #[error("need at least {needed} timesteps, got {got}")]
    InsufficientHistory { needed: usize, got: usize },
    #[error("invalid baseline config: {0}")]
    Config(String),
    #[error("ridge system could not be factorized")]
    Singular,
}

impl From<BaselineError> for ModelError {
    fn from(e: BaselineError) -> Self {
        ModelError::Input(e.to_string())
    }
}

fn node_count(frames: &[Frame]) -> usize {
    frames.first().map_or(0, |f| f.node.rows())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RollingMean {
    pub window: usize,
}

impl Default for RollingMean {
    fn default() -> Self {
        RollingMean {
            window: ROLLING_WINDOW,
        }
    }
}

impl RollingMean {
    pub fn new(window: usize, seq_len: usize) -> Result<Self, BaselineError> {
        if window == 0 || window > seq_len {
            return Err(BaselineError::Config(format!(
                "rolling window {window} must lie in 1..={seq_len}"
            )));
        }
        Ok(RollingMean { window })
    }

    /// Mean node features of the last `window` frames.
    pub fn predict(&self, frames: &[Frame]) -> Result<Tensor, BaselineError> {
        if frames.len() < self.window {
            return Err(BaselineError::InsufficientHistory {
                needed: self.window,
                got: frames.len(),
            });
        }
        let recent = &frames[frames.len() - self.window..];
        let mut acc = vec![0.0; recent[0].node.len()];
        for f in recent {
            for (a, x) in acc.iter_mut().zip(f.node.data()) {
                *a += x;
            }
        }
        acc.iter_mut().for_each(|a| *a /= self.window as f64);
        Ok(Tensor::new(recent[0].node.shape().to_vec(), acc).expect("same shape"))
    }
}

/// Per (bus, feature) autoregression. `coef` row `s` holds lags 1..=lag for
/// series `s = bus·4 + feature`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub lag: usize,
    pub coef: Tensor,
    pub intercept: Tensor,
}

/// Ridge fit of `x_t ≈ c + Σ_k a_k x_{t−k}` on centered data, so the
/// intercept is not penalized. Returns (a_1..a_lag, c).
pub fn fit_series(x: &[f64], lag: usize, ridge: f64) -> Result<(Vec<f64>, f64), BaselineError> {
    if lag == 0 {
        return Err(BaselineError::Config("lag order must be positive".into()));
    }
    if x.len() < lag + 2 {
        return Err(BaselineError::InsufficientHistory {
            needed: lag + 2,
            got: x.len(),
        });
    }
    let rows = x.len() - lag;
    let lagged = |t: usize, k: usize| x[t - 1 - k];
    let mut xm = vec![0.0; lag];
    let mut ym = 0.0;
    for t in lag..x.len() {
        ym += x[t];
        for (k, m) in xm.iter_mut().enumerate() {
            *m += lagged(t, k);
        }
    }
    ym /= rows as f64;
    xm.iter_mut().for_each(|m| *m /= rows as f64);

    let mut ata = DMatrix::<f64>::zeros(lag, lag);
    let mut aty = DVector::<f64>::zeros(lag);
    let mut row = vec![0.0; lag];
    for t in lag..x.len() {
        for k in 0..lag {
            row[k] = lagged(t, k) - xm[k];
        }
        let y = x[t] - ym;
        for i in 0..lag {
            aty[i] += row[i] * y;
            for j in 0..=i {
                ata[(i, j)] += row[i] * row[j];
            }
        }
    }
    for i in 0..lag {
        for j in 0..i {
            ata[(j, i)] = ata[(i, j)];
        }
        ata[(i, i)] += ridge;
    }
    let beta = ata
        .cholesky()
        .ok_or(BaselineError::Singular)?
        .solve(&aty);
    let c = ym - beta.iter().zip(&xm).map(|(b, m)| b * m).sum::<f64>();
    Ok((beta.iter().copied().collect(), c))
}

impl LinearModel {
    /// Fits every (bus, feature) series of `train` (chronological frames).
    pub fn fit(train: &[Frame], lag: usize, ridge: f64) -> Result<Self, BaselineError> {
        let n = node_count(train);
        let series = n * NODE_FEATURES;
        let mut coef = Vec::with_capacity(series * lag);
        let mut intercept = Vec::with_capacity(series);
        let mut x = vec![0.0; train.len()];
        for s in 0..series {
            for (t, f) in train.iter().enumerate() {
                x[t] = f.node.data()[s];
            }
            let (a, c) = fit_series(&x, lag, ridge)?;
            coef.extend(a);
            intercept.push(c);
        }
        Ok(LinearModel {
            lag,
            coef: Tensor::matrix(series, lag, coef).expect("series × lag"),
            intercept: Tensor::new(vec![series], intercept).expect("series"),
        })
    }

    pub fn predict(&self, frames: &[Frame]) -> Result<Tensor, BaselineError> {
        if frames.len() < self.lag {
            return Err(BaselineError::InsufficientHistory {
                needed: self.lag,
                got: frames.len(),
            });
        }
        let last = frames.len() - 1;
        let series = self.intercept.len();
        let out: Vec<f64> = (0..series)
            .map(|s| {
                let a = self.coef.row(s);
                let mut y = self.intercept.data()[s];
                for (k, ak) in a.iter().enumerate() {
                    y += ak * frames[last - k].node.data()[s];
                }
                y
            })
            .collect();
        Ok(Tensor::matrix(series / NODE_FEATURES, NODE_FEATURES, out).expect("N×4"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub seq_len: usize,
    pub hidden: usize,
    /// Start the output layer at zero so initial predictions are zero.
    pub zero_init_output: bool,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            seq_len: 48,
            hidden: 64,
            zero_init_output: false,
        }
    }
}

/// [T·4 → hidden → hidden → 4] with ReLU, weights shared across buses.
/// Tensors are stored as `w1, b1, w2, b2, w3, b3`, weights [out, in].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub config: MlpConfig,
    pub weights: Vec<Tensor>,
}

pub const MLP_TENSOR_NAMES: [&str; 6] = ["w1", "b1", "w2", "b2", "w3", "b3"];

impl MlpModel {
    pub fn new(config: MlpConfig, seed: u64) -> Result<Self, BaselineError> {
        if config.seq_len == 0 || config.hidden == 0 {
            return Err(BaselineError::Config("seq_len and hidden must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = |out: usize, inp: usize| {
            let a = 1.0 / (inp as f64).sqrt();
            let w = (0..out * inp).map(|_| rng.random_range(-a..a)).collect();
            let b = (0..out).map(|_| rng.random_range(-a..a)).collect();
            [
                Tensor::matrix(out, inp, w).expect("layer"),
                Tensor::new(vec![out], b).expect("bias"),
            ]
        };
        let input = config.seq_len * NODE_FEATURES;
        let mut weights = Vec::with_capacity(6);
        weights.extend(layer(config.hidden, input));
        weights.extend(layer(config.hidden, config.hidden));
        weights.extend(layer(NODE_FEATURES, config.hidden));
        if config.zero_init_output {
            for t in &mut weights[4..] {
                t.data_mut().iter_mut().for_each(|x| *x = 0.0);
            }
        }
        Ok(MlpModel { config, weights })
    }

    /// N×(T·4): row v is bus v's features, oldest timestep first.
    pub fn flatten(&self, frames: &[Frame]) -> Result<Tensor, ModelError> {
        let t = self.config.seq_len;
        if frames.len() != t {
            return Err(ModelError::WindowLength {
                expected: t,
                got: frames.len(),
            });
        }
        let n = node_count(frames);
        let mut data = vec![0.0; n * t * NODE_FEATURES];
        for (k, f) in frames.iter().enumerate() {
            for v in 0..n {
                let dst = v * t * NODE_FEATURES + k * NODE_FEATURES;
                data[dst..dst + NODE_FEATURES].copy_from_slice(f.node.row(v));
            }
        }
        Ok(Tensor::matrix(n, t * NODE_FEATURES, data)?)
    }

    fn forward(&self, tape: &mut Tape, frames: &[Frame]) -> Result<(Var, Vec<Var>), ModelError> {
        let x = tape.constant(self.flatten(frames)?);
        let w: Vec<Var> = self.weights.iter().map(|t| tape.param(t)).collect();
        let h1 = dense_relu(tape, x, w[0], w[1])?;
        let h2 = dense_relu(tape, h1, w[2], w[3])?;
        let o = tape.matmul_bt(h2, w[4])?;
        Ok((tape.add_row(o, w[5])?, w))
    }
}

impl Trainable for MlpModel {
    fn seq_len(&self) -> usize {
        self.config.seq_len
    }

    fn loss_and_grads(
        &mut self,
        frames: &[Frame],
        target: &Tensor,
        _rng: &mut ChaCha8Rng,
    ) -> Result<(f64, Vec<Tensor>), ModelError> {
        let mut tape = Tape::new();
        let (out, w) = self.forward(&mut tape, frames)?;
        let loss = tape.mse_loss(out, target)?;
        tape.backward(loss)?;
        let grads = w
            .iter()
            .zip(&self.weights)
            .map(|(v, t)| tape.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        Ok((tape.value(loss).item(), grads))
    }

    fn predict(&self, frames: &[Frame]) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let (out, _) = self.forward(&mut tape, frames)?;
        Ok(tape.value(out).clone())
    }

    fn params(&self) -> Vec<&Tensor> {
        self.weights.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights.iter_mut().collect()
    }
}
