//! Node/edge embeddings, stacked GraphSAGE layers with batch norm, a
//! node-wise GRU over the window and a linear read-out.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Aggregation, AutodiffError, Tape, Tensor, Var, BN_MOMENTUM};
use crate::grid::GridGraph;
use crate::powerflow::{EDGE_FEATURES, NODE_FEATURES};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("window has {got} snapshots, model expects {expected}")]
    WindowLength { expected: usize, got: usize },
    #[error("input shape mismatch: {0}")]
    Input(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EdgeMode {
    /// Edge embeddings are computed but feed nothing downstream.
    #[default]
    Ignore,
    /// The mean embedding of incident branches is added to each node
    /// embedding before the first graph layer.
    MeanInject,
}

impl fmt::Display for EdgeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdgeMode::Ignore => "ignore",
            EdgeMode::MeanInject => "mean_inject",
        })
    }
}

impl FromStr for EdgeMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ignore" => Ok(EdgeMode::Ignore),
            "mean_inject" => Ok(EdgeMode::MeanInject),
            _ => Err(format!("unknown edge mode {s:?}")),
        }
    }
}

/// Which rows share batch-norm statistics in training mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BnScope {
    /// The N nodes of each timestep form their own batch.
    Timestep,
    /// All N·T node-timestep rows of the window form one batch.
    #[default]
    Window,
}

impl fmt::Display for BnScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BnScope::Timestep => "timestep",
            BnScope::Window => "window",
        })
    }
}

impl FromStr for BnScope {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "timestep" => Ok(BnScope::Timestep),
            "window" => Ok(BnScope::Window),
            _ => Err(format!("unknown batch-norm scope {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_v: usize,
    pub d_e: usize,
    pub hidden: usize,
    pub sage_layers: usize,
    pub dropout: f64,
    pub seq_len: usize,
    pub edge_mode: EdgeMode,
    pub bn_scope: BnScope,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_v: NODE_FEATURES,
            d_e: EDGE_FEATURES,
            hidden: 32,
            sage_layers: 2,
            dropout: 0.1,
            seq_len: 48,
            edge_mode: EdgeMode::Ignore,
            bn_scope: BnScope::Window,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.hidden == 0 {
            return bad("hidden must be positive".into());
        }
        if self.seq_len == 0 {
            return bad("seq_len must be at least 1".into());
        }
        if self.d_v == 0 || self.d_e == 0 {
            return bad("feature dimensions must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// Graph-layer weights: `w` is hidden × 2·hidden (no bias; batch norm
/// supplies the shift).
#[derive(Debug, Clone, PartialEq)]
pub struct Sage<T> {
    pub w: T,
    pub gamma: T,
    pub beta: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gru<T> {
    pub w_z: T,
    pub u_z: T,
    pub b_z: T,
    pub w_r: T,
    pub u_r: T,
    pub b_r: T,
    pub w_h: T,
    pub u_h: T,
    pub b_h: T,
}

/// Learnable tensors, generic so the same layout serves stored weights
/// (`Tensor`) and their handles on a tape (`Var`). Weights are [out, in].
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub w_v: T,
    pub b_v: T,
    pub w_e: T,
    pub b_e: T,
    pub sage: Vec<Sage<T>>,
    pub gru: Gru<T>,
    pub w_o: T,
    pub b_o: T,
}

pub type ModelParams = Params<Tensor>;

impl<T> Params<T> {
    /// Fixed-order (name, value) listing used by checkpoints and the
    /// optimizer.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = vec![
            ("w_v".to_string(), &self.w_v),
            ("b_v".to_string(), &self.b_v),
            ("w_e".to_string(), &self.w_e),
            ("b_e".to_string(), &self.b_e),
        ];
        for (l, s) in self.sage.iter().enumerate() {
            out.push((format!("sage.{l}.w"), &s.w));
            out.push((format!("sage.{l}.gamma"), &s.gamma));
            out.push((format!("sage.{l}.beta"), &s.beta));
        }
        let g = &self.gru;
        for (n, t) in [
            ("gru.w_z", &g.w_z),
            ("gru.u_z", &g.u_z),
            ("gru.b_z", &g.b_z),
            ("gru.w_r", &g.w_r),
            ("gru.u_r", &g.u_r),
            ("gru.b_r", &g.b_r),
            ("gru.w_h", &g.w_h),
            ("gru.u_h", &g.u_h),
            ("gru.b_h", &g.b_h),
        ] {
            out.push((n.to_string(), t));
        }
        out.push(("w_o".to_string(), &self.w_o));
        out.push(("b_o".to_string(), &self.b_o));
        out
    }

    pub fn values_mut(&mut self) -> Vec<&mut T> {
        let mut out = vec![&mut self.w_v, &mut self.b_v, &mut self.w_e, &mut self.b_e];
        for s in &mut self.sage {
            out.extend([&mut s.w, &mut s.gamma, &mut s.beta]);
        }
        let g = &mut self.gru;
        out.extend([
            &mut g.w_z, &mut g.u_z, &mut g.b_z, &mut g.w_r, &mut g.u_r, &mut g.b_r, &mut g.w_h,
            &mut g.u_h, &mut g.b_h,
        ]);
        out.extend([&mut self.w_o, &mut self.b_o]);
        out
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Params<U> {
        let g = &self.gru;
        Params {
            w_v: f(&self.w_v),
            b_v: f(&self.b_v),
            w_e: f(&self.w_e),
            b_e: f(&self.b_e),
            sage: self
                .sage
                .iter()
                .map(|s| Sage {
                    w: f(&s.w),
                    gamma: f(&s.gamma),
                    beta: f(&s.beta),
                })
                .collect(),
            gru: Gru {
                w_z: f(&g.w_z),
                u_z: f(&g.u_z),
                b_z: f(&g.b_z),
                w_r: f(&g.w_r),
                u_r: f(&g.u_r),
                b_r: f(&g.b_r),
                w_h: f(&g.w_h),
                u_h: f(&g.u_h),
                b_h: f(&g.b_h),
            },
            w_o: f(&self.w_o),
            b_o: f(&self.b_o),
        }
    }
}

fn uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let a = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-a..a)).collect())
        .expect("shape and data agree")
}

impl ModelParams {
    /// Uniform(±1/√fan_in) weights and biases, unit γ and zero β.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = cfg.hidden;
        let lin = |out: usize, inp: usize, rng: &mut ChaCha8Rng| {
            (uniform(&[out, inp], inp, rng), uniform(&[out], inp, rng))
        };
        let (w_v, b_v) = lin(h, cfg.d_v, &mut rng);
        let (w_e, b_e) = lin(h, cfg.d_e, &mut rng);
        let sage = (0..cfg.sage_layers)
            .map(|_| Sage {
                w: uniform(&[h, 2 * h], 2 * h, &mut rng),
                gamma: Tensor::full(&[h], 1.0),
                beta: Tensor::zeros(&[h]),
            })
            .collect();
        let gate = |rng: &mut ChaCha8Rng| {
            (
                uniform(&[h, h], h, rng),
                uniform(&[h, h], h, rng),
                uniform(&[h], h, rng),
            )
        };
        let (w_z, u_z, b_z) = gate(&mut rng);
        let (w_r, u_r, b_r) = gate(&mut rng);
        let (w_h, u_h, b_h) = gate(&mut rng);
        let (w_o, b_o) = lin(cfg.d_v, h, &mut rng);
        Params {
            w_v,
            b_v,
            w_e,
            b_e,
            sage,
            gru: Gru {
                w_z,
                u_z,
                b_z,
                w_r,
                u_r,
                b_r,
                w_h,
                u_h,
                b_h,
            },
            w_o,
            b_o,
        }
    }

    pub fn zeros_like(cfg: &ModelConfig) -> Self {
        let mut p = ModelParams::init(cfg, 0);
        for t in p.values_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        p
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }

    pub fn bind(&self, tape: &mut Tape) -> Params<Var> {
        self.map(|t| tape.param(t))
    }
}

/// Running batch-norm statistics, one pair per graph layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnRunning {
    pub mean: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
}

impl BnRunning {
    pub fn new(cfg: &ModelConfig) -> Self {
        BnRunning {
            mean: vec![vec![0.0; cfg.hidden]; cfg.sage_layers],
            var: vec![vec![1.0; cfg.hidden]; cfg.sage_layers],
        }
    }
}

/// Neighborhood structure shared by every timestep.
#[derive(Debug, Clone)]
pub struct Topology {
    pub n_nodes: usize,
    pub n_edges: usize,
    pub neighbors: Arc<Aggregation>,
    /// Mean over incident branches, branch rows -> node rows.
    pub incidence: Arc<Aggregation>,
}

impl Topology {
    pub fn new(
        n_nodes: usize,
        directed_edges: &[(usize, usize)],
        branches: &[(usize, usize)],
    ) -> Result<Self, ModelError> {
        let pairs: Vec<(usize, usize)> = branches
            .iter()
            .enumerate()
            .flat_map(|(e, &(f, t))| [(e, f), (e, t)])
            .collect();
        Ok(Topology {
            n_nodes,
            n_edges: branches.len(),
            neighbors: Arc::new(Aggregation::neighbor_mean(n_nodes, directed_edges)?),
            incidence: Arc::new(Aggregation::new(branches.len(), n_nodes, &pairs)?),
        })
    }

    pub fn from_grid(grid: &GridGraph) -> Self {
        let branches: Vec<(usize, usize)> = grid.branches().iter().map(|b| (b.from, b.to)).collect();
        Topology::new(grid.n_buses(), grid.directed_edges(), &branches)
            .expect("validated grid has in-range edges")
    }
}

/// One normalized timestep: node features N×d_v and edge features E×d_e.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub node: Tensor,
    pub edge: Tensor,
}

/// Forward-pass mode. Training uses batch statistics (and updates the
/// running ones) and applies dropout from `rng`.
pub enum Mode<'a> {
    Train {
        rng: &'a mut ChaCha8Rng,
        running: &'a mut BnRunning,
    },
    Eval {
        running: &'a BnRunning,
    },
}

impl Mode<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

/// relu(x·Wᵀ + b)
pub fn dense_relu(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
    let y = tape.matmul_bt(x, w)?;
    let y = tape.add_row(y, b)?;
    tape.relu(y)
}

pub fn embed_nodes(tape: &mut Tape, x: Var, p: &Params<Var>) -> Result<Var, AutodiffError> {
    dense_relu(tape, x, p.w_v, p.b_v)
}

pub fn embed_edges(tape: &mut Tape, x_e: Var, p: &Params<Var>) -> Result<Var, AutodiffError> {
    dense_relu(tape, x_e, p.w_e, p.b_e)
}

/// relu(BN(concat(h, mean of in-neighbors)·Wᵀ)) followed by dropout.
pub fn sage_layer(
    tape: &mut Tape,
    h: Var,
    topo: &Topology,
    layer: usize,
    sage: &Sage<Var>,
    dropout: f64,
    mode: &mut Mode<'_>,
) -> Result<Var, AutodiffError> {
    sage_layer_stacked(tape, h, &topo.neighbors, 1, layer, sage, dropout, mode)
}

/// Graph layer over `groups` stacked row blocks sharing `agg`. In training
/// each block gets its own batch statistics and the running averages are
/// updated block by block.
#[allow(clippy::too_many_arguments)]
pub fn sage_layer_stacked(
    tape: &mut Tape,
    h: Var,
    agg: &Arc<Aggregation>,
    groups: usize,
    layer: usize,
    sage: &Sage<Var>,
    dropout: f64,
    mode: &mut Mode<'_>,
) -> Result<Var, AutodiffError> {
    let nb = tape.aggregate(h, agg)?;
    let cat = tape.concat_cols(h, nb)?;
    let lin = tape.matmul_bt(cat, sage.w)?;
    match mode {
        Mode::Train { rng, running } => {
            let (bn, stats) = tape.batch_norm_train_groups(lin, sage.gamma, sage.beta, groups)?;
            for st in &stats {
                for (r, s) in running.mean[layer].iter_mut().zip(&st.mean) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * s;
                }
                for (r, s) in running.var[layer].iter_mut().zip(&st.var) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * s;
                }
            }
            let act = tape.relu(bn)?;
            tape.dropout(act, dropout, true, *rng)
        }
        Mode::Eval { running } => {
            let bn = tape.batch_norm_eval(
                lin,
                sage.gamma,
                sage.beta,
                &running.mean[layer],
                &running.var[layer],
            )?;
            tape.relu(bn)
        }
    }
}

/// Embedding followed by the graph layers for one timestep.
pub fn spatial_forward(
    tape: &mut Tape,
    frame: &Frame,
    topo: &Topology,
    p: &Params<Var>,
    cfg: &ModelConfig,
    mode: &mut Mode<'_>,
) -> Result<Var, ModelError> {
    check_frame(frame, topo, cfg)?;
    let x = tape.constant(frame.node.clone());
    let mut h = embed_nodes(tape, x, p)?;
    if cfg.edge_mode == EdgeMode::MeanInject {
        let xe = tape.constant(frame.edge.clone());
        let he = embed_edges(tape, xe, p)?;
        let inject = tape.aggregate(he, &topo.incidence)?;
        h = tape.add(h, inject)?;
    }
    for (l, sage) in p.sage.iter().enumerate() {
        h = sage_layer(tape, h, topo, l, sage, cfg.dropout, mode)?;
    }
    Ok(h)
}

fn gate(tape: &mut Tape, x: Var, h: Var, w: Var, u: Var, b: Var) -> Result<Var, AutodiffError> {
    let a = tape.matmul_bt(x, w)?;
    let r = tape.matmul_bt(h, u)?;
    let s = tape.add(a, r)?;
    let s = tape.add_row(s, b)?;
    tape.sigmoid(s)
}

/// z = σ(xW_zᵀ + hU_zᵀ + b_z), r = σ(xW_rᵀ + hU_rᵀ + b_r),
/// h̃ = tanh(xW_hᵀ + b_h + r∘(hU_hᵀ)), h' = (1−z)∘h + z∘h̃.
pub fn gru_cell(tape: &mut Tape, h_prev: Var, x: Var, g: &Gru<Var>) -> Result<Var, AutodiffError> {
    let z = gate(tape, x, h_prev, g.w_z, g.u_z, g.b_z)?;
    let r = gate(tape, x, h_prev, g.w_r, g.u_r, g.b_r)?;
    let xc = tape.matmul_bt(x, g.w_h)?;
    let xc = tape.add_row(xc, g.b_h)?;
    let hc = tape.matmul_bt(h_prev, g.u_h)?;
    let hc = tape.mul(r, hc)?;
    let cand = tape.add(xc, hc)?;
    let cand = tape.tanh(cand)?;
    let delta = tape.sub(cand, h_prev)?;
    let step = tape.mul(z, delta)?;
    tape.add(h_prev, step)
}

fn check_frame(frame: &Frame, topo: &Topology, cfg: &ModelConfig) -> Result<(), ModelError> {
    if frame.node.shape() != [topo.n_nodes, cfg.d_v] {
        return Err(ModelError::Input(format!(
            "node features {:?}, expected [{}, {}]",
            frame.node.shape(),
            topo.n_nodes,
            cfg.d_v
        )));
    }
    if cfg.edge_mode == EdgeMode::MeanInject && frame.edge.shape() != [topo.n_edges, cfg.d_e] {
        return Err(ModelError::Input(format!(
            "edge features {:?}, expected [{}, {}]",
            frame.edge.shape(),
            topo.n_edges,
            cfg.d_e
        )));
    }
    Ok(())
}

/// Row-wise concatenation of equally wide matrices.
fn stack(parts: impl Iterator<Item = Tensor>, cols: usize) -> Tensor {
    let data: Vec<f64> = parts.flat_map(Tensor::into_data).collect();
    Tensor::matrix(data.len() / cols, cols, data).expect("stacked rows")
}

/// Runs the window through the spatial stack and the GRU, then reads out
/// the next-step node features (normalized units).
///
/// All timesteps go through the graph layers as one stacked batch of
/// T·N rows; the result equals running `spatial_forward` per timestep when
/// batch norm is per timestep or in eval mode.
pub fn forward_window(
    tape: &mut Tape,
    frames: &[Frame],
    topo: &Topology,
    p: &Params<Var>,
    cfg: &ModelConfig,
    mode: &mut Mode<'_>,
) -> Result<Var, ModelError> {
    if frames.len() != cfg.seq_len {
        return Err(ModelError::WindowLength {
            expected: cfg.seq_len,
            got: frames.len(),
        });
    }
    for f in frames {
        check_frame(f, topo, cfg)?;
    }
    let (t_len, n) = (frames.len(), topo.n_nodes);
    let x = tape.constant(stack(frames.iter().map(|f| f.node.clone()), cfg.d_v));
    let mut h = embed_nodes(tape, x, p)?;
    if cfg.edge_mode == EdgeMode::MeanInject {
        let xe = stack(frames.iter().map(|f| f.edge.clone()), cfg.d_e);
        let xe = tape.constant(xe);
        let he = embed_edges(tape, xe, p)?;
        let inc = Arc::new(topo.incidence.block_diagonal(t_len));
        let inject = tape.aggregate(he, &inc)?;
        h = tape.add(h, inject)?;
    }
    let nbr = Arc::new(topo.neighbors.block_diagonal(t_len));
    let groups = match cfg.bn_scope {
        BnScope::Timestep => t_len,
        BnScope::Window => 1,
    };
    for (l, sage) in p.sage.iter().enumerate() {
        h = sage_layer_stacked(tape, h, &nbr, groups, l, sage, cfg.dropout, mode)?;
    }

    let g = &p.gru;
    let proj = |tape: &mut Tape, w: Var, b: Var| -> Result<Var, AutodiffError> {
        let y = tape.matmul_bt(h, w)?;
        tape.add_row(y, b)
    };
    let xz = proj(tape, g.w_z, g.b_z)?;
    let xr = proj(tape, g.w_r, g.b_r)?;
    let xh = proj(tape, g.w_h, g.b_h)?;
    let mut state = tape.constant(Tensor::zeros(&[n, cfg.hidden]));
    for t in 0..t_len {
        let gate = |tape: &mut Tape, xs: Var, u: Var, state: Var| -> Result<Var, AutodiffError> {
            let a = tape.slice_rows(xs, t * n, n)?;
            let r = tape.matmul_bt(state, u)?;
            let s = tape.add(a, r)?;
            tape.sigmoid(s)
        };
        let z = gate(tape, xz, g.u_z, state)?;
        let r = gate(tape, xr, g.u_r, state)?;
        let xc = tape.slice_rows(xh, t * n, n)?;
        let hc = tape.matmul_bt(state, g.u_h)?;
        let hc = tape.mul(r, hc)?;
        let cand = tape.add(xc, hc)?;
        let cand = tape.tanh(cand)?;
        let delta = tape.sub(cand, state)?;
        let step = tape.mul(z, delta)?;
        state = tape.add(state, step)?;
    }
    let out = tape.matmul_bt(state, p.w_o)?;
    Ok(tape.add_row(out, p.b_o)?)
}

/// Parameters, running statistics and the topology they run on.
#[derive(Debug, Clone)]
pub struct GnnModel {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub running: BnRunning,
    pub topology: Topology,
}

impl GnnModel {
    pub fn new(config: ModelConfig, topology: Topology, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(GnnModel {
            params: ModelParams::init(&config, seed),
            running: BnRunning::new(&config),
            config,
            topology,
        })
    }

    /// Eval-mode prediction, N×d_v in normalized units.
    pub fn predict(&self, frames: &[Frame]) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let mut mode = Mode::Eval {
            running: &self.running,
        };
        let out = forward_window(&mut tape, frames, &self.topology, &p, &self.config, &mut mode)?;
        Ok(tape.value(out).clone())
    }

    /// Training-mode loss and parameter gradients in [`Params::named`]
    /// order. Running statistics are updated.
    pub fn loss_and_grads(
        &mut self,
        frames: &[Frame],
        target: &Tensor,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, Vec<Tensor>), ModelError> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let mut mode = Mode::Train {
            rng,
            running: &mut self.running,
        };
        let out = forward_window(&mut tape, frames, &self.topology, &p, &self.config, &mut mode)?;
        let loss = tape.mse_loss(out, target)?;
        tape.backward(loss)?;
        let value = tape.value(loss).item();
        let grads = p
            .named()
            .into_iter()
            .zip(self.params.named())
            .map(|((_, v), (_, t))| {
                tape.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()))
            })
            .collect();
        Ok((value, grads))
    }
}
