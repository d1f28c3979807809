//! Dense f64 tensors and a reverse-mode tape.
//!
//! Every differentiable op appends one node holding its output value and the
//! inputs it needs for the adjoint. `Tape::backward` walks the nodes in exact
//! reverse order of recording. The derivative of `relu` at zero is taken to
//! be zero.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("variable does not belong to this tape")]
    ForeignVar,
    #[error("backward already ran on this tape; call reset_grads first")]
    AlreadyBackpropagated,
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("loss does not depend on any tensor that requires a gradient")]
    Detached,
    #[error("invalid argument to {op}: {detail}")]
    Invalid { op: &'static str, detail: String },
}

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::Shape { op, detail }
}

/// Row-major dense tensor. Rank 0 is a scalar; most ops want rank 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, AutodiffError> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(shape_err(
                "Tensor::new",
                format!("shape {shape:?} needs {len} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![x],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AutodiffError> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, AutodiffError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(shape_err("Tensor::from_rows", "ragged rows".into()));
        }
        Tensor::matrix(rows.len(), cols, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rows of a matrix; a vector counts as one row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn as_matrix(&self, op: &'static str) -> Result<(usize, usize), AutodiffError> {
        if self.shape.len() != 2 {
            return Err(shape_err(op, format!("expected a matrix, got shape {:?}", self.shape)));
        }
        Ok((self.shape[0], self.shape[1]))
    }
}

/// `c = a * b + beta * c` on strided views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x *= beta);
        return;
    }
    debug_assert!(a.len() >= (m - 1) * rsa + (k - 1) * csa + 1);
    debug_assert!(b.len() >= (k - 1) * rsb + (n - 1) * csb + 1);
    debug_assert_eq!(c.len(), m * n);
    // SAFETY: the asserts above bound every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Mean pooling of source rows into destination rows. Destinations with no
/// sources produce zero rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    n_src: usize,
    offsets: Vec<usize>,
    sources: Vec<usize>,
    inv_count: Vec<f64>,
}

impl Aggregation {
    /// `pairs` are (source row, destination row).
    pub fn new(n_src: usize, n_dst: usize, pairs: &[(usize, usize)]) -> Result<Self, AutodiffError> {
        let mut buckets = vec![Vec::new(); n_dst];
        for &(s, d) in pairs {
            if s >= n_src || d >= n_dst {
                return Err(AutodiffError::Invalid {
                    op: "Aggregation::new",
                    detail: format!("pair ({s}, {d}) out of range for {n_src} -> {n_dst}"),
                });
            }
            buckets[d].push(s);
        }
        let mut offsets = Vec::with_capacity(n_dst + 1);
        offsets.push(0);
        let mut sources = Vec::with_capacity(pairs.len());
        let mut inv_count = Vec::with_capacity(n_dst);
        for b in &buckets {
            sources.extend_from_slice(b);
            offsets.push(sources.len());
            inv_count.push(if b.is_empty() { 0.0 } else { 1.0 / b.len() as f64 });
        }
        Ok(Aggregation {
            n_src,
            offsets,
            sources,
            inv_count,
        })
    }

    /// In-neighbor mean over directed edges (u -> v feeds v).
    pub fn neighbor_mean(n: usize, directed_edges: &[(usize, usize)]) -> Result<Self, AutodiffError> {
        Aggregation::new(n, n, directed_edges)
    }

    /// `copies` disjoint copies of this pooling over stacked row blocks.
    pub fn block_diagonal(&self, copies: usize) -> Self {
        let (ns, nd) = (self.n_src, self.n_dst());
        let mut offsets = Vec::with_capacity(copies * nd + 1);
        let mut sources = Vec::with_capacity(copies * self.sources.len());
        offsets.push(0);
        for k in 0..copies {
            for v in 0..nd {
                sources.extend(self.sources(v).iter().map(|u| u + k * ns));
                offsets.push(sources.len());
            }
        }
        Aggregation {
            n_src: copies * ns,
            offsets,
            sources,
            inv_count: self.inv_count.repeat(copies),
        }
    }

    pub fn n_src(&self) -> usize {
        self.n_src
    }

    pub fn n_dst(&self) -> usize {
        self.inv_count.len()
    }

    pub fn sources(&self, dst: usize) -> &[usize] {
        &self.sources[self.offsets[dst]..self.offsets[dst + 1]]
    }

    pub fn apply(&self, h: &Tensor) -> Result<Tensor, AutodiffError> {
        let (rows, d) = h.as_matrix("aggregate")?;
        if rows != self.n_src {
            return Err(shape_err("aggregate", format!("{rows} rows for {} sources", self.n_src)));
        }
        let mut out = vec![0.0; self.n_dst() * d];
        for v in 0..self.n_dst() {
            let o = &mut out[v * d..(v + 1) * d];
            for &u in self.sources(v) {
                for (x, y) in o.iter_mut().zip(&h.data[u * d..(u + 1) * d]) {
                    *x += y;
                }
            }
            let w = self.inv_count[v];
            o.iter_mut().for_each(|x| *x *= w);
        }
        Tensor::matrix(self.n_dst(), d, out)
    }
}

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulBt(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Concat(usize, usize),
    SliceRows(usize, usize),
    Aggregate(usize, Arc<Aggregation>),
    Dropout(usize, Vec<f64>),
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        /// groups × columns
        inv_std: Vec<f64>,
        groups: usize,
        batch_stats: bool,
    },
    Sum(usize),
    Mse(usize, Tensor),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

/// Per-column statistics measured by a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    backpropagated: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            backpropagated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize, AutodiffError> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(AutodiffError::ForeignVar);
        }
        Ok(v.idx)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    pub fn param(&mut self, value: &Tensor) -> Var {
        self.leaf(value.clone(), true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[self.check(v).expect("var from another tape")].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.check(v).ok().and_then(|i| self.nodes[i].grad.as_ref())
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.check(v).map(|i| self.nodes[i].requires_grad).unwrap_or(false)
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (m, k) = self.val(ia).as_matrix("matmul")?;
        let (k2, n) = self.val(ib).as_matrix("matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", format!("[{m}x{k}] . [{k2}x{n}]")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.val(ia).data, k, 1, &self.val(ib).data, n, 1, 0.0, &mut out);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMul(ia, ib), &[ia, ib]))
    }

    /// `a · bᵀ`, the natural product for weights stored as [out, in].
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (m, k) = self.val(ia).as_matrix("matmul_bt")?;
        let (n, k2) = self.val(ib).as_matrix("matmul_bt")?;
        if k != k2 {
            return Err(shape_err("matmul_bt", format!("[{m}x{k}] . [{n}x{k2}]^T")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.val(ia).data, k, 1, &self.val(ib).data, 1, k, 0.0, &mut out);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMulBt(ia, ib), &[ia, ib]))
    }

    fn zip_same(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(usize, usize, Tensor), AutodiffError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (ta, tb) = (self.val(ia), self.val(ib));
        if ta.shape != tb.shape {
            return Err(shape_err(op, format!("{:?} vs {:?}", ta.shape, tb.shape)));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        Ok((ia, ib, Tensor { shape: ta.shape.clone(), data }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib, t) = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(ia, ib), &[ia, ib]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib, t) = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(ia, ib), &[ia, ib]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib, t) = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(ia, ib), &[ia, ib]))
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (ia, ib) = (self.check(a)?, self.check(bias)?);
        let (m, n) = self.val(ia).as_matrix("add_row")?;
        if self.val(ib).len() != n {
            return Err(shape_err(
                "add_row",
                format!("bias of {} for {n} columns", self.val(ib).len()),
            ));
        }
        let mut data = self.val(ia).data.clone();
        let b = &self.val(ib).data;
        for row in data.chunks_exact_mut(n.max(1)).take(m) {
            for (x, y) in row.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(self.push(Tensor { shape: vec![m, n], data }, Op::AddRow(ia, ib), &[ia, ib]))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Result<(usize, Tensor), AutodiffError> {
        let ia = self.check(a)?;
        let t = self.val(ia);
        Ok((
            ia,
            Tensor {
                shape: t.shape.clone(),
                data: t.data.iter().map(|&x| f(x)).collect(),
            },
        ))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        let (ia, t) = self.map(a, |x| c * x)?;
        Ok(self.push(t, Op::Scale(ia, c), &[ia]))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let (ia, t) = self.map(a, |x| if x > 0.0 { x } else { 0.0 })?;
        Ok(self.push(t, Op::Relu(ia), &[ia]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let (ia, t) = self.map(a, sigmoid)?;
        Ok(self.push(t, Op::Sigmoid(ia), &[ia]))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let (ia, t) = self.map(a, f64::tanh)?;
        Ok(self.push(t, Op::Tanh(ia), &[ia]))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (m, p) = self.val(ia).as_matrix("concat_cols")?;
        let (m2, q) = self.val(ib).as_matrix("concat_cols")?;
        if m != m2 {
            return Err(shape_err("concat_cols", format!("{m} rows vs {m2} rows")));
        }
        let mut data = Vec::with_capacity(m * (p + q));
        for r in 0..m {
            data.extend_from_slice(&self.val(ia).data[r * p..(r + 1) * p]);
            data.extend_from_slice(&self.val(ib).data[r * q..(r + 1) * q]);
        }
        Ok(self.push(
            Tensor { shape: vec![m, p + q], data },
            Op::Concat(ia, ib),
            &[ia, ib],
        ))
    }

    /// Rows `start..start + len` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let ia = self.check(a)?;
        let (m, d) = self.val(ia).as_matrix("slice_rows")?;
        if start + len > m {
            return Err(shape_err("slice_rows", format!("rows {start}..{} of {m}", start + len)));
        }
        let data = self.val(ia).data[start * d..(start + len) * d].to_vec();
        Ok(self.push(Tensor { shape: vec![len, d], data }, Op::SliceRows(ia, start), &[ia]))
    }

    pub fn aggregate(&mut self, h: Var, agg: &Arc<Aggregation>) -> Result<Var, AutodiffError> {
        let ih = self.check(h)?;
        let t = agg.apply(self.val(ih))?;
        Ok(self.push(t, Op::Aggregate(ih, Arc::clone(agg)), &[ih]))
    }

    /// Inverted dropout. Identity when not training or when `rate` is zero.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var, AutodiffError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(AutodiffError::Invalid {
                op: "dropout",
                detail: format!("rate {rate} outside [0, 1)"),
            });
        }
        let ia = self.check(a)?;
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.val(ia).len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let t = self.val(ia);
        let data = t.data.iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor { shape: t.shape.clone(), data };
        Ok(self.push(t, Op::Dropout(ia, mask), &[ia]))
    }

    /// Batch norm over rows using the batch's own statistics (biased
    /// variance). Returns the measured statistics for running averages.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
    ) -> Result<(Var, BatchStats), AutodiffError> {
        let (out, mut stats) = self.batch_norm_train_groups(x, gamma, beta, 1)?;
        Ok((out, stats.remove(0)))
    }

    /// Training-mode batch norm applied separately to `groups` equal,
    /// contiguous blocks of rows. Statistics come back in block order.
    pub fn batch_norm_train_groups(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
    ) -> Result<(Var, Vec<BatchStats>), AutodiffError> {
        let ix = self.check(x)?;
        let (rows, d) = self.val(ix).as_matrix("batch_norm")?;
        if groups == 0 || rows % groups != 0 {
            return Err(shape_err("batch_norm", format!("{rows} rows do not split into {groups} groups")));
        }
        let n = rows / groups;
        if n < 2 {
            return Err(AutodiffError::Invalid {
                op: "batch_norm",
                detail: format!("training mode needs at least 2 rows per group, got {n}"),
            });
        }
        let xs = &self.val(ix).data;
        let mut stats = Vec::with_capacity(groups);
        for block in xs.chunks_exact(n * d) {
            let mut mean = vec![0.0; d];
            for row in block.chunks_exact(d) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0; d];
            for row in block.chunks_exact(d) {
                for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= n as f64);
            stats.push(BatchStats { mean, var });
        }
        let out = self.batch_norm_with(x, gamma, beta, &stats, true)?;
        Ok((out, stats))
    }

    /// Batch norm with frozen statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
    ) -> Result<Var, AutodiffError> {
        let stats = [BatchStats {
            mean: mean.to_vec(),
            var: var.to_vec(),
        }];
        self.batch_norm_with(x, gamma, beta, &stats, false)
    }

    fn batch_norm_with(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &[BatchStats],
        batch_stats: bool,
    ) -> Result<Var, AutodiffError> {
        let (ix, ig, ib) = (self.check(x)?, self.check(gamma)?, self.check(beta)?);
        let (n, d) = self.val(ix).as_matrix("batch_norm")?;
        for (name, len) in [("gamma", self.val(ig).len()), ("beta", self.val(ib).len())]
            .into_iter()
            .chain(stats.iter().flat_map(|s| [("mean", s.mean.len()), ("var", s.var.len())]))
        {
            if len != d {
                return Err(shape_err("batch_norm", format!("{name} has {len} entries for {d} columns")));
            }
        }
        let per_group = n / stats.len();
        let inv_std: Vec<f64> = stats
            .iter()
            .flat_map(|s| s.var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()))
            .collect();
        let mut xhat = self.val(ix).data.clone();
        for (r, row) in xhat.chunks_exact_mut(d).enumerate() {
            let g = r / per_group;
            let (mean, inv) = (&stats[g].mean, &inv_std[g * d..(g + 1) * d]);
            for ((v, m), s) in row.iter_mut().zip(mean).zip(inv) {
                *v = (*v - m) * s;
            }
        }
        let (g, b) = (&self.val(ig).data, &self.val(ib).data);
        let mut out = xhat.clone();
        for row in out.chunks_exact_mut(d) {
            for ((v, g), b) in row.iter_mut().zip(g).zip(b) {
                *v = *v * g + b;
            }
        }
        Ok(self.push(
            Tensor { shape: vec![n, d], data: out },
            Op::BatchNorm {
                x: ix,
                gamma: ig,
                beta: ib,
                xhat,
                inv_std,
                groups: stats.len(),
                batch_stats,
            },
            &[ix, ig, ib],
        ))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ia = self.check(a)?;
        let s = self.val(ia).data.iter().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum(ia), &[ia]))
    }

    /// `(1/N) Σ_v ‖pred_v − target_v‖²` over the N rows.
    pub fn mse_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var, AutodiffError> {
        let ip = self.check(pred)?;
        let p = self.val(ip);
        if p.shape != target.shape {
            return Err(shape_err("mse_loss", format!("{:?} vs {:?}", p.shape, target.shape)));
        }
        let loss = mse(p, target);
        Ok(self.push(Tensor::scalar(loss), Op::Mse(ip, target.clone()), &[ip]))
    }

    /// Clears all gradients so `backward` may run again.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backpropagated = false;
    }

    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        let il = self.check(loss)?;
        if self.backpropagated {
            return Err(AutodiffError::AlreadyBackpropagated);
        }
        if self.nodes[il].value.len() != 1 {
            return Err(AutodiffError::NotScalar(self.nodes[il].value.shape.clone()));
        }
        if !self.nodes[il].requires_grad {
            return Err(AutodiffError::Detached);
        }
        self.backpropagated = true;
        self.nodes[il].grad = Some(Tensor {
            shape: self.nodes[il].value.shape.clone(),
            data: vec![1.0],
        });
        for i in (0..=il).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else { continue };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.propagate(i, &op, &g);
            self.nodes[i].op = op;
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, i: usize, delta: Vec<f64>) {
        let node = &mut self.nodes[i];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => {
                for (x, d) in g.data.iter_mut().zip(&delta) {
                    *x += d;
                }
            }
            None => {
                node.grad = Some(Tensor {
                    shape: node.value.shape.clone(),
                    data: delta,
                })
            }
        }
    }

    /// Adds `delta` into the gradient of node `i` starting at flat `offset`.
    fn accumulate_at(&mut self, i: usize, offset: usize, delta: &[f64]) {
        let node = &mut self.nodes[i];
        if !node.requires_grad {
            return;
        }
        let g = node.grad.get_or_insert_with(|| Tensor::zeros(&node.value.shape));
        for (x, d) in g.data[offset..offset + delta.len()].iter_mut().zip(delta) {
            *x += d;
        }
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn propagate(&mut self, i: usize, op: &Op, g: &Tensor) {
        let gd = &g.data;
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.val(a).shape[0], self.val(a).shape[1]);
                let n = self.val(b).shape[1];
                if self.wants(a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, gd, n, 1, &self.val(b).data, 1, n, 0.0, &mut da);
                    self.accumulate(a, da);
                }
                if self.wants(b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, &self.val(a).data, 1, k, gd, n, 1, 0.0, &mut db);
                    self.accumulate(b, db);
                }
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = (self.val(a).shape[0], self.val(a).shape[1]);
                let n = self.val(b).shape[0];
                if self.wants(a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, gd, n, 1, &self.val(b).data, k, 1, 0.0, &mut da);
                    self.accumulate(a, da);
                }
                if self.wants(b) {
                    let mut db = vec![0.0; n * k];
                    gemm(n, m, k, gd, 1, n, &self.val(a).data, k, 1, 0.0, &mut db);
                    self.accumulate(b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(a, gd.clone());
                self.accumulate(b, gd.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(a, gd.clone());
                self.accumulate(b, gd.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                if self.wants(a) {
                    let d = gd.iter().zip(&self.val(b).data).map(|(g, y)| g * y).collect();
                    self.accumulate(a, d);
                }
                if self.wants(b) {
                    let d = gd.iter().zip(&self.val(a).data).map(|(g, x)| g * x).collect();
                    self.accumulate(b, d);
                }
            }
            Op::AddRow(a, b) => {
                self.accumulate(a, gd.clone());
                if self.wants(b) {
                    let n = self.val(b).len();
                    let mut db = vec![0.0; n];
                    for row in gd.chunks_exact(n.max(1)) {
                        for (s, x) in db.iter_mut().zip(row) {
                            *s += x;
                        }
                    }
                    self.accumulate(b, db);
                }
            }
            Op::Scale(a, c) => self.accumulate(a, gd.iter().map(|x| c * x).collect()),
            Op::Relu(a) => {
                let d = gd
                    .iter()
                    .zip(&self.val(a).data)
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(a, d);
            }
            Op::Sigmoid(a) => {
                let d = gd
                    .iter()
                    .zip(&self.val(i).data)
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                self.accumulate(a, d);
            }
            Op::Tanh(a) => {
                let d = gd
                    .iter()
                    .zip(&self.val(i).data)
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                self.accumulate(a, d);
            }
            Op::Concat(a, b) => {
                let p = self.val(a).shape[1];
                let q = self.val(b).shape[1];
                let m = self.val(a).shape[0];
                if self.wants(a) {
                    let mut da = Vec::with_capacity(m * p);
                    for r in 0..m {
                        da.extend_from_slice(&gd[r * (p + q)..r * (p + q) + p]);
                    }
                    self.accumulate(a, da);
                }
                if self.wants(b) {
                    let mut db = Vec::with_capacity(m * q);
                    for r in 0..m {
                        db.extend_from_slice(&gd[r * (p + q) + p..(r + 1) * (p + q)]);
                    }
                    self.accumulate(b, db);
                }
            }
            Op::SliceRows(a, start) => {
                let d = self.val(a).shape[1];
                self.accumulate_at(a, start * d, gd);
            }
            Op::Aggregate(a, ref agg) => {
                if self.wants(a) {
                    let d = self.val(a).shape[1];
                    let mut da = vec![0.0; agg.n_src() * d];
                    for v in 0..agg.n_dst() {
                        let w = agg.inv_count[v];
                        let gv = &gd[v * d..(v + 1) * d];
                        for &u in agg.sources(v) {
                            for (x, y) in da[u * d..(u + 1) * d].iter_mut().zip(gv) {
                                *x += w * y;
                            }
                        }
                    }
                    self.accumulate(a, da);
                }
            }
            Op::Dropout(a, ref mask) => {
                self.accumulate(a, gd.iter().zip(mask).map(|(g, m)| g * m).collect());
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                ref xhat,
                ref inv_std,
                groups,
                batch_stats,
            } => {
                let d = inv_std.len() / groups;
                let rows = gd.len() / d.max(1);
                let n = rows / groups;
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                // per-group column sums of g and g·xhat
                let mut s_g = vec![0.0; groups * d];
                let mut s_gx = vec![0.0; groups * d];
                for (r, (grow, xrow)) in gd.chunks_exact(d).zip(xhat.chunks_exact(d)).enumerate() {
                    let off = (r / n) * d;
                    for c in 0..d {
                        s_gx[off + c] += grow[c] * xrow[c];
                        s_g[off + c] += grow[c];
                    }
                }
                for k in 0..groups {
                    for c in 0..d {
                        dgamma[c] += s_gx[k * d + c];
                        dbeta[c] += s_g[k * d + c];
                    }
                }
                if self.wants(x) {
                    let gam = &self.val(gamma).data;
                    let mut dx = vec![0.0; rows * d];
                    let nf = n as f64;
                    for r in 0..rows {
                        let off = (r / n) * d;
                        for c in 0..d {
                            let dxh = gd[r * d + c] * gam[c];
                            dx[r * d + c] = if batch_stats {
                                // dx = s/N (N dxhat − Σdxhat − xhat Σ dxhat·xhat)
                                let s1 = s_g[off + c] * gam[c];
                                let s2 = s_gx[off + c] * gam[c];
                                inv_std[off + c] / nf * (nf * dxh - s1 - xhat[r * d + c] * s2)
                            } else {
                                dxh * inv_std[off + c]
                            };
                        }
                    }
                    self.accumulate(x, dx);
                }
                self.accumulate(gamma, dgamma);
                self.accumulate(beta, dbeta);
            }
            Op::Sum(a) => {
                let n = self.val(a).len();
                self.accumulate(a, vec![gd[0]; n]);
            }
            Op::Mse(p, ref target) => {
                let rows = self.val(p).rows() as f64;
                let c = 2.0 * gd[0] / rows;
                let d = self
                    .val(p)
                    .data
                    .iter()
                    .zip(&target.data)
                    .map(|(x, t)| c * (x - t))
                    .collect();
                self.accumulate(p, d);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-averaged squared error, summed over columns.
pub fn mse(pred: &Tensor, target: &Tensor) -> f64 {
    let sq: f64 = pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(x, t)| (x - t) * (x - t))
        .sum();
    sq / pred.rows() as f64
}
