//! Reverse-mode differentiable tensor primitives.
//!
//! A [`Graph`] records every primitive operation as it executes (eager
//! forward), producing a tape in topological order. [`Graph::backward`]
//! walks the tape in reverse and accumulates gradients into every leaf
//! that was created with `requires_grad`.
//!
//! All tensors are two-dimensional `(rows, cols)` in row-major layout;
//! scalars are `1x1`. Arithmetic is `f64` throughout.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Index of a node on the tape.
pub type TensorId = usize;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("shape mismatch in {op}: ({0}x{1}) vs ({2}x{3})", .lhs.0, .lhs.1, .rhs.0, .rhs.1)]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("softmax input contains NaN")]
    NanInput,
    #[error("backward requires a scalar loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("value buffer has {got} elements, shape {rows}x{cols} wants {want}")]
    BadBuffer {
        rows: usize,
        cols: usize,
        got: usize,
        want: usize,
    },
    #[error("invalid row index {idx} for tensor with {rows} rows")]
    RowOutOfRange { idx: usize, rows: usize },
    #[error("invalid column slice [{start}, {start}+{len}) for tensor with {cols} columns")]
    ColSliceOutOfRange {
        start: usize,
        len: usize,
        cols: usize,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(TensorId, TensorId),
    Add(TensorId, TensorId),
    /// Broadcast-add a `1 x cols` row to every row of the first input.
    AddRow(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Scale(TensorId, f64),
    AddConst(TensorId, f64),
    PowConst(TensorId, f64),
    Transpose(TensorId),
    Reshape(TensorId),
    SoftmaxRows(TensorId),
    Gelu(TensorId),
    LayerNormRows {
        x: TensorId,
        gain: TensorId,
        bias: TensorId,
        eps: f64,
    },
    /// Keep-mask already folded with the inverted 1/(1-p) scaling.
    Dropout { x: TensorId, mask: Vec<f64> },
    DftMagnitudeRows(TensorId),
    Abs(TensorId),
    Exp(TensorId),
    SumAll(TensorId),
    MeanAll(TensorId),
    GatherRows { x: TensorId, idx: Vec<usize> },
    SliceCols {
        x: TensorId,
        start: usize,
        len: usize,
    },
    ConcatCols(Vec<TensorId>),
    /// Row i of the output is the next row of `visible` where `keep[i]`,
    /// otherwise a copy of the single `fill` row.
    AssembleRows {
        visible: TensorId,
        fill: TensorId,
        keep: Vec<bool>,
    },
}

struct Node {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    grad: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

/// Tape of executed primitives; node ids are topologically ordered by
/// construction, so no cycles can be expressed.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Exact GeLU: x * Phi(x) with the Gaussian CDF (not the tanh
/// approximation).
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_deriv(x: f64) -> f64 {
    let phi_cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    phi_cdf + x * pdf
}

/// Symmetric Hann window of length `n` (n >= 2).
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos()))
        .collect()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        (self.nodes[id].rows, self.nodes[id].cols)
    }

    pub fn values(&self, id: TensorId) -> &[f64] {
        &self.nodes[id].values
    }

    pub fn grad(&self, id: TensorId) -> &[f64] {
        &self.nodes[id].grad
    }

    pub fn scalar_value(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.nodes[id].values.len(), 1);
        self.nodes[id].values[0]
    }

    pub fn zero_grad(&mut self, id: TensorId) {
        self.nodes[id].grad.fill(0.0);
    }

    fn push(
        &mut self,
        rows: usize,
        cols: usize,
        values: Vec<f64>,
        requires_grad: bool,
        op: Op,
    ) -> TensorId {
        debug_assert_eq!(values.len(), rows * cols);
        let grad = vec![0.0; values.len()];
        self.nodes.push(Node {
            rows,
            cols,
            values,
            grad,
            requires_grad,
            op,
        });
        self.nodes.len() - 1
    }

    fn needs_grad(&self, id: TensorId) -> bool {
        self.nodes[id].requires_grad
    }

    /// Insert a leaf that participates in gradient accumulation.
    pub fn leaf(
        &mut self,
        values: Vec<f64>,
        rows: usize,
        cols: usize,
    ) -> Result<TensorId, DiffError> {
        if values.len() != rows * cols {
            return Err(DiffError::BadBuffer {
                rows,
                cols,
                got: values.len(),
                want: rows * cols,
            });
        }
        Ok(self.push(rows, cols, values, true, Op::Leaf))
    }

    /// Insert a constant (no gradient flows into it).
    pub fn constant(
        &mut self,
        values: Vec<f64>,
        rows: usize,
        cols: usize,
    ) -> Result<TensorId, DiffError> {
        if values.len() != rows * cols {
            return Err(DiffError::BadBuffer {
                rows,
                cols,
                got: values.len(),
                want: rows * cols,
            });
        }
        Ok(self.push(rows, cols, values, false, Op::Leaf))
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, DiffError> {
        let (m, ka) = self.shape(a);
        let (kb, n) = self.shape(b);
        if ka != kb {
            return Err(DiffError::ShapeMismatch {
                op: "matmul",
                lhs: (m, ka),
                rhs: (kb, n),
            });
        }
        let mut out = vec![0.0; m * n];
        {
            let av = &self.nodes[a].values;
            let bv = &self.nodes[b].values;
            for i in 0..m {
                for k in 0..ka {
                    let aik = av[i * ka + k];
                    if aik == 0.0 {
                        continue;
                    }
                    let brow = &bv[k * n..(k + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for j in 0..n {
                        orow[j] += aik * brow[j];
                    }
                }
            }
        }
        let rg = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(m, n, out, rg, Op::Matmul(a, b)))
    }

    fn binary_same_shape(
        &mut self,
        a: TensorId,
        b: TensorId,
        op_name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<TensorId, DiffError> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(DiffError::ShapeMismatch {
                op: op_name,
                lhs: sa,
                rhs: sb,
            });
        }
        let out: Vec<f64> = self.nodes[a]
            .values
            .iter()
            .zip(&self.nodes[b].values)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(sa.0, sa.1, out, rg, op))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, DiffError> {
        self.binary_same_shape(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, DiffError> {
        self.binary_same_shape(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, DiffError> {
        self.binary_same_shape(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// `a + row` where `row` is `1 x cols`, broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: TensorId, row: TensorId) -> Result<TensorId, DiffError> {
        let (m, n) = self.shape(a);
        let sr = self.shape(row);
        if sr != (1, n) {
            return Err(DiffError::ShapeMismatch {
                op: "add_row",
                lhs: (m, n),
                rhs: sr,
            });
        }
        let mut out = self.nodes[a].values.clone();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += self.nodes[row].values[j];
            }
        }
        let rg = self.needs_grad(a) || self.needs_grad(row);
        Ok(self.push(m, n, out, rg, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let (m, n) = self.shape(a);
        let out: Vec<f64> = self.nodes[a].values.iter().map(|&x| x * c).collect();
        let rg = self.needs_grad(a);
        self.push(m, n, out, rg, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: TensorId, c: f64) -> TensorId {
        let (m, n) = self.shape(a);
        let out: Vec<f64> = self.nodes[a].values.iter().map(|&x| x + c).collect();
        let rg = self.needs_grad(a);
        self.push(m, n, out, rg, Op::AddConst(a, c))
    }

    /// Elementwise x^p for nonnegative inputs (used by the focal exponent).
    pub fn pow_const(&mut self, a: TensorId, p: f64) -> TensorId {
        let (m, n) = self.shape(a);
        let out: Vec<f64> = self.nodes[a].values.iter().map(|&x| x.powf(p)).collect();
        let rg = self.needs_grad(a);
        self.push(m, n, out, rg, Op::PowConst(a, p))
    }

    pub fn transpose(&mut self, a: TensorId) -> TensorId {
        let (m, n) = self.shape(a);
        let av = &self.nodes[a].values;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        let rg = self.needs_grad(a);
        self.push(n, m, out, rg, Op::Transpose(a))
    }

    pub fn reshape(
        &mut self,
        a: TensorId,
        rows: usize,
        cols: usize,
    ) -> Result<TensorId, DiffError> {
        let (m, n) = self.shape(a);
        if m * n != rows * cols {
            return Err(DiffError::ShapeMismatch {
                op: "reshape",
                lhs: (m, n),
                rhs: (rows, cols),
            });
        }
        let out = self.nodes[a].values.clone();
        let rg = self.needs_grad(a);
        Ok(self.push(rows, cols, out, rg, Op::Reshape(a)))
    }

    /// Numerically stabilized softmax along each row.
    pub fn softmax_rows(&mut self, a: TensorId) -> Result<TensorId, DiffError> {
        let (m, n) = self.shape(a);
        if self.nodes[a].values.iter().any(|v| v.is_nan()) {
            return Err(DiffError::NanInput);
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.nodes[a].values[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..n {
                let e = (row[j] - max).exp();
                out[i * n + j] = e;
                sum += e;
            }
            for j in 0..n {
                out[i * n + j] /= sum;
            }
        }
        let rg = self.needs_grad(a);
        Ok(self.push(m, n, out, rg, Op::SoftmaxRows(a)))
    }

    pub fn gelu(&mut self, a: TensorId) -> TensorId {
        let (m, n) = self.shape(a);
        let out: Vec<f64> = self.nodes[a].values.iter().map(|&x| gelu_scalar(x)).collect();
        let rg = self.needs_grad(a);
        self.push(m, n, out, rg, Op::Gelu(a))
    }

    pub fn abs(&mut self, a: TensorId) -> TensorId {
        let (m, n) = self.shape(a);
        let out: Vec<f64> = self.nodes[a].values.iter().map(|&x| x.abs()).collect();
        let rg = self.needs_grad(a);
        self.push(m, n, out, rg, Op::Abs(a))
    }

    pub fn exp(&mut self, a: TensorId) -> TensorId {
        let (m, n) = self.shape(a);
        let out: Vec<f64> = self.nodes[a].values.iter().map(|&x| x.exp()).collect();
        let rg = self.needs_grad(a);
        self.push(m, n, out, rg, Op::Exp(a))
    }

    /// Layer normalization over the last axis with learnable gain/bias
    /// (both `1 x cols`).
    pub fn layer_norm_rows(
        &mut self,
        x: TensorId,
        gain: TensorId,
        bias: TensorId,
        eps: f64,
    ) -> Result<TensorId, DiffError> {
        let (m, n) = self.shape(x);
        for &p in &[gain, bias] {
            let sp = self.shape(p);
            if sp != (1, n) {
                return Err(DiffError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: (m, n),
                    rhs: sp,
                });
            }
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.nodes[x].values[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let istd = 1.0 / (var + eps).sqrt();
            for j in 0..n {
                let xhat = (row[j] - mean) * istd;
                out[i * n + j] =
                    self.nodes[gain].values[j] * xhat + self.nodes[bias].values[j];
            }
        }
        let rg = self.needs_grad(x) || self.needs_grad(gain) || self.needs_grad(bias);
        Ok(self.push(m, n, out, rg, Op::LayerNormRows { x, gain, bias, eps }))
    }

    /// Seeded inverted dropout. `p` is the drop probability; kept entries
    /// are scaled by 1/(1-p). The mask is a pure function of `seed`.
    pub fn dropout(&mut self, x: TensorId, p: f64, seed: u64) -> TensorId {
        let (m, n) = self.shape(x);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep_scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..m * n)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep_scale })
            .collect();
        let out: Vec<f64> = self.nodes[x]
            .values
            .iter()
            .zip(&mask)
            .map(|(&v, &k)| v * k)
            .collect();
        let rg = self.needs_grad(x);
        self.push(m, n, out, rg, Op::Dropout { x, mask })
    }

    /// One-sided DFT magnitude of each row after applying a symmetric Hann
    /// window. Output has `floor(cols/2)+1` columns. The gradient of |z|
    /// at z = 0 is defined as 0.
    pub fn dft_magnitude_rows(&mut self, x: TensorId) -> TensorId {
        let (m, p) = self.shape(x);
        let k_bins = p / 2 + 1;
        let hann = hann_window(p);
        let mut out = vec![0.0; m * k_bins];
        for i in 0..m {
            let row = &self.nodes[x].values[i * p..(i + 1) * p];
            for k in 0..k_bins {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, (&v, &w)) in row.iter().zip(&hann).enumerate() {
                    let theta = 2.0 * std::f64::consts::PI * (k * n) as f64 / p as f64;
                    re += v * w * theta.cos();
                    im -= v * w * theta.sin();
                }
                out[i * k_bins + k] = re.hypot(im);
            }
        }
        let rg = self.needs_grad(x);
        self.push(m, k_bins, out, rg, Op::DftMagnitudeRows(x))
    }

    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let s: f64 = self.nodes[a].values.iter().sum();
        let rg = self.needs_grad(a);
        self.push(1, 1, vec![s], rg, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: TensorId) -> TensorId {
        let n = self.nodes[a].values.len() as f64;
        let s: f64 = self.nodes[a].values.iter().sum::<f64>() / n;
        let rg = self.needs_grad(a);
        self.push(1, 1, vec![s], rg, Op::MeanAll(a))
    }

    pub fn gather_rows(&mut self, x: TensorId, idx: &[usize]) -> Result<TensorId, DiffError> {
        let (m, n) = self.shape(x);
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= m {
                return Err(DiffError::RowOutOfRange { idx: i, rows: m });
            }
            out.extend_from_slice(&self.nodes[x].values[i * n..(i + 1) * n]);
        }
        let rg = self.needs_grad(x);
        Ok(self.push(
            idx.len(),
            n,
            out,
            rg,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
        ))
    }

    pub fn slice_cols(
        &mut self,
        x: TensorId,
        start: usize,
        len: usize,
    ) -> Result<TensorId, DiffError> {
        let (m, n) = self.shape(x);
        if start + len > n {
            return Err(DiffError::ColSliceOutOfRange {
                start,
                len,
                cols: n,
            });
        }
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&self.nodes[x].values[i * n + start..i * n + start + len]);
        }
        let rg = self.needs_grad(x);
        Ok(self.push(m, len, out, rg, Op::SliceCols { x, start, len }))
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId, DiffError> {
        if parts.is_empty() {
            return Err(DiffError::Invalid("concat_cols of zero tensors".into()));
        }
        let m = self.shape(parts[0]).0;
        let mut total = 0;
        for &p in parts {
            let (pm, pn) = self.shape(p);
            if pm != m {
                return Err(DiffError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: (m, 0),
                    rhs: (pm, pn),
                });
            }
            total += pn;
        }
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                let pn = self.shape(p).1;
                out.extend_from_slice(&self.nodes[p].values[i * pn..(i + 1) * pn]);
            }
        }
        let rg = parts.iter().any(|&p| self.needs_grad(p));
        Ok(self.push(m, total, out, rg, Op::ConcatCols(parts.to_vec())))
    }

    /// Interleave the rows of `visible` (in order) at positions where
    /// `keep` is true, and a shared `fill` row (`1 x cols`) elsewhere.
    pub fn assemble_rows(
        &mut self,
        visible: TensorId,
        fill: TensorId,
        keep: &[bool],
    ) -> Result<TensorId, DiffError> {
        let (vm, n) = self.shape(visible);
        let sf = self.shape(fill);
        if sf != (1, n) {
            return Err(DiffError::ShapeMismatch {
                op: "assemble_rows",
                lhs: (vm, n),
                rhs: sf,
            });
        }
        let n_visible = keep.iter().filter(|&&k| k).count();
        if n_visible != vm {
            return Err(DiffError::Invalid(format!(
                "assemble_rows: keep has {} visible slots but tensor has {} rows",
                n_visible, vm
            )));
        }
        let mut out = Vec::with_capacity(keep.len() * n);
        let mut next = 0;
        for &k in keep {
            if k {
                out.extend_from_slice(&self.nodes[visible].values[next * n..(next + 1) * n]);
                next += 1;
            } else {
                out.extend_from_slice(&self.nodes[fill].values);
            }
        }
        let rg = self.needs_grad(visible) || self.needs_grad(fill);
        Ok(self.push(
            keep.len(),
            n,
            out,
            rg,
            Op::AssembleRows {
                visible,
                fill,
                keep: keep.to_vec(),
            },
        ))
    }

    /// Accumulate dLoss/dLeaf into every `requires_grad` leaf reachable
    /// from `loss`. Non-leaf gradients are scratch and reset per call;
    /// leaf gradients accumulate across calls until `zero_grad`.
    pub fn backward(&mut self, loss: TensorId) -> Result<(), DiffError> {
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(DiffError::NonScalarLoss { rows: r, cols: c });
        }
        for node in &mut self.nodes {
            if !matches!(node.op, Op::Leaf) {
                node.grad.fill(0.0);
            }
        }
        if matches!(self.nodes[loss].op, Op::Leaf) {
            self.nodes[loss].grad[0] += 1.0;
            return Ok(());
        }
        self.nodes[loss].grad[0] = 1.0;
        for id in (0..=loss).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            if self.nodes[id].grad.iter().all(|&g| g == 0.0) {
                continue;
            }
            self.propagate(id);
        }
        Ok(())
    }

    fn propagate(&mut self, id: TensorId) {
        let op = self.nodes[id].op.clone();
        let (m, n) = self.shape(id);
        let grad = self.nodes[id].grad.clone();
        match op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (_, k) = self.shape(a);
                if self.needs_grad(a) {
                    // dA = dC * B^T
                    let bv = self.nodes[b].values.clone();
                    let ga = &mut self.nodes[a].grad;
                    for i in 0..m {
                        for kk in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += grad[i * n + j] * bv[kk * n + j];
                            }
                            ga[i * k + kk] += s;
                        }
                    }
                }
                if self.needs_grad(b) {
                    // dB = A^T * dC
                    let av = self.nodes[a].values.clone();
                    let gb = &mut self.nodes[b].grad;
                    for kk in 0..k {
                        for j in 0..n {
                            let mut s = 0.0;
                            for i in 0..m {
                                s += av[i * k + kk] * grad[i * n + j];
                            }
                            gb[kk * n + j] += s;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for &t in &[a, b] {
                    if self.needs_grad(t) {
                        for (g, &d) in self.nodes[t].grad.iter_mut().zip(&grad) {
                            *g += d;
                        }
                    }
                }
            }
            Op::AddRow(a, row) => {
                if self.needs_grad(a) {
                    for (g, &d) in self.nodes[a].grad.iter_mut().zip(&grad) {
                        *g += d;
                    }
                }
                if self.needs_grad(row) {
                    for i in 0..m {
                        for j in 0..n {
                            self.nodes[row].grad[j] += grad[i * n + j];
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.needs_grad(a) {
                    for (g, &d) in self.nodes[a].grad.iter_mut().zip(&grad) {
                        *g += d;
                    }
                }
                if self.needs_grad(b) {
                    for (g, &d) in self.nodes[b].grad.iter_mut().zip(&grad) {
                        *g -= d;
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.needs_grad(a) {
                    let bv = self.nodes[b].values.clone();
                    for ((g, &d), &v) in self.nodes[a].grad.iter_mut().zip(&grad).zip(&bv) {
                        *g += d * v;
                    }
                }
                if self.needs_grad(b) {
                    let av = self.nodes[a].values.clone();
                    for ((g, &d), &v) in self.nodes[b].grad.iter_mut().zip(&grad).zip(&av) {
                        *g += d * v;
                    }
                }
            }
            Op::Scale(a, c) => {
                if self.needs_grad(a) {
                    for (g, &d) in self.nodes[a].grad.iter_mut().zip(&grad) {
                        *g += d * c;
                    }
                }
            }
            Op::AddConst(a, _) | Op::Reshape(a) => {
                if self.needs_grad(a) {
                    for (g, &d) in self.nodes[a].grad.iter_mut().zip(&grad) {
                        *g += d;
                    }
                }
            }
            Op::PowConst(a, p) => {
                if self.needs_grad(a) {
                    let av = self.nodes[a].values.clone();
                    for ((g, &d), &x) in self.nodes[a].grad.iter_mut().zip(&grad).zip(&av) {
                        *g += d * p * x.powf(p - 1.0);
                    }
                }
            }
            Op::Transpose(a) => {
                if self.needs_grad(a) {
                    // output is n x m here: (m, n) refer to the output
                    for i in 0..m {
                        for j in 0..n {
                            self.nodes[a].grad[j * m + i] += grad[i * n + j];
                        }
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                if self.needs_grad(a) {
                    let y = self.nodes[id].values.clone();
                    for i in 0..m {
                        let dot: f64 = (0..n).map(|j| grad[i * n + j] * y[i * n + j]).sum();
                        for j in 0..n {
                            self.nodes[a].grad[i * n + j] +=
                                y[i * n + j] * (grad[i * n + j] - dot);
                        }
                    }
                }
            }
            Op::Gelu(a) => {
                if self.needs_grad(a) {
                    let av = self.nodes[a].values.clone();
                    for ((g, &d), &x) in self.nodes[a].grad.iter_mut().zip(&grad).zip(&av) {
                        *g += d * gelu_deriv(x);
                    }
                }
            }
            Op::Abs(a) => {
                if self.needs_grad(a) {
                    let av = self.nodes[a].values.clone();
                    for ((g, &d), &x) in self.nodes[a].grad.iter_mut().zip(&grad).zip(&av) {
                        // subgradient 0 at x = 0
                        *g += d * if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                    }
                }
            }
            Op::Exp(a) => {
                if self.needs_grad(a) {
                    let y = self.nodes[id].values.clone();
                    for ((g, &d), &v) in self.nodes[a].grad.iter_mut().zip(&grad).zip(&y) {
                        *g += d * v;
                    }
                }
            }
            Op::LayerNormRows { x, gain, bias, eps } => {
                let xv = self.nodes[x].values.clone();
                let gv = self.nodes[gain].values.clone();
                for i in 0..m {
                    let row = &xv[i * n..(i + 1) * n];
                    let mean = row.iter().sum::<f64>() / n as f64;
                    let var =
                        row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                    let istd = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|&v| (v - mean) * istd).collect();
                    let dy = &grad[i * n..(i + 1) * n];
                    if self.needs_grad(gain) {
                        for j in 0..n {
                            self.nodes[gain].grad[j] += dy[j] * xhat[j];
                        }
                    }
                    if self.needs_grad(bias) {
                        for j in 0..n {
                            self.nodes[bias].grad[j] += dy[j];
                        }
                    }
                    if self.needs_grad(x) {
                        let dxhat: Vec<f64> = (0..n).map(|j| dy[j] * gv[j]).collect();
                        let mean_dxhat = dxhat.iter().sum::<f64>() / n as f64;
                        let mean_dxhat_xhat =
                            (0..n).map(|j| dxhat[j] * xhat[j]).sum::<f64>() / n as f64;
                        for j in 0..n {
                            self.nodes[x].grad[i * n + j] +=
                                istd * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if self.needs_grad(x) {
                    for ((g, &d), &k) in self.nodes[x].grad.iter_mut().zip(&grad).zip(&mask) {
                        *g += d * k;
                    }
                }
            }
            Op::DftMagnitudeRows(x) => {
                if self.needs_grad(x) {
                    let (_, p) = self.shape(x);
                    let k_bins = p / 2 + 1;
                    let hann = hann_window(p);
                    let xv = self.nodes[x].values.clone();
                    let mag = self.nodes[id].values.clone();
                    for i in 0..m {
                        let row = &xv[i * p..(i + 1) * p];
                        for k in 0..k_bins {
                            let d = grad[i * k_bins + k];
                            if d == 0.0 {
                                continue;
                            }
                            let mg = mag[i * k_bins + k];
                            if mg == 0.0 {
                                continue; // gradient defined as 0
                            }
                            let (mut re, mut im) = (0.0, 0.0);
                            for (nn, (&v, &w)) in row.iter().zip(&hann).enumerate() {
                                let theta =
                                    2.0 * std::f64::consts::PI * (k * nn) as f64 / p as f64;
                                re += v * w * theta.cos();
                                im -= v * w * theta.sin();
                            }
                            for (nn, &w) in hann.iter().enumerate() {
                                let theta =
                                    2.0 * std::f64::consts::PI * (k * nn) as f64 / p as f64;
                                let dm = (re * theta.cos() - im * theta.sin()) / mg;
                                self.nodes[x].grad[i * p + nn] += d * w * dm;
                            }
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                if self.needs_grad(a) {
                    let d = grad[0];
                    for g in self.nodes[a].grad.iter_mut() {
                        *g += d;
                    }
                }
            }
            Op::MeanAll(a) => {
                if self.needs_grad(a) {
                    let count = self.nodes[a].values.len() as f64;
                    let d = grad[0] / count;
                    for g in self.nodes[a].grad.iter_mut() {
                        *g += d;
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                if self.needs_grad(x) {
                    for (out_i, &src) in idx.iter().enumerate() {
                        for j in 0..n {
                            self.nodes[x].grad[src * n + j] += grad[out_i * n + j];
                        }
                    }
                }
            }
            Op::SliceCols { x, start, len } => {
                if self.needs_grad(x) {
                    let xn = self.shape(x).1;
                    for i in 0..m {
                        for j in 0..len {
                            self.nodes[x].grad[i * xn + start + j] += grad[i * len + j];
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in &parts {
                    let pn = self.shape(p).1;
                    if self.needs_grad(p) {
                        for i in 0..m {
                            for j in 0..pn {
                                self.nodes[p].grad[i * pn + j] += grad[i * n + off + j];
                            }
                        }
                    }
                    off += pn;
                }
            }
            Op::AssembleRows {
                visible,
                fill,
                keep,
            } => {
                let mut next = 0;
                for (i, &k) in keep.iter().enumerate() {
                    if k {
                        if self.needs_grad(visible) {
                            for j in 0..n {
                                self.nodes[visible].grad[next * n + j] += grad[i * n + j];
                            }
                        }
                        next += 1;
                    } else if self.needs_grad(fill) {
                        for j in 0..n {
                            self.nodes[fill].grad[j] += grad[i * n + j];
                        }
                    }
                }
            }
        }
    }

    /// Recompute every node's value in tape order from the leaves.
    /// Returns true if the replay reproduced the recorded values
    /// bit-exactly (dropout masks are part of the record, so this is the
    /// determinism invariant of the tape).
    pub fn replay_forward(&mut self) -> bool {
        let mut identical = true;
        for id in 0..self.nodes.len() {
            let op = self.nodes[id].op.clone();
            let recomputed: Option<Vec<f64>> = match op {
                Op::Leaf => None,
                Op::Matmul(a, b) => {
                    let (m, k) = self.shape(a);
                    let n = self.shape(b).1;
                    let mut out = vec![0.0; m * n];
                    for i in 0..m {
                        for kk in 0..k {
                            let aik = self.nodes[a].values[i * k + kk];
                            if aik == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                out[i * n + j] += aik * self.nodes[b].values[kk * n + j];
                            }
                        }
                    }
                    Some(out)
                }
                Op::Add(a, b) => Some(
                    self.nodes[a]
                        .values
                        .iter()
                        .zip(&self.nodes[b].values)
                        .map(|(&x, &y)| x + y)
                        .collect(),
                ),
                Op::Sub(a, b) => Some(
                    self.nodes[a]
                        .values
                        .iter()
                        .zip(&self.nodes[b].values)
                        .map(|(&x, &y)| x - y)
                        .collect(),
                ),
                Op::Mul(a, b) => Some(
                    self.nodes[a]
                        .values
                        .iter()
                        .zip(&self.nodes[b].values)
                        .map(|(&x, &y)| x * y)
                        .collect(),
                ),
                Op::Dropout { x, ref mask } => Some(
                    self.nodes[x]
                        .values
                        .iter()
                        .zip(mask)
                        .map(|(&v, &k)| v * k)
                        .collect(),
                ),
                // For the remaining unary/structural ops the forward paths
                // are pure functions of the input values; reuse them by
                // rebuilding through a scratch graph.
                _ => Some(self.recompute_generic(id)),
            };
            if let Some(vals) = recomputed {
                if vals != self.nodes[id].values {
                    identical = false;
                }
                self.nodes[id].values = vals;
            }
        }
        identical
    }

    fn recompute_generic(&self, id: TensorId) -> Vec<f64> {
        let node = &self.nodes[id];
        match &node.op {
            Op::AddRow(a, row) => {
                let (m, n) = self.shape(*a);
                let mut out = self.nodes[*a].values.clone();
                for i in 0..m {
                    for j in 0..n {
                        out[i * n + j] += self.nodes[*row].values[j];
                    }
                }
                out
            }
            Op::Scale(a, c) => self.nodes[*a].values.iter().map(|&x| x * c).collect(),
            Op::AddConst(a, c) => self.nodes[*a].values.iter().map(|&x| x + c).collect(),
            Op::PowConst(a, p) => self.nodes[*a].values.iter().map(|&x| x.powf(*p)).collect(),
            Op::Transpose(a) => {
                let (m, n) = self.shape(*a);
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        out[j * m + i] = self.nodes[*a].values[i * n + j];
                    }
                }
                out
            }
            Op::Reshape(a) => self.nodes[*a].values.clone(),
            Op::SoftmaxRows(a) => {
                let (m, n) = self.shape(*a);
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    let row = &self.nodes[*a].values[i * n..(i + 1) * n];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for j in 0..n {
                        let e = (row[j] - max).exp();
                        out[i * n + j] = e;
                        sum += e;
                    }
                    for j in 0..n {
                        out[i * n + j] /= sum;
                    }
                }
                out
            }
            Op::Gelu(a) => self.nodes[*a].values.iter().map(|&x| gelu_scalar(x)).collect(),
            Op::Abs(a) => self.nodes[*a].values.iter().map(|&x| x.abs()).collect(),
            Op::Exp(a) => self.nodes[*a].values.iter().map(|&x| x.exp()).collect(),
            Op::LayerNormRows { x, gain, bias, eps } => {
                let (m, n) = self.shape(*x);
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    let row = &self.nodes[*x].values[i * n..(i + 1) * n];
                    let mean = row.iter().sum::<f64>() / n as f64;
                    let var =
                        row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                    let istd = 1.0 / (var + eps).sqrt();
                    for j in 0..n {
                        out[i * n + j] = self.nodes[*gain].values[j] * (row[j] - mean) * istd
                            + self.nodes[*bias].values[j];
                    }
                }
                out
            }
            Op::DftMagnitudeRows(x) => {
                let (m, p) = self.shape(*x);
                let k_bins = p / 2 + 1;
                let hann = hann_window(p);
                let mut out = vec![0.0; m * k_bins];
                for i in 0..m {
                    let row = &self.nodes[*x].values[i * p..(i + 1) * p];
                    for k in 0..k_bins {
                        let (mut re, mut im) = (0.0, 0.0);
                        for (nn, (&v, &w)) in row.iter().zip(&hann).enumerate() {
                            let theta = 2.0 * std::f64::consts::PI * (k * nn) as f64 / p as f64;
                            re += v * w * theta.cos();
                            im -= v * w * theta.sin();
                        }
                        out[i * k_bins + k] = re.hypot(im);
                    }
                }
                out
            }
            Op::SumAll(a) => vec![self.nodes[*a].values.iter().sum()],
            Op::MeanAll(a) => {
                let n = self.nodes[*a].values.len() as f64;
                vec![self.nodes[*a].values.iter().sum::<f64>() / n]
            }
            Op::GatherRows { x, idx } => {
                let n = self.shape(*x).1;
                let mut out = Vec::with_capacity(idx.len() * n);
                for &i in idx {
                    out.extend_from_slice(&self.nodes[*x].values[i * n..(i + 1) * n]);
                }
                out
            }
            Op::SliceCols { x, start, len } => {
                let (m, n) = self.shape(*x);
                let mut out = Vec::with_capacity(m * len);
                for i in 0..m {
                    out.extend_from_slice(
                        &self.nodes[*x].values[i * n + start..i * n + start + len],
                    );
                }
                out
            }
            Op::ConcatCols(parts) => {
                let m = self.shape(parts[0]).0;
                let mut out = Vec::new();
                for i in 0..m {
                    for &p in parts {
                        let pn = self.shape(p).1;
                        out.extend_from_slice(&self.nodes[p].values[i * pn..(i + 1) * pn]);
                    }
                }
                out
            }
            Op::AssembleRows {
                visible,
                fill,
                keep,
            } => {
                let n = self.shape(*visible).1;
                let mut out = Vec::with_capacity(keep.len() * n);
                let mut next = 0;
                for &k in keep {
                    if k {
                        out.extend_from_slice(
                            &self.nodes[*visible].values[next * n..(next + 1) * n],
                        );
                        next += 1;
                    } else {
                        out.extend_from_slice(&self.nodes[*fill].values);
                    }
                }
                out
            }
            _ => unreachable!("handled in replay_forward"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn gelu_fixed_points() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        // asymptote: gelu(x) -> x for large x
        assert!(close(gelu_scalar(20.0), 20.0, 1e-12));
        // independent scalar oracle: x * Phi(x) at x = 1
        let phi_1 = 0.5 * (1.0 + libm::erf(1.0 / std::f64::consts::SQRT_2));
        assert!(close(gelu_scalar(1.0), 1.0 * phi_1, 1e-15));
        assert!(close(gelu_scalar(1.0), 0.841344746068543, 1e-12));
    }

    #[test]
    fn softmax_equal_logits_and_stability() {
        let mut g = Graph::new();
        let x = g.constant(vec![3.7, 3.7, 3.7], 1, 3).unwrap();
        let s = g.softmax_rows(x).unwrap();
        for &v in g.values(s) {
            assert!(close(v, 1.0 / 3.0, 1e-12));
        }
        let x = g.constant(vec![1000.0, 0.0], 1, 2).unwrap();
        let s = g.softmax_rows(x).unwrap();
        assert!(g.values(s).iter().all(|v| v.is_finite()));
        assert!(close(g.values(s)[0], 1.0, 1e-12));
    }

    #[test]
    fn softmax_matches_direct_computation() {
        let mut g = Graph::new();
        let x = g.constant(vec![1.0, 2.0, 3.0], 1, 3).unwrap();
        let s = g.softmax_rows(x).unwrap();
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        for (j, &v) in g.values(s).iter().enumerate() {
            assert!(close(v, ((j + 1) as f64).exp() / z, 1e-12));
        }
    }

    #[test]
    fn softmax_rejects_nan() {
        let mut g = Graph::new();
        let x = g.constant(vec![f64::NAN, 0.0], 1, 2).unwrap();
        assert!(matches!(g.softmax_rows(x), Err(DiffError::NanInput)));
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(vec![5.0; 4], 1, 4).unwrap();
        let gain = g.constant(vec![1.0; 4], 1, 4).unwrap();
        let bias = g.constant(vec![0.0; 4], 1, 4).unwrap();
        let y = g.layer_norm_rows(x, gain, bias, 1e-5).unwrap();
        for &v in g.values(y) {
            assert!(close(v, 0.0, 1e-12));
        }
    }

    #[test]
    fn layer_norm_matches_scalar_oracle() {
        let mut g = Graph::new();
        let xs = [1.0, 2.0, 3.0, 4.0];
        let x = g.constant(xs.to_vec(), 1, 4).unwrap();
        let gain = g.constant(vec![1.0; 4], 1, 4).unwrap();
        let bias = g.constant(vec![0.0; 4], 1, 4).unwrap();
        let eps = 1e-5;
        let y = g.layer_norm_rows(x, gain, bias, eps).unwrap();
        let mean = 2.5;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        for (j, &v) in g.values(y).iter().enumerate() {
            let want = (xs[j] - mean) / (var + eps).sqrt();
            assert!(close(v, want, 1e-9));
        }
        // already-standardized two-point row maps to itself up to eps
        let x2 = g.constant(vec![1.0, -1.0], 1, 2).unwrap();
        let gain2 = g.constant(vec![1.0; 2], 1, 2).unwrap();
        let bias2 = g.constant(vec![0.0; 2], 1, 2).unwrap();
        let y2 = g.layer_norm_rows(x2, gain2, bias2, 1e-5).unwrap();
        assert!(close(g.values(y2)[0], 1.0, 1e-4));
        assert!(close(g.values(y2)[1], -1.0, 1e-4));
    }

    /// Naive two-loop DFT on a Hann-windowed signal, directly from the
    /// definition. Independent of the graph implementation.
    fn naive_dft_magnitude(x: &[f64]) -> Vec<f64> {
        let p = x.len();
        let hann = hann_window(p);
        let w: Vec<f64> = x.iter().zip(&hann).map(|(&v, &h)| v * h).collect();
        (0..p / 2 + 1)
            .map(|k| {
                let mut re = 0.0;
                let mut im = 0.0;
                for (n, &v) in w.iter().enumerate() {
                    let theta = 2.0 * std::f64::consts::PI * (k * n) as f64 / p as f64;
                    re += v * theta.cos();
                    im -= v * theta.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    #[test]
    fn dft_magnitude_zero_and_negation() {
        let mut g = Graph::new();
        let z = g.constant(vec![0.0; 30], 1, 30).unwrap();
        let m = g.dft_magnitude_rows(z);
        assert!(g.values(m).iter().all(|&v| v == 0.0));

        let vals: Vec<f64> = (0..30).map(|i| (i as f64 * 0.7).sin() + 0.3).collect();
        let neg: Vec<f64> = vals.iter().map(|v| -v).collect();
        let a = g.constant(vals, 1, 30).unwrap();
        let b = g.constant(neg, 1, 30).unwrap();
        let ma = g.dft_magnitude_rows(a);
        let mb = g.dft_magnitude_rows(b);
        for (&x, &y) in g.values(ma).iter().zip(g.values(mb)) {
            assert!(close(x, y, 1e-9));
        }
    }

    #[test]
    fn dft_magnitude_matches_naive_oracle() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &p in &[30usize, 60, 120, 480] {
            let x: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let want = naive_dft_magnitude(&x);
            let mut g = Graph::new();
            let t = g.constant(x, 1, p).unwrap();
            let m = g.dft_magnitude_rows(t);
            for (&got, &w) in g.values(m).iter().zip(&want) {
                assert!(close(got, w, 1e-9), "p={p}: {got} vs {w}");
            }
        }
    }

    #[test]
    fn dft_sinusoid_concentrates_at_bin() {
        // pure sinusoid at bin 4 of a 60-sample patch
        let p = 60;
        let k0 = 4;
        let x: Vec<f64> = (0..p)
            .map(|n| (2.0 * std::f64::consts::PI * (k0 * n) as f64 / p as f64).sin())
            .collect();
        let want = naive_dft_magnitude(&x);
        let mut g = Graph::new();
        let t = g.constant(x, 1, p).unwrap();
        let m = g.dft_magnitude_rows(t);
        let mags = g.values(m);
        for (k, (&got, &w)) in mags.iter().zip(&want).enumerate() {
            assert!(close(got, w, 1e-9), "bin {k}");
        }
        // energy sits at the driven bin (Hann spreads into k0 +/- 1)
        let peak = mags
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(peak, k0);
        assert!(mags[k0] > 10.0 * mags[k0 + 3]);
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut g = Graph::new();
        let x = g.leaf(vec![1.0, -2.0, 3.0, 0.5], 2, 2).unwrap();
        let s = g.sum_all(x);
        g.backward(s).unwrap();
        assert!(g.grad(x).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn backward_half_square_gives_x() {
        let mut g = Graph::new();
        let vals = vec![1.0, -2.0, 3.0, 0.5];
        let x = g.leaf(vals.clone(), 1, 4).unwrap();
        let sq = g.mul(x, x).unwrap();
        let s = g.sum_all(sq);
        let half = g.scale(s, 0.5);
        g.backward(half).unwrap();
        for (&got, &want) in g.grad(x).iter().zip(&vals) {
            assert!(close(got, want, 1e-12));
        }
    }

    #[test]
    fn backward_accumulates_without_reset() {
        let mut g = Graph::new();
        let x = g.leaf(vec![1.0, 2.0], 1, 2).unwrap();
        let s = g.sum_all(x);
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(x).iter().all(|&v| v == 2.0));
        g.zero_grad(x);
        g.backward(s).unwrap();
        assert!(g.grad(x).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let x = g.leaf(vec![1.0, 2.0], 1, 2).unwrap();
        assert!(matches!(
            g.backward(x),
            Err(DiffError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn multiple_uses_of_leaf_sum_contributions() {
        // loss = sum(x) + sum(x * x); grad = 1 + 2x
        let mut g = Graph::new();
        let vals = vec![0.5, -1.5, 2.0];
        let x = g.leaf(vals.clone(), 1, 3).unwrap();
        let s1 = g.sum_all(x);
        let sq = g.mul(x, x).unwrap();
        let s2 = g.sum_all(sq);
        let l = g.add(s1, s2).unwrap();
        g.backward(l).unwrap();
        for (&got, &v) in g.grad(x).iter().zip(&vals) {
            assert!(close(got, 1.0 + 2.0 * v, 1e-12));
        }
    }

    /// Central finite differences vs analytic gradients for each primitive,
    /// at randomly drawn points.
    #[test]
    fn finite_difference_check_per_primitive() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let h = 1e-5;
        let n_points = 100;

        // builders: take leaf values, return scalar loss value; and a
        // matching analytic gradient via the graph
        type Builder = fn(&mut Graph, TensorId) -> TensorId;
        let builders: Vec<(&str, Builder)> = vec![
            ("gelu", |g, x| {
                let y = g.gelu(x);
                g.sum_all(y)
            }),
            ("softmax", |g, x| {
                let y = g.softmax_rows(x).unwrap();
                let sq = g.mul(y, y).unwrap();
                g.sum_all(sq)
            }),
            ("layer_norm", |g, x| {
                let n = g.shape(x).1;
                let gain = g.constant(vec![1.3; n], 1, n).unwrap();
                let bias = g.constant(vec![0.2; n], 1, n).unwrap();
                let y = g.layer_norm_rows(x, gain, bias, 1e-5).unwrap();
                let sq = g.mul(y, y).unwrap();
                g.sum_all(sq)
            }),
            ("dft_magnitude", |g, x| {
                let m = g.dft_magnitude_rows(x);
                g.sum_all(m)
            }),
            ("abs_exp", |g, x| {
                let a = g.abs(x);
                let na = g.scale(a, -1.0);
                let e = g.exp(na);
                g.sum_all(e)
            }),
            ("matmul_chain", |g, x| {
                let xt = g.transpose(x);
                let p = g.matmul(x, xt).unwrap();
                let sm = g.softmax_rows(p).unwrap();
                let o = g.matmul(sm, x).unwrap();
                let sq = g.mul(o, o).unwrap();
                g.mean_all(sq)
            }),
        ];

        for (name, build) in &builders {
            for _ in 0..n_points / builders.len() + 1 {
                let n = 6;
                let vals: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let mut g = Graph::new();
                let x = g.leaf(vals.clone(), 2, n).unwrap();
                let loss = build(&mut g, x);
                g.backward(loss).unwrap();
                let analytic = g.grad(x).to_vec();

                for i in 0..vals.len() {
                    let eval = |v: f64| {
                        let mut vs = vals.clone();
                        vs[i] = v;
                        let mut g2 = Graph::new();
                        let x2 = g2.leaf(vs, 2, n).unwrap();
                        let l2 = build(&mut g2, x2);
                        g2.scalar_value(l2)
                    };
                    let fd = (eval(vals[i] + h) - eval(vals[i] - h)) / (2.0 * h);
                    // floor keeps truncation noise on near-zero gradients
                    // from dominating the relative error
                    let denom = fd.abs().max(analytic[i].abs()).max(1e-4);
                    let rel = (fd - analytic[i]).abs() / denom;
                    assert!(
                        rel < 1e-4,
                        "{name}: element {i}: analytic {} vs fd {} (rel {rel})",
                        analytic[i],
                        fd
                    );
                }
            }
        }
    }

    #[test]
    fn replay_forward_is_bit_identical() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut g = Graph::new();
        let x = g.leaf(vals, 4, 6).unwrap();
        let gain = g.constant(vec![1.0; 6], 1, 6).unwrap();
        let bias = g.constant(vec![0.0; 6], 1, 6).unwrap();
        let ln = g.layer_norm_rows(x, gain, bias, 1e-5).unwrap();
        let d = g.dropout(ln, 0.3, 77);
        let act = g.gelu(d);
        let xt = g.transpose(act);
        let p = g.matmul(act, xt).unwrap();
        let sm = g.softmax_rows(p).unwrap();
        let _ = g.mean_all(sm);
        assert!(g.replay_forward());
    }

    #[test]
    fn dropout_same_seed_same_mask() {
        let mut g = Graph::new();
        let x = g.constant(vec![1.0; 100], 10, 10).unwrap();
        let a = g.dropout(x, 0.5, 9);
        let b = g.dropout(x, 0.5, 9);
        assert_eq!(g.values(a), g.values(b));
        let c = g.dropout(x, 0.5, 10);
        assert_ne!(g.values(a), g.values(c));
    }

    #[test]
    fn assemble_rows_routes_and_backprops() {
        let mut g = Graph::new();
        let vis = g.leaf(vec![1.0, 2.0, 3.0, 4.0], 2, 2).unwrap();
        let fill = g.leaf(vec![9.0, 9.0], 1, 2).unwrap();
        let keep = [true, false, true, false];
        let out = g.assemble_rows(vis, fill, &keep).unwrap();
        assert_eq!(g.values(out), &[1.0, 2.0, 9.0, 9.0, 3.0, 4.0, 9.0, 9.0]);
        let s = g.sum_all(out);
        g.backward(s).unwrap();
        assert!(g.grad(vis).iter().all(|&v| v == 1.0));
        assert!(g.grad(fill).iter().all(|&v| v == 2.0));
    }
}
