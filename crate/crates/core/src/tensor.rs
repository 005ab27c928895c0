//! Dense f64 tensors and a reverse-mode tape.
//!
//! All model tensors are at most 2-D (`rows x cols`, row-major) except conv
//! kernels, which are `(kernel, in_channels, out_channels)`. Every forward op
//! checks its output for non-finite values.
//!
//! A [`Tape`] records operations in execution order; [`Tape::backward`]
//! walks it once in reverse. A tape built with [`Tape::inference`] records
//! values only and cannot be differentiated.

use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("token id {id} out of vocabulary of size {vocab}")]
    IndexOutOfVocab { id: usize, vocab: usize },
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("backward on an inference tape")]
    NotRecording,
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "new",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn eye(n: usize) -> Tensor {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
        }
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

    /// Rows of a 2-D tensor (1 for vectors and scalars).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    fn check_finite(self, op: &'static str) -> Result<Tensor> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(TensorError::NonFinite { op })
        }
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape.clone(),
        right: b.shape.clone(),
    }
}

fn require_2d(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape[..] {
        [r, c] => Ok((r, c)),
        _ => Err(TensorError::ShapeMismatch {
            op,
            left: t.shape.clone(),
            right: vec![0, 0],
        }),
    }
}

// ---------------------------------------------------------------------------
// Kernels. These operate on plain tensors and are shared by the tape.

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, k) = require_2d("matmul", a)?;
    let (k2, m) = require_2d("matmul", b)?;
    if k != k2 {
        return Err(mismatch("matmul", a, b));
    }
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * m..(p + 1) * m];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::matrix(n, m, out)
}

/// `a * b^T` without materialising the transpose.
fn matmul_bt(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k) = (a.rows(), a.cols());
    let m = b.rows();
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let arow = &a.data[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b.data[j * k..(j + 1) * k];
            out[i * m + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Tensor {
        shape: vec![n, m],
        data: out,
    }
}

/// `a^T * b`.
fn matmul_at(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, n) = (a.rows(), a.cols());
    let m = b.cols();
    let mut out = vec![0.0; n * m];
    for p in 0..k {
        let arow = &a.data[p * n..(p + 1) * n];
        let brow = &b.data[p * m..(p + 1) * m];
        for (i, av) in arow.iter().enumerate() {
            if *av == 0.0 {
                continue;
            }
            for (o, bv) in out[i * m..(i + 1) * m].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor {
        shape: vec![n, m],
        data: out,
    }
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (r, c) = require_2d("transpose", a)?;
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a.data[i * c + j];
        }
    }
    Tensor::matrix(c, r, out)
}

fn zip_with(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape != b.shape {
        return Err(mismatch(op, a, b));
    }
    Ok(Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect(),
    })
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_with("add", a, b, |x, y| x + y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_with("mul", a, b, |x, y| x * y)
}

pub fn scale(a: &Tensor, s: f64) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().map(|v| v * s).collect(),
    }
}

/// Adds a length-`cols` bias vector to every row.
pub fn add_bias(x: &Tensor, b: &Tensor) -> Result<Tensor> {
    let c = x.cols();
    if b.len() != c || b.shape.len() != 1 {
        return Err(mismatch("add_bias", x, b));
    }
    let mut out = x.data.clone();
    for row in out.chunks_mut(c) {
        for (o, bv) in row.iter_mut().zip(&b.data) {
            *o += bv;
        }
    }
    Ok(Tensor {
        shape: x.shape.clone(),
        data: out,
    })
}

/// Valid (unpadded) 1-D convolution along the point axis.
/// `x: (len, c_in)`, `w: (kernel, c_in, c_out)`, `bias: (c_out)` gives
/// `(len - kernel + 1, c_out)`.
pub fn conv1d(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (len, c_in) = require_2d("conv1d", x)?;
    let (k, wc_in, c_out) = match w.shape[..] {
        [k, ci, co] => (k, ci, co),
        _ => return Err(mismatch("conv1d", x, w)),
    };
    if wc_in != c_in || k == 0 || k > len {
        return Err(mismatch("conv1d", x, w));
    }
    if bias.shape != [c_out] {
        return Err(mismatch("conv1d", w, bias));
    }
    let out_len = len - k + 1;
    let mut out = Vec::with_capacity(out_len * c_out);
    for _ in 0..out_len {
        out.extend_from_slice(&bias.data);
    }
    for t in 0..out_len {
        let orow = &mut out[t * c_out..(t + 1) * c_out];
        for kk in 0..k {
            for c in 0..c_in {
                let xv = x.data[(t + kk) * c_in + c];
                let wrow = &w.data[(kk * c_in + c) * c_out..(kk * c_in + c + 1) * c_out];
                for (o, wv) in orow.iter_mut().zip(wrow) {
                    *o += xv * wv;
                }
            }
        }
    }
    Tensor::matrix(out_len, c_out, out)
}

/// Column-wise maximum over the rows of a point set, `(n, c) -> (1, c)`, with
/// the row index of the first maximum per column.
pub fn max_over_set(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (n, c) = require_2d("max_over_set", x)?;
    if n == 0 {
        return Err(mismatch("max_over_set", x, x));
    }
    let mut best = x.data[..c].to_vec();
    let mut arg = vec![0usize; c];
    for r in 1..n {
        for j in 0..c {
            let v = x.data[r * c + j];
            if v > best[j] {
                best[j] = v;
                arg[j] = r;
            }
        }
    }
    Ok((Tensor::matrix(1, c, best)?, arg))
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

/// GELU, tanh approximation.
pub fn gelu(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| gelu_scalar(v)).collect(),
    }
}

fn softmax_rows(x: &Tensor, causal: bool) -> Tensor {
    let (r, c) = (x.rows(), x.cols());
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let width = if causal { (i + 1).min(c) } else { c };
        let row = &x.data[i * c..i * c + width];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (j, v) in row.iter().enumerate() {
            let e = (v - m).exp();
            out[i * c + j] = e;
            z += e;
        }
        for o in &mut out[i * c..i * c + width] {
            *o /= z;
        }
    }
    Tensor {
        shape: x.shape.clone(),
        data: out,
    }
}

/// Softmax of a 2-D tensor along `axis` (0: columns sum to one, 1: rows).
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    require_2d("softmax", x)?;
    match axis {
        1 => Ok(softmax_rows(x, false)),
        0 => transpose(&softmax_rows(&transpose(x)?, false)),
        _ => Err(TensorError::ShapeMismatch {
            op: "softmax",
            left: x.shape.clone(),
            right: vec![axis],
        }),
    }
}

/// Mean over non-PAD rows of `-log softmax(logits)[target]`. Rows whose
/// target is 0 are excluded from both sum and count.
pub fn cross_entropy(logits: &Tensor, targets: &[u32]) -> Result<f64> {
    let (n, c) = require_2d("cross_entropy", logits)?;
    if targets.len() != n {
        return Err(TensorError::ShapeMismatch {
            op: "cross_entropy",
            left: logits.shape.clone(),
            right: vec![targets.len()],
        });
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, &t) in targets.iter().enumerate() {
        let t = t as usize;
        if t >= c {
            return Err(TensorError::IndexOutOfVocab { id: t, vocab: c });
        }
        if t == 0 {
            continue;
        }
        let row = &logits.data[i * c..(i + 1) * c];
        total += row_nll(row, t);
        count += 1;
    }
    if count == 0 {
        return Ok(0.0);
    }
    Ok(total / count as f64)
}

/// `log_sum_exp(row) - row[t]`, written so that a confident correct
/// prediction yields a tiny positive value instead of rounding to zero.
fn row_nll(row: &[f64], t: usize) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rest: f64 = row
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != t)
        .map(|(_, v)| (v - m).exp())
        .sum();
    let own = (row[t] - m).exp();
    if own == 1.0 {
        rest.ln_1p()
    } else {
        (m - row[t]) + (own + rest).ln()
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// In-place `p <- p - lr * g`.
pub fn sgd_step(param: &mut Tensor, grad: &Tensor, lr: f64) -> Result<()> {
    if param.shape != grad.shape {
        return Err(mismatch("sgd_step", param, grad));
    }
    for (p, g) in param.data.iter_mut().zip(&grad.data) {
        *p -= lr * g;
    }
    Ok(())
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm<'a>(grads: impl IntoIterator<Item = &'a mut Tensor>, max_norm: f64) -> f64 {
    let grads: Vec<&mut Tensor> = grads.into_iter().collect();
    let norm = grads.iter().map(|g| g.norm_sq()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads {
            g.data.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

// ---------------------------------------------------------------------------
// Tape

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Reshape(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    AddBias(Var, Var),
    Conv1d(Var, Var, Var),
    MaxOverSet(Var, Vec<usize>),
    Gelu(Var),
    Softmax(Var),
    Dropout(Var, Vec<f64>),
    Gather(Var, Vec<usize>),
    CrossEntropy(Var, Vec<u32>),
    Sum(Var),
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
}

pub struct Tape {
    nodes: Vec<Node>,
    recording: bool,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` if `v` did not affect
    /// the loss.
    pub fn take_or_zeros(&mut self, v: Var, like: &Tensor) -> Tensor {
        self.grads
            .get_mut(v.0)
            .and_then(Option::take)
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    /// A tape that records operations for [`Tape::backward`].
    pub fn new() -> Tape {
        Tape {
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A value-only tape.
    pub fn inference() -> Tape {
        Tape {
            nodes: Vec::new(),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`. Vars created after
    /// that point become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.push_arc(Arc::new(value), op)
    }

    fn push_arc(&mut self, value: Arc<Tensor>, op: Op) -> Var {
        let op = if self.recording { op } else { Op::Leaf };
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Records a shared tensor without copying it.
    pub fn leaf_shared(&mut self, t: Arc<Tensor>) -> Var {
        self.push_arc(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matmul(self.value(a), self.value(b))?.check_finite("matmul")?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = add(self.value(a), self.value(b))?.check_finite("add")?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = mul(self.value(a), self.value(b))?.check_finite("mul")?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = scale(self.value(a), s).check_finite("scale")?;
        Ok(self.push(out, Op::Scale(a, s)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = transpose(self.value(a))?;
        Ok(self.push(out, Op::Transpose(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let src = self.value(a);
        let out = Tensor::new(shape.to_vec(), src.data.clone()).map_err(|_| TensorError::ShapeMismatch {
            op: "reshape",
            left: src.shape.clone(),
            right: shape.to_vec(),
        })?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.shape.len() != 2 || t.cols() != c {
                return Err(mismatch("concat_rows", self.value(parts[0]), t));
            }
            data.extend_from_slice(&t.data);
            rows += t.rows();
        }
        let out = Tensor::matrix(rows, c, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.shape.len() != 2 || t.rows() != r {
                return Err(mismatch("concat_cols", self.value(parts[0]), t));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::matrix(r, total, data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = require_2d("slice_rows", t)?;
        if start + len > r {
            return Err(TensorError::ShapeMismatch {
                op: "slice_rows",
                left: t.shape.clone(),
                right: vec![start, len],
            });
        }
        let out = Tensor::matrix(len, c, t.data[start * c..(start + len) * c].to_vec())?;
        Ok(self.push(out, Op::SliceRows(a, start)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = require_2d("slice_cols", t)?;
        if start + len > c {
            return Err(TensorError::ShapeMismatch {
                op: "slice_cols",
                left: t.shape.clone(),
                right: vec![start, len],
            });
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&t.data[i * c + start..i * c + start + len]);
        }
        let out = Tensor::matrix(r, len, data)?;
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let out = add_bias(self.value(x), self.value(b))?.check_finite("add_bias")?;
        Ok(self.push(out, Op::AddBias(x, b)))
    }

    /// `x * w + b` for a 2-D `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let h = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_bias(h, b),
            None => Ok(h),
        }
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = conv1d(self.value(x), self.value(w), self.value(b))?.check_finite("conv1d")?;
        Ok(self.push(out, Op::Conv1d(x, w, b)))
    }

    pub fn max_over_set(&mut self, x: Var) -> Result<Var> {
        let (out, arg) = max_over_set(self.value(x))?;
        Ok(self.push(out, Op::MaxOverSet(x, arg)))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = gelu(self.value(x)).check_finite("gelu")?;
        Ok(self.push(out, Op::Gelu(x)))
    }

    /// Row softmax. With `causal`, entry `(i, j)` for `j > i` is masked to 0.
    pub fn softmax_rows(&mut self, x: Var, causal: bool) -> Result<Var> {
        require_2d("softmax", self.value(x))?;
        let out = softmax_rows(self.value(x), causal).check_finite("softmax")?;
        Ok(self.push(out, Op::Softmax(x)))
    }

    /// Inverted dropout. Identity (and no rng draws) unless `training`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let src = self.value(x);
        let mask: Vec<f64> = (0..src.len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out = Tensor {
            shape: src.shape.clone(),
            data: src.data.iter().zip(&mask).map(|(v, m)| v * m).collect(),
        };
        Ok(self.push(out, Op::Dropout(x, mask)))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (v, d) = require_2d("gather", t)?;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(TensorError::IndexOutOfVocab { id, vocab: v });
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::matrix(ids.len(), d, data)?;
        Ok(self.push(out, Op::Gather(table, ids.to_vec())))
    }

    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32]) -> Result<Var> {
        let loss = cross_entropy(self.value(logits), targets)?;
        let out = Tensor::scalar(loss).check_finite("cross_entropy")?;
        Ok(self.push(out, Op::CrossEntropy(logits, targets.to_vec())))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).data.iter().sum()).check_finite("sum")?;
        Ok(self.push(out, Op::Sum(x)))
    }

    /// Reverse accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.recording {
            return Err(TensorError::NotRecording);
        }
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NotScalar(lv.shape.clone()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor {
            shape: lv.shape.clone(),
            data: vec![1.0],
        });
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(TensorError::NonFiniteGradient);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| -> &Tensor { &self.nodes[v.0].value };
        let mut acc = |v: Var, delta: Tensor| match &mut grads[v.0] {
            Some(existing) => {
                for (e, d) in existing.data.iter_mut().zip(&delta.data) {
                    *e += d;
                }
            }
            slot @ None => *slot = Some(delta),
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                acc(*a, matmul_bt(g, val(*b)));
                acc(*b, matmul_at(val(*a), g));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(
                    *a,
                    zip_with("mul", g, vb, |x, y| x * y).expect("shapes checked in forward"),
                );
                acc(
                    *b,
                    zip_with("mul", g, va, |x, y| x * y).expect("shapes checked in forward"),
                );
            }
            Op::Scale(a, s) => acc(*a, scale(g, *s)),
            Op::Transpose(a) => acc(*a, transpose(g).expect("2-D in forward")),
            Op::Reshape(a) => acc(
                *a,
                Tensor {
                    shape: val(*a).shape.clone(),
                    data: g.data.clone(),
                },
            ),
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let n = val(p).len();
                    let rows = n / c.max(1);
                    acc(
                        p,
                        Tensor {
                            shape: vec![rows, c],
                            data: g.data[offset..offset + n].to_vec(),
                        },
                    );
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let (r, total) = (g.rows(), g.cols());
                let mut start = 0;
                for &p in parts {
                    let w = val(p).cols();
                    let mut data = Vec::with_capacity(r * w);
                    for i in 0..r {
                        data.extend_from_slice(&g.data[i * total + start..i * total + start + w]);
                    }
                    acc(
                        p,
                        Tensor {
                            shape: vec![r, w],
                            data,
                        },
                    );
                    start += w;
                }
            }
            Op::SliceRows(a, start) => {
                let src = val(*a);
                let c = src.cols();
                let mut d = Tensor::zeros(&src.shape);
                d.data[start * c..start * c + g.len()].copy_from_slice(&g.data);
                acc(*a, d);
            }
            Op::SliceCols(a, start) => {
                let src = val(*a);
                let (r, c, w) = (src.rows(), src.cols(), g.cols());
                let mut d = Tensor::zeros(&src.shape);
                for i in 0..r {
                    d.data[i * c + start..i * c + start + w].copy_from_slice(&g.data[i * w..(i + 1) * w]);
                }
                acc(*a, d);
            }
            Op::AddBias(x, b) => {
                let c = g.cols();
                let mut db = vec![0.0; c];
                for row in g.data.chunks(c) {
                    for (s, v) in db.iter_mut().zip(row) {
                        *s += v;
                    }
                }
                acc(*x, g.clone());
                acc(
                    *b,
                    Tensor {
                        shape: vec![c],
                        data: db,
                    },
                );
            }
            Op::Conv1d(x, w, b) => {
                let (xv, wv) = (val(*x), val(*w));
                let (k, c_in, c_out) = (wv.shape[0], wv.shape[1], wv.shape[2]);
                let out_len = g.rows();
                let mut dx = Tensor::zeros(&xv.shape);
                let mut dw = Tensor::zeros(&wv.shape);
                let mut db = Tensor::zeros(&[c_out]);
                for t in 0..out_len {
                    let grow = &g.data[t * c_out..(t + 1) * c_out];
                    for (s, v) in db.data.iter_mut().zip(grow) {
                        *s += v;
                    }
                    for kk in 0..k {
                        for c in 0..c_in {
                            let woff = (kk * c_in + c) * c_out;
                            let xi = (t + kk) * c_in + c;
                            let xval = xv.data[xi];
                            let mut sx = 0.0;
                            let w_row = &wv.data[woff..woff + c_out];
                            let dw_row = &mut dw.data[woff..woff + c_out];
                            for ((g, w), d) in grow.iter().zip(w_row).zip(dw_row) {
                                sx += g * w;
                                *d += xval * g;
                            }
                            dx.data[xi] += sx;
                        }
                    }
                }
                acc(*x, dx);
                acc(*w, dw);
                acc(*b, db);
            }
            Op::MaxOverSet(x, arg) => {
                let src = val(*x);
                let c = src.cols();
                let mut d = Tensor::zeros(&src.shape);
                for (j, &r) in arg.iter().enumerate() {
                    d.data[r * c + j] += g.data[j];
                }
                acc(*x, d);
            }
            Op::Gelu(x) => {
                let src = val(*x);
                acc(
                    *x,
                    Tensor {
                        shape: src.shape.clone(),
                        data: src
                            .data
                            .iter()
                            .zip(&g.data)
                            .map(|(v, gv)| gelu_grad_scalar(*v) * gv)
                            .collect(),
                    },
                );
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let (r, c) = (y.rows(), y.cols());
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    let yr = &y.data[i * c..(i + 1) * c];
                    let gr = &g.data[i * c..(i + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        d[i * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(
                    *x,
                    Tensor {
                        shape: y.shape.clone(),
                        data: d,
                    },
                );
            }
            Op::Dropout(x, mask) => acc(
                *x,
                Tensor {
                    shape: g.shape.clone(),
                    data: g.data.iter().zip(mask).map(|(a, m)| a * m).collect(),
                },
            ),
            Op::Gather(table, ids) => {
                let src = val(*table);
                let d_model = src.cols();
                let mut d = Tensor::zeros(&src.shape);
                for (i, &id) in ids.iter().enumerate() {
                    for j in 0..d_model {
                        d.data[id * d_model + j] += g.data[i * d_model + j];
                    }
                }
                acc(*table, d);
            }
            Op::CrossEntropy(logits, targets) => {
                let lv = val(*logits);
                let c = lv.cols();
                let count = targets.iter().filter(|&&t| t != 0).count();
                let mut d = Tensor::zeros(&lv.shape);
                if count > 0 {
                    let s = g.item() / count as f64;
                    for (i, &t) in targets.iter().enumerate() {
                        if t == 0 {
                            continue;
                        }
                        let row = &lv.data[i * c..(i + 1) * c];
                        let lse = log_sum_exp(row);
                        for (dj, &r) in d.data[i * c..(i + 1) * c].iter_mut().zip(row) {
                            *dj = (r - lse).exp() * s;
                        }
                        d.data[i * c + t as usize] -= s;
                    }
                }
                acc(*logits, d);
            }
            Op::Sum(x) => {
                let src = val(*x);
                acc(
                    *x,
                    Tensor {
                        shape: src.shape.clone(),
                        data: vec![g.item(); src.len()],
                    },
                );
            }
        }
    }
}
