//! Dense `f64` arrays and a single-use recording tape for reverse-mode
//! differentiation.
//!
//! A [`Tape`] records every primitive applied to its [`Var`] handles. Calling
//! [`Tape::backward`] on a scalar result walks the record once in reverse and
//! returns the gradient of every node that requires one. The record is
//! consumed by that call; build a fresh tape for the next step.
//!
//! Only a handful of primitives exist, which is all the model zoo needs:
//! element-wise add/multiply, matrix multiply, stride-1 "same" 1-D
//! convolution, ReLU, stride-1 max pooling, mean over time, channel concat,
//! batched affine maps, a summation and the fused softmax cross-entropy.
//! Broadcasting is limited to the bias terms of `affine` and `conv1d`.

use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("buffer of length {len} does not fill shape {shape:?}")]
    BadBuffer { shape: Vec<usize>, len: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("computation record already consumed or variable belongs to another record")]
    StaleRecord,
    #[error("{op}: label {label} out of range for {classes} classes")]
    BadLabel {
        op: &'static str,
        label: usize,
        classes: usize,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Row-major dense array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.contains(&0) || expected != data.len() {
            return Err(TensorError::BadBuffer { shape, len: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }
}

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a specific [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    id: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Mul(usize, usize),
    MatMul(usize, usize),
    Conv1d {
        input: usize,
        weight: usize,
        bias: Option<usize>,
    },
    Relu(usize),
    MaxPool1d {
        input: usize,
        argmax: Vec<usize>,
    },
    MeanTime(usize),
    Concat(Vec<usize>),
    Affine {
        input: usize,
        weight: usize,
        bias: usize,
    },
    Sum(usize),
    SoftmaxCrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Ordered record of executed primitives.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward traversal, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros of `shape` if `v` did not contribute.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn acc(slot: &mut Option<Tensor>, shape: &[usize], f: impl FnOnce(&mut [f64])) {
    let t = slot.get_or_insert_with(|| Tensor::zeros(shape));
    f(&mut t.data);
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            consumed: false,
        }
    }

    /// Number of recorded nodes, leaves included.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if self.consumed || v.tape != self.id || v.id >= self.nodes.len() {
            return Err(TensorError::StaleRecord);
        }
        Ok(v.id)
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var {
            tape: self.id,
            id: self.nodes.len() - 1,
        }
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Records an input that does not need a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, false, Op::Leaf)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, true, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        let i = self.check_value(v)?;
        Ok(&self.nodes[i].value)
    }

    // Values stay readable after backward.
    fn check_value(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.id >= self.nodes.len() {
            return Err(TensorError::StaleRecord);
        }
        Ok(v.id)
    }

    fn shape(&self, i: usize) -> &[usize] {
        &self.nodes[i].value.shape
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("add", a, b));
        }
        let va = &self.nodes[a].value;
        let vb = &self.nodes[b].value;
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x + y).collect();
        let out = Tensor {
            shape: va.shape.clone(),
            data,
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, rg, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("mul", a, b));
        }
        let va = &self.nodes[a].value;
        let vb = &self.nodes[b].value;
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect();
        let out = Tensor {
            shape: va.shape.clone(),
            data,
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, rg, Op::Mul(a, b)))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.mismatch("matmul", a, b));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(&self.nodes[a].value.data, &self.nodes[b].value.data, &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            Tensor {
                shape: vec![m, n],
                data: out,
            },
            rg,
            Op::MatMul(a, b),
        ))
    }

    /// `x [n, in] * w [in, out] + b [out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (x, w, b) = (self.check(x)?, self.check(w)?, self.check(b)?);
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] {
            return Err(self.mismatch("affine", x, w));
        }
        if sb.len() != 1 || sb[0] != sw[1] {
            return Err(self.mismatch("affine", w, b));
        }
        let (n, i, o) = (sx[0], sx[1], sw[1]);
        let bias = &self.nodes[b].value.data;
        let mut out = Vec::with_capacity(n * o);
        for _ in 0..n {
            out.extend_from_slice(bias);
        }
        matmul_into(&self.nodes[x].value.data, &self.nodes[w].value.data, &mut out, n, i, o);
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(
            Tensor {
                shape: vec![n, o],
                data: out,
            },
            rg,
            Op::Affine {
                input: x,
                weight: w,
                bias: b,
            },
        ))
    }

    /// Stride-1 convolution with zero "same" padding.
    ///
    /// `x [n, c_in, t]`, `w [c_out, c_in, k]`, optional `b [c_out]`; the
    /// output is `[n, c_out, t]`. Left padding is `(k - 1) / 2`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let x = self.check(x)?;
        let w = self.check(w)?;
        let b = b.map(|b| self.check(b)).transpose()?;
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] {
            return Err(self.mismatch("conv1d", x, w));
        }
        if let Some(b) = b {
            let sb = self.shape(b);
            if sb.len() != 1 || sb[0] != sw[0] {
                return Err(self.mismatch("conv1d", w, b));
            }
        }
        let (n, ci, t) = (sx[0], sx[1], sx[2]);
        let (co, k) = (sw[0], sw[2]);
        let pad = (k - 1) / 2;
        let xd = &self.nodes[x].value.data;
        let wd = &self.nodes[w].value.data;
        let mut out = vec![0.0; n * co * t];
        for s in 0..n {
            for o in 0..co {
                let row = &mut out[(s * co + o) * t..(s * co + o + 1) * t];
                if let Some(b) = b {
                    row.fill(self.nodes[b].value.data[o]);
                }
                for c in 0..ci {
                    let xr = &xd[(s * ci + c) * t..(s * ci + c + 1) * t];
                    let wr = &wd[(o * ci + c) * k..(o * ci + c + 1) * k];
                    for (j, &wv) in wr.iter().enumerate() {
                        // out[τ] += w[j] * x[τ + j - pad] for valid τ
                        let (lo, hi) = valid_range(j, pad, t);
                        let shift = j as isize - pad as isize;
                        for (tau, ov) in row.iter_mut().enumerate().take(hi).skip(lo) {
                            *ov += wv * xr[(tau as isize + shift) as usize];
                        }
                    }
                }
            }
        }
        let mut ids = vec![x, w];
        ids.extend(b);
        let rg = self.rg(&ids);
        Ok(self.push(
            Tensor {
                shape: vec![n, co, t],
                data: out,
            },
            rg,
            Op::Conv1d {
                input: x,
                weight: w,
                bias: b,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let x = self.check(x)?;
        let v = &self.nodes[x].value;
        let out = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|&a| a.max(0.0)).collect(),
        };
        let rg = self.rg(&[x]);
        Ok(self.push(out, rg, Op::Relu(x)))
    }

    /// Stride-1 max pooling over time with a centred window of `kernel`
    /// points; windows are truncated at the borders so the length is kept.
    pub fn max_pool1d(&mut self, x: Var, kernel: usize) -> Result<Var> {
        let x = self.check(x)?;
        let s = self.shape(x).to_vec();
        if s.len() != 3 || kernel == 0 {
            return Err(TensorError::Invalid {
                op: "max_pool1d",
                msg: format!("expected [n, c, t] input and kernel > 0, got {s:?}, {kernel}"),
            });
        }
        let t = s[2];
        let pad = (kernel - 1) / 2;
        let v = &self.nodes[x].value.data;
        let mut out = vec![0.0; v.len()];
        let mut argmax = vec![0; v.len()];
        for (r, row) in v.chunks(t).enumerate() {
            for tau in 0..t {
                let lo = tau.saturating_sub(pad);
                let hi = (tau + kernel - pad).min(t);
                let mut best = lo;
                for j in lo + 1..hi {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                out[r * t + tau] = row[best];
                argmax[r * t + tau] = r * t + best;
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor { shape: s, data: out }, rg, Op::MaxPool1d { input: x, argmax }))
    }

    /// `[n, c, t] -> [n, c]`.
    pub fn mean_time(&mut self, x: Var) -> Result<Var> {
        let x = self.check(x)?;
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(TensorError::Invalid {
                op: "mean_time",
                msg: format!("expected [n, c, t] input, got {s:?}"),
            });
        }
        let t = s[2] as f64;
        let data = self.nodes[x]
            .value
            .data
            .chunks(s[2])
            .map(|r| r.iter().sum::<f64>() / t)
            .collect();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor {
                shape: vec![s[0], s[1]],
                data,
            },
            rg,
            Op::MeanTime(x),
        ))
    }

    /// Concatenates `[n, c_i, t]` inputs along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let ids = xs.iter().map(|&v| self.check(v)).collect::<Result<Vec<_>>>()?;
        let first = *ids.first().ok_or(TensorError::Invalid {
            op: "concat_channels",
            msg: "no inputs".into(),
        })?;
        let s0 = self.shape(first).to_vec();
        if s0.len() != 3 {
            return Err(self.mismatch("concat_channels", first, first));
        }
        let mut channels = 0;
        for &i in &ids {
            let s = self.shape(i);
            if s.len() != 3 || s[0] != s0[0] || s[2] != s0[2] {
                return Err(self.mismatch("concat_channels", first, i));
            }
            channels += s[1];
        }
        let (n, t) = (s0[0], s0[2]);
        let mut out = Vec::with_capacity(n * channels * t);
        for s in 0..n {
            for &i in &ids {
                let c = self.shape(i)[1];
                out.extend_from_slice(&self.nodes[i].value.data[s * c * t..(s + 1) * c * t]);
            }
        }
        let rg = self.rg(&ids);
        Ok(self.push(
            Tensor {
                shape: vec![n, channels, t],
                data: out,
            },
            rg,
            Op::Concat(ids),
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let x = self.check(x)?;
        let s = self.nodes[x].value.data.iter().sum();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(s), rg, Op::Sum(x)))
    }

    /// Mean cross-entropy of `logits [n, c]` against integer labels,
    /// computed through a max-shifted log-sum-exp.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let z = self.check(logits)?;
        let s = self.shape(z).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(TensorError::ShapeMismatch {
                op: "softmax_cross_entropy",
                lhs: s,
                rhs: vec![labels.len()],
            });
        }
        let c = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(TensorError::BadLabel {
                op: "softmax_cross_entropy",
                label: bad,
                classes: c,
            });
        }
        let zd = &self.nodes[z].value.data;
        let mut probs = vec![0.0; zd.len()];
        let mut total = 0.0;
        for (i, row) in zd.chunks(c).enumerate() {
            let (lse, p) = log_softmax_parts(row);
            total += lse - row[labels[i]];
            probs[i * c..(i + 1) * c].copy_from_slice(&p);
        }
        let loss = total / s[0] as f64;
        let rg = self.rg(&[z]);
        Ok(self.push(
            Tensor::scalar(loss),
            rg,
            Op::SoftmaxCrossEntropy {
                logits: z,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    fn mismatch(&self, op: &'static str, a: usize, b: usize) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    /// Reverse sweep from a scalar `loss`. Consumes the record.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let root = self.check(loss)?;
        if !self.nodes[root].value.is_scalar() {
            return Err(TensorError::NonScalarLoss(self.nodes[root].value.shape.clone()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if self.nodes[root].requires_grad {
            grads[root] = Some(Tensor::scalar(1.0));
        }
        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        // Intermediate results are not part of the public answer.
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { tape: self.id, grads })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let needs = |j: usize| nodes[j].requires_grad;
        let val = |j: usize| &nodes[j].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for &j in [a, b].into_iter() {
                    if needs(j) {
                        acc(&mut grads[j], &val(j).shape, |d| {
                            d.iter_mut().zip(&g.data).for_each(|(x, y)| *x += y)
                        });
                    }
                }
            }
            Op::Mul(a, b) => {
                for (&j, &other) in [(a, b), (b, a)] {
                    if needs(j) {
                        let o = &val(other).data;
                        acc(&mut grads[j], &val(j).shape, |d| {
                            for ((x, gy), ov) in d.iter_mut().zip(&g.data).zip(o) {
                                *x += gy * ov;
                            }
                        });
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (&val(*a).shape, &val(*b).shape);
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if needs(*a) {
                    let bd = &val(*b).data;
                    acc(&mut grads[*a], sa, |d| matmul_bt_into(&g.data, bd, d, m, n, k));
                }
                if needs(*b) {
                    let ad = &val(*a).data;
                    acc(&mut grads[*b], sb, |d| matmul_at_into(ad, &g.data, d, m, k, n));
                }
            }
            Op::Affine { input, weight, bias } => {
                let (sx, sw) = (&val(*input).shape, &val(*weight).shape);
                let (n, inp, out) = (sx[0], sx[1], sw[1]);
                if needs(*input) {
                    let wd = &val(*weight).data;
                    acc(&mut grads[*input], sx, |d| matmul_bt_into(&g.data, wd, d, n, out, inp));
                }
                if needs(*weight) {
                    let xd = &val(*input).data;
                    acc(&mut grads[*weight], sw, |d| matmul_at_into(xd, &g.data, d, n, inp, out));
                }
                if needs(*bias) {
                    acc(&mut grads[*bias], &[out], |d| {
                        for row in g.data.chunks(out) {
                            d.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                        }
                    });
                }
            }
            Op::Conv1d { input, weight, bias } => {
                let sx = val(*input).shape.clone();
                let sw = val(*weight).shape.clone();
                let (n, ci, t) = (sx[0], sx[1], sx[2]);
                let (co, k) = (sw[0], sw[2]);
                let pad = (k - 1) / 2;
                let xd = &val(*input).data;
                let wd = &val(*weight).data;
                if let Some(b) = bias {
                    if needs(*b) {
                        acc(&mut grads[*b], &[co], |d| {
                            for (r, row) in g.data.chunks(t).enumerate() {
                                d[r % co] += row.iter().sum::<f64>();
                            }
                        });
                    }
                }
                if needs(*weight) {
                    acc(&mut grads[*weight], &sw, |d| {
                        for s in 0..n {
                            for o in 0..co {
                                let gr = &g.data[(s * co + o) * t..(s * co + o + 1) * t];
                                for c in 0..ci {
                                    let xr = &xd[(s * ci + c) * t..(s * ci + c + 1) * t];
                                    let dw = &mut d[(o * ci + c) * k..(o * ci + c + 1) * k];
                                    for (j, dwj) in dw.iter_mut().enumerate() {
                                        let (lo, hi) = valid_range(j, pad, t);
                                        let shift = j as isize - pad as isize;
                                        let mut sacc = 0.0;
                                        for tau in lo..hi {
                                            sacc += gr[tau] * xr[(tau as isize + shift) as usize];
                                        }
                                        *dwj += sacc;
                                    }
                                }
                            }
                        }
                    });
                }
                if needs(*input) {
                    acc(&mut grads[*input], &sx, |d| {
                        for s in 0..n {
                            for o in 0..co {
                                let gr = &g.data[(s * co + o) * t..(s * co + o + 1) * t];
                                for c in 0..ci {
                                    let dx = &mut d[(s * ci + c) * t..(s * ci + c + 1) * t];
                                    let wr = &wd[(o * ci + c) * k..(o * ci + c + 1) * k];
                                    for (j, &wv) in wr.iter().enumerate() {
                                        let (lo, hi) = valid_range(j, pad, t);
                                        let shift = j as isize - pad as isize;
                                        for tau in lo..hi {
                                            dx[(tau as isize + shift) as usize] += wv * gr[tau];
                                        }
                                    }
                                }
                            }
                        }
                    });
                }
            }
            Op::Relu(x) => {
                if needs(*x) {
                    let xv = &val(*x).data;
                    acc(&mut grads[*x], &val(*x).shape, |d| {
                        for ((dv, gv), xv) in d.iter_mut().zip(&g.data).zip(xv) {
                            if *xv > 0.0 {
                                *dv += gv;
                            }
                        }
                    });
                }
            }
            Op::MaxPool1d { input, argmax } => {
                if needs(*input) {
                    acc(&mut grads[*input], &val(*input).shape, |d| {
                        for (gv, &src) in g.data.iter().zip(argmax) {
                            d[src] += gv;
                        }
                    });
                }
            }
            Op::MeanTime(x) => {
                if needs(*x) {
                    let t = val(*x).shape[2];
                    let inv = 1.0 / t as f64;
                    acc(&mut grads[*x], &val(*x).shape, |d| {
                        for (row, gv) in d.chunks_mut(t).zip(&g.data) {
                            row.iter_mut().for_each(|v| *v += gv * inv);
                        }
                    });
                }
            }
            Op::Concat(ids) => {
                let total = g.shape[1];
                let t = g.shape[2];
                let n = g.shape[0];
                let mut offset = 0;
                for &j in ids {
                    let c = val(j).shape[1];
                    if needs(j) {
                        acc(&mut grads[j], &val(j).shape, |d| {
                            for s in 0..n {
                                let src = &g.data[(s * total + offset) * t..(s * total + offset + c) * t];
                                d[s * c * t..(s + 1) * c * t]
                                    .iter_mut()
                                    .zip(src)
                                    .for_each(|(x, y)| *x += y);
                            }
                        });
                    }
                    offset += c;
                }
            }
            Op::Sum(x) => {
                if needs(*x) {
                    let gv = g.item();
                    acc(&mut grads[*x], &val(*x).shape, |d| d.iter_mut().for_each(|v| *v += gv));
                }
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                if needs(*logits) {
                    let c = val(*logits).shape[1];
                    let scale = g.item() / labels.len() as f64;
                    acc(&mut grads[*logits], &val(*logits).shape, |d| {
                        for (i, &y) in labels.iter().enumerate() {
                            for j in 0..c {
                                let onehot = if j == y { 1.0 } else { 0.0 };
                                d[i * c + j] += scale * (probs[i * c + j] - onehot);
                            }
                        }
                    });
                }
            }
        }
    }
}

/// Output indices `tau` for which `tau + j - pad` lies in `[0, t)`.
#[inline]
fn valid_range(j: usize, pad: usize, t: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(j);
    let hi = (t + pad).saturating_sub(j).min(t);
    (lo, hi.max(lo))
}

/// `out[m, n] += a[m, k] * b[k, n]`
fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            orow.iter_mut().zip(brow).for_each(|(o, bv)| *o += av * bv);
        }
    }
}

/// `out[m, k] += g[m, n] * b[k, n]^T`
fn matmul_bt_into(g: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k, n] += a[m, k]^T * g[m, n]`
fn matmul_at_into(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            orow.iter_mut().zip(grow).for_each(|(o, gv)| *o += av * gv);
        }
    }
}

/// Returns `(log-sum-exp, softmax)` of one row.
pub fn log_softmax_parts(row: &[f64]) -> (f64, Vec<f64>) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let lse = max + total.ln();
    (lse, exps.into_iter().map(|e| e / total).collect())
}

/// Central-difference gradient of `f` at `params`.
///
/// Coordinates are evaluated in parallel, so `f` must be pure.
pub fn finite_difference_gradient<F>(f: F, params: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    use rayon::prelude::*;
    assert!(step > 0.0, "finite-difference step must be positive");
    (0..params.len())
        .into_par_iter()
        .map(|i| {
            let mut p = params.to_vec();
            p[i] = params[i] + step;
            let up = f(&p);
            p[i] = params[i] - step;
            let down = f(&p);
            (up - down) / (2.0 * step)
        })
        .collect()
}
