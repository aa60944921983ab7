use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `(kappa - 1) / 2` on both sides; needs odd `kappa`.
    Same,
    Valid,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;
const BCE_CLAMP: f64 = 1e-7;

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Conv1d { x: Var, k: Var, b: Option<Var>, pad: usize, kappa: usize, col: Vec<f64> },
    AvgPool { x: Var, kappa: usize, stride: usize },
    Upsample(Var),
    LayerNorm { x: Var, g: Var, b: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Gelu(Var),
    Softmax(Var),
    Dropout { x: Var, mask: Vec<f64> },
    Embedding { table: Var, idx: Vec<usize> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    MseMean(Var, Var),
    BceMean(Var, Var),
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A gradient tape. Values are computed eagerly as ops are recorded;
/// [`Graph::backward`] may run once.
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
    rng: Option<ChaCha8Rng>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{what}: {a:?} vs {b:?}"))
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
            rng: None,
        }
    }

    /// A graph whose dropout masks are drawn from `rng`.
    pub fn with_rng(rng: ChaCha8Rng) -> Self {
        Graph {
            rng: Some(rng),
            ..Self::new()
        }
    }

    pub fn into_rng(self) -> Option<ChaCha8Rng> {
        self.rng
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// A constant leaf; no gradient is tracked for it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is collected by [`Graph::backward`].
    pub fn param(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the loss with respect to `v`, after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn dims(&self, v: Var) -> Result<(usize, usize)> {
        self.nodes[v.0].value.dims2()
    }

    fn vals(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value.data
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a)?;
        let (k2, n) = self.dims(b)?;
        if k != k2 {
            return Err(shape_err("matmul", self.value(a).shape(), self.value(b).shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.vals(a), k, 1, self.vals(b), n, 1, 0.0, &mut out);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMul(a, b), &[a, b]))
    }

    /// `a * b^T` for `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a)?;
        let (n, k2) = self.dims(b)?;
        if k != k2 {
            return Err(shape_err("matmul_nt", self.value(a).shape(), self.value(b).shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.vals(a), k, 1, self.vals(b), 1, k, 0.0, &mut out);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMulNt(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        let x = self.vals(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = x[i * n + j];
            }
        }
        Ok(self.push(Tensor { shape: vec![n, m], data: out }, Op::Transpose(a), &[a]))
    }

    /// `x * w + b` for `x: [m, k]`, `w: [k, n]`, `b` of length `n`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (m, k) = self.dims(x)?;
        let (k2, n) = self.dims(w)?;
        if k != k2 {
            return Err(shape_err("linear", self.value(x).shape(), self.value(w).shape()));
        }
        let mut out = vec![0.0; m * n];
        if let Some(b) = b {
            let bias = self.vals(b);
            if bias.len() != n {
                return Err(Error::Shape(format!("linear bias has {} entries, expected {n}", bias.len())));
            }
            for row in out.chunks_exact_mut(n) {
                row.copy_from_slice(bias);
            }
        }
        gemm(m, k, n, self.vals(x), k, 1, self.vals(w), n, 1, 1.0, &mut out);
        let parents: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::Linear { x, w, b }, &parents))
    }

    fn zip_same(&self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(shape_err(what, &ta.shape, &tb.shape));
        }
        Ok(Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect(),
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a length-`n` vector to every row of `a: [m, n]`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let (_, n) = self.dims(a)?;
        let row = self.vals(r);
        if row.len() != n {
            return Err(shape_err("add_row", self.value(a).shape(), self.value(r).shape()));
        }
        let mut out = self.vals(a).to_vec();
        for chunk in out.chunks_exact_mut(n) {
            for (o, &v) in chunk.iter_mut().zip(row) {
                *o += v;
            }
        }
        let shape = self.value(a).shape.clone();
        Ok(self.push(Tensor { shape, data: out }, Op::AddRow(a, r), &[a, r]))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|&x| scale * x + shift).collect(),
        };
        Ok(self.push(out, Op::Affine(a, scale), &[a]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.affine(a, s, 0.0)
    }

    /// 1-D convolution of `x: [L, c_in]` with `kernel: [kappa, c_in, c_out]`
    /// and optional `bias` of length `c_out`.
    pub fn conv1d(&mut self, x: Var, kernel: Var, bias: Option<Var>, padding: Padding) -> Result<Var> {
        let (l, cin) = self.dims(x)?;
        let (kappa, kcin, cout) = match self.value(kernel).shape[..] {
            [a, b, c] => (a, b, c),
            _ => return Err(Error::Shape(format!("conv kernel must be rank 3, got {:?}", self.value(kernel).shape))),
        };
        if kcin != cin || kappa == 0 {
            return Err(shape_err("conv1d", self.value(x).shape(), self.value(kernel).shape()));
        }
        let pad = match padding {
            Padding::Same if kappa % 2 == 1 => (kappa - 1) / 2,
            Padding::Same => return Err(Error::Invalid(format!("same padding needs odd kernel, got {kappa}"))),
            Padding::Valid => 0,
        };
        if l + 2 * pad < kappa {
            return Err(Error::Sizing(format!("conv input of length {l} shorter than kernel {kappa}")));
        }
        let lo = l + 2 * pad - kappa + 1;
        let width = kappa * cin;
        let xs = self.vals(x);
        let mut col = vec![0.0; lo * width];
        for o in 0..lo {
            for j in 0..kappa {
                let src = o + j;
                if src < pad || src - pad >= l {
                    continue;
                }
                let s = (src - pad) * cin;
                col[o * width + j * cin..o * width + (j + 1) * cin].copy_from_slice(&xs[s..s + cin]);
            }
        }
        let mut out = vec![0.0; lo * cout];
        if let Some(b) = bias {
            let bv = self.vals(b);
            if bv.len() != cout {
                return Err(Error::Shape(format!("conv bias has {} entries, expected {cout}", bv.len())));
            }
            for row in out.chunks_exact_mut(cout) {
                row.copy_from_slice(bv);
            }
        }
        gemm(lo, width, cout, &col, width, 1, self.vals(kernel), cout, 1, 1.0, &mut out);
        let parents: Vec<Var> = [Some(x), Some(kernel), bias].into_iter().flatten().collect();
        Ok(self.push(
            Tensor { shape: vec![lo, cout], data: out },
            Op::Conv1d { x, k: kernel, b: bias, pad, kappa, col },
            &parents,
        ))
    }

    /// Valid average pooling along rows.
    pub fn avg_pool1d(&mut self, x: Var, kappa: usize, stride: usize) -> Result<Var> {
        let (l, c) = self.dims(x)?;
        if kappa == 0 || stride == 0 {
            return Err(Error::Invalid("pool kernel and stride must be positive".into()));
        }
        if l < kappa {
            return Err(Error::Sizing(format!("pool input of length {l} shorter than kernel {kappa}")));
        }
        let lo = (l - kappa) / stride + 1;
        let xs = self.vals(x);
        let inv = 1.0 / kappa as f64;
        let mut out = vec![0.0; lo * c];
        for o in 0..lo {
            let dst = &mut out[o * c..(o + 1) * c];
            for j in 0..kappa {
                let s = (o * stride + j) * c;
                for (d, &v) in dst.iter_mut().zip(&xs[s..s + c]) {
                    *d += v;
                }
            }
            for d in dst.iter_mut() {
                *d *= inv;
            }
        }
        Ok(self.push(Tensor { shape: vec![lo, c], data: out }, Op::AvgPool { x, kappa, stride }, &[x]))
    }

    /// Linear interpolation along rows to `target` rows, endpoints aligned.
    pub fn upsample_linear(&mut self, x: Var, target: usize) -> Result<Var> {
        let (l, c) = self.dims(x)?;
        if target == 0 || l == 0 {
            return Err(Error::Invalid("upsample lengths must be positive".into()));
        }
        let xs = self.vals(x);
        let mut out = vec![0.0; target * c];
        for i in 0..target {
            let (i0, w) = interp_coord(i, l, target);
            let dst = &mut out[i * c..(i + 1) * c];
            let a = &xs[i0 * c..(i0 + 1) * c];
            if w == 0.0 {
                dst.copy_from_slice(a);
            } else {
                let b = &xs[(i0 + 1) * c..(i0 + 2) * c];
                for ((d, &u), &v) in dst.iter_mut().zip(a).zip(b) {
                    *d = (1.0 - w) * u + w * v;
                }
            }
        }
        Ok(self.push(Tensor { shape: vec![target, c], data: out }, Op::Upsample(x), &[x]))
    }

    /// Row-wise normalization (population variance, `eps` inside the root)
    /// followed by a per-column gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (m, d) = self.dims(x)?;
        if d == 0 || self.vals(gain).len() != d || self.vals(bias).len() != d {
            return Err(Error::Shape(format!("layer norm over {d} columns with gain/bias of {}/{}", self.vals(gain).len(), self.vals(bias).len())));
        }
        let (xs, g, b) = (self.vals(x), self.vals(gain), self.vals(bias));
        let mut xhat = vec![0.0; m * d];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * d];
        for r in 0..m {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        Ok(self.push(
            Tensor { shape: vec![m, d], data: out },
            Op::LayerNorm { x, g: gain, b: bias, xhat, rstd },
            &[x, gain, bias],
        ))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let out = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|&x| f(x)).collect(),
        };
        self.push(out, op, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    /// Tanh approximation: `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, |x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()), Op::Gelu(a))
    }

    /// Softmax over the last axis of a matrix.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        if n == 0 {
            return Err(Error::Shape("softmax over an empty axis".into()));
        }
        let mut out = self.vals(a).to_vec();
        for row in out.chunks_exact_mut(n) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::Softmax(a), &[a]))
    }

    /// Inverted dropout. Identity when `train` is false or `p` is 0.
    pub fn dropout(&mut self, a: Var, p: f64, train: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Invalid(format!("dropout rate {p} not in [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(a);
        }
        let n = self.value(a).len();
        let rng = self
            .rng
            .as_mut()
            .ok_or_else(|| Error::Invalid("training-mode dropout needs a graph with an rng".into()))?;
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
        let t = self.value(a);
        let out = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().zip(&mask).map(|(x, m)| x * m).collect(),
        };
        Ok(self.push(out, Op::Dropout { x: a, mask }, &[a]))
    }

    /// Rows of `table: [V, d]` selected by `idx`.
    pub fn embedding(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let (v, d) = self.dims(table)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= v) {
            return Err(Error::Bounds(format!("embedding index {bad} outside table of {v} rows")));
        }
        let tv = self.vals(table);
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        Ok(self.push(
            Tensor { shape: vec![idx.len(), d], data: out },
            Op::Embedding { table, idx: idx.to_vec() },
            &[table],
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        if start + len > n {
            return Err(Error::Bounds(format!("columns {start}..{} of {n}", start + len)));
        }
        let xs = self.vals(a);
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&xs[r * n + start..r * n + start + len]);
        }
        Ok(self.push(Tensor { shape: vec![m, len], data: out }, Op::SliceCols { x: a, start }, &[a]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let (m, _) = self.dims(first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p)?;
            if r != m {
                return Err(shape_err("concat_cols", self.value(first).shape(), self.value(p).shape()));
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.vals(p)[r * w..(r + 1) * w]);
            }
        }
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn mse_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "mse_mean", |x, y| (x - y) * (x - y))?;
        if t.is_empty() {
            return Err(Error::Shape("mse over no elements".into()));
        }
        let v = t.data.iter().sum::<f64>() / t.len() as f64;
        Ok(self.push(Tensor::scalar(v), Op::MseMean(a, b), &[a, b]))
    }

    /// Mean binary cross-entropy of probabilities `p` against soft targets
    /// in `[0, 1]`. Predictions are clamped to `[1e-7, 1 - 1e-7]`; the clamp
    /// passes no gradient outside that band.
    pub fn bce_mean(&mut self, p: Var, target: Var) -> Result<Var> {
        let (tp, tt) = (self.value(p), self.value(target));
        if tp.shape != tt.shape {
            return Err(shape_err("bce_mean", &tp.shape, &tt.shape));
        }
        if tp.is_empty() {
            return Err(Error::Shape("bce over no elements".into()));
        }
        if let Some(i) = tt.data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Invalid(format!("bce target {} at {i} outside [0, 1]", tt.data[i])));
        }
        let s: f64 = tp
            .data
            .iter()
            .zip(&tt.data)
            .map(|(&q, &t)| {
                let q = q.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -(t * q.ln() + (1.0 - t) * (1.0 - q).ln())
            })
            .sum();
        let v = s / tp.len() as f64;
        Ok(self.push(Tensor::scalar(v), Op::BceMean(p, target), &[p, target]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.vals(a).iter().sum();
        self.push(Tensor::scalar(v), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::Shape("mean over no elements".into()));
        }
        let v = self.vals(a).iter().sum::<f64>() / n as f64;
        Ok(self.push(Tensor::scalar(v), Op::Mean(a), &[a]))
    }

    /// Reverse sweep from a one-element `loss`. Runs at most once per graph.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Invalid("backward already ran on this graph; record a new one".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.backprop_node(i, &gy, &mut grads)?;
            grads[i] = Some(gy);
        }
        for (i, g) in grads.iter_mut().enumerate() {
            if !matches!(self.nodes[i].op, Op::Leaf) || !self.nodes[i].needs_grad {
                *g = None;
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[i];
        let y = &node.value.data;
        let nodes = &self.nodes;
        let needs = |v: Var| nodes[v.0].needs_grad;
        let vals = |v: Var| -> &[f64] { &nodes[v.0].value.data };
        let dims = |v: Var| nodes[v.0].value.dims2().expect("checked at record time");
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims(*a);
                let (_, n) = dims(*b);
                if needs(*a) {
                    gemm(m, n, k, gy, n, 1, vals(*b), 1, n, 1.0, acc(grads, *a, m * k));
                }
                if needs(*b) {
                    gemm(k, m, n, vals(*a), 1, k, gy, n, 1, 1.0, acc(grads, *b, k * n));
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = dims(*a);
                let (n, _) = dims(*b);
                if needs(*a) {
                    gemm(m, n, k, gy, n, 1, vals(*b), k, 1, 1.0, acc(grads, *a, m * k));
                }
                if needs(*b) {
                    gemm(n, m, k, gy, 1, n, vals(*a), k, 1, 1.0, acc(grads, *b, n * k));
                }
            }
            Op::Transpose(a) => {
                let (m, n) = dims(*a);
                let ga = acc(grads, *a, m * n);
                for r in 0..m {
                    for c in 0..n {
                        ga[r * n + c] += gy[c * m + r];
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (m, k) = dims(*x);
                let (_, n) = dims(*w);
                if needs(*x) {
                    gemm(m, n, k, gy, n, 1, vals(*w), 1, n, 1.0, acc(grads, *x, m * k));
                }
                if needs(*w) {
                    gemm(k, m, n, vals(*x), 1, k, gy, n, 1, 1.0, acc(grads, *w, k * n));
                }
                if let Some(b) = b.filter(|&b| needs(b)) {
                    col_sums_into(gy, n, acc(grads, b, n));
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if needs(v) {
                        add_into(acc(grads, v, gy.len()), gy, 1.0);
                    }
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    add_into(acc(grads, *a, gy.len()), gy, 1.0);
                }
                if needs(*b) {
                    add_into(acc(grads, *b, gy.len()), gy, -1.0);
                }
            }
            Op::AddRow(a, r) => {
                if needs(*a) {
                    add_into(acc(grads, *a, gy.len()), gy, 1.0);
                }
                if needs(*r) {
                    let n = vals(*r).len();
                    col_sums_into(gy, n, acc(grads, *r, n));
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let bv = vals(*b);
                    for ((g, &d), &o) in acc(grads, *a, gy.len()).iter_mut().zip(gy).zip(bv) {
                        *g += d * o;
                    }
                }
                if needs(*b) {
                    let av = vals(*a);
                    for ((g, &d), &o) in acc(grads, *b, gy.len()).iter_mut().zip(gy).zip(av) {
                        *g += d * o;
                    }
                }
            }
            Op::Affine(a, s) => add_into(acc(grads, *a, gy.len()), gy, *s),
            Op::Conv1d { x, k, b, pad, kappa, col } => {
                let (l, cin) = dims(*x);
                let cout = nodes[k.0].value.shape[2];
                let width = kappa * cin;
                let lo = gy.len() / cout;
                if needs(*k) {
                    gemm(width, lo, cout, col, 1, width, gy, cout, 1, 1.0, acc(grads, *k, width * cout));
                }
                if let Some(b) = b.filter(|&b| needs(b)) {
                    col_sums_into(gy, cout, acc(grads, b, cout));
                }
                if needs(*x) {
                    let mut dcol = vec![0.0; lo * width];
                    gemm(lo, cout, width, gy, cout, 1, vals(*k), 1, cout, 0.0, &mut dcol);
                    let gx = acc(grads, *x, l * cin);
                    for o in 0..lo {
                        for j in 0..*kappa {
                            let src = o + j;
                            if src < *pad || src - pad >= l {
                                continue;
                            }
                            let s = (src - pad) * cin;
                            add_into(&mut gx[s..s + cin], &dcol[o * width + j * cin..o * width + (j + 1) * cin], 1.0);
                        }
                    }
                }
            }
            Op::AvgPool { x, kappa, stride } => {
                let (l, c) = dims(*x);
                let lo = gy.len() / c;
                let inv = 1.0 / *kappa as f64;
                let gx = acc(grads, *x, l * c);
                for o in 0..lo {
                    for j in 0..*kappa {
                        let s = (o * stride + j) * c;
                        add_into(&mut gx[s..s + c], &gy[o * c..(o + 1) * c], inv);
                    }
                }
            }
            Op::Upsample(x) => {
                let (l, c) = dims(*x);
                let target = gy.len() / c;
                let gx = acc(grads, *x, l * c);
                for i in 0..target {
                    let (i0, w) = interp_coord(i, l, target);
                    let g = &gy[i * c..(i + 1) * c];
                    add_into(&mut gx[i0 * c..(i0 + 1) * c], g, 1.0 - w);
                    if w != 0.0 {
                        add_into(&mut gx[(i0 + 1) * c..(i0 + 2) * c], g, w);
                    }
                }
            }
            Op::LayerNorm { x, g, b, xhat, rstd } => {
                let (m, d) = dims(*x);
                let gain = vals(*g);
                if needs(*g) {
                    let gg = acc(grads, *g, d);
                    for r in 0..m {
                        for j in 0..d {
                            gg[j] += gy[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if needs(*b) {
                    col_sums_into(gy, d, acc(grads, *b, d));
                }
                if needs(*x) {
                    let gx = acc(grads, *x, m * d);
                    let mut dh = vec![0.0; d];
                    for r in 0..m {
                        let (mut s1, mut s2) = (0.0, 0.0);
                        for j in 0..d {
                            dh[j] = gy[r * d + j] * gain[j];
                            s1 += dh[j];
                            s2 += dh[j] * xhat[r * d + j];
                        }
                        s1 /= d as f64;
                        s2 /= d as f64;
                        for j in 0..d {
                            gx[r * d + j] += rstd[r] * (dh[j] - s1 - xhat[r * d + j] * s2);
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                for ((g, &d), &s) in acc(grads, *a, gy.len()).iter_mut().zip(gy).zip(y) {
                    *g += d * s * (1.0 - s);
                }
            }
            Op::Tanh(a) => {
                for ((g, &d), &t) in acc(grads, *a, gy.len()).iter_mut().zip(gy).zip(y) {
                    *g += d * (1.0 - t * t);
                }
            }
            Op::Relu(a) => {
                let xv = vals(*a);
                for ((g, &d), &x) in acc(grads, *a, gy.len()).iter_mut().zip(gy).zip(xv) {
                    if x > 0.0 {
                        *g += d;
                    }
                }
            }
            Op::Gelu(a) => {
                let xv = vals(*a);
                for ((g, &d), &x) in acc(grads, *a, gy.len()).iter_mut().zip(gy).zip(xv) {
                    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                    let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                    *g += d * (0.5 * (1.0 + t) + 0.5 * x * dt);
                }
            }
            Op::Softmax(a) => {
                let (_, n) = dims(*a);
                let ga = acc(grads, *a, gy.len());
                for ((gr, dr), yr) in ga.chunks_exact_mut(n).zip(gy.chunks_exact(n)).zip(y.chunks_exact(n)) {
                    let dot: f64 = dr.iter().zip(yr).map(|(d, s)| d * s).sum();
                    for ((g, &d), &s) in gr.iter_mut().zip(dr).zip(yr) {
                        *g += s * (d - dot);
                    }
                }
            }
            Op::Dropout { x, mask } => {
                for ((g, &d), &k) in acc(grads, *x, gy.len()).iter_mut().zip(gy).zip(mask) {
                    *g += d * k;
                }
            }
            Op::Embedding { table, idx } => {
                let (v, d) = dims(*table);
                let gt = acc(grads, *table, v * d);
                for (r, &i) in idx.iter().enumerate() {
                    add_into(&mut gt[i * d..(i + 1) * d], &gy[r * d..(r + 1) * d], 1.0);
                }
            }
            Op::SliceCols { x, start } => {
                let (m, n) = dims(*x);
                let len = gy.len() / m.max(1);
                let gx = acc(grads, *x, m * n);
                for r in 0..m {
                    add_into(&mut gx[r * n + start..r * n + start + len], &gy[r * len..(r + 1) * len], 1.0);
                }
            }
            Op::ConcatCols(parts) => {
                let (m, n) = node.value.dims2()?;
                let mut off = 0;
                for &p in parts {
                    let (_, w) = dims(p);
                    if needs(p) {
                        let gp = acc(grads, p, m * w);
                        for r in 0..m {
                            add_into(&mut gp[r * w..(r + 1) * w], &gy[r * n + off..r * n + off + w], 1.0);
                        }
                    }
                    off += w;
                }
            }
            Op::MseMean(a, b) => {
                let (av, bv) = (vals(*a), vals(*b));
                let s = 2.0 * gy[0] / av.len() as f64;
                if needs(*a) {
                    for ((g, &x), &t) in acc(grads, *a, av.len()).iter_mut().zip(av).zip(bv) {
                        *g += s * (x - t);
                    }
                }
                if needs(*b) {
                    for ((g, &x), &t) in acc(grads, *b, av.len()).iter_mut().zip(av).zip(bv) {
                        *g -= s * (x - t);
                    }
                }
            }
            Op::BceMean(p, t) => {
                let (pv, tv) = (vals(*p), vals(*t));
                let s = gy[0] / pv.len() as f64;
                if needs(*p) {
                    for ((g, &q), &w) in acc(grads, *p, pv.len()).iter_mut().zip(pv).zip(tv) {
                        if (BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&q) {
                            *g += s * (-w / q + (1.0 - w) / (1.0 - q));
                        }
                    }
                }
                if needs(*t) {
                    for ((g, &q), _) in acc(grads, *t, pv.len()).iter_mut().zip(pv).zip(tv) {
                        let q = q.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                        *g -= s * (q.ln() - (1.0 - q).ln());
                    }
                }
            }
            Op::Sum(a) => {
                let n = vals(*a).len();
                for g in acc(grads, *a, n) {
                    *g += gy[0];
                }
            }
            Op::Mean(a) => {
                let n = vals(*a).len();
                let s = gy[0] / n as f64;
                for g in acc(grads, *a, n) {
                    *g += s;
                }
            }
        }
        Ok(())
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64], s: f64) {
    for (d, &v) in dst.iter_mut().zip(src) {
        *d += s * v;
    }
}

fn col_sums_into(m: &[f64], n: usize, dst: &mut [f64]) {
    for row in m.chunks_exact(n) {
        add_into(dst, row, 1.0);
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

/// Source row and blend weight for output row `i` of an `l -> target` resize.
fn interp_coord(i: usize, l: usize, target: usize) -> (usize, f64) {
    if l == 1 || target == 1 {
        return (0, 0.0);
    }
    let pos = (i * (l - 1)) as f64 / (target - 1) as f64;
    let i0 = (pos.floor() as usize).min(l - 2);
    let w = pos - i0 as f64;
    if w == 0.0 {
        (i0, 0.0)
    } else {
        (i0, w)
    }
}
