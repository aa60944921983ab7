//! The forecasting network.
//!
//! Data flow for one window (`T` history steps, `H` horizon steps, width `d`):
//!
//! ```text
//! history --RevIN--> x_norm --embed--> [T,d] --residual MLP--> Z [T,d]
//!   --time projection T->H--> X_en [H,d]
//! X_en + time-embed(future marks) --LN--> pyramid of avg pools
//!   --conv+GELU per scale, fused coarse to fine--> h_pl [H,d] --> peak prob [H]
//! queries: embed(last label_len normalized values, zero padded to H)
//! keys/values: tanh(h_pl) * sigmoid(X_en)
//!   --cross attention, residual+LN, FFN, residual+LN--> [H,d] --> y_norm --RevIN^-1--> y [H]
//! ```

mod params;

pub use params::{manifest_path, ManifestEntry, ParamStore};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{CalendarRow, WindowSample, CALENDAR_DIM};
use crate::tensor::{Graph, Padding, Tensor, Var};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSpec {
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// History length `T`.
    pub input_len: usize,
    /// Forecast horizon `H`.
    pub horizon: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    pub e_layers: usize,
    /// Residual blocks per encoder layer.
    pub mlp_layers: usize,
    pub dropout: f64,
    /// Number of pooled scales `K`; must equal `pool_specs.len()`.
    pub pyramid_depth: usize,
    pub pool_specs: Vec<PoolSpec>,
    pub conv_kernel: usize,
    /// Defaults to `min(48, H / 2)`.
    pub label_len: Option<usize>,
    pub revin_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_len: 168,
            horizon: 336,
            d_model: 256,
            d_ff: 256,
            n_heads: 4,
            e_layers: 1,
            mlp_layers: 2,
            dropout: 0.1,
            pyramid_depth: 2,
            pool_specs: vec![PoolSpec { kernel: 3, stride: 2 }, PoolSpec { kernel: 5, stride: 2 }],
            conv_kernel: 3,
            label_len: None,
            revin_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// A small configuration for tests and smoke runs.
    pub fn tiny(input_len: usize, horizon: usize, d_model: usize) -> Self {
        ModelConfig {
            input_len,
            horizon,
            d_model,
            d_ff: d_model,
            n_heads: 2,
            pyramid_depth: 1,
            pool_specs: vec![PoolSpec { kernel: 3, stride: 2 }],
            ..Self::default()
        }
    }

    pub fn label_len(&self) -> usize {
        self.label_len.unwrap_or_else(|| 48.min(self.horizon / 2))
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads.max(1)
    }

    /// Lengths of every pyramid scale, finest first.
    pub fn pyramid_lengths(&self) -> Result<Vec<usize>> {
        let mut lens = vec![self.horizon];
        for p in &self.pool_specs {
            let l = *lens.last().expect("non-empty");
            if p.kernel == 0 || p.stride == 0 {
                return Err(Error::Config("pool kernel and stride must be positive".into()));
            }
            if l < p.kernel {
                return Err(Error::Sizing(format!(
                    "horizon {} too short for the pooling chain: a scale of length {l} cannot take kernel {}",
                    self.horizon, p.kernel
                )));
            }
            lens.push((l - p.kernel) / p.stride + 1);
        }
        Ok(lens)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_len == 0 || self.horizon == 0 || self.d_model == 0 || self.d_ff == 0 {
            return bad("input_len, horizon, d_model and d_ff must be positive".into());
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.pyramid_depth != self.pool_specs.len() {
            return bad(format!(
                "pyramid_depth {} but {} pool specs",
                self.pyramid_depth,
                self.pool_specs.len()
            ));
        }
        if self.conv_kernel % 2 == 0 {
            return bad(format!("conv_kernel must be odd, got {}", self.conv_kernel));
        }
        let l = self.label_len();
        if l > self.horizon || l > self.input_len {
            return bad(format!("label_len {l} exceeds horizon or input length"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if !(self.revin_eps > 0.0) {
            return bad("revin_eps must be positive".into());
        }
        self.pyramid_lengths()?;
        Ok(())
    }
}

/// Component switches used for ablation runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    /// A single linear layer replaces the multi-scale pyramid.
    pub no_msm_pl: bool,
    /// The decoder attends to the ungated encoder context.
    pub no_lad: bool,
    /// Plain MSE on intensities; no masked or localization terms.
    pub no_upap: bool,
    /// Binary masks replace the soft Gaussian masks.
    pub hard_mask: bool,
}

impl Ablation {
    pub const NAMES: [&'static str; 4] = ["no_msm_pl", "no_lad", "no_upap", "hard_mask"];

    /// Sets the flag called `name`.
    pub fn enable(&mut self, name: &str) -> Result<()> {
        match name {
            "no_msm_pl" => self.no_msm_pl = true,
            "no_lad" => self.no_lad = true,
            "no_upap" => self.no_upap = true,
            "hard_mask" => self.hard_mask = true,
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation {other:?}; expected one of {:?}",
                    Self::NAMES
                )))
            }
        }
        Ok(())
    }
}

/// Per-window normalization statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevinState {
    pub mean: f64,
    /// Population standard deviation, floored at `eps`.
    pub std: f64,
}

impl RevinState {
    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn denormalize(&self, x: f64) -> f64 {
        x * self.std + self.mean
    }
}

/// `(x - mean) / max(std, eps)`. A constant input maps to exact zeros.
pub fn revin_normalize(x: &[f64], eps: f64) -> (Vec<f64>, RevinState) {
    if x.is_empty() {
        return (Vec::new(), RevinState { mean: 0.0, std: eps });
    }
    if x.iter().all(|&v| v == x[0]) {
        return (vec![0.0; x.len()], RevinState { mean: x[0], std: eps });
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let st = RevinState {
        mean,
        std: var.sqrt().max(eps),
    };
    (x.iter().map(|&v| st.normalize(v)).collect(), st)
}

/// Fixed sinusoidal encoding: `sin` on even columns, `cos` on odd columns.
pub fn positional_encoding(len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; len * d];
    for pos in 0..len {
        for i in (0..d).step_by(2) {
            let freq = (-(i as f64) * (10000f64).ln() / d as f64).exp();
            let a = pos as f64 * freq;
            data[pos * d + i] = a.sin();
            if i + 1 < d {
                data[pos * d + i + 1] = a.cos();
            }
        }
    }
    Tensor::matrix(len, d, data).expect("sized to len * d")
}

/// Model input for one window.
#[derive(Clone, Copy, Debug)]
pub struct ModelInput<'a> {
    pub history_x: &'a [f64],
    pub history_marks: &'a [CalendarRow],
    pub future_marks: &'a [CalendarRow],
}

impl<'a> From<&'a WindowSample> for ModelInput<'a> {
    fn from(w: &'a WindowSample) -> Self {
        ModelInput {
            history_x: &w.history_x,
            history_marks: &w.history_marks,
            future_marks: &w.future_marks,
        }
    }
}

/// Handles to the recorded outputs of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    /// `[H, 1]`, normalized scale.
    pub y_norm: Var,
    /// `[H, 1]`, original scale.
    pub y_intensity: Var,
    /// `[H, 1]` in `[0, 1]`.
    pub peak_prob: Var,
    pub h_pl: Var,
    pub x_en_out: Var,
    /// One `[H, H]` row-stochastic map per head.
    pub attention: Vec<Var>,
    pub revin: RevinState,
}

/// Plain-value outputs of an evaluation-mode forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub y_intensity: Vec<f64>,
    pub y_norm: Vec<f64>,
    pub y_peak_prob: Vec<f64>,
    pub h_pl: Tensor,
    pub attention: Vec<Tensor>,
    pub revin: RevinState,
}

/// Parameter leaves recorded on one graph, addressable by name.
pub struct Bound<'m> {
    store: &'m ParamStore,
    vars: Vec<Var>,
}

impl Bound<'_> {
    pub fn var(&self, name: &str) -> Var {
        let i = self
            .store
            .position(name)
            .unwrap_or_else(|| panic!("parameter {name} is registered at construction"));
        self.vars[i]
    }

    /// Var for parameter `i` in store order.
    pub fn var_at(&self, i: usize) -> Var {
        self.vars[i]
    }
}

#[derive(Clone, Debug)]
pub struct PeakFocus {
    config: ModelConfig,
    ablation: Ablation,
    params: ParamStore,
    pe_hist: Tensor,
    pe_horizon: Tensor,
}

impl PeakFocus {
    /// Randomly initialized model: fan-in scaled uniform weights, zero
    /// biases, unit layer-norm gains.
    pub fn new(config: ModelConfig, ablation: Ablation, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_params(&config, ablation, &mut rng)?;
        Ok(Self::assemble(config, ablation, params))
    }

    /// Wraps existing parameters after checking names and shapes.
    pub fn from_params(config: ModelConfig, ablation: Ablation, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let reference = init_params(&config, ablation, &mut rng)?;
        reference.check_compatible(&params)?;
        Ok(Self::assemble(config, ablation, params))
    }

    fn assemble(config: ModelConfig, ablation: Ablation, params: ParamStore) -> Self {
        PeakFocus {
            pe_hist: positional_encoding(config.input_len, config.d_model),
            pe_horizon: positional_encoding(config.horizon, config.d_model),
            config,
            ablation,
            params,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn ablation(&self) -> Ablation {
        self.ablation
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Records every parameter on `g`; as trainable leaves when `trainable`.
    pub fn bind<'m>(&'m self, g: &mut Graph, trainable: bool) -> Bound<'m> {
        let vars = self
            .params
            .iter()
            .map(|(_, t)| if trainable { g.param(t.clone()) } else { g.input(t.clone()) })
            .collect();
        Bound {
            store: &self.params,
            vars,
        }
    }

    fn check_input(&self, inp: &ModelInput<'_>) -> Result<()> {
        let c = &self.config;
        if inp.history_x.len() != c.input_len || inp.history_marks.len() != c.input_len {
            return Err(Error::Shape(format!(
                "history has {} values and {} marks, model expects {}",
                inp.history_x.len(),
                inp.history_marks.len(),
                c.input_len
            )));
        }
        if inp.future_marks.len() != c.horizon {
            return Err(Error::Shape(format!(
                "{} future marks for horizon {}",
                inp.future_marks.len(),
                c.horizon
            )));
        }
        Ok(())
    }

    /// Value convolution + positional encoding + calendar embedding, `[T, d]`.
    pub fn embed_input(&self, g: &mut Graph, b: &Bound<'_>, x_norm: &[f64], marks: &[CalendarRow], train: bool) -> Result<Var> {
        let xv = g.input(Tensor::column(x_norm.to_vec()));
        let ve = g.conv1d(xv, b.var("enc.value_conv.weight"), Some(b.var("enc.value_conv.bias")), Padding::Same)?;
        let pe = g.input(self.pe_hist.clone());
        let te = self.time_embed(g, b, marks)?;
        let s = g.add(ve, pe)?;
        let s = g.add(s, te)?;
        g.dropout(s, self.config.dropout, train)
    }

    fn time_embed(&self, g: &mut Graph, b: &Bound<'_>, marks: &[CalendarRow]) -> Result<Var> {
        let m = g.input(Tensor::matrix(marks.len(), CALENDAR_DIM, marks.iter().flatten().copied().collect())?);
        g.linear(m, b.var("time_embed.weight"), Some(b.var("time_embed.bias")))
    }

    /// Residual MLP over the history, then the learned time projection.
    /// Returns `(Z_hist [T, d], X_en_out [H, d])`.
    pub fn encode(&self, g: &mut Graph, b: &Bound<'_>, x_embed: Var, train: bool) -> Result<(Var, Var)> {
        let mut z = x_embed;
        for e in 0..self.config.e_layers {
            for j in 0..self.config.mlp_layers {
                let p = format!("enc.layer{e}.block{j}");
                let h = g.linear(z, b.var(&format!("{p}.weight")), Some(b.var(&format!("{p}.bias"))))?;
                let h = g.relu(h);
                let h = g.dropout(h, self.config.dropout, train)?;
                let s = g.add(z, h)?;
                z = g.layer_norm(s, b.var(&format!("{p}.norm.gain")), b.var(&format!("{p}.norm.bias")), LN_EPS)?;
            }
        }
        let zt = g.transpose(z)?;
        let proj = g.linear(zt, b.var("enc.time_proj.weight"), Some(b.var("enc.time_proj.bias")))?;
        let x_en = g.transpose(proj)?;
        Ok((z, x_en))
    }

    /// Multi-scale locator. Returns `(h_pl [H, d], peak probabilities [H, 1])`.
    pub fn msm_pl(&self, g: &mut Graph, b: &Bound<'_>, x_en_out: Var, future_marks: &[CalendarRow]) -> Result<(Var, Var)> {
        let te = self.time_embed(g, b, future_marks)?;
        let s = g.add(x_en_out, te)?;
        let h_in = g.layer_norm(s, b.var("msm.norm.gain"), b.var("msm.norm.bias"), LN_EPS)?;
        let h_pl = if self.ablation.no_msm_pl {
            g.linear(h_in, b.var("msm.linear.weight"), Some(b.var("msm.linear.bias")))?
        } else {
            let mut scales = vec![h_in];
            for p in &self.config.pool_specs {
                let last = *scales.last().expect("non-empty");
                scales.push(g.avg_pool1d(last, p.kernel, p.stride)?);
            }
            let k_top = scales.len() - 1;
            let mut f = self.psi(g, b, k_top, scales[k_top])?;
            for k in (0..k_top).rev() {
                let len = g.value(scales[k]).shape()[0];
                let up = g.upsample_linear(f, len)?;
                let local = self.psi(g, b, k, scales[k])?;
                f = g.add(local, up)?;
            }
            f
        };
        let logits = g.linear(h_pl, b.var("msm.head.weight"), Some(b.var("msm.head.bias")))?;
        Ok((h_pl, g.sigmoid(logits)))
    }

    fn psi(&self, g: &mut Graph, b: &Bound<'_>, k: usize, x: Var) -> Result<Var> {
        let c = g.conv1d(
            x,
            b.var(&format!("msm.psi{k}.weight")),
            Some(b.var(&format!("msm.psi{k}.bias"))),
            Padding::Same,
        )?;
        Ok(g.gelu(c))
    }

    /// Decoder input: the last `label_len` normalized history values, then zeros.
    pub fn decoder_input(&self, x_norm: &[f64]) -> Vec<f64> {
        let l = self.config.label_len();
        let mut x = vec![0.0; self.config.horizon];
        x[..l].copy_from_slice(&x_norm[x_norm.len() - l..]);
        x
    }

    /// Location-aware decoder. Returns `(y_norm [H, 1], attention maps)`.
    pub fn lad_decode(&self, g: &mut Graph, b: &Bound<'_>, x_en_out: Var, h_pl: Var, x_dec: &[f64], train: bool) -> Result<(Var, Vec<Var>)> {
        let c = &self.config;
        let xd = g.input(Tensor::column(x_dec.to_vec()));
        let ve = g.conv1d(xd, b.var("dec.value_conv.weight"), Some(b.var("dec.value_conv.bias")), Padding::Same)?;
        let pe = g.input(self.pe_horizon.clone());
        let q0 = g.add(ve, pe)?;
        let ctx = if self.ablation.no_lad {
            x_en_out
        } else {
            let t = g.tanh(h_pl);
            let s = g.sigmoid(x_en_out);
            g.mul(t, s)?
        };
        let q = g.linear(q0, b.var("dec.attn.query.weight"), Some(b.var("dec.attn.query.bias")))?;
        let k = g.linear(ctx, b.var("dec.attn.key.weight"), Some(b.var("dec.attn.key.bias")))?;
        let v = g.linear(ctx, b.var("dec.attn.value.weight"), Some(b.var("dec.attn.value.bias")))?;
        let dh = c.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(c.n_heads);
        let mut maps = Vec::with_capacity(c.n_heads);
        for h in 0..c.n_heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let s = g.matmul_nt(qh, kh)?;
            let s = g.scale(s, scale)?;
            let a = g.softmax(s)?;
            maps.push(a);
            heads.push(g.matmul(a, vh)?);
        }
        let o = g.concat_cols(&heads)?;
        let o = g.linear(o, b.var("dec.attn.out.weight"), Some(b.var("dec.attn.out.bias")))?;
        let o = g.dropout(o, c.dropout, train)?;
        let s = g.add(q0, o)?;
        let z = g.layer_norm(s, b.var("dec.norm1.gain"), b.var("dec.norm1.bias"), LN_EPS)?;
        let f = g.linear(z, b.var("dec.ffn1.weight"), Some(b.var("dec.ffn1.bias")))?;
        let f = g.relu(f);
        let f = g.dropout(f, c.dropout, train)?;
        let f = g.linear(f, b.var("dec.ffn2.weight"), Some(b.var("dec.ffn2.bias")))?;
        let f = g.dropout(f, c.dropout, train)?;
        let s = g.add(z, f)?;
        let hd = g.layer_norm(s, b.var("dec.norm2.gain"), b.var("dec.norm2.bias"), LN_EPS)?;
        let y = g.linear(hd, b.var("dec.out.weight"), Some(b.var("dec.out.bias")))?;
        Ok((y, maps))
    }

    /// Records the full forward pass for one window on `g`.
    pub fn forward(&self, g: &mut Graph, b: &Bound<'_>, inp: &ModelInput<'_>, train: bool) -> Result<ForwardVars> {
        self.check_input(inp)?;
        let (x_norm, revin) = revin_normalize(inp.history_x, self.config.revin_eps);
        let emb = self.embed_input(g, b, &x_norm, inp.history_marks, train)?;
        let (_, x_en) = self.encode(g, b, emb, train)?;
        let (h_pl, prob) = self.msm_pl(g, b, x_en, inp.future_marks)?;
        let x_dec = self.decoder_input(&x_norm);
        let (y_norm, attention) = self.lad_decode(g, b, x_en, h_pl, &x_dec, train)?;
        let y = g.affine(y_norm, revin.std, revin.mean)?;
        Ok(ForwardVars {
            y_norm,
            y_intensity: y,
            peak_prob: prob,
            h_pl,
            x_en_out: x_en,
            attention,
            revin,
        })
    }

    /// Evaluation-mode forward pass returning plain values.
    pub fn predict(&self, inp: &ModelInput<'_>) -> Result<ForwardOutput> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let fv = self.forward(&mut g, &b, inp, false)?;
        Ok(ForwardOutput {
            y_intensity: g.value(fv.y_intensity).data().to_vec(),
            y_norm: g.value(fv.y_norm).data().to_vec(),
            y_peak_prob: g.value(fv.peak_prob).data().to_vec(),
            h_pl: g.value(fv.h_pl).clone(),
            attention: fv.attention.iter().map(|&a| g.value(a).clone()).collect(),
            revin: fv.revin,
        })
    }
}

fn init_params(c: &ModelConfig, ab: Ablation, rng: &mut ChaCha8Rng) -> Result<ParamStore> {
    let d = c.d_model;
    let kc = c.conv_kernel;
    let mut s = ParamStore::new();
    let mut uniform = |shape: &[usize], fan_in: usize| -> Tensor {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        Tensor::new(shape.to_vec(), data).expect("sized to shape")
    };
    let zeros = |n: usize| Tensor::zeros(&[n]);
    let ones = |n: usize| Tensor::full(&[n], 1.0);

    s.insert("enc.value_conv.weight", uniform(&[kc, 1, d], kc))?;
    s.insert("enc.value_conv.bias", zeros(d))?;
    s.insert("time_embed.weight", uniform(&[CALENDAR_DIM, d], CALENDAR_DIM))?;
    s.insert("time_embed.bias", zeros(d))?;
    for e in 0..c.e_layers {
        for j in 0..c.mlp_layers {
            let p = format!("enc.layer{e}.block{j}");
            s.insert(&format!("{p}.weight"), uniform(&[d, d], d))?;
            s.insert(&format!("{p}.bias"), zeros(d))?;
            s.insert(&format!("{p}.norm.gain"), ones(d))?;
            s.insert(&format!("{p}.norm.bias"), zeros(d))?;
        }
    }
    s.insert("enc.time_proj.weight", uniform(&[c.input_len, c.horizon], c.input_len))?;
    s.insert("enc.time_proj.bias", zeros(c.horizon))?;
    s.insert("msm.norm.gain", ones(d))?;
    s.insert("msm.norm.bias", zeros(d))?;
    if ab.no_msm_pl {
        s.insert("msm.linear.weight", uniform(&[d, d], d))?;
        s.insert("msm.linear.bias", zeros(d))?;
    } else {
        for k in 0..=c.pyramid_depth {
            s.insert(&format!("msm.psi{k}.weight"), uniform(&[kc, d, d], kc * d))?;
            s.insert(&format!("msm.psi{k}.bias"), zeros(d))?;
        }
    }
    s.insert("msm.head.weight", uniform(&[d, 1], d))?;
    s.insert("msm.head.bias", zeros(1))?;
    s.insert("dec.value_conv.weight", uniform(&[kc, 1, d], kc))?;
    s.insert("dec.value_conv.bias", zeros(d))?;
    for name in ["query", "key", "value", "out"] {
        s.insert(&format!("dec.attn.{name}.weight"), uniform(&[d, d], d))?;
        s.insert(&format!("dec.attn.{name}.bias"), zeros(d))?;
    }
    s.insert("dec.norm1.gain", ones(d))?;
    s.insert("dec.norm1.bias", zeros(d))?;
    s.insert("dec.ffn1.weight", uniform(&[d, c.d_ff], d))?;
    s.insert("dec.ffn1.bias", zeros(c.d_ff))?;
    s.insert("dec.ffn2.weight", uniform(&[c.d_ff, d], c.d_ff))?;
    s.insert("dec.ffn2.bias", zeros(d))?;
    s.insert("dec.norm2.gain", ones(d))?;
    s.insert("dec.norm2.bias", zeros(d))?;
    s.insert("dec.out.weight", uniform(&[d, 1], d))?;
    s.insert("dec.out.bias", zeros(1))?;
    Ok(s)
}

#[cfg(test)]
mod tests;
