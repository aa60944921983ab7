//! Triple hybrid loss, Adam, the learning-rate schedule and the training loop
//! with lowest-BCS checkpoint selection.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{EvalParams, MetricsAccumulator, MetricsReport, WindowEval};
use crate::mask::{harden_mask, MaskParams, SoftMask};
use crate::model::{Ablation, ForwardOutput, ModelConfig, ModelInput, ParamStore, PeakFocus};
use crate::peaks::PeakSet;
use crate::series::{window_samples, SeriesFrame, WindowSample};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Global MSE.
    pub lambda1: f64,
    /// Mask-weighted MSE.
    pub lambda2: f64,
    /// Localization BCE against the soft mask.
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.2,
            lambda2: 0.4,
            lambda3: 0.4,
        }
    }
}

impl LossWeights {
    /// Plain MSE.
    pub const MSE_ONLY: LossWeights = LossWeights {
        lambda1: 1.0,
        lambda2: 0.0,
        lambda3: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        let l = [self.lambda1, self.lambda2, self.lambda3];
        if l.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and nonnegative, got {l:?}")));
        }
        if l.iter().all(|&v| v == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

/// Space in which the intensity terms of the loss are computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpace {
    /// Per-window standardized values.
    #[default]
    Normalized,
    /// Original units.
    Raw,
}

/// `l1 * MSE(pred, true) + l2 * MSE(pred * W, true * W) + l3 * BCE(prob, W)`.
///
/// Terms whose weight is exactly zero are not recorded, so `(1, 0, 0)` is
/// plain MSE bit for bit.
pub fn triple_loss(g: &mut Graph, pred: Var, truth: Var, prob: Var, mask: Var, w: &LossWeights) -> Result<Var> {
    let mut terms: Vec<(f64, Var)> = Vec::with_capacity(3);
    if w.lambda1 != 0.0 {
        terms.push((w.lambda1, g.mse_mean(pred, truth)?));
    }
    if w.lambda2 != 0.0 {
        let pw = g.mul(pred, mask)?;
        let tw = g.mul(truth, mask)?;
        terms.push((w.lambda2, g.mse_mean(pw, tw)?));
    }
    if w.lambda3 != 0.0 {
        terms.push((w.lambda3, g.bce_mean(prob, mask)?));
    }
    let mut total: Option<Var> = None;
    for (lam, t) in terms {
        let s = g.scale(t, lam)?;
        total = Some(match total {
            None => s,
            Some(acc) => g.add(acc, s)?,
        });
    }
    total.ok_or_else(|| Error::Config("all loss weights are zero".into()))
}

/// Bias-corrected Adam with per-parameter moment buffers.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Shape(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        for (i, gr) in grads.iter().enumerate() {
            if gr.len() != params.tensor(i).len() {
                return Err(Error::Shape(format!("gradient for {} has the wrong length", params.name(i))));
            }
            if let Some(j) = gr.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient {} in parameter {} at coordinate {j}",
                    gr[j],
                    params.name(i)
                )));
            }
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, gr) in grads.iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = params.tensor_mut(i).data_mut();
            for j in 0..gr.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gr[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gr[j] * gr[j];
                p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Learning rate for 1-based `epoch`: constant for the first `warmup`
/// epochs (or a linear ramp to `base` when `linear_warmup`), then
/// `base * decay^(epoch - warmup)`.
pub fn lr_schedule(epoch: usize, base: f64, warmup: usize, decay: f64, linear_warmup: bool) -> Result<f64> {
    if epoch < 1 {
        return Err(Error::Invalid("epochs are numbered from 1".into()));
    }
    Ok(if epoch <= warmup {
        if linear_warmup {
            base * epoch as f64 / warmup as f64
        } else {
            base
        }
    } else {
        base * decay.powi((epoch - warmup) as i32)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub patience: usize,
    pub warmup_epochs: usize,
    pub decay: f64,
    pub linear_warmup: bool,
    pub seed: u64,
    /// Step between training windows.
    pub stride: usize,
    /// Step between validation and test windows.
    pub eval_stride: usize,
    pub loss_weights: LossWeights,
    pub loss_space: LossSpace,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch: 128,
            lr: 1e-3,
            patience: 5,
            warmup_epochs: 3,
            decay: 0.9,
            linear_warmup: false,
            seed: 0,
            stride: 1,
            eval_stride: 1,
            loss_weights: LossWeights::default(),
            loss_space: LossSpace::Normalized,
            ablation: Ablation::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if self.patience < 1 {
            return bad("patience must be at least 1");
        }
        if self.batch < 1 || self.stride < 1 || self.eval_stride < 1 {
            return bad("batch, stride and eval_stride must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad("decay must be in (0, 1]");
        }
        if self.linear_warmup && self.warmup_epochs == 0 {
            return bad("linear_warmup needs warmup_epochs >= 1");
        }
        self.loss_weights.validate()
    }

    /// Loss weights after applying the ablation switches.
    pub fn effective_loss_weights(&self) -> LossWeights {
        if self.ablation.no_upap {
            LossWeights::MSE_ONLY
        } else {
            self.loss_weights
        }
    }
}

/// Patience-based stopping on a lower-is-better score.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            since_best: 0,
        }
    }

    /// Records `score` for `epoch`. Only a strict decrease counts as an
    /// improvement; a non-finite score never does.
    pub fn observe(&mut self, epoch: usize, score: f64) -> StopDecision {
        let improved = score.is_finite() && self.best.is_none_or(|(_, b)| score < b);
        if improved {
            self.best = Some((epoch, score));
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        StopDecision {
            improved,
            stop: self.since_best >= self.patience,
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// One line of `log.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-window training loss.
    pub train_loss: f64,
    pub val: MetricsReport,
    pub improved: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_bcs: f64,
    /// Model holding the best parameters.
    pub model: PeakFocus,
    pub test: MetricsReport,
}

/// Labelled train/validation/test frames.
#[derive(Clone, Debug)]
pub struct Datasets {
    pub train: SeriesFrame,
    pub val: SeriesFrame,
    pub test: SeriesFrame,
}

pub const LOG_FILE: &str = "log.jsonl";
pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const TEST_METRICS_FILE: &str = "test_metrics.json";
pub const CONFIG_FILE: &str = "config.json";

/// Mask weights used as training targets for `w`.
pub fn training_mask(w: &WindowSample, ablation: Ablation) -> Result<Vec<f64>> {
    if ablation.hard_mask {
        Ok(harden_mask(&SoftMask::from_weights(w.soft_mask.clone())?).into_weights())
    } else {
        Ok(w.soft_mask.clone())
    }
}

/// Records the forward pass and loss for one window on `g`.
pub fn window_loss(
    model: &PeakFocus,
    g: &mut Graph,
    bound: &crate::model::Bound<'_>,
    w: &WindowSample,
    weights: &LossWeights,
    space: LossSpace,
    train: bool,
) -> Result<Var> {
    let fv = model.forward(g, bound, &ModelInput::from(w), train)?;
    let mask = g.input(Tensor::column(training_mask(w, model.ablation())?));
    let (pred, truth) = match space {
        LossSpace::Normalized => {
            let t = w.future_y.iter().map(|&y| fv.revin.normalize(y)).collect();
            (fv.y_norm, g.input(Tensor::column(t)))
        }
        LossSpace::Raw => (fv.y_intensity, g.input(Tensor::column(w.future_y.clone()))),
    };
    triple_loss(g, pred, truth, fv.peak_prob, mask, weights)
}

/// Runs the model over every window of `frame` and aggregates metrics.
/// `sink` sees each window with its prediction, in window order.
pub fn evaluate_frame(
    model: &PeakFocus,
    frame: &SeriesFrame,
    stride: usize,
    mask: MaskParams,
    params: &EvalParams,
    mut sink: impl FnMut(usize, &WindowSample, &ForwardOutput) -> Result<()>,
) -> Result<MetricsReport> {
    params.validate()?;
    let c = model.config();
    let mut acc = MetricsAccumulator::new();
    for (k, w) in window_samples(frame, c.input_len, c.horizon, stride, mask)?.enumerate() {
        let out = model.predict(&ModelInput::from(&w))?;
        let true_norm: Vec<f64> = w.future_y.iter().map(|&y| out.revin.normalize(y)).collect();
        let truth = PeakSet::from_sorted(w.future_peak_indices.clone())?;
        acc.add_window(
            &WindowEval {
                probs: &out.y_peak_prob,
                pred_norm: &out.y_norm,
                true_norm: &true_norm,
                pred_raw: &out.y_intensity,
                true_raw: &w.future_y,
                true_peaks: &truth,
            },
            params,
        )?;
        sink(k, &w, &out)?;
    }
    Ok(acc.report(params))
}

/// Convenience wrapper without a sink.
pub fn evaluate(model: &PeakFocus, frame: &SeriesFrame, stride: usize, mask: MaskParams, params: &EvalParams) -> Result<MetricsReport> {
    evaluate_frame(model, frame, stride, mask, params, |_, _, _| Ok(()))
}

/// Gradient of the mean loss over `batch` windows, and that mean.
pub fn batch_gradient(
    model: &PeakFocus,
    windows: &[WindowSample],
    weights: &LossWeights,
    space: LossSpace,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Vec<f64>>, f64)> {
    let mut grads: Vec<Vec<f64>> = model.params().iter().map(|(_, t)| vec![0.0; t.len()]).collect();
    let mut total = 0.0;
    let inv = 1.0 / windows.len() as f64;
    for w in windows {
        let mut g = Graph::with_rng(rng.clone());
        let bound = model.bind(&mut g, true);
        let loss = window_loss(model, &mut g, &bound, w, weights, space, true)?;
        let lv = g.value(loss).item()?;
        if !lv.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {lv} on window starting at {}", w.start)));
        }
        total += lv;
        g.backward(loss)?;
        for (i, acc) in grads.iter_mut().enumerate() {
            if let Some(gr) = g.grad(bound.var_at(i)) {
                for (a, b) in acc.iter_mut().zip(gr) {
                    *a += inv * b;
                }
            }
        }
        drop(bound);
        *rng = g.into_rng().expect("graph was built with an rng");
    }
    Ok((grads, total * inv))
}

fn write_json_line(f: &mut impl Write, log: &EpochLog, path: &Path) -> Result<()> {
    let line = serde_json::to_string(log)?;
    writeln!(f, "{line}").and_then(|_| f.flush()).map_err(|e| Error::io(path, e))
}

/// Trains a fresh model. With `run_dir`, writes `log.jsonl`, `best.ckpt`
/// (plus manifest) and `test_metrics.json` there. `progress` sees every
/// epoch as it completes.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    mask: MaskParams,
    eval: &EvalParams,
    data: &Datasets,
    run_dir: Option<&Path>,
    mut progress: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    eval.validate()?;
    let (t, h) = (model_cfg.input_len, model_cfg.horizon);
    let train_iter = window_samples(&data.train, t, h, cfg.stride, mask)?;
    let n_train = train_iter.len();
    // Fail early if validation or test cannot produce a window.
    window_samples(&data.val, t, h, cfg.eval_stride, mask)?;
    window_samples(&data.test, t, h, cfg.eval_stride, mask)?;

    let mut model = PeakFocus::new(model_cfg.clone(), cfg.ablation, cfg.seed)?;
    let mut adam = Adam::new(model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let weights = cfg.effective_loss_weights();

    let mut log_file = match run_dir {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            let p = d.join(LOG_FILE);
            Some((BufWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?), p))
        }
        None => None,
    };
    let ckpt: Option<PathBuf> = run_dir.map(|d| d.join(CHECKPOINT_FILE));

    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params: ParamStore = model.params().clone();
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..n_train).collect();
    for epoch in 1..=cfg.epochs {
        let lr = lr_schedule(epoch, cfg.lr, cfg.warmup_epochs, cfg.decay, cfg.linear_warmup)?;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let windows: Vec<WindowSample> = chunk
                .iter()
                .map(|&k| train_iter.sample(k).expect("index below window count"))
                .collect();
            let (grads, mean) = batch_gradient(&model, &windows, &weights, cfg.loss_space, &mut rng)?;
            loss_sum += mean * windows.len() as f64;
            adam.step(model.params_mut(), &grads, lr)?;
        }
        let val = evaluate(&model, &data.val, cfg.eval_stride, mask, eval)?;
        let decision = stopper.observe(epoch, val.bcs);
        if decision.improved {
            best_params = model.params().clone();
            if let Some(p) = &ckpt {
                best_params.save(p)?;
            }
        }
        let entry = EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / n_train as f64,
            val,
            improved: decision.improved,
        };
        if let Some((f, p)) = log_file.as_mut() {
            write_json_line(f, &entry, p)?;
        }
        progress(&entry);
        log.push(entry);
        if decision.stop {
            break;
        }
    }

    let (best_epoch, best_val_bcs) = stopper
        .best()
        .ok_or_else(|| Error::Numeric("validation BCS was never finite".into()))?;
    let model = PeakFocus::from_params(model_cfg.clone(), cfg.ablation, best_params)?;
    let test = evaluate(&model, &data.test, cfg.eval_stride, mask, eval)?;
    if let Some(d) = run_dir {
        let p = d.join(TEST_METRICS_FILE);
        std::fs::write(&p, test.to_json_pretty() + "\n").map_err(|e| Error::io(&p, e))?;
    }
    Ok(TrainOutcome {
        log,
        best_epoch,
        best_val_bcs,
        model,
        test,
    })
}
