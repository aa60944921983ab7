use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use peakfocus::config::{load_run, run_training, RunConfig};
use peakfocus::eval::{EvalParams, MetricsReport};
use peakfocus::mask::{harden_mask, MaskParams, SoftMask};
use peakfocus::model::{ModelInput, PeakFocus};
use peakfocus::peaks::{annotate_frame, DetectorParams};
use peakfocus::score::{group_predictions, load_predictions, score_forecasts, write_predictions, Alignment, WindowForecast};
use peakfocus::series::{load_csv, synth_series, window_samples, write_csv, SeriesFrame, SynthParams, TimestampStyle};
use peakfocus::train::evaluate_frame;

#[derive(Parser)]
#[command(name = "peakfocus", version, about = "Peak-aware electricity load forecasting")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic hourly load series.
    Synth(SynthArgs),
    /// Label peaks with the hysteresis detector and add a `peak` column.
    DetectPeaks(DetectArgs),
    /// Write per-window soft masks as `window_id,index,mask`.
    MakeMasks(MaskArgs),
    /// Train a model from a JSON run configuration.
    Train(TrainArgs),
    /// Score a trained run on its test split or another series.
    Evaluate(EvaluateArgs),
    /// Score external predictions against a labelled series.
    Score(ScoreArgs),
    /// Export one window's forecast, peak probabilities, attention maps and locator state.
    ExportAttn(ExportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// JSON file overriding the profile parameters.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Write integer epoch-hours instead of ISO timestamps.
    #[arg(long)]
    epoch_hours: bool,
}

#[derive(Args)]
struct DetectArgs {
    input: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    eta: f64,
    #[arg(long, default_value_t = 3)]
    lookahead: usize,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MaskArgs {
    input: PathBuf,
    #[arg(long)]
    horizon: usize,
    #[arg(long, default_value_t = 0)]
    history: usize,
    /// Defaults to the horizon.
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 1)]
    delta: usize,
    /// Binary masks.
    #[arg(long)]
    hard: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// One of no_msm_pl, no_lad, no_upap, hard_mask; repeatable.
    #[arg(long)]
    ablation: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct EvalOverrides {
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    delta: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
}

impl EvalOverrides {
    fn apply(&self, mut p: EvalParams) -> EvalParams {
        p.tau = self.tau.unwrap_or(p.tau);
        p.delta = self.delta.unwrap_or(p.delta);
        p.alpha = self.alpha.unwrap_or(p.alpha);
        p.epsilon = self.epsilon.unwrap_or(p.epsilon);
        p
    }
}

#[derive(Args)]
struct EvaluateArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    /// Evaluate every window of this CSV instead of the test split.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    stride: Option<usize>,
    #[command(flatten)]
    eval: EvalOverrides,
    /// Metrics JSON path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the forecasts in the `score` input format.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    predictions: PathBuf,
    /// Labelled series (`timestamp,value,peak`).
    #[arg(long)]
    truth: PathBuf,
    /// Rows of context before the first window.
    #[arg(long, default_value_t = 0)]
    history: usize,
    /// Rows between window starts; defaults to the horizon.
    #[arg(long)]
    stride: Option<usize>,
    #[command(flatten)]
    eval: EvalOverrides,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    run: PathBuf,
    /// Window index within the dataset.
    #[arg(long)]
    sample: usize,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Synth(a) => synth(a),
        Cmd::DetectPeaks(a) => detect(a),
        Cmd::MakeMasks(a) => make_masks(a),
        Cmd::Train(a) => train(a),
        Cmd::Evaluate(a) => evaluate(a),
        Cmd::Score(a) => score(a),
        Cmd::ExportAttn(a) => export_attn(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("peakfocus: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn emit_json(report: &MetricsReport, out: Option<&Path>) -> Result<()> {
    let json = report.to_json_pretty() + "\n";
    match out {
        Some(p) => write_text(p, &json),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let params: SynthParams = match &a.params {
        Some(p) => {
            let s = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            serde_json::from_str(&s).with_context(|| format!("invalid parameters in {}", p.display()))?
        }
        None => SynthParams::default(),
    };
    let mut frame = synth_series(a.n as usize, a.seed, &params)?;
    if a.epoch_hours {
        frame = frame.with_style(TimestampStyle::EpochHours);
    }
    write_csv(&frame, &a.out)?;
    let v = frame.values();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    println!("wrote {} rows to {} (seed {}): mean {mean:.4}, min {lo:.4}, max {hi:.4}", v.len(), a.out.display(), a.seed);
    Ok(())
}

fn detect(a: DetectArgs) -> Result<()> {
    let frame = load_csv(&a.input)?;
    let params = DetectorParams {
        eta: a.eta,
        lookahead: a.lookahead,
    };
    let labelled = annotate_frame(&frame, params)?;
    let count = labelled.peak_positions().len();
    let ratio = labelled.peak_ratio().unwrap_or(0.0);
    let summary = format!("{count} peaks in {} rows (ratio {ratio:.4})", labelled.len());
    match &a.out {
        Some(p) => {
            write_csv(&labelled, p)?;
            println!("{summary}");
        }
        None => {
            print!("{}", peakfocus::series::to_csv_string(&labelled));
            eprintln!("{summary}");
        }
    }
    Ok(())
}

fn labelled(frame: SeriesFrame, detector: DetectorParams) -> Result<SeriesFrame> {
    Ok(if frame.peak_flags().is_some() {
        frame
    } else {
        annotate_frame(&frame, detector)?
    })
}

fn make_masks(a: MaskArgs) -> Result<()> {
    let frame = labelled(load_csv(&a.input)?, DetectorParams::default())?;
    if a.horizon == 0 {
        bail!("--horizon must be positive");
    }
    let params = MaskParams {
        gamma: a.gamma,
        delta: a.delta,
    };
    let stride = a.stride.unwrap_or(a.horizon);
    let flags = frame.peak_flags().expect("labelled");
    let mut out = String::from("window_id,index,mask\n");
    let mut k = 0;
    let mut lo = a.history;
    while lo + a.horizon <= frame.len() {
        let peaks: Vec<usize> = (0..a.horizon).filter(|&i| flags[lo + i] == 1).collect();
        let mut m = peakfocus::mask::build_soft_mask(&peaks, params, a.horizon)?;
        if a.hard {
            m = harden_mask(&m);
        }
        for (i, w) in m.weights().iter().enumerate() {
            writeln!(out, "{k},{i},{w}").expect("string write");
        }
        k += 1;
        lo += stride;
    }
    write_text(&a.out, &out)?;
    println!("wrote {k} windows of {} steps to {}", a.horizon, a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    for name in &a.ablation {
        cfg.train.ablation.enable(name)?;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    let started = std::time::Instant::now();
    let outcome = run_training(&cfg, &a.out, |e| {
        eprintln!(
            "epoch {:>2}  lr {:.3e}  loss {:.5}  val f1 {:.4}  bcs {:.4}{}  [{:.0}s]",
            e.epoch,
            e.lr,
            e.train_loss,
            e.val.f1,
            e.val.bcs,
            if e.improved { "  *" } else { "" },
            started.elapsed().as_secs_f64()
        );
    })?;
    println!(
        "best epoch {} (val bcs {:.4}); test f1 {:.4}, bcs {:.4}; artifacts in {}",
        outcome.best_epoch,
        outcome.best_val_bcs,
        outcome.test.f1,
        outcome.test.bcs,
        a.out.display()
    );
    Ok(())
}

/// The frame to run on: `data` if given, else the test split of the run.
fn target_frame(cfg: &RunConfig, data: Option<&Path>) -> Result<SeriesFrame> {
    match data {
        Some(p) => labelled(load_csv(p)?, cfg.detector),
        None => Ok(cfg.datasets()?.test),
    }
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let (cfg, model) = load_run(&a.run)?;
    let frame = target_frame(&cfg, a.data.as_deref())?;
    let params = a.eval.apply(cfg.eval_params());
    let stride = a.stride.unwrap_or(cfg.train.eval_stride);
    let mut forecasts = Vec::new();
    let keep = a.predictions.is_some();
    let report = evaluate_frame(&model, &frame, stride, cfg.mask_params(), &params, |_, _, out| {
        if keep {
            forecasts.push(WindowForecast {
                intensity: out.y_intensity.clone(),
                peak_prob: out.y_peak_prob.clone(),
            });
        }
        Ok(())
    })?;
    if let Some(p) = &a.predictions {
        let f = fs::File::create(p).with_context(|| format!("cannot write {}", p.display()))?;
        write_predictions(std::io::BufWriter::new(f), &forecasts)?;
    }
    emit_json(&report, a.out.as_deref())
}

fn score(a: ScoreArgs) -> Result<()> {
    let rows = load_predictions(&a.predictions)?;
    let windows = group_predictions(&rows)?;
    let truth = load_csv(&a.truth)?;
    let params = a.eval.apply(EvalParams::default());
    let align = Alignment {
        history: a.history,
        stride: a.stride,
    };
    let report = score_forecasts(&windows, &truth, align, &params, peakfocus::model::ModelConfig::default().revin_eps)?;
    emit_json(&report, a.out.as_deref())
}

fn matrix_csv(rows: usize, cols: usize, at: impl Fn(usize, usize) -> f64, header: &str) -> String {
    let mut s = String::with_capacity(rows * cols * 12);
    s.push_str(header);
    for c in 0..cols {
        write!(s, ",{c}").expect("string write");
    }
    s.push('\n');
    for r in 0..rows {
        write!(s, "{r}").expect("string write");
        for c in 0..cols {
            write!(s, ",{}", at(r, c)).expect("string write");
        }
        s.push('\n');
    }
    s
}

fn export_attn(a: ExportArgs) -> Result<()> {
    let (cfg, model): (RunConfig, PeakFocus) = load_run(&a.run)?;
    let frame = target_frame(&cfg, a.data.as_deref())?;
    let stride = a.stride.unwrap_or(cfg.train.eval_stride);
    let c = model.config();
    let iter = window_samples(&frame, c.input_len, c.horizon, stride, cfg.mask_params())?;
    let n = iter.len();
    let Some(w) = iter.sample(a.sample) else {
        bail!("sample {} out of range; the dataset has {n} windows", a.sample);
    };
    let out = model.predict(&ModelInput::from(&w))?;
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;

    let mut s = String::from("offset,observed,forecast\n");
    for (i, v) in w.history_x.iter().enumerate() {
        writeln!(s, "{},{v},", i as i64 - c.input_len as i64).expect("string write");
    }
    for (i, (v, f)) in w.future_y.iter().zip(&out.y_intensity).enumerate() {
        writeln!(s, "{i},{v},{f}").expect("string write");
    }
    write_text(&a.out.join("forecast.csv"), &s)?;

    let mask = SoftMask::from_weights(w.soft_mask.clone())?;
    let mut s = String::from("index,peak_prob,true_peak,soft_mask\n");
    for (i, p) in out.y_peak_prob.iter().enumerate() {
        let t = u8::from(w.future_peak_indices.binary_search(&i).is_ok());
        writeln!(s, "{i},{p},{t},{}", mask.weights()[i]).expect("string write");
    }
    write_text(&a.out.join("peak_prob.csv"), &s)?;

    for (h, m) in out.attention.iter().enumerate() {
        let (r, cc) = m.dims2()?;
        write_text(&a.out.join(format!("attention_head{h}.csv")), &matrix_csv(r, cc, |i, j| m.at2(i, j), "query"))?;
    }
    let (r, cc) = out.h_pl.dims2()?;
    write_text(&a.out.join("locator_state.csv"), &matrix_csv(r, cc, |i, j| out.h_pl.at2(i, j), "step"))?;
    let meta = serde_json::json!({
        "sample": a.sample,
        "start": w.start,
        "windows": n,
        "heads": out.attention.len(),
        "horizon": c.horizon,
        "revin": out.revin,
    });
    write_text(&a.out.join("meta.json"), &(serde_json::to_string_pretty(&meta)? + "\n"))?;
    println!("exported sample {} of {n} to {}", a.sample, a.out.display());
    Ok(())
}
