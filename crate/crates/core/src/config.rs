//! The single JSON run configuration and the data preparation it drives.
//!
//! ```json
//! {
//!   "model":    { "input_len": 168, "horizon": 336, "d_model": 256, ... },
//!   "train":    { "epochs": 20, "batch": 128, "lr": 0.001, ... },
//!   "detector": { "eta": 0.0, "lookahead": 3 },
//!   "mask":     { "gamma": 1.0 },
//!   "eval":     { "tau": 0.4, "alpha": 0.5, "epsilon": 0.01 },
//!   "delta": 1,
//!   "split":    { "train_fraction": 0.7, "val_fraction": 0.1, "test_fraction": 0.2 },
//!   "data":     { "synth": { "n": 20000, "seed": 7 } }
//! }
//! ```
//!
//! `delta` is shared by mask truncation and match tolerance.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalParams;
use crate::mask::MaskParams;
use crate::model::{ModelConfig, ParamStore, PeakFocus};
use crate::peaks::{annotate_frame, DetectorParams};
use crate::series::{chronological_split, load_csv, synth_series, SeriesFrame, SplitSpec, SynthParams};
use crate::train::{self, Datasets, EpochLog, TrainConfig, TrainOutcome, CHECKPOINT_FILE, CONFIG_FILE};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskSection {
    pub gamma: f64,
}

impl Default for MaskSection {
    fn default() -> Self {
        MaskSection {
            gamma: MaskParams::default().gamma,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub tau: f64,
    pub alpha: f64,
    pub epsilon: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalParams::default();
        EvalSection {
            tau: e.tau,
            alpha: e.alpha,
            epsilon: e.epsilon,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// `timestamp,value[,peak]` file; peaks are detected when the column is absent.
    Csv { path: PathBuf },
    Synth {
        n: usize,
        seed: u64,
        #[serde(default)]
        params: SynthParams,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synth {
            n: 20_000,
            seed: 7,
            params: SynthParams::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub detector: DetectorParams,
    pub mask: MaskSection,
    pub eval: EvalSection,
    /// Peak tolerance in steps.
    pub delta: usize,
    pub split: SplitSpec,
    pub data: DataSource,
}

impl RunConfig {
    pub fn mask_params(&self) -> MaskParams {
        MaskParams {
            gamma: self.mask.gamma,
            delta: self.delta,
        }
    }

    pub fn eval_params(&self) -> EvalParams {
        EvalParams {
            tau: self.eval.tau,
            delta: self.delta,
            alpha: self.eval.alpha,
            epsilon: self.eval.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.detector.validate()?;
        self.mask_params().validate()?;
        self.eval_params().validate()?;
        self.split.validate()?;
        if let DataSource::Synth { n, params, .. } = &self.data {
            if *n == 0 {
                return Err(Error::Config("data.synth.n must be positive".into()));
            }
            params.validate()?;
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    /// The labelled series named by `data`.
    pub fn load_series(&self) -> Result<SeriesFrame> {
        let frame = match &self.data {
            DataSource::Csv { path } => load_csv(path)?,
            DataSource::Synth { n, seed, params } => synth_series(*n, *seed, params)?,
        };
        if frame.peak_flags().is_some() {
            Ok(frame)
        } else {
            annotate_frame(&frame, self.detector)
        }
    }

    /// Chronological train/validation/test frames, each long enough for one window.
    pub fn datasets(&self) -> Result<Datasets> {
        let frame = self.load_series()?;
        let (train, val, test) = chronological_split(&frame, &self.split, self.model.input_len + self.model.horizon)?;
        Ok(Datasets { train, val, test })
    }
}

/// Trains per `cfg` into `out_dir`, which receives `config.json` and the
/// artifacts written by [`train::train`].
pub fn run_training(cfg: &RunConfig, out_dir: &Path, progress: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = cfg.datasets()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let p = out_dir.join(CONFIG_FILE);
    std::fs::write(&p, cfg.to_json_pretty() + "\n").map_err(|e| Error::io(&p, e))?;
    train::train(
        &cfg.model,
        &cfg.train,
        cfg.mask_params(),
        &cfg.eval_params(),
        &data,
        Some(out_dir),
        progress,
    )
}

/// Reloads the configuration and best checkpoint of a finished run.
pub fn load_run(run_dir: &Path) -> Result<(RunConfig, PeakFocus)> {
    let cfg = RunConfig::load(run_dir.join(CONFIG_FILE))?;
    let params = ParamStore::load(run_dir.join(CHECKPOINT_FILE))?;
    let model = PeakFocus::from_params(cfg.model.clone(), cfg.train.ablation, params)?;
    Ok((cfg, model))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let back = RunConfig::from_json(&c.to_json_pretty()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.mask_params().delta, back.eval_params().delta);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::from_json(r#"{"train": {"epochz": 3}}"#).unwrap_err();
        assert!(err.to_string().contains("epochz"), "{err}");
        let err = RunConfig::from_json(r#"{"model": {"d_model": 8}, "extra": 1}"#).unwrap_err();
        assert!(err.to_string().contains("extra"), "{err}");
    }

    #[test]
    fn partial_sections_fill_defaults() {
        let c = RunConfig::from_json(
            r#"{"model": {"input_len": 24, "horizon": 12, "d_model": 16, "d_ff": 16, "n_heads": 2,
                "pyramid_depth": 1, "pool_specs": [{"kernel": 3, "stride": 2}]},
                "data": {"synth": {"n": 2000, "seed": 1}}, "delta": 2}"#,
        )
        .unwrap();
        assert_eq!(c.train.epochs, 20);
        assert_eq!(c.eval_params().delta, 2);
        assert_eq!(c.model.label_len(), 6);
        let d = c.datasets().unwrap();
        assert_eq!(d.train.len() + d.val.len() + d.test.len(), 2000);
        assert!(d.train.peak_flags().is_some());
    }

    #[test]
    fn invalid_component_is_rejected() {
        assert!(RunConfig::from_json(r#"{"model": {"n_heads": 3}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"data": {"synth": {"n": 0, "seed": 1}}}"#).is_err());
    }
}
