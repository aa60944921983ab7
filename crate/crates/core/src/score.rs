//! Scoring externally produced forecasts with the event-level protocol.
//!
//! Predictions are long-format CSV, `window_id,index,intensity,peak_prob`.
//! Window `k` covers truth rows `history + k * stride .. + H`, where `H` is
//! the number of indices per window. With `history > 0` the normalized
//! metrics use the statistics of the `history` rows before each window;
//! otherwise normalized and raw values coincide.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{EvalParams, MetricsAccumulator, MetricsReport, WindowEval};
use crate::model::{revin_normalize, RevinState};
use crate::peaks::PeakSet;
use crate::series::SeriesFrame;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub window_id: usize,
    pub index: usize,
    pub intensity: f64,
    pub peak_prob: f64,
}

/// One window's forecast, indices `0..H`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowForecast {
    pub intensity: Vec<f64>,
    pub peak_prob: Vec<f64>,
}

pub fn read_predictions<R: Read>(reader: R) -> Result<Vec<PredictionRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?.clone();
    let want = ["window_id", "index", "intensity", "peak_prob"];
    if headers.iter().collect::<Vec<_>>() != want {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}, got {}", want.join(","), headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<PredictionRow>().enumerate() {
        let row = rec.map_err(|e| Error::Parse {
            line: i as u64 + 2,
            message: e.to_string(),
        })?;
        if !row.intensity.is_finite() || !(0.0..=1.0).contains(&row.peak_prob) {
            return Err(Error::Parse {
                line: i as u64 + 2,
                message: "intensity must be finite and peak_prob in [0, 1]".into(),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRow>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_predictions(std::io::BufReader::new(f))
}

/// Writes the header and every row of `windows` (window ids are positions).
pub fn write_predictions<W: Write>(writer: W, windows: &[WindowForecast]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    let ser = |e: csv::Error| Error::Invalid(format!("cannot write predictions: {e}"));
    w.write_record(["window_id", "index", "intensity", "peak_prob"]).map_err(ser)?;
    for (k, f) in windows.iter().enumerate() {
        for (i, (&y, &p)) in f.intensity.iter().zip(&f.peak_prob).enumerate() {
            w.serialize(PredictionRow {
                window_id: k,
                index: i,
                intensity: y,
                peak_prob: p,
            })
            .map_err(ser)?;
        }
    }
    w.flush().map_err(|e| Error::Invalid(format!("cannot write predictions: {e}")))
}

/// Groups rows by window, requiring ids `0..K` and indices `0..H` with one
/// common `H`.
pub fn group_predictions(rows: &[PredictionRow]) -> Result<Vec<WindowForecast>> {
    let mut by: BTreeMap<usize, BTreeMap<usize, (f64, f64)>> = BTreeMap::new();
    for r in rows {
        if by.entry(r.window_id).or_default().insert(r.index, (r.intensity, r.peak_prob)).is_some() {
            return Err(Error::Structure(format!("duplicate row for window {} index {}", r.window_id, r.index)));
        }
    }
    let mut out = Vec::with_capacity(by.len());
    let mut horizon = None;
    for (expect, (k, idx)) in by.into_iter().enumerate() {
        if k != expect {
            return Err(Error::Structure(format!("window ids must be 0..K; window {expect} is missing")));
        }
        let h = idx.len();
        if *horizon.get_or_insert(h) != h {
            return Err(Error::Structure(format!("window {k} has {h} indices, earlier windows have {}", horizon.unwrap())));
        }
        if idx.keys().last() != Some(&(h - 1)) {
            return Err(Error::Structure(format!("window {k} indices are not 0..{h}")));
        }
        let (intensity, peak_prob) = idx.into_values().unzip();
        out.push(WindowForecast { intensity, peak_prob });
    }
    Ok(out)
}

/// Placement of forecast windows on the truth series.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Alignment {
    pub history: usize,
    /// Defaults to the horizon.
    pub stride: Option<usize>,
}

pub fn score_forecasts(
    windows: &[WindowForecast],
    truth: &SeriesFrame,
    align: Alignment,
    params: &EvalParams,
    revin_eps: f64,
) -> Result<MetricsReport> {
    params.validate()?;
    let flags = truth
        .peak_flags()
        .ok_or_else(|| Error::Invalid("truth series needs a peak column".into()))?;
    let h = windows.first().map_or(0, |w| w.intensity.len());
    let stride = align.stride.unwrap_or(h);
    if stride == 0 {
        return Err(Error::Invalid("stride must be positive".into()));
    }
    let mut acc = MetricsAccumulator::new();
    for (k, w) in windows.iter().enumerate() {
        let lo = align.history + k * stride;
        let hi = lo + h;
        if hi > truth.len() {
            return Err(Error::Bounds(format!(
                "window {k} needs truth rows {lo}..{hi} but the series has {}",
                truth.len()
            )));
        }
        let true_raw = &truth.values()[lo..hi];
        let st = if align.history > 0 {
            revin_normalize(&truth.values()[lo - align.history..lo], revin_eps).1
        } else {
            RevinState { mean: 0.0, std: 1.0 }
        };
        let norm = |v: &[f64]| v.iter().map(|&x| st.normalize(x)).collect::<Vec<_>>();
        let peaks: Vec<usize> = (lo..hi).filter(|&i| flags[i] == 1).map(|i| i - lo).collect();
        let truth_peaks = PeakSet::from_sorted(peaks)?;
        acc.add_window(
            &WindowEval {
                probs: &w.peak_prob,
                pred_norm: &norm(&w.intensity),
                true_norm: &norm(true_raw),
                pred_raw: &w.intensity,
                true_raw,
                true_peaks: &truth_peaks,
            },
            params,
        )?;
    }
    Ok(acc.report(params))
}
