//! Ground-truth peak labeling with a lookahead/delta hysteresis detector.
//!
//! The automaton tracks a running maximum `mx` and running minimum `mn`.
//! A maximum is confirmed at step `i` when `y[i] < mx - eta` and every value
//! in `y[i..i + lookahead]` is strictly below `mx`; a minimum is confirmed
//! symmetrically. Confirming one kind of extremum resets both trackers so
//! the search alternates. Edge semantics:
//!
//! * Only steps `0..len - lookahead` are scanned, so a maximum whose drop
//!   happens inside the final `lookahead` samples is never confirmed.
//! * The very first confirmed extremum (maximum or minimum) is discarded.
//! * Peaks are reported only when at least one maximum and one minimum
//!   survive that discard; otherwise the result is empty.
//! * On a plateau the first index wins (`y > mx` is strict), and an equal
//!   value inside the lookahead blocks confirmation (`max < mx` is strict).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::SeriesFrame;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorParams {
    /// Minimum drop (and rise) that confirms an extremum.
    pub eta: f64,
    pub lookahead: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams { eta: 0.0, lookahead: 3 }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::Invalid(format!("eta must be finite and >= 0, got {}", self.eta)));
        }
        if self.lookahead < 1 {
            return Err(Error::Invalid("lookahead must be at least 1".into()));
        }
        Ok(())
    }
}

/// Strictly increasing positions into a series.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PeakSet(Vec<usize>);

impl PeakSet {
    pub fn new() -> Self {
        PeakSet(Vec::new())
    }

    /// Sorts and deduplicates `indices`.
    pub fn from_unsorted(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        PeakSet(indices)
    }

    pub fn from_sorted(indices: Vec<usize>) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("peak indices must be strictly increasing".into()));
        }
        Ok(PeakSet(indices))
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn is_subset(&self, other: &PeakSet) -> bool {
        self.0.iter().all(|&i| other.contains(i))
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }
}

impl From<PeakSet> for Vec<usize> {
    fn from(p: PeakSet) -> Self {
        p.0
    }
}

/// Confirmed extrema in the order the automaton found them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExtremaTrace {
    pub maxima: Vec<usize>,
    pub minima: Vec<usize>,
    /// `Some(true)` when the first confirmation was a maximum.
    pub first_is_max: Option<bool>,
}

/// Runs the two-state automaton without any post-processing.
pub fn trace_extrema(values: &[f64], params: DetectorParams) -> ExtremaTrace {
    let n = values.len();
    let la = params.lookahead;
    let eta = params.eta;
    let mut out = ExtremaTrace::default();
    let (mut mn, mut mx) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut mn_pos, mut mx_pos) = (0usize, 0usize);
    for i in 0..n.saturating_sub(la) {
        let y = values[i];
        if y > mx {
            mx = y;
            mx_pos = i;
        }
        if y < mn {
            mn = y;
            mn_pos = i;
        }
        let ahead = &values[i..i + la];
        if y < mx - eta && mx != f64::INFINITY && ahead.iter().all(|&v| v < mx) {
            out.maxima.push(mx_pos);
            out.first_is_max.get_or_insert(true);
            mx = f64::INFINITY;
            mn = f64::INFINITY;
            continue;
        }
        if y > mn + eta && mn != f64::NEG_INFINITY && ahead.iter().all(|&v| v > mn) {
            out.minima.push(mn_pos);
            out.first_is_max.get_or_insert(false);
            mn = f64::NEG_INFINITY;
            mx = f64::NEG_INFINITY;
        }
    }
    out
}

/// Peak positions of `values` under `params`.
pub fn detect_peaks(values: &[f64], params: DetectorParams) -> Result<PeakSet> {
    params.validate()?;
    if values.len() < 2 {
        return Err(Error::Sizing(format!(
            "peak detection needs at least 2 values, got {}",
            values.len()
        )));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite value at position {i}")));
    }
    let mut t = trace_extrema(values, params);
    match t.first_is_max {
        Some(true) => {
            t.maxima.remove(0);
        }
        Some(false) => {
            t.minima.remove(0);
        }
        None => {}
    }
    if t.maxima.is_empty() || t.minima.is_empty() {
        return Ok(PeakSet::new());
    }
    // Maxima positions are strictly increasing: each confirmation resets mx.
    PeakSet::from_sorted(t.maxima)
}

/// Returns `frame` with its peak flags replaced by the detector output.
pub fn annotate_frame(frame: &SeriesFrame, params: DetectorParams) -> Result<SeriesFrame> {
    let peaks = detect_peaks(frame.values(), params)?;
    let mut flags = vec![0u8; frame.len()];
    for &i in peaks.indices() {
        flags[i] = 1;
    }
    frame.clone().with_peak_flags(flags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::{synth_series, EpochHour, SynthParams};

    fn p(eta: f64, lookahead: usize) -> DetectorParams {
        DetectorParams { eta, lookahead }
    }

    fn peaks(values: &[f64], eta: f64, la: usize) -> Vec<usize> {
        detect_peaks(values, p(eta, la)).unwrap().into_vec()
    }

    #[test]
    fn sizing_errors() {
        assert!(matches!(detect_peaks(&[], p(0.0, 1)), Err(Error::Sizing(_))));
        assert!(matches!(detect_peaks(&[1.0], p(0.0, 1)), Err(Error::Sizing(_))));
        assert!(matches!(detect_peaks(&[1.0, 2.0], p(0.0, 0)), Err(Error::Invalid(_))));
        assert!(matches!(detect_peaks(&[1.0, 2.0], p(-1.0, 1)), Err(Error::Invalid(_))));
    }

    #[test]
    fn first_confirmation_is_discarded() {
        // The lone spike is the first confirmed extremum.
        let t = trace_extrema(&[0.0, 5.0, 0.0, 0.0, 0.0], p(1.0, 2));
        assert_eq!(t.maxima, vec![1]);
        assert!(peaks(&[0.0, 5.0, 0.0, 0.0, 0.0], 1.0, 2).is_empty());
        // Preceded by a confirmed valley and followed by another, it survives.
        let v = [4.0, 0.0, 0.0, 2.0, 5.0, 1.0, 0.0, 2.0, 0.0, 0.0];
        let t = trace_extrema(&v, p(1.0, 1));
        assert_eq!(t.first_is_max, Some(true));
        assert_eq!((t.maxima.clone(), t.minima.clone()), (vec![0, 4], vec![2, 6]));
        assert_eq!(peaks(&v, 1.0, 1), vec![4]);
        // A maximum right after a confirmed maximum is masked until a valley confirms.
        let v = [4.0, 0.0, 0.0, 5.0, 0.0, 0.0, 3.0, 3.0];
        assert_eq!(trace_extrema(&v, p(1.0, 1)).maxima, vec![0]);
        assert!(peaks(&v, 1.0, 1).is_empty());
    }

    #[test]
    fn increasing_and_flat_have_no_peaks() {
        let inc: Vec<f64> = (0..20).map(f64::from).collect();
        assert!(peaks(&inc, 0.0, 1).is_empty());
        assert!(peaks(&[2.0; 10], 0.0, 3).is_empty());
    }

    #[test]
    fn daily_cycle_peaks_at_evening() {
        let v: Vec<f64> = (0..24 * 6)
            .map(|t| ((t as f64 - 19.0) * std::f64::consts::TAU / 24.0).cos())
            .collect();
        let got = peaks(&v, 0.5, 3);
        assert_eq!(got, vec![19, 43, 67, 91, 115]);
    }

    #[test]
    fn annotate_sets_flags() {
        let f = synth_series(2000, 3, &SynthParams::default()).unwrap();
        let a = annotate_frame(&f, DetectorParams::default()).unwrap();
        let b = annotate_frame(&a, DetectorParams::default()).unwrap();
        assert_eq!(a, b);
        let pos = a.peak_positions();
        assert_eq!(pos, detect_peaks(f.values(), DetectorParams::default()).unwrap().into_vec());
        let flat = SeriesFrame::from_values(EpochHour(0), vec![1.0; 50]).unwrap();
        let flat = annotate_frame(&flat, DetectorParams::default()).unwrap();
        assert_eq!(flat.peak_ratio(), Some(0.0));
    }
}
