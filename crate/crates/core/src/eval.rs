//! Event-level evaluation: condense probabilities into discrete peaks, match
//! them one-to-one against the truth within a tolerance, and score timing,
//! intensity and their balance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::peaks::PeakSet;

pub mod oracle;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalParams {
    /// Probability threshold; positions with `p >= tau` form clusters.
    pub tau: f64,
    /// Matching tolerance in steps.
    pub delta: usize,
    /// Weight of the timing term in the balanced score.
    pub alpha: f64,
    pub epsilon: f64,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            tau: 0.4,
            delta: 1,
            alpha: 0.5,
            epsilon: 0.01,
        }
    }
}

impl EvalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Invalid(format!("tau must be in (0, 1), got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Invalid(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Invalid(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// One representative per maximal run of `probs[i] >= tau`: the run's
/// earliest argmax.
pub fn condense(probs: &[f64], tau: f64) -> PeakSet {
    let mut out = Vec::new();
    let mut best: Option<usize> = None;
    for (i, &p) in probs.iter().enumerate() {
        if p >= tau {
            match best {
                Some(b) if probs[b] >= p => {}
                _ => best = Some(i),
            }
        } else if let Some(b) = best.take() {
            out.push(b);
        }
    }
    out.extend(best);
    PeakSet::from_sorted(out).expect("runs are disjoint and ordered")
}

/// A matched `(true_index, pred_index)` pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MatchPair {
    pub truth: usize,
    pub pred: usize,
}

impl MatchPair {
    pub fn distance(&self) -> usize {
        self.truth.abs_diff(self.pred)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    /// Sorted by true index.
    pub matches: Vec<MatchPair>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub pred_peaks: PeakSet,
    pub true_peaks: PeakSet,
}

impl MatchReport {
    pub(crate) fn from_matches(mut matches: Vec<MatchPair>, pred: &PeakSet, truth: &PeakSet) -> Self {
        matches.sort();
        let tp = matches.len();
        MatchReport {
            tp,
            fp: pred.len() - tp,
            fn_: truth.len() - tp,
            matches,
            pred_peaks: pred.clone(),
            true_peaks: truth.clone(),
        }
    }

    pub fn total_distance(&self) -> usize {
        self.matches.iter().map(MatchPair::distance).sum()
    }
}

/// All pairs within `delta`, sorted by (distance, true index, pred index).
pub fn candidate_pairs(pred: &PeakSet, truth: &PeakSet, delta: usize) -> Vec<MatchPair> {
    let mut pairs = Vec::new();
    let p = pred.indices();
    for &t in truth.indices() {
        let lo = p.partition_point(|&x| x + delta < t);
        for &q in &p[lo..] {
            if q > t + delta {
                break;
            }
            pairs.push(MatchPair { truth: t, pred: q });
        }
    }
    pairs.sort_by_key(|m| (m.distance(), m.truth, m.pred));
    pairs
}

/// Greedy one-to-one matching in ascending distance order.
pub fn match_peaks(pred: &PeakSet, truth: &PeakSet, delta: usize) -> MatchReport {
    let mut used_t = std::collections::HashSet::new();
    let mut used_p = std::collections::HashSet::new();
    let mut matches = Vec::new();
    for m in candidate_pairs(pred, truth, delta) {
        if !used_t.contains(&m.truth) && !used_p.contains(&m.pred) {
            used_t.insert(m.truth);
            used_p.insert(m.pred);
            matches.push(m);
        }
    }
    MatchReport::from_matches(matches, pred, truth)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Ratios from micro-aggregated counts; every zero denominator yields 0.
pub fn timing_metrics(tp: usize, fp: usize, fn_: usize) -> TimingMetrics {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    TimingMetrics {
        precision,
        recall,
        f1,
    }
}

/// Squared and absolute errors at matched pairs: `(sum_sq, sum_abs)`.
pub fn matched_error_sums(matches: &[MatchPair], y_pred: &[f64], y_true: &[f64]) -> Result<(f64, f64)> {
    let mut sq = 0.0;
    let mut ab = 0.0;
    for m in matches {
        let (Some(p), Some(t)) = (y_pred.get(m.pred), y_true.get(m.truth)) else {
            return Err(Error::Bounds(format!(
                "match ({}, {}) outside series of length {}/{}",
                m.truth,
                m.pred,
                y_true.len(),
                y_pred.len()
            )));
        };
        let e = p - t;
        sq += e * e;
        ab += e.abs();
    }
    Ok((sq, ab))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityMetrics {
    pub tp_mse: f64,
    pub tp_mae: f64,
}

/// `None` when there are no matches.
pub fn intensity_metrics(matches: &[MatchPair], y_pred: &[f64], y_true: &[f64]) -> Result<Option<IntensityMetrics>> {
    if matches.is_empty() {
        return Ok(None);
    }
    let (sq, ab) = matched_error_sums(matches, y_pred, y_true)?;
    let n = matches.len() as f64;
    Ok(Some(IntensityMetrics {
        tp_mse: sq / n,
        tp_mae: ab / n,
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalancedMetrics {
    pub bcs: f64,
    pub pim: f64,
}

pub fn balanced_metrics(f1: f64, tp_mse: f64, alpha: f64, epsilon: f64) -> BalancedMetrics {
    BalancedMetrics {
        bcs: alpha * (1.0 - f1) + (1.0 - alpha) * (1.0 - 1.0 / (1.0 + tp_mse)),
        pim: (1.0 + tp_mse) / (f1 + epsilon),
    }
}

/// Balanced score when the intensity error is absent: the `tp_mse -> inf`
/// limit, so finding nothing is never rewarded.
pub fn bcs_without_matches(f1: f64, alpha: f64) -> f64 {
    alpha * (1.0 - f1) + (1.0 - alpha)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalMetrics {
    pub mse: f64,
    pub mae: f64,
    /// `None` for a constant target.
    pub r2: Option<f64>,
}

pub fn global_metrics(y_pred: &[f64], y_true: &[f64]) -> Result<GlobalMetrics> {
    if y_pred.len() != y_true.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            y_pred.len(),
            y_true.len()
        )));
    }
    if y_true.len() < 2 {
        return Err(Error::Sizing("global metrics need at least 2 points".into()));
    }
    let mut acc = GlobalAccumulator::default();
    acc.add(y_pred, y_true);
    Ok(acc.metrics().expect("non-empty"))
}

/// Mergeable sums for MSE/MAE/R^2 (Chan's pairwise variance update).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GlobalAccumulator {
    n: u64,
    sse: f64,
    sae: f64,
    mean: f64,
    m2: f64,
}

impl GlobalAccumulator {
    pub fn add(&mut self, y_pred: &[f64], y_true: &[f64]) {
        for (&p, &t) in y_pred.iter().zip(y_true) {
            let e = p - t;
            self.sse += e * e;
            self.sae += e.abs();
            self.n += 1;
            let d = t - self.mean;
            self.mean += d / self.n as f64;
            self.m2 += d * (t - self.mean);
        }
    }

    pub fn merge(&mut self, o: &GlobalAccumulator) {
        if o.n == 0 {
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.m2 += o.m2 + d * d * (self.n as f64) * (o.n as f64) / n as f64;
        self.mean += d * o.n as f64 / n as f64;
        self.sse += o.sse;
        self.sae += o.sae;
        self.n = n;
    }

    pub fn metrics(&self) -> Option<GlobalMetrics> {
        if self.n == 0 {
            return None;
        }
        let n = self.n as f64;
        let r2 = (self.m2 > 0.0).then(|| 1.0 - self.sse / self.m2);
        Some(GlobalMetrics {
            mse: self.sse / n,
            mae: self.sae / n,
            r2,
        })
    }
}

/// One evaluated window. Normalized and raw series are both supplied so
/// intensity errors can be reported on either scale.
#[derive(Clone, Copy, Debug)]
pub struct WindowEval<'a> {
    pub probs: &'a [f64],
    pub pred_norm: &'a [f64],
    pub true_norm: &'a [f64],
    pub pred_raw: &'a [f64],
    pub true_raw: &'a [f64],
    pub true_peaks: &'a PeakSet,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Commutative accumulator over windows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsAccumulator {
    counts: Counts,
    sq_norm: f64,
    abs_norm: f64,
    sq_raw: f64,
    abs_raw: f64,
    global: GlobalAccumulator,
    windows: usize,
}

impl MetricsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_window(&mut self, w: &WindowEval<'_>, params: &EvalParams) -> Result<MatchReport> {
        let h = w.probs.len();
        for (name, len) in [
            ("pred_norm", w.pred_norm.len()),
            ("true_norm", w.true_norm.len()),
            ("pred_raw", w.pred_raw.len()),
            ("true_raw", w.true_raw.len()),
        ] {
            if len != h {
                return Err(Error::Shape(format!("{name} has length {len}, expected {h}")));
            }
        }
        if let Some(&last) = w.true_peaks.indices().last() {
            if last >= h {
                return Err(Error::Bounds(format!("true peak {last} outside horizon {h}")));
            }
        }
        let pred = condense(w.probs, params.tau);
        let report = match_peaks(&pred, w.true_peaks, params.delta);
        let (sq, ab) = matched_error_sums(&report.matches, w.pred_norm, w.true_norm)?;
        let (sqr, abr) = matched_error_sums(&report.matches, w.pred_raw, w.true_raw)?;
        self.counts.tp += report.tp;
        self.counts.fp += report.fp;
        self.counts.fn_ += report.fn_;
        self.sq_norm += sq;
        self.abs_norm += ab;
        self.sq_raw += sqr;
        self.abs_raw += abr;
        self.global.add(w.pred_norm, w.true_norm);
        self.windows += 1;
        Ok(report)
    }

    pub fn merge(&mut self, o: &MetricsAccumulator) {
        self.counts.tp += o.counts.tp;
        self.counts.fp += o.counts.fp;
        self.counts.fn_ += o.counts.fn_;
        self.sq_norm += o.sq_norm;
        self.abs_norm += o.abs_norm;
        self.sq_raw += o.sq_raw;
        self.abs_raw += o.abs_raw;
        self.global.merge(&o.global);
        self.windows += o.windows;
    }

    pub fn windows(&self) -> usize {
        self.windows
    }

    pub fn report(&self, params: &EvalParams) -> MetricsReport {
        let c = self.counts;
        let t = timing_metrics(c.tp, c.fp, c.fn_);
        let n = c.tp as f64;
        let per = |s: f64| (c.tp > 0).then(|| s / n);
        let tp_mse_norm = per(self.sq_norm);
        let (bcs, pim) = match tp_mse_norm {
            Some(m) => {
                let b = balanced_metrics(t.f1, m, params.alpha, params.epsilon);
                (b.bcs, Some(b.pim))
            }
            None => (bcs_without_matches(t.f1, params.alpha), None),
        };
        let g = self.global.metrics();
        MetricsReport {
            recall: t.recall,
            precision: t.precision,
            f1: t.f1,
            tp_mse_norm,
            tp_mse_raw: per(self.sq_raw),
            tp_mae_norm: per(self.abs_norm),
            tp_mae_raw: per(self.abs_raw),
            bcs,
            pim,
            mse: g.map(|g| g.mse),
            mae: g.map(|g| g.mae),
            r2: g.and_then(|g| g.r2),
            counts: c,
        }
    }
}

/// Dataset-level metrics. `None` fields serialize as `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub tp_mse_norm: Option<f64>,
    pub tp_mse_raw: Option<f64>,
    pub tp_mae_norm: Option<f64>,
    pub tp_mae_raw: Option<f64>,
    /// Uses the normalized intensity error.
    pub bcs: f64,
    pub pim: Option<f64>,
    /// Global errors over every horizon step, normalized scale.
    pub mse: Option<f64>,
    pub mae: Option<f64>,
    pub r2: Option<f64>,
    pub counts: Counts,
}

impl MetricsReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ps(v: &[usize]) -> PeakSet {
        PeakSet::from_sorted(v.to_vec()).unwrap()
    }

    #[test]
    fn condense_examples() {
        assert_eq!(condense(&[0.1, 0.9, 0.8, 0.1, 0.5], 0.4), ps(&[1, 4]));
        assert!(condense(&[0.1, 0.2, 0.3], 0.4).is_empty());
        assert_eq!(condense(&[0.1, 0.7, 0.9, 0.9, 0.2], 0.4), ps(&[2]));
        assert_eq!(condense(&[0.4, 0.39, 0.4], 0.4), ps(&[0, 2]));
        assert!(condense(&[], 0.4).is_empty());
    }

    #[test]
    fn match_examples() {
        let r = match_peaks(&ps(&[1, 4]), &ps(&[1]), 1);
        assert_eq!(r.matches, vec![MatchPair { truth: 1, pred: 1 }]);
        assert_eq!((r.tp, r.fp, r.fn_), (1, 1, 0));
        let r = match_peaks(&ps(&[3, 7]), &ps(&[3, 7]), 0);
        assert_eq!((r.tp, r.fp, r.fn_), (2, 0, 0));
        let r = match_peaks(&ps(&[2]), &ps(&[0, 3]), 1);
        assert_eq!(r.matches, vec![MatchPair { truth: 3, pred: 2 }]);
        assert_eq!(r.fn_, 1);
    }

    #[test]
    fn match_tie_prefers_lower_true_index() {
        let r = match_peaks(&ps(&[2]), &ps(&[1, 3]), 1);
        assert_eq!(r.matches, vec![MatchPair { truth: 1, pred: 2 }]);
        let r = match_peaks(&ps(&[1, 3]), &ps(&[2]), 1);
        assert_eq!(r.matches, vec![MatchPair { truth: 2, pred: 1 }]);
    }

    #[test]
    fn timing_examples() {
        let t = timing_metrics(12, 1, 1);
        assert!((t.precision - 12.0 / 13.0).abs() < 1e-15);
        assert!((t.f1 - 0.923).abs() < 5e-4);
        let t = timing_metrics(7, 6, 6);
        assert!((t.f1 - 0.538).abs() < 5e-4);
        let z = timing_metrics(0, 0, 0);
        assert_eq!((z.precision, z.recall, z.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn intensity_examples() {
        let m = [MatchPair { truth: 0, pred: 1 }];
        let r = intensity_metrics(&m, &[0.0, 3.0], &[2.0, 0.0]).unwrap().unwrap();
        assert_eq!((r.tp_mse, r.tp_mae), (1.0, 1.0));
        let m2 = [MatchPair { truth: 0, pred: 0 }, MatchPair { truth: 1, pred: 1 }];
        let r = intensity_metrics(&m2, &[1.0, -1.0], &[0.0, 0.0]).unwrap().unwrap();
        assert_eq!((r.tp_mse, r.tp_mae), (1.0, 1.0));
        assert!(intensity_metrics(&[], &[1.0], &[1.0]).unwrap().is_none());
        assert!(intensity_metrics(&m, &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn balanced_ideal() {
        let b = balanced_metrics(1.0, 0.0, 0.5, 0.01);
        assert_eq!(b.bcs, 0.0);
        assert!((b.pim - 1.0 / 1.01).abs() < 1e-15);
    }

    #[test]
    fn global_examples() {
        let g = global_metrics(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((g.mse, g.mae, g.r2), (0.0, 0.0, Some(1.0)));
        let g = global_metrics(&[1.0, 1.0], &[0.0, 2.0]).unwrap();
        assert_eq!((g.mse, g.mae, g.r2), (1.0, 1.0, Some(0.0)));
        let g = global_metrics(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(g.r2.unwrap().abs() < 1e-15);
        let g = global_metrics(&[1.0, 2.0], &[5.0, 5.0]).unwrap();
        assert_eq!(g.r2, None);
        assert!(global_metrics(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn accumulator_merge_matches_single_pass() {
        let a: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.11).cos() * 3.0).collect();
        let mut whole = GlobalAccumulator::default();
        whole.add(&a, &b);
        let mut left = GlobalAccumulator::default();
        left.add(&a[..17], &b[..17]);
        let mut right = GlobalAccumulator::default();
        right.add(&a[17..], &b[17..]);
        left.merge(&right);
        let (x, y) = (whole.metrics().unwrap(), left.metrics().unwrap());
        assert!((x.mse - y.mse).abs() < 1e-12);
        assert!((x.r2.unwrap() - y.r2.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn report_absent_intensity() {
        let truth = ps(&[2]);
        let zeros = [0.0; 5];
        let vals = [1.0, 2.0, 3.0, 2.0, 1.0];
        let mut acc = MetricsAccumulator::new();
        acc.add_window(
            &WindowEval {
                probs: &zeros,
                pred_norm: &vals,
                true_norm: &vals,
                pred_raw: &vals,
                true_raw: &vals,
                true_peaks: &truth,
            },
            &EvalParams::default(),
        )
        .unwrap();
        let r = acc.report(&EvalParams::default());
        assert_eq!(r.f1, 0.0);
        assert_eq!(r.tp_mse_norm, None);
        assert_eq!(r.pim, None);
        assert_eq!(r.bcs, 1.0);
        let json = r.to_json_pretty();
        assert!(json.contains("\"tp_mse_norm\": null"));
        assert!(json.contains("\"fn\": 1"));
    }
}
