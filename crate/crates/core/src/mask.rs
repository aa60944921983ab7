//! Truncated-Gaussian soft weights around peak positions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskParams {
    /// Kernel width.
    pub gamma: f64,
    /// Truncation radius in steps; `|t - k| <= delta` is kept.
    pub delta: usize,
}

impl Default for MaskParams {
    fn default() -> Self {
        MaskParams { gamma: 1.0, delta: 1 }
    }
}

impl MaskParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::Invalid(format!("gamma must be finite and > 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Weights in `[0, 1]`; exactly 1 at peaks and 0 beyond the truncation band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SoftMask(Vec<f64>);

impl SoftMask {
    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Wraps raw weights after checking they lie in `[0, 1]`.
    pub fn from_weights(w: Vec<f64>) -> Result<Self> {
        if let Some(i) = w.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Invalid(format!("mask weight {} at {i} outside [0, 1]", w[i])));
        }
        Ok(SoftMask(w))
    }
}

/// `w[t] = max_k exp(-(t-k)^2 / (2 gamma^2))` over peaks `k` with `|t-k| <= delta`.
pub fn build_soft_mask(peaks: &[usize], params: MaskParams, horizon: usize) -> Result<SoftMask> {
    params.validate()?;
    let mut w = vec![0.0; horizon];
    let two_g2 = 2.0 * params.gamma * params.gamma;
    for &k in peaks {
        if k >= horizon {
            return Err(Error::Bounds(format!("peak index {k} outside horizon of {horizon}")));
        }
        let lo = k.saturating_sub(params.delta);
        let hi = k.saturating_add(params.delta).min(horizon - 1);
        for (t, slot) in w.iter_mut().enumerate().take(hi + 1).skip(lo) {
            let d = t.abs_diff(k) as f64;
            let v = (-d * d / two_g2).exp();
            if v > *slot {
                *slot = v;
            }
        }
    }
    Ok(SoftMask(w))
}

/// Binary variant: 1 wherever the weight is positive.
pub fn harden_mask(mask: &SoftMask) -> SoftMask {
    SoftMask(mask.0.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect())
}
