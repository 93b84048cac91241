//! Blended weight construction: simultaneous and disjoint propensity-score
//! weights, the precision-optimal blending coefficient `κ`, the Kish design
//! effect, and percentile weight trimming.
//!
//! * Simultaneous propensity-score weights treat the pooled sample as one
//!   sample with inclusion probabilities `p̂ᵢ`: `wᵢ = 1/p̂ᵢ`.
//! * Disjoint propensity-score weights keep each sample individually
//!   representative — `d̂ᵢ⁻¹` on the probability side, `q̂ᵢ⁻¹` on the
//!   convenience side — and mix them as `κ d̂ᵢ⁻¹` and `(1-κ) q̂ᵢ⁻¹`.
//!
//! The automatic `κ` minimizes the Kish design effect of the combined weight
//! vector; the same formula applies to disjoint calibration weights.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Membership};
use crate::error::{Error, Result};
use crate::propensity::InclusionProbs;

/// Weighting scheme of a [`WeightSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Simultaneous propensity-score weighting.
    Sps,
    /// Disjoint propensity-score weighting.
    Dps,
    /// Simultaneous calibration weighting.
    Sc,
    /// Disjoint calibration weighting.
    Dc,
}

impl Scheme {
    /// Disjoint schemes keep each sample separately representative; only
    /// they support the blending-adequacy test.
    pub fn is_disjoint(self) -> bool {
        matches!(self, Scheme::Dps | Scheme::Dc)
    }

    pub fn label(self) -> &'static str {
        match self {
            Scheme::Sps => "sps",
            Scheme::Dps => "dps",
            Scheme::Sc => "sc",
            Scheme::Dc => "dc",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sps" => Ok(Scheme::Sps),
            "dps" => Ok(Scheme::Dps),
            "sc" => Ok(Scheme::Sc),
            "dc" => Ok(Scheme::Dc),
            other => Err(Error::BadConfig(format!(
                "unknown scheme `{other}` (expected sps|dps|sc|dc)"
            ))),
        }
    }
}

/// How to choose the blending coefficient for a disjoint scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KappaRule {
    /// Minimize the Kish design effect of the combined weights.
    Auto,
    /// Use a fixed value in `[0, 1]`.
    Fixed(f64),
}

/// A vector of analysis weights aligned with a data set's units.
#[derive(Debug, Clone)]
pub struct WeightSet {
    pub scheme: Scheme,
    /// Per-unit weights (non-negative; boundary blending coefficients may
    /// zero out one sample).
    pub weights: Vec<f64>,
    /// Blending coefficient, for disjoint schemes.
    pub kappa: Option<f64>,
    /// Per-unit flag: weight was pulled to a trimming bound.
    pub trimmed: Vec<bool>,
    /// Trimming fraction applied (0 when untrimmed).
    pub trim_pct: f64,
}

impl WeightSet {
    /// Validate and wrap a weight vector.
    pub fn new(scheme: Scheme, weights: Vec<f64>, kappa: Option<f64>) -> Result<Self> {
        let mut sum = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::BadArgument(format!(
                    "weight at position {i} is {w}, expected finite and non-negative"
                )));
            }
            sum += w;
        }
        if !(sum > 0.0) {
            return Err(Error::BadArgument("weights sum to zero".into()));
        }
        if let Some(k) = kappa {
            if !(k.is_finite() && (0.0..=1.0).contains(&k)) {
                return Err(Error::BadArgument(format!(
                    "blending coefficient {k} lies outside [0, 1]"
                )));
            }
        }
        let trimmed = vec![false; weights.len()];
        Ok(WeightSet {
            scheme,
            weights,
            kappa,
            trimmed,
            trim_pct: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Kish design effect of the full weight vector.
    pub fn kish_deff(&self) -> f64 {
        kish_deff(&self.weights)
    }
}

/// Simultaneous propensity-score weights `wᵢ = 1/p̂ᵢ`.
pub fn sps_weights(probs: &InclusionProbs) -> Result<WeightSet> {
    let weights = probs
        .p_hat
        .iter()
        .map(|&p| {
            if p > 0.0 {
                Ok(1.0 / p)
            } else {
                Err(Error::BadArgument(format!(
                    "pooled inclusion probability {p} is not positive"
                )))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    WeightSet::new(Scheme::Sps, weights, None)
}

/// Disjoint propensity-score weights `κ/d̂ᵢ` on the probability sample and
/// `(1-κ)/q̂ᵢ` on the convenience sample.
pub fn dps_weights(ds: &Dataset, probs: &InclusionProbs, rule: KappaRule) -> Result<WeightSet> {
    if probs.d_hat.len() != ds.len() {
        return Err(Error::BadArgument(format!(
            "{} inclusion probabilities for {} units",
            probs.d_hat.len(),
            ds.len()
        )));
    }
    for (unit, &q) in ds.units().iter().zip(&probs.q_hat) {
        if unit.membership == Membership::Conv && q <= 0.0 {
            return Err(Error::ZeroConvenienceProb {
                id: unit.id.clone(),
            });
        }
    }
    let d_inv_s1: Vec<f64> = ds
        .prob_indices()
        .iter()
        .map(|&i| 1.0 / probs.d_hat[i])
        .collect();
    let q_inv_s2: Vec<f64> = ds
        .conv_indices()
        .iter()
        .map(|&i| 1.0 / probs.q_hat[i])
        .collect();
    let kappa = match rule {
        KappaRule::Auto => kish_kappa(&d_inv_s1, &q_inv_s2)?,
        KappaRule::Fixed(k) => {
            if !(k.is_finite() && (0.0..=1.0).contains(&k)) {
                return Err(Error::BadArgument(format!(
                    "blending coefficient {k} lies outside [0, 1]"
                )));
            }
            k
        }
    };
    let weights = ds
        .units()
        .iter()
        .enumerate()
        .map(|(i, u)| match u.membership {
            Membership::Prob => kappa / probs.d_hat[i],
            Membership::Conv => (1.0 - kappa) / probs.q_hat[i],
        })
        .collect();
    WeightSet::new(Scheme::Dps, weights, Some(kappa))
}

/// The blending coefficient that minimizes the Kish design effect of the
/// combined vector `(κ v₁, (1-κ) v₂)`:
///
/// `κ = (Σv₁)(Σv₂²) / [ (Σv₁)(Σv₂²) + (Σv₁²)(Σv₂) ]`
///
/// `v₁` and `v₂` are the weights each sample would carry alone — inverse
/// inclusion probabilities for propensity-score weighting, calibrated weights
/// for calibration weighting.
pub fn kish_kappa(v1: &[f64], v2: &[f64]) -> Result<f64> {
    if v1.is_empty() || v2.is_empty() {
        return Err(Error::BadArgument(
            "blending coefficient needs both weight vectors non-empty".into(),
        ));
    }
    let mut s1 = 0.0;
    let mut s1_sq = 0.0;
    for &v in v1 {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::BadArgument(format!("weight {v} is not usable")));
        }
        s1 += v;
        s1_sq += v * v;
    }
    let mut s2 = 0.0;
    let mut s2_sq = 0.0;
    for &v in v2 {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::BadArgument(format!("weight {v} is not usable")));
        }
        s2 += v;
        s2_sq += v * v;
    }
    if !(s1 > 0.0 && s2 > 0.0) {
        return Err(Error::BadArgument(
            "blending coefficient needs positive weight sums on both sides".into(),
        ));
    }
    Ok(s1 * s2_sq / (s1 * s2_sq + s1_sq * s2))
}

/// Kish design-effect approximation `n · Σw² / (Σw)²`. Returns NaN for an
/// empty or zero-sum vector.
pub fn kish_deff(w: &[f64]) -> f64 {
    let n = w.len() as f64;
    let sum: f64 = w.iter().sum();
    let sum_sq: f64 = w.iter().map(|v| v * v).sum();
    n * sum_sq / (sum * sum)
}

/// Outcome of a trimming pass.
#[derive(Debug, Clone, Serialize)]
pub struct TrimSummary {
    pub pct: f64,
    /// Lower and upper percentile bounds used.
    pub low: f64,
    pub high: f64,
    /// Units pulled up to the lower / down to the upper bound.
    pub n_low: usize,
    pub n_high: usize,
    /// Multiplicative adjustment applied to untrimmed weights so the total
    /// is preserved.
    pub rescale: f64,
}

/// Percentile of a sorted sample by linear interpolation between the two
/// closest order statistics.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// Truncate the highest and lowest `pct` fraction of weights to the matching
/// percentile and rescale the weights within the bounds so the sum of the
/// vector is unchanged. `pct = 0` leaves the weights untouched.
pub fn trim_weights(wset: &mut WeightSet, pct: f64) -> Result<TrimSummary> {
    if !(pct.is_finite() && (0.0..0.5).contains(&pct)) {
        return Err(Error::BadArgument(format!(
            "trim fraction {pct} lies outside [0, 0.5)"
        )));
    }
    let n = wset.weights.len();
    if n == 0 {
        return Err(Error::BadArgument(
            "cannot trim an empty weight vector".into(),
        ));
    }
    let mut sorted = wset.weights.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("weights validated finite"));
    let low = quantile_sorted(&sorted, pct);
    let high = quantile_sorted(&sorted, 1.0 - pct);
    let total: f64 = wset.weights.iter().sum();

    let mut clipped_sum = 0.0;
    let mut interior_sum = 0.0;
    let mut n_low = 0;
    let mut n_high = 0;
    for &w in &wset.weights {
        if w < low {
            n_low += 1;
            clipped_sum += low;
        } else if w > high {
            n_high += 1;
            clipped_sum += high;
        } else {
            interior_sum += w;
        }
    }
    let rescale = if n_low + n_high == 0 {
        1.0
    } else if interior_sum > 0.0 {
        (total - clipped_sum) / interior_sum
    } else {
        // Degenerate: every weight was clipped; preserve the total by
        // rescaling the clipped values themselves.
        total / clipped_sum
    };
    for (w, flag) in wset.weights.iter_mut().zip(wset.trimmed.iter_mut()) {
        if *w < low {
            *w = low;
            *flag = true;
            if interior_sum <= 0.0 {
                *w *= rescale;
            }
        } else if *w > high {
            *w = high;
            *flag = true;
            if interior_sum <= 0.0 {
                *w *= rescale;
            }
        } else {
            *w *= rescale;
            *flag = false;
        }
    }
    wset.trim_pct = pct;
    Ok(TrimSummary {
        pct,
        low,
        high,
        n_low,
        n_high,
        rescale,
    })
}
