//! Design-based estimation with blended weights: weighted means and totals,
//! weighted least squares with sandwich standard errors, the two-sample
//! blending-adequacy test, and post-hoc blending of already-computed
//! estimates.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::blending::{kish_deff, WeightSet};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::variance::sandwich_cov;

/// Hájek (ratio) mean `Σwy / Σw`.
pub fn weighted_mean(y: &[f64], w: &[f64]) -> Result<f64> {
    if y.len() != w.len() {
        return Err(Error::BadArgument(format!(
            "{} outcomes but {} weights",
            y.len(),
            w.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::NotEnoughUnits {
            needed: 1,
            found: 0,
        });
    }
    let wsum: f64 = w.iter().sum();
    if !(wsum > 0.0) {
        return Err(Error::BadArgument("weights sum to zero".into()));
    }
    Ok(y.iter().zip(w).map(|(&y, &w)| w * y).sum::<f64>() / wsum)
}

/// Weighted total `Σwy`.
pub fn weighted_total(y: &[f64], w: &[f64]) -> Result<f64> {
    if y.len() != w.len() {
        return Err(Error::BadArgument(format!(
            "{} outcomes but {} weights",
            y.len(),
            w.len()
        )));
    }
    Ok(y.iter().zip(w).map(|(&y, &w)| w * y).sum())
}

/// Weighted-least-squares fit with design-consistent (sandwich) covariance.
#[derive(Debug, Clone)]
pub struct WlsFit {
    pub coefficients: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub ses: Vec<f64>,
    /// Coefficient z-statistics (0 when the coefficient and its standard
    /// error both vanish).
    pub z: Vec<f64>,
    /// Two-sided normal p-values.
    pub p: Vec<f64>,
    pub residuals: Vec<f64>,
}

fn z_and_p(estimate: f64, se: f64) -> (f64, f64) {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    if se > 0.0 {
        let z = estimate / se;
        (z, 2.0 * (1.0 - normal.cdf(z.abs())))
    } else if estimate == 0.0 {
        (0.0, 1.0)
    } else {
        (f64::INFINITY.copysign(estimate), 0.0)
    }
}

/// Solve `min Σ wᵢ (yᵢ − xᵢᵀβ)²` and attach sandwich standard errors.
pub fn wls_regression(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Result<WlsFit> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n || w.len() != n {
        return Err(Error::BadArgument(format!(
            "design has {n} rows but {} outcomes and {} weights",
            y.len(),
            w.len()
        )));
    }
    if n < 2 || n < p {
        return Err(Error::NotEnoughUnits {
            needed: p.max(2),
            found: n,
        });
    }
    if w.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
        return Err(Error::BadArgument(
            "weights must be finite and non-negative".into(),
        ));
    }
    let weighted = DMatrix::from_fn(n, p, |i, j| w[i].sqrt() * x[(i, j)]);
    let rank = crate::propensity::numeric_rank(&weighted, 1e-10);
    if rank < p {
        return Err(Error::RankDeficient { rank, cols: p });
    }
    let mut xtwx = DMatrix::<f64>::zeros(p, p);
    let mut xtwy = DVector::<f64>::zeros(p);
    for i in 0..n {
        let xi = x.row(i).transpose();
        xtwx += w[i] * &xi * xi.transpose();
        xtwy += w[i] * y[i] * xi;
    }
    let coefficients = xtwx
        .clone()
        .cholesky()
        .map(|c| c.solve(&xtwy))
        .or_else(|| xtwx.lu().solve(&xtwy))
        .ok_or(Error::RankDeficient { rank, cols: p })?;
    let residuals: Vec<f64> = (0..n)
        .map(|i| y[i] - x.row(i).transpose().dot(&coefficients))
        .collect();
    let cov = sandwich_cov(x, w, &residuals)?;
    let ses: Vec<f64> = (0..p).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    let (z, pv): (Vec<f64>, Vec<f64>) = (0..p).map(|j| z_and_p(coefficients[j], ses[j])).unzip();
    Ok(WlsFit {
        coefficients,
        cov,
        ses,
        z,
        p: pv,
        residuals,
    })
}

/// Result of the blending-adequacy test: does the convenience sample reach
/// the same weighted outcome mean as the probability sample?
#[derive(Debug, Clone, Serialize)]
pub struct AdequacyTest {
    pub outcome: String,
    /// Convenience-minus-probability difference of weighted means.
    pub delta: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
    pub mean_prob: f64,
    pub mean_conv: f64,
    /// Units with an observed outcome in each sample.
    pub n_prob: usize,
    pub n_conv: usize,
}

pub(crate) struct TwoGroupStat {
    pub delta: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
}

/// Difference of weighted group means with a sandwich standard error.
///
/// Algebraically this is the group-indicator coefficient of a weighted
/// regression on `[1, 1{second}]` with its sandwich error, but it is
/// computed in closed form so that degenerate inputs (constant outcome)
/// give exact zeros instead of solver residue.
pub(crate) fn two_group_stat(y: &[f64], w: &[f64], second: &[bool]) -> Result<TwoGroupStat> {
    let n = y.len();
    if w.len() != n || second.len() != n {
        return Err(Error::BadArgument(
            "outcome, weight, and group vectors differ in length".into(),
        ));
    }
    if n < 2 {
        return Err(Error::NotEnoughUnits {
            needed: 2,
            found: n,
        });
    }
    let (mut w1, mut w2, mut s1, mut s2) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        if !(w[i].is_finite() && w[i] >= 0.0) {
            return Err(Error::BadArgument(
                "weights must be finite and non-negative".into(),
            ));
        }
        if second[i] {
            w2 += w[i];
            s2 += w[i] * y[i];
        } else {
            w1 += w[i];
            s1 += w[i] * y[i];
        }
    }
    if !(w1 > 0.0 && w2 > 0.0) {
        return Err(Error::BadArgument(
            "each group needs positive total weight".into(),
        ));
    }
    let mu1 = s1 / w1;
    let mu2 = s2 / w2;
    let delta = mu2 - mu1;
    let (mut ss1, mut ss2) = (0.0, 0.0);
    for i in 0..n {
        let e = w[i] * (y[i] - if second[i] { mu2 } else { mu1 });
        if second[i] {
            ss2 += e * e;
        } else {
            ss1 += e * e;
        }
    }
    let var = (n as f64 / (n as f64 - 1.0)) * (ss1 / (w1 * w1) + ss2 / (w2 * w2));
    let se = var.sqrt();
    let (z, p_value) = z_and_p(delta, se);
    Ok(TwoGroupStat {
        delta,
        se,
        z,
        p_value,
    })
}

/// Test whether the two samples agree on the outcome under a disjoint
/// weighting scheme.
///
/// Only disjoint schemes keep each sample separately representative of the
/// population, which is what gives the two weighted means a common target;
/// simultaneous schemes are refused. Units missing the outcome are dropped.
pub fn adequacy_test(ds: &Dataset, outcome: &str, wset: &WeightSet) -> Result<AdequacyTest> {
    if !wset.scheme.is_disjoint() {
        return Err(Error::WrongScheme {
            needed: "disjoint (dps or dc)".into(),
            found: wset.scheme.label().into(),
        });
    }
    if wset.weights.len() != ds.len() {
        return Err(Error::BadArgument(format!(
            "{} weights for {} units",
            wset.weights.len(),
            ds.len()
        )));
    }
    let values = ds.variable(outcome)?;
    let conv = ds.conv_indicator();
    let mut y = Vec::new();
    let mut w = Vec::new();
    let mut is_conv = Vec::new();
    let (mut n_prob, mut n_conv) = (0usize, 0usize);
    for i in 0..ds.len() {
        if let Some(v) = values[i] {
            y.push(v);
            w.push(wset.weights[i]);
            is_conv.push(conv[i]);
            if conv[i] {
                n_conv += 1;
            } else {
                n_prob += 1;
            }
        }
    }
    if n_prob == 0 {
        return Err(Error::EmptySample("prob"));
    }
    if n_conv == 0 {
        return Err(Error::EmptySample("conv"));
    }
    let stat = two_group_stat(&y, &w, &is_conv)?;
    let (yp, wp): (Vec<f64>, Vec<f64>) = y
        .iter()
        .zip(&w)
        .zip(&is_conv)
        .filter(|&(_, &c)| !c)
        .map(|((&y, &w), _)| (y, w))
        .unzip();
    let (yc, wc): (Vec<f64>, Vec<f64>) = y
        .iter()
        .zip(&w)
        .zip(&is_conv)
        .filter(|&(_, &c)| c)
        .map(|((&y, &w), _)| (y, w))
        .unzip();
    Ok(AdequacyTest {
        outcome: outcome.to_string(),
        delta: stat.delta,
        se: stat.se,
        z: stat.z,
        p_value: stat.p_value,
        mean_prob: weighted_mean(&yp, &wp)?,
        mean_conv: weighted_mean(&yc, &wc)?,
        n_prob,
        n_conv,
    })
}

/// Post-hoc blend of two estimates of the same quantity.
#[derive(Debug, Clone, Serialize)]
pub struct PosthocBlend {
    /// Variance-minimizing coefficient on the first estimate.
    pub kappa_bar: f64,
    pub estimate: f64,
    pub variance: f64,
    pub se: f64,
    /// The coefficient fell outside `[0, 1]`; it is used as computed, but a
    /// coefficient this far out usually signals disagreeing estimators.
    pub out_of_range: bool,
}

/// Combine two estimates `θ̂₁, θ̂₂` with variances `v₁, v₂` and covariance
/// `c` at the variance-minimizing coefficient
/// `κ̄ = (v₂ − c) / (v₁ + v₂ − 2c)`.
pub fn posthoc_blend(theta1: f64, v1: f64, theta2: f64, v2: f64, c: f64) -> Result<PosthocBlend> {
    for (label, v) in [("first", v1), ("second", v2)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::BadArgument(format!(
                "variance of the {label} estimate is {v}"
            )));
        }
    }
    if !c.is_finite() {
        return Err(Error::BadArgument(format!("covariance is {c}")));
    }
    let denom = v1 + v2 - 2.0 * c;
    if !(denom > 0.0) {
        return Err(Error::DegenerateVariance);
    }
    let kappa_bar = (v2 - c) / denom;
    let estimate = kappa_bar * theta1 + (1.0 - kappa_bar) * theta2;
    let variance = (kappa_bar * kappa_bar * v1
        + (1.0 - kappa_bar) * (1.0 - kappa_bar) * v2
        + 2.0 * kappa_bar * (1.0 - kappa_bar) * c)
        .max(0.0);
    Ok(PosthocBlend {
        kappa_bar,
        estimate,
        variance,
        se: variance.sqrt(),
        out_of_range: !(0.0..=1.0).contains(&kappa_bar),
    })
}

/// How a standard error was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceMethod {
    Linearized,
    Jackknife,
}

impl VarianceMethod {
    pub fn label(self) -> &'static str {
        match self {
            VarianceMethod::Linearized => "linearized",
            VarianceMethod::Jackknife => "jackknife",
        }
    }
}

/// A point estimate with its uncertainty summary.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub estimand: String,
    pub estimate: f64,
    pub se: f64,
    /// Kish design effect of the weights used for this estimand.
    pub deff: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub variance_method: VarianceMethod,
    /// Units with an observed outcome.
    pub n_used: usize,
}

impl EstimateReport {
    /// Wrap an estimate with a symmetric normal confidence interval at
    /// level `1 − alpha`.
    pub fn new(
        estimand: impl Into<String>,
        estimate: f64,
        se: f64,
        weights: &[f64],
        variance_method: VarianceMethod,
        alpha: f64,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::BadArgument(format!(
                "confidence level parameter {alpha} lies outside (0, 1)"
            )));
        }
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        let zq = normal.inverse_cdf(1.0 - alpha / 2.0);
        Ok(EstimateReport {
            estimand: estimand.into(),
            estimate,
            se,
            deff: kish_deff(weights),
            ci_low: estimate - zq * se,
            ci_high: estimate + zq * se,
            variance_method,
            n_used: weights.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blending::{dps_weights, KappaRule, Scheme};
    use crate::dataset::{Membership, Schema, Unit};
    use crate::propensity::InclusionProbs;
    use approx::assert_relative_eq;

    #[test]
    fn weighted_mean_known_value() {
        assert_relative_eq!(
            weighted_mean(&[0.0, 10.0], &[1.0, 3.0]).unwrap(),
            7.5,
            epsilon = 1e-15
        );
        assert!(weighted_mean(&[1.0], &[0.0]).is_err());
        assert!(weighted_mean(&[], &[]).is_err());
    }

    #[test]
    fn weighted_total_known_value() {
        assert_relative_eq!(
            weighted_total(&[2.0, 3.0], &[4.0, 5.0]).unwrap(),
            23.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn wls_recovers_an_exact_linear_relationship() {
        let n = 7;
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y: Vec<f64> = (0..n).map(|i| 2.0 + 3.0 * i as f64).collect();
        let w: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
        let fit = wls_regression(&x, &y, &w).unwrap();
        assert_relative_eq!(fit.coefficients[0], 2.0, epsilon = 1e-10);
        assert_relative_eq!(fit.coefficients[1], 3.0, epsilon = 1e-10);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-10));
        // Exact fit ⇒ zero sandwich variance ⇒ the slope is either exactly
        // significant or untestable; we report p = 0 for nonzero estimates.
        assert_eq!(fit.p[1], 0.0);
    }

    #[test]
    fn intercept_only_wls_is_the_weighted_mean() {
        let y = [2.0, 5.0, 3.5, 8.0];
        let w = [1.0, 2.0, 0.5, 1.5];
        let x = DMatrix::from_element(4, 1, 1.0);
        let fit = wls_regression(&x, &y, &w).unwrap();
        assert_relative_eq!(
            fit.coefficients[0],
            weighted_mean(&y, &w).unwrap(),
            epsilon = 1e-12
        );
        let se = crate::variance::linearized_se_mean(&y, &w).unwrap();
        assert_relative_eq!(fit.ses[0], se, epsilon = 1e-12);
    }

    #[test]
    fn wls_matches_hand_solved_normal_equations() {
        // Three points, weights (1, 1, 2): X'WX = [[4, 6], [6, 12]],
        // X'Wy = [14, 30] → β = (1, 2) exactly by construction below.
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 2.0, 1.0, 2.0]);
        let y = [1.0, 5.0, 5.0];
        let w = [1.0, 1.0, 2.0];
        let fit = wls_regression(&x, &y, &w).unwrap();
        assert_relative_eq!(fit.coefficients[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(fit.coefficients[1], 2.0, epsilon = 1e-10);
    }

    fn adequacy_fixture(y_conv_shift: f64) -> (Dataset, WeightSet) {
        let schema = Schema::new(Vec::<String>::new(), ["y"]).unwrap();
        let mut units = Vec::new();
        for i in 0..30 {
            let prob = i < 15;
            let base = (i % 5) as f64;
            units.push(Unit {
                id: format!("u{i}"),
                membership: if prob {
                    Membership::Prob
                } else {
                    Membership::Conv
                },
                d_star: prob.then_some(0.3),
                r_hat: None,
                x: vec![],
                y: vec![Some(if prob { base } else { base + y_conv_shift })],
            });
        }
        let ds = Dataset::new(schema, units).unwrap();
        let n = ds.len();
        let ip = InclusionProbs {
            d_hat: vec![0.3; n],
            gamma: vec![0.4; n],
            q_hat: vec![0.2; n],
            p_hat: vec![0.5; n],
            valid: vec![true; n],
            imputed: 15,
            n_out_of_range: 0,
        };
        let ws = dps_weights(&ds, &ip, KappaRule::Auto).unwrap();
        (ds, ws)
    }

    #[test]
    fn two_group_stat_matches_the_regression_sandwich() {
        let y = [2.0, 5.0, 3.5, 8.0, 1.0, 4.0, 6.5];
        let w = [1.0, 2.0, 0.5, 1.5, 3.0, 1.2, 0.8];
        let second = [false, false, false, true, true, true, true];
        let stat = two_group_stat(&y, &w, &second).unwrap();
        let x = DMatrix::from_fn(7, 2, |i, j| if j == 0 { 1.0 } else { f64::from(second[i]) });
        let fit = wls_regression(&x, &y, &w).unwrap();
        assert_relative_eq!(stat.delta, fit.coefficients[1], epsilon = 1e-12);
        assert_relative_eq!(stat.se, fit.ses[1], epsilon = 1e-12);
    }

    #[test]
    fn adequacy_refuses_simultaneous_schemes() {
        let (ds, ws) = adequacy_fixture(0.0);
        let mut simultaneous = ws.clone();
        simultaneous.scheme = Scheme::Sps;
        let err = adequacy_test(&ds, "y", &simultaneous).unwrap_err();
        assert!(matches!(err, Error::WrongScheme { found, .. } if found == "sps"));
    }

    #[test]
    fn adequacy_delta_is_the_difference_of_group_means() {
        let (ds, ws) = adequacy_fixture(1.7);
        let test = adequacy_test(&ds, "y", &ws).unwrap();
        assert_relative_eq!(test.delta, test.mean_conv - test.mean_prob, epsilon = 1e-10);
        assert_relative_eq!(test.delta, 1.7, epsilon = 1e-10);
        assert_eq!((test.n_prob, test.n_conv), (15, 15));
    }

    #[test]
    fn adequacy_flags_a_large_separation() {
        let (ds, ws) = adequacy_fixture(25.0);
        let test = adequacy_test(&ds, "y", &ws).unwrap();
        assert!(test.p_value < 1e-6, "p = {}", test.p_value);
    }

    #[test]
    fn constant_outcome_gives_unit_p_value() {
        let schema = Schema::new(Vec::<String>::new(), ["y"]).unwrap();
        let units = (0..8)
            .map(|i| Unit {
                id: format!("u{i}"),
                membership: if i < 4 {
                    Membership::Prob
                } else {
                    Membership::Conv
                },
                d_star: (i < 4).then_some(0.5),
                r_hat: None,
                x: vec![],
                y: vec![Some(3.0)],
            })
            .collect();
        let ds = Dataset::new(schema, units).unwrap();
        let ws = WeightSet::new(Scheme::Dps, vec![1.0; 8], Some(0.5)).unwrap();
        let test = adequacy_test(&ds, "y", &ws).unwrap();
        assert_eq!(test.delta, 0.0);
        assert_eq!(test.z, 0.0);
        assert_eq!(test.p_value, 1.0);
    }

    #[test]
    fn posthoc_known_values() {
        // Second estimate noiseless → all weight on it.
        let b = posthoc_blend(4.0, 1.0, 6.0, 0.0, 0.0).unwrap();
        assert_eq!(b.kappa_bar, 0.0);
        assert_eq!(b.estimate, 6.0);
        assert_eq!(b.variance, 0.0);

        let b = posthoc_blend(10.0, 1.0, 20.0, 2.0, 0.5).unwrap();
        assert_relative_eq!(b.kappa_bar, 0.75, epsilon = 1e-15);
        assert_relative_eq!(b.estimate, 12.5, epsilon = 1e-12);
        assert_relative_eq!(b.variance, 0.875, epsilon = 1e-12);
        assert!(!b.out_of_range);
    }

    #[test]
    fn posthoc_degenerate_and_out_of_range() {
        assert!(matches!(
            posthoc_blend(1.0, 1.0, 2.0, 1.0, 2.0).unwrap_err(),
            Error::DegenerateVariance
        ));
        // High covariance pushes the coefficient below zero; it is reported
        // as computed and flagged.
        let b = posthoc_blend(1.0, 4.0, 2.0, 1.0, 2.0).unwrap();
        assert_relative_eq!(b.kappa_bar, -1.0, epsilon = 1e-15);
        assert!(b.out_of_range);
    }

    #[test]
    fn posthoc_uncorrelated_variance_is_the_parallel_sum() {
        let b = posthoc_blend(0.0, 3.0, 0.0, 6.0, 0.0).unwrap();
        assert_relative_eq!(b.variance, 2.0, epsilon = 1e-12);
        assert!(b.variance <= 3.0);
    }

    #[test]
    fn report_interval_uses_the_normal_quantile() {
        let w = vec![1.0; 25];
        let r = EstimateReport::new("y", 10.0, 2.0, &w, VarianceMethod::Linearized, 0.05).unwrap();
        assert_relative_eq!(r.ci_low, 10.0 - 1.959_963_984_540_054 * 2.0, epsilon = 1e-9);
        assert_relative_eq!(
            r.ci_high,
            10.0 + 1.959_963_984_540_054 * 2.0,
            epsilon = 1e-9
        );
        assert_eq!(r.deff, 1.0);
        assert_eq!(r.n_used, 25);
        assert!(EstimateReport::new("y", 0.0, 1.0, &w, VarianceMethod::Jackknife, 0.0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn weighted_mean_stays_inside_the_outcome_range(
            pairs in proptest::collection::vec((-50.0_f64..50.0, 0.01_f64..10.0), 1..30),
        ) {
            let y: Vec<f64> = pairs.iter().map(|&(y, _)| y).collect();
            let w: Vec<f64> = pairs.iter().map(|&(_, w)| w).collect();
            let m = weighted_mean(&y, &w).unwrap();
            let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            proptest::prop_assert!(m >= lo - 1e-9 && m <= hi + 1e-9);
        }

        #[test]
        fn posthoc_blend_never_beats_perfect_correlation_bounds(
            v1 in 0.1_f64..10.0,
            v2 in 0.1_f64..10.0,
            rho in -0.5_f64..0.9,
        ) {
            let c = rho * v1.min(v2);
            let b = posthoc_blend(1.0, v1, 2.0, v2, c).unwrap();
            // The optimal coefficient can only improve on either input.
            proptest::prop_assert!(b.variance <= v1 + 1e-12);
            proptest::prop_assert!(b.variance <= v2 + 1e-12);
        }
    }
}
