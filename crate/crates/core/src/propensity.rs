//! Propensity estimation: logistic regression by iteratively reweighted
//! least squares, the convenience-membership share `γ̂ᵢ`, response-probability
//! models, and the per-unit inclusion-probability algebra.
//!
//! The pooled sample is modeled with three probabilities per unit:
//!
//! * `d̂ᵢ` — probability of entering through the probability-sample door,
//!   assembled as the design probability times a response adjustment;
//! * `q̂ᵢ = d̂ᵢ γ̂ᵢ / (1 − γ̂ᵢ)` — implied probability of entering through the
//!   convenience door, where `γ̂ᵢ` is the fitted share
//!   `P(convenience | in pooled sample, xᵢ)`;
//! * `p̂ᵢ = d̂ᵢ + q̂ᵢ` — probability of entering through either door.

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Convergence tolerance on the maximum absolute score component.
pub const SCORE_TOL: f64 = 1e-10;
/// Iteration cap for the reweighted least-squares loop.
pub const MAX_ITER: usize = 100;
/// Cap on step halvings within one iteration.
const MAX_HALVINGS: usize = 30;
/// A linear predictor beyond this magnitude signals (quasi-)separation.
pub const SEPARATION_LP: f64 = 15.0;
/// Lower clip for fitted convenience shares.
pub const GAMMA_MIN: f64 = 1e-6;
/// Upper clip for fitted convenience shares: a share of one would imply an
/// unbounded convenience-door probability.
pub const GAMMA_MAX: f64 = 1.0 - 1e-3;
/// Lower clip for fitted response probabilities.
pub const R_HAT_MIN: f64 = 1e-6;

/// Numerically stable standard logistic function.
pub fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Stable `ln(1 + exp(u))`.
fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

/// A fitted logistic regression.
#[derive(Debug, Clone)]
pub struct LogisticFit {
    /// Coefficients aligned with the design-matrix columns.
    pub coefficients: DVector<f64>,
    /// Fitted probabilities for the training rows.
    pub fitted: Vec<f64>,
    /// Whether the score equations were solved to [`SCORE_TOL`].
    pub converged: bool,
    /// Number of update steps taken.
    pub iterations: usize,
    /// True when some training row with positive weight has a linear
    /// predictor beyond [`SEPARATION_LP`] — the data are (quasi-)separated
    /// and the reported coefficients sit on the likelihood's flat ridge.
    pub separation: bool,
    /// Maximum absolute score component at the reported coefficients.
    pub max_abs_score: f64,
}

impl LogisticFit {
    /// Fitted probabilities for new rows.
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        predict(x, &self.coefficients)
    }
}

/// Fitted probabilities `logistic(xᵢᵀβ)` for each row.
pub fn predict(x: &DMatrix<f64>, beta: &DVector<f64>) -> Vec<f64> {
    (x * beta).iter().map(|&eta| logistic(eta)).collect()
}

fn weighted_loglik(x: &DMatrix<f64>, beta: &DVector<f64>, y: &[f64], w: &[f64]) -> f64 {
    let eta = x * beta;
    eta.iter()
        .zip(y)
        .zip(w)
        .map(|((&e, &yi), &wi)| wi * (yi * e - softplus(e)))
        .sum()
}

fn solve_symmetric(h: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(chol) = h.clone().cholesky() {
        return Some(chol.solve(rhs));
    }
    h.clone().lu().solve(rhs)
}

/// Rank of a matrix by singular values with a relative threshold.
pub(crate) fn numeric_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

/// Maximum-likelihood logistic regression with per-row base weights.
///
/// `y` must be 0/1; `base_weights` must be non-negative, with at least as
/// many positively weighted rows as columns, both response classes present
/// among them, and a full-rank design on them. Convergence is declared when
/// the weighted score `Xᵀ diag(w) (y − μ)` has maximum absolute component at
/// most [`SCORE_TOL`]; each update is dampened by step halving whenever it
/// would decrease the log-likelihood. Separated data do not fail: the fit is
/// returned with [`LogisticFit::separation`] set.
pub fn fit_logistic(x: &DMatrix<f64>, y: &[f64], base_weights: &[f64]) -> Result<LogisticFit> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n || base_weights.len() != n {
        return Err(Error::BadArgument(format!(
            "design has {n} rows but y has {} and weights {}",
            y.len(),
            base_weights.len()
        )));
    }
    if p == 0 {
        return Err(Error::BadArgument("design matrix has no columns".into()));
    }
    for (i, &yi) in y.iter().enumerate() {
        if yi != 0.0 && yi != 1.0 {
            return Err(Error::BadArgument(format!(
                "response at row {i} is {yi}, expected 0 or 1"
            )));
        }
    }
    for (i, &wi) in base_weights.iter().enumerate() {
        if !(wi.is_finite() && wi >= 0.0) {
            return Err(Error::BadArgument(format!(
                "base weight at row {i} is {wi}, expected finite and non-negative"
            )));
        }
    }
    let support: Vec<usize> = (0..n).filter(|&i| base_weights[i] > 0.0).collect();
    if support.len() < p {
        return Err(Error::NotEnoughUnits {
            needed: p,
            found: support.len(),
        });
    }
    let first = y[support[0]];
    if support.iter().all(|&i| y[i] == first) {
        return Err(Error::AllSameClass);
    }
    let x_support = x.select_rows(support.as_slice());
    let rank = numeric_rank(&x_support, 1e-10);
    if rank < p {
        return Err(Error::RankDeficient { rank, cols: p });
    }

    let mut beta = DVector::<f64>::zeros(p);
    let mut ll = weighted_loglik(x, &beta, y, base_weights);
    let mut converged = false;
    let mut iterations = 0;
    let mut max_abs_score;
    loop {
        let eta = x * &beta;
        let resid = DVector::from_fn(n, |i, _| base_weights[i] * (y[i] - logistic(eta[i])));
        let score = x.transpose() * &resid;
        max_abs_score = score.amax();
        if max_abs_score <= SCORE_TOL {
            converged = true;
            break;
        }
        if iterations >= MAX_ITER {
            break;
        }
        iterations += 1;
        // Weighted information matrix XᵀWX with W = w μ(1-μ).
        let mut xw = x.clone();
        for i in 0..n {
            let mu = logistic(eta[i]).clamp(1e-12, 1.0 - 1e-12);
            let wi = base_weights[i] * mu * (1.0 - mu);
            xw.row_mut(i).scale_mut(wi);
        }
        let h = x.transpose() * xw;
        let delta = match solve_symmetric(&h, &score) {
            Some(d) => d,
            None => break,
        };
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let cand = &beta + &delta * alpha;
            let cand_ll = weighted_loglik(x, &cand, y, base_weights);
            if cand_ll >= ll - 1e-12 * (1.0 + ll.abs()) {
                beta = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let eta = x * &beta;
    let separation = support.iter().any(|&i| eta[i].abs() > SEPARATION_LP);
    let fitted = eta.iter().map(|&e| logistic(e)).collect();
    Ok(LogisticFit {
        coefficients: beta,
        fitted,
        converged,
        iterations,
        separation,
        max_abs_score,
    })
}

/// Fitted convenience-membership shares for a pooled sample.
#[derive(Debug, Clone)]
pub struct GammaEstimate {
    /// Per-unit shares, clipped to `[GAMMA_MIN, GAMMA_MAX]`.
    pub gamma: Vec<f64>,
    /// The underlying logistic fit (intercept first, then `vars`).
    pub fit: LogisticFit,
    /// Variable names used, in design order after the intercept.
    pub vars: Vec<String>,
    /// How many fitted shares the clipping touched.
    pub clipped: usize,
}

/// Model the share `γᵢ = P(unit came through the convenience door | xᵢ)` by
/// logistic regression of convenience membership on an intercept plus `vars`.
pub fn estimate_gamma(ds: &Dataset, vars: &[String]) -> Result<GammaEstimate> {
    let dm = ds.design_matrix(vars, true)?;
    let y: Vec<f64> = ds
        .conv_indicator()
        .iter()
        .map(|&c| if c { 1.0 } else { 0.0 })
        .collect();
    let weights = vec![1.0; ds.len()];
    let fit = fit_logistic(&dm.matrix, &y, &weights)?;
    let mut clipped = 0;
    let gamma = fit
        .fitted
        .iter()
        .map(|&g| {
            let c = g.clamp(GAMMA_MIN, GAMMA_MAX);
            if c != g {
                clipped += 1;
            }
            c
        })
        .collect();
    Ok(GammaEstimate {
        gamma,
        fit,
        vars: vars.to_vec(),
        clipped,
    })
}

/// A response-probability model for probability-frame records.
#[derive(Debug, Clone)]
pub enum ResponseModel {
    /// Everyone responds (fit degenerates to the identity adjustment).
    Identity,
    /// A fitted logistic model of response on frame covariates.
    Fitted(LogisticFit),
}

impl ResponseModel {
    /// Fit a response model on frame records (respondents and
    /// nonrespondents). When every record responded the identity model is
    /// returned; when none did, no adjustment is estimable.
    pub fn fit(x: &DMatrix<f64>, respondent: &[bool]) -> Result<ResponseModel> {
        if respondent.len() != x.nrows() {
            return Err(Error::BadArgument(format!(
                "{} respondent flags for {} frame rows",
                respondent.len(),
                x.nrows()
            )));
        }
        if respondent.iter().all(|&r| r) {
            return Ok(ResponseModel::Identity);
        }
        let y: Vec<f64> = respondent
            .iter()
            .map(|&r| if r { 1.0 } else { 0.0 })
            .collect();
        let weights = vec![1.0; x.nrows()];
        Ok(ResponseModel::Fitted(fit_logistic(x, &y, &weights)?))
    }

    /// Predicted response probabilities, clipped into `(0, 1]`.
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        match self {
            ResponseModel::Identity => vec![1.0; x.nrows()],
            ResponseModel::Fitted(fit) => fit
                .predict(x)
                .iter()
                .map(|&r| r.clamp(R_HAT_MIN, 1.0))
                .collect(),
        }
    }
}

/// Per-unit inclusion probabilities for the pooled sample.
#[derive(Debug, Clone)]
pub struct InclusionProbs {
    /// Probability-door inclusion `d̂ᵢ = d*ᵢ · r̂ᵢ` (imputed for convenience
    /// units without a design probability).
    pub d_hat: Vec<f64>,
    /// Convenience share `γ̂ᵢ` used in the assembly.
    pub gamma: Vec<f64>,
    /// Convenience-door inclusion `q̂ᵢ = d̂ᵢ γ̂ᵢ / (1 − γ̂ᵢ)`.
    pub q_hat: Vec<f64>,
    /// Either-door inclusion `p̂ᵢ = d̂ᵢ + q̂ᵢ`.
    pub p_hat: Vec<f64>,
    /// Per-unit validity: `d̂ᵢ` and `p̂ᵢ` inside `(0, 1]`. Estimated
    /// probabilities can stray above one; they stay usable but are flagged.
    pub valid: Vec<bool>,
    /// Convenience units whose `d̂ᵢ` was imputed from the probability sample.
    pub imputed: usize,
    /// Units flagged invalid.
    pub n_out_of_range: usize,
}

/// Assemble `d̂`, `q̂`, `p̂` for every unit from the fitted shares and response
/// probabilities.
///
/// Convenience units without a design probability receive the imputed value
/// `n₁ / Σ_{j∈S₁} d̂ⱼ⁻¹` — the sampling fraction the probability sample would
/// have under equal probabilities on the estimated population size.
pub fn assemble_inclusion(ds: &Dataset, gamma: &[f64], r_hat: &[f64]) -> Result<InclusionProbs> {
    let n = ds.len();
    if gamma.len() != n || r_hat.len() != n {
        return Err(Error::BadArgument(format!(
            "{n} units but {} shares and {} response probabilities",
            gamma.len(),
            r_hat.len()
        )));
    }
    for (i, unit) in ds.units().iter().enumerate() {
        let g = gamma[i];
        if !g.is_finite() || g <= 0.0 {
            return Err(Error::BadArgument(format!(
                "convenience share for unit `{}` is {g}, expected in (0, 1)",
                unit.id
            )));
        }
        if g >= 1.0 {
            return Err(Error::GammaAtOne {
                id: unit.id.clone(),
            });
        }
        let r = r_hat[i];
        if !(r.is_finite() && r > 0.0 && r <= 1.0) {
            return Err(Error::BadProbability {
                id: unit.id.clone(),
                value: r,
            });
        }
    }

    let mut d_hat = vec![0.0; n];
    let mut ht_pop = 0.0;
    let mut n1 = 0usize;
    for (i, unit) in ds.units().iter().enumerate() {
        if let Some(d_star) = unit.d_star {
            d_hat[i] = d_star * r_hat[i];
        }
        if unit.membership == crate::dataset::Membership::Prob {
            n1 += 1;
            ht_pop += 1.0 / d_hat[i];
        }
    }
    let imputed_d = n1 as f64 / ht_pop;
    let mut imputed = 0;
    for (i, unit) in ds.units().iter().enumerate() {
        if unit.d_star.is_none() {
            d_hat[i] = imputed_d;
            imputed += 1;
        }
    }

    let mut q_hat = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    let mut valid = vec![true; n];
    let mut n_out_of_range = 0;
    // Slack for round-off at the p̂ = 1 boundary.
    const VALIDITY_SLACK: f64 = 1e-9;
    for i in 0..n {
        q_hat[i] = d_hat[i] * gamma[i] / (1.0 - gamma[i]);
        p_hat[i] = d_hat[i] + q_hat[i];
        let ok = d_hat[i] > 0.0
            && d_hat[i] <= 1.0 + VALIDITY_SLACK
            && p_hat[i] > 0.0
            && p_hat[i] <= 1.0 + VALIDITY_SLACK;
        valid[i] = ok;
        if !ok {
            n_out_of_range += 1;
        }
    }
    Ok(InclusionProbs {
        d_hat,
        gamma: gamma.to_vec(),
        q_hat,
        p_hat,
        valid,
        imputed,
        n_out_of_range,
    })
}
