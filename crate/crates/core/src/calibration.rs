//! Calibration weighting: generalized raking of base weights to benchmark
//! totals, benchmark estimation from the probability sample, and the two
//! calibrated blending schemes.
//!
//! Raking uses the linear calibration metric with optional truncation of the
//! weight ratio `vᵢ/ωᵢ` to `[lower, upper]` (default `[0, ∞)`, which keeps
//! weights non-negative): `vᵢ = ωᵢ · F(xᵢᵀξ)` with `F(u) = clamp(1+u, L, U)`,
//! solved for `ξ` by a damped Newton iteration on the calibration residual
//! `Xᵀv − t`. Without active bounds this is ordinary linear calibration and
//! converges in a single step.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::blending::{kish_kappa, KappaRule, Scheme, WeightSet};
use crate::dataset::{Dataset, Membership};
use crate::error::{Error, Result};
use crate::propensity::{numeric_rank, InclusionProbs};

/// Column name for the population-size constraint.
pub const INTERCEPT: &str = "(intercept)";

/// Where a benchmark total came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Supplied from an external source (census, registry).
    Known,
    /// Estimated from the probability sample with design weights.
    HtEstimated,
    /// Estimated from the probability sample after calibrating it to
    /// known totals.
    TwoStage,
}

/// Named benchmark totals the weights must reproduce.
#[derive(Debug, Clone)]
pub struct BenchmarkVector {
    pub names: Vec<String>,
    pub totals: Vec<f64>,
    pub provenance: Provenance,
}

impl BenchmarkVector {
    pub fn new<S: Into<String>>(
        names: impl IntoIterator<Item = S>,
        totals: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::BadArgument("no benchmark constraints given".into()));
        }
        if names.len() != totals.len() {
            return Err(Error::BadArgument(format!(
                "{} benchmark names but {} totals",
                names.len(),
                totals.len()
            )));
        }
        for (name, &t) in names.iter().zip(&totals) {
            if !t.is_finite() {
                return Err(Error::BadArgument(format!(
                    "benchmark total for `{name}` is {t}"
                )));
            }
        }
        for (i, name) in names.iter().enumerate() {
            if names[..i].contains(name) {
                return Err(Error::BadArgument(format!("duplicate benchmark `{name}`")));
            }
        }
        Ok(BenchmarkVector {
            names,
            totals,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Constraint matrix for the given rows, columns in benchmark order;
    /// the `(intercept)` name becomes a column of ones.
    pub fn design_for(&self, ds: &Dataset, rows: &[usize]) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::<f64>::zeros(rows.len(), self.names.len());
        for (j, name) in self.names.iter().enumerate() {
            if name == INTERCEPT {
                for r in 0..rows.len() {
                    m[(r, j)] = 1.0;
                }
                continue;
            }
            let column = ds.variable(name)?;
            for (r, &i) in rows.iter().enumerate() {
                match column[i] {
                    Some(v) => m[(r, j)] = v,
                    None => {
                        return Err(Error::MissingValue {
                            id: ds.units()[i].id.clone(),
                            column: name.clone(),
                        })
                    }
                }
            }
        }
        Ok(m)
    }
}

/// Controls for the raking iteration.
#[derive(Debug, Clone, Copy)]
pub struct RakeOptions {
    /// Lower bound on the weight ratio `vᵢ/ωᵢ`.
    pub lower: f64,
    /// Upper bound on the weight ratio.
    pub upper: f64,
    pub max_iter: usize,
    /// Convergence tolerance on `|Xᵀv − t|ⱼ / max(1, |tⱼ|)`.
    pub tol: f64,
}

impl Default for RakeOptions {
    fn default() -> Self {
        RakeOptions {
            lower: 0.0,
            upper: f64::INFINITY,
            max_iter: 50,
            tol: 1e-8,
        }
    }
}

/// Result of a raking run. Nonconvergence is reported in the flags rather
/// than as an error so callers can inspect the residual.
#[derive(Debug, Clone)]
pub struct RakingSolution {
    pub weights: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Largest scaled calibration residual at the final weights.
    pub max_rel_residual: f64,
    /// Units whose weight ratio sits at the lower / upper bound.
    pub n_lower: usize,
    pub n_upper: usize,
}

const MAX_HALVINGS: usize = 20;

fn ratio(u: f64, opts: &RakeOptions) -> f64 {
    (1.0 + u).clamp(opts.lower, opts.upper)
}

fn residual_norm(x: &DMatrix<f64>, v: &DVector<f64>, t: &[f64]) -> f64 {
    let fitted = x.transpose() * v;
    fitted
        .iter()
        .zip(t)
        .map(|(&f, &t)| (f - t).abs() / t.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Adjust `base_weights` so that `Xᵀv = targets`, moving each weight as
/// little as the linear calibration metric allows and truncating the
/// adjustment ratio to the configured bounds.
pub fn rake(
    x: &DMatrix<f64>,
    base_weights: &[f64],
    targets: &[f64],
    opts: &RakeOptions,
) -> Result<RakingSolution> {
    let n = x.nrows();
    let p = x.ncols();
    if base_weights.len() != n {
        return Err(Error::BadArgument(format!(
            "constraint matrix has {n} rows but {} base weights",
            base_weights.len()
        )));
    }
    if targets.len() != p {
        return Err(Error::BadArgument(format!(
            "constraint matrix has {p} columns but {} targets",
            targets.len()
        )));
    }
    if p == 0 {
        return Err(Error::BadArgument("no calibration constraints".into()));
    }
    if !(opts.lower >= 0.0 && opts.lower < opts.upper) {
        return Err(Error::BadArgument(format!(
            "ratio bounds [{}, {}] are not ordered and non-negative",
            opts.lower, opts.upper
        )));
    }
    let mut base_sum = 0.0;
    for &w in base_weights {
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::BadArgument(format!("base weight {w} is not usable")));
        }
        base_sum += w;
    }
    if !(base_sum > 0.0) {
        return Err(Error::BadArgument("base weights sum to zero".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::BadArgument(
            "constraint matrix has non-finite entries".into(),
        ));
    }
    // The Newton system is X'DX with D ∝ base weights; require the weighted
    // constraint matrix to have full column rank.
    let weighted = DMatrix::from_fn(n, p, |i, j| base_weights[i].sqrt() * x[(i, j)]);
    let rank = numeric_rank(&weighted, 1e-10);
    if rank < p {
        return Err(Error::RankDeficient { rank, cols: p });
    }

    let omega = DVector::from_column_slice(base_weights);
    let mut xi = DVector::<f64>::zeros(p);
    let weights_at = |xi: &DVector<f64>| -> DVector<f64> {
        let u = x * xi;
        DVector::from_fn(n, |i, _| omega[i] * ratio(u[i], opts))
    };
    let mut v = weights_at(&xi);
    let mut obj = residual_norm(x, &v, targets);
    let mut iterations = 0;

    while obj > opts.tol && iterations < opts.max_iter {
        iterations += 1;
        let u = x * &xi;
        // Jacobian of the residual: X'DX, with inactive-bound indicator.
        let mut jac = DMatrix::<f64>::zeros(p, p);
        for i in 0..n {
            let inside = 1.0 + u[i] > opts.lower && 1.0 + u[i] < opts.upper;
            if inside && omega[i] > 0.0 {
                let xi_row = x.row(i).transpose();
                jac += omega[i] * &xi_row * xi_row.transpose();
            }
        }
        let fitted = x.transpose() * &v;
        let r = DVector::from_fn(p, |j, _| fitted[j] - targets[j]);
        let delta = match jac.clone().cholesky() {
            Some(ch) => ch.solve(&(-&r)),
            None => match jac.lu().solve(&(-&r)) {
                Some(d) => d,
                None => break,
            },
        };
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let cand = &xi + step * &delta;
            let cand_v = weights_at(&cand);
            let cand_obj = residual_norm(x, &cand_v, targets);
            if cand_obj < obj {
                xi = cand;
                v = cand_v;
                obj = cand_obj;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    let u = x * &xi;
    let mut n_lower = 0;
    let mut n_upper = 0;
    for i in 0..n {
        if 1.0 + u[i] <= opts.lower {
            n_lower += 1;
        } else if 1.0 + u[i] >= opts.upper {
            n_upper += 1;
        }
    }
    Ok(RakingSolution {
        weights: v.iter().cloned().collect(),
        converged: obj <= opts.tol,
        iterations,
        max_rel_residual: obj,
        n_lower,
        n_upper,
    })
}

/// Benchmark totals estimated from the probability sample by weighting with
/// inverse inclusion probabilities. The population-size constraint
/// `(intercept)` comes first.
pub fn estimate_benchmarks(
    ds: &Dataset,
    probs: &InclusionProbs,
    vars: &[String],
) -> Result<BenchmarkVector> {
    if probs.d_hat.len() != ds.len() {
        return Err(Error::BadArgument(format!(
            "{} inclusion probabilities for {} units",
            probs.d_hat.len(),
            ds.len()
        )));
    }
    let rows = ds.prob_indices();
    let mut names = vec![INTERCEPT.to_string()];
    names.extend(vars.iter().cloned());
    let bench = BenchmarkVector::new(names, vec![0.0; vars.len() + 1], Provenance::HtEstimated)?;
    let x = bench.design_for(ds, &rows)?;
    let mut totals = vec![0.0; bench.len()];
    for (r, &i) in rows.iter().enumerate() {
        let w = 1.0 / probs.d_hat[i];
        for (j, total) in totals.iter_mut().enumerate() {
            *total += w * x[(r, j)];
        }
    }
    BenchmarkVector::new(bench.names, totals, Provenance::HtEstimated)
}

/// Benchmark totals for `extra_vars` estimated from the probability sample
/// after calibrating it to externally `known` totals; the result carries the
/// known constraints first, then the estimated ones.
pub fn two_stage_benchmarks(
    ds: &Dataset,
    probs: &InclusionProbs,
    known: &BenchmarkVector,
    extra_vars: &[String],
    opts: &RakeOptions,
) -> Result<BenchmarkVector> {
    if extra_vars.is_empty() {
        return Err(Error::BadArgument(
            "no additional variables to estimate".into(),
        ));
    }
    for var in extra_vars {
        if known.names.contains(var) {
            return Err(Error::BadArgument(format!(
                "benchmark `{var}` is already known"
            )));
        }
    }
    let rows = ds.prob_indices();
    let x_known = known.design_for(ds, &rows)?;
    let base: Vec<f64> = rows.iter().map(|&i| 1.0 / probs.d_hat[i]).collect();
    let sol = rake(&x_known, &base, &known.totals, opts)?;
    if !sol.converged {
        return Err(Error::RakingNonconvergence(format!(
            "probability sample failed to calibrate to the known totals \
             (residual {:.3e} after {} iterations)",
            sol.max_rel_residual, sol.iterations
        )));
    }
    let extra = BenchmarkVector::new(
        extra_vars.iter().cloned(),
        vec![0.0; extra_vars.len()],
        Provenance::TwoStage,
    )?;
    let x_extra = extra.design_for(ds, &rows)?;
    let mut totals = known.totals.clone();
    for j in 0..extra_vars.len() {
        totals.push(
            (0..rows.len())
                .map(|r| sol.weights[r] * x_extra[(r, j)])
                .sum(),
        );
    }
    let mut names = known.names.clone();
    names.extend(extra_vars.iter().cloned());
    BenchmarkVector::new(names, totals, Provenance::TwoStage)
}

/// Starting weights for the raking iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RakeInit {
    /// Inverse estimated inclusion probabilities (pooled `1/p̂`, or
    /// per-sample `1/d̂` and `1/q̂`).
    Propensity,
    /// Equal weights summing to the estimated population size.
    Equal,
}

fn estimated_population(ds: &Dataset, probs: &InclusionProbs) -> f64 {
    ds.prob_indices()
        .iter()
        .map(|&i| 1.0 / probs.d_hat[i])
        .sum()
}

/// Simultaneous calibration: rake the pooled sample to the benchmarks.
pub fn sc_weights(
    ds: &Dataset,
    probs: &InclusionProbs,
    bench: &BenchmarkVector,
    init: RakeInit,
    opts: &RakeOptions,
) -> Result<WeightSet> {
    let rows: Vec<usize> = (0..ds.len()).collect();
    let x = bench.design_for(ds, &rows)?;
    let base = match init {
        RakeInit::Propensity => probs.p_hat.iter().map(|&p| 1.0 / p).collect::<Vec<f64>>(),
        RakeInit::Equal => {
            let n_hat = estimated_population(ds, probs);
            vec![n_hat / ds.len() as f64; ds.len()]
        }
    };
    let sol = rake(&x, &base, &bench.totals, opts)?;
    if !sol.converged {
        return Err(Error::RakingNonconvergence(format!(
            "pooled sample failed to calibrate (residual {:.3e} after {} iterations)",
            sol.max_rel_residual, sol.iterations
        )));
    }
    WeightSet::new(Scheme::Sc, sol.weights, None)
}

/// Disjoint calibration: rake each sample to the same benchmarks, then blend
/// the two calibrated vectors with `κ`.
pub fn dc_weights(
    ds: &Dataset,
    probs: &InclusionProbs,
    bench: &BenchmarkVector,
    rule: KappaRule,
    init: RakeInit,
    opts: &RakeOptions,
) -> Result<WeightSet> {
    for (unit, &q) in ds.units().iter().zip(&probs.q_hat) {
        if unit.membership == Membership::Conv && q <= 0.0 {
            return Err(Error::ZeroConvenienceProb {
                id: unit.id.clone(),
            });
        }
    }
    let n_hat = estimated_population(ds, probs);
    let rake_sample = |rows: &[usize], base: Vec<f64>, label: &str| -> Result<Vec<f64>> {
        let x = bench.design_for(ds, rows)?;
        let sol = rake(&x, &base, &bench.totals, opts).map_err(|e| match e {
            Error::RankDeficient { rank, cols } => Error::RakingNonconvergence(format!(
                "{label} sample cannot meet the benchmarks: constraint matrix \
                 has rank {rank} of {cols}"
            )),
            other => other,
        })?;
        if !sol.converged {
            return Err(Error::RakingNonconvergence(format!(
                "{label} sample failed to calibrate (residual {:.3e} after {} iterations)",
                sol.max_rel_residual, sol.iterations
            )));
        }
        Ok(sol.weights)
    };
    let rows1 = ds.prob_indices();
    let base1 = match init {
        RakeInit::Propensity => rows1.iter().map(|&i| 1.0 / probs.d_hat[i]).collect(),
        RakeInit::Equal => vec![n_hat / rows1.len() as f64; rows1.len()],
    };
    let v1 = rake_sample(&rows1, base1, "probability")?;
    let rows2 = ds.conv_indices();
    let base2 = match init {
        RakeInit::Propensity => rows2.iter().map(|&i| 1.0 / probs.q_hat[i]).collect(),
        RakeInit::Equal => vec![n_hat / rows2.len() as f64; rows2.len()],
    };
    let v2 = rake_sample(&rows2, base2, "convenience")?;

    let kappa = match rule {
        KappaRule::Auto => kish_kappa(&v1, &v2)?,
        KappaRule::Fixed(k) => {
            if !(k.is_finite() && (0.0..=1.0).contains(&k)) {
                return Err(Error::BadArgument(format!(
                    "blending coefficient {k} lies outside [0, 1]"
                )));
            }
            k
        }
    };
    let mut weights = vec![0.0; ds.len()];
    for (r, &i) in rows1.iter().enumerate() {
        weights[i] = kappa * v1[r];
    }
    for (r, &i) in rows2.iter().enumerate() {
        weights[i] = (1.0 - kappa) * v2[r];
    }
    WeightSet::new(Scheme::Dc, weights, Some(kappa))
}
