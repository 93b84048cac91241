//! End-to-end orchestration: from a blended data set and a weighting
//! request to weights, estimates, and adequacy tests.
//!
//! Every step that depends on the data — the membership model, benchmark
//! estimation, raking — is rerun inside each jackknife replicate, so the
//! replicate variance reflects the estimation of the weights themselves.

use serde::Serialize;

use crate::blending::{
    dps_weights, sps_weights, trim_weights, KappaRule, Scheme, TrimSummary, WeightSet,
};
use crate::calibration::{
    dc_weights, estimate_benchmarks, sc_weights, two_stage_benchmarks, BenchmarkVector, Provenance,
    RakeInit, RakeOptions, INTERCEPT,
};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimation::{
    adequacy_test, weighted_mean, AdequacyTest, EstimateReport, VarianceMethod,
};
use crate::propensity::{assemble_inclusion, estimate_gamma, GammaEstimate, InclusionProbs};
use crate::variance::{jackknife, linearized_se_mean, DEFAULT_GROUPS};

/// Everything needed to turn a data set into analysis weights.
#[derive(Debug, Clone)]
pub struct WeightSpec {
    pub scheme: Scheme,
    /// Covariates of the sample-membership model.
    pub model_vars: Vec<String>,
    /// Calibration variables; defaults to `model_vars`.
    pub calibration_vars: Option<Vec<String>>,
    pub kappa: KappaRule,
    /// Symmetric trimming fraction applied to the final weights.
    pub trim_pct: f64,
    pub rake_init: RakeInit,
    pub rake_options: RakeOptions,
    /// Externally known benchmark totals, if any. Totals for calibration
    /// variables not covered here are estimated from the probability
    /// sample (two-stage when partially covered).
    pub known_benchmarks: Option<BenchmarkVector>,
}

impl WeightSpec {
    pub fn new(scheme: Scheme, model_vars: Vec<String>) -> Self {
        WeightSpec {
            scheme,
            model_vars,
            calibration_vars: None,
            kappa: KappaRule::Auto,
            trim_pct: 0.01,
            rake_init: RakeInit::Propensity,
            rake_options: RakeOptions::default(),
            known_benchmarks: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.trim_pct.is_finite() && (0.0..0.5).contains(&self.trim_pct)) {
            return Err(Error::BadConfig(format!(
                "trim fraction {} lies outside [0, 0.5)",
                self.trim_pct
            )));
        }
        if let KappaRule::Fixed(k) = self.kappa {
            if !(k.is_finite() && (0.0..=1.0).contains(&k)) {
                return Err(Error::BadConfig(format!(
                    "fixed blending coefficient {k} lies outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// Calibration variables in effect: the explicit list, or the
    /// membership-model covariates when none was given.
    pub fn calibration_vars(&self) -> &[String] {
        self.calibration_vars.as_deref().unwrap_or(&self.model_vars)
    }
}

/// Estimation controls.
#[derive(Debug, Clone)]
pub struct EstimateSpec {
    /// Outcomes to estimate; empty means every outcome in the schema.
    pub outcomes: Vec<String>,
    pub variance: VarianceMethod,
    /// Jackknife groups (ignored for linearized variances).
    pub groups: usize,
    /// Seed for the jackknife group assignment.
    pub seed: u64,
    /// Two-sided confidence level parameter; intervals cover `1 − alpha`.
    pub alpha: f64,
}

impl EstimateSpec {
    pub fn new(variance: VarianceMethod) -> Self {
        EstimateSpec {
            outcomes: Vec::new(),
            variance,
            groups: DEFAULT_GROUPS,
            seed: 0,
            alpha: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::BadConfig(format!(
                "alpha {} lies outside (0, 1)",
                self.alpha
            )));
        }
        if self.variance == VarianceMethod::Jackknife && self.groups < 2 {
            return Err(Error::BadConfig(format!(
                "need at least 2 jackknife groups, got {}",
                self.groups
            )));
        }
        Ok(())
    }
}

/// Weights plus the fitted quantities they were built from.
#[derive(Debug, Clone)]
pub struct WeightsOutput {
    pub weights: WeightSet,
    pub probs: InclusionProbs,
    pub gamma: GammaEstimate,
    /// Benchmarks used (calibrated schemes only).
    pub benchmarks: Option<BenchmarkVector>,
    pub trim: Option<TrimSummary>,
}

/// Decide the benchmark totals for the calibrated schemes: fully known,
/// fully estimated from the probability sample, or two-stage.
pub fn resolve_benchmarks(
    ds: &Dataset,
    probs: &InclusionProbs,
    spec: &WeightSpec,
) -> Result<BenchmarkVector> {
    let mut targets = vec![INTERCEPT.to_string()];
    targets.extend(spec.calibration_vars().iter().cloned());
    match &spec.known_benchmarks {
        None => estimate_benchmarks(ds, probs, &targets[1..]),
        Some(known) => {
            for name in &known.names {
                if !targets.contains(name) {
                    return Err(Error::BadConfig(format!(
                        "known benchmark `{name}` is not among the calibration constraints"
                    )));
                }
            }
            let extra: Vec<String> = targets
                .iter()
                .filter(|t| !known.names.contains(t))
                .cloned()
                .collect();
            if extra.is_empty() {
                // Reorder into target order for stable reporting.
                let totals = targets
                    .iter()
                    .map(|t| {
                        let j = known.names.iter().position(|n| n == t).expect("covered");
                        known.totals[j]
                    })
                    .collect();
                BenchmarkVector::new(targets, totals, Provenance::Known)
            } else {
                two_stage_benchmarks(ds, probs, known, &extra, &spec.rake_options)
            }
        }
    }
}

/// Scheme dispatch from already-assembled inclusion probabilities. Used
/// directly by simulations that share one membership fit across schemes.
pub fn weights_from_probs(
    ds: &Dataset,
    probs: &InclusionProbs,
    spec: &WeightSpec,
) -> Result<(WeightSet, Option<BenchmarkVector>, Option<TrimSummary>)> {
    let (mut weights, benchmarks) = match spec.scheme {
        Scheme::Sps => (sps_weights(probs)?, None),
        Scheme::Dps => (dps_weights(ds, probs, spec.kappa)?, None),
        Scheme::Sc => {
            let bench = resolve_benchmarks(ds, probs, spec)?;
            let ws = sc_weights(ds, probs, &bench, spec.rake_init, &spec.rake_options)?;
            (ws, Some(bench))
        }
        Scheme::Dc => {
            let bench = resolve_benchmarks(ds, probs, spec)?;
            let ws = dc_weights(
                ds,
                probs,
                &bench,
                spec.kappa,
                spec.rake_init,
                &spec.rake_options,
            )?;
            (ws, Some(bench))
        }
    };
    let trim = if spec.trim_pct > 0.0 {
        Some(trim_weights(&mut weights, spec.trim_pct)?)
    } else {
        None
    };
    Ok((weights, benchmarks, trim))
}

/// Full weighting pipeline: membership model, inclusion probabilities,
/// scheme weights, trimming.
pub fn compute_weights(ds: &Dataset, spec: &WeightSpec) -> Result<WeightsOutput> {
    spec.validate()?;
    let r_hat: Vec<f64> = ds.units().iter().map(|u| u.r_hat.unwrap_or(1.0)).collect();
    let gamma = estimate_gamma(ds, &spec.model_vars)?;
    let probs = assemble_inclusion(ds, &gamma.gamma, &r_hat)?;
    let (weights, benchmarks, trim) = weights_from_probs(ds, &probs, spec)?;
    Ok(WeightsOutput {
        weights,
        probs,
        gamma,
        benchmarks,
        trim,
    })
}

fn outcome_list(ds: &Dataset, requested: &[String]) -> Result<Vec<String>> {
    if requested.is_empty() {
        let all = ds.schema().outcomes.clone();
        if all.is_empty() {
            return Err(Error::BadConfig("the schema declares no outcomes".into()));
        }
        return Ok(all);
    }
    for name in requested {
        if !ds.schema().outcomes.contains(name) {
            return Err(Error::UnknownVariable(name.clone()));
        }
    }
    Ok(requested.to_vec())
}

fn mean_of_outcome(
    ds: &Dataset,
    weights: &[f64],
    outcome: &str,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let values = ds.variable(outcome)?;
    let mut y = Vec::new();
    let mut w = Vec::new();
    for i in 0..ds.len() {
        if let Some(v) = values[i] {
            y.push(v);
            w.push(weights[i]);
        }
    }
    let mean = weighted_mean(&y, &w)?;
    Ok((mean, y, w))
}

/// Weighted means of the requested outcomes with standard errors by the
/// requested method.
pub fn estimate_means(
    ds: &Dataset,
    wspec: &WeightSpec,
    espec: &EstimateSpec,
) -> Result<Vec<EstimateReport>> {
    espec.validate()?;
    let outcomes = outcome_list(ds, &espec.outcomes)?;
    let output = compute_weights(ds, wspec)?;
    let mut reports = Vec::with_capacity(outcomes.len());
    match espec.variance {
        VarianceMethod::Linearized => {
            for outcome in &outcomes {
                let (mean, y, w) = mean_of_outcome(ds, &output.weights.weights, outcome)?;
                let se = linearized_se_mean(&y, &w)?;
                reports.push(EstimateReport::new(
                    outcome.clone(),
                    mean,
                    se,
                    &w,
                    VarianceMethod::Linearized,
                    espec.alpha,
                )?);
            }
        }
        VarianceMethod::Jackknife => {
            let jk = jackknife(ds, espec.groups, espec.seed, |sub| {
                let rep = compute_weights(sub, wspec)?;
                outcomes
                    .iter()
                    .map(|o| mean_of_outcome(sub, &rep.weights.weights, o).map(|(m, _, _)| m))
                    .collect()
            })?;
            for (j, outcome) in outcomes.iter().enumerate() {
                let (mean, _, w) = mean_of_outcome(ds, &output.weights.weights, outcome)?;
                reports.push(EstimateReport::new(
                    outcome.clone(),
                    mean,
                    jk.ses[j],
                    &w,
                    VarianceMethod::Jackknife,
                    espec.alpha,
                )?);
            }
        }
    }
    Ok(reports)
}

/// Blending-adequacy tests for the requested outcomes under a disjoint
/// weighting specification.
pub fn run_adequacy(
    ds: &Dataset,
    wspec: &WeightSpec,
    outcomes: &[String],
) -> Result<Vec<AdequacyTest>> {
    let list = outcome_list(ds, outcomes)?;
    let output = compute_weights(ds, wspec)?;
    list.iter()
        .map(|o| adequacy_test(ds, o, &output.weights))
        .collect()
}

/// One row of a covariate-balance table: weighted means of an auxiliary
/// variable under the blended weights, by sample and pooled, next to the
/// benchmark mean when one is in play.
#[derive(Debug, Clone, Serialize)]
pub struct BalanceRow {
    pub variable: String,
    pub mean_prob: f64,
    pub mean_conv: f64,
    pub mean_pooled: f64,
    /// Benchmark total divided by the benchmark population size, when the
    /// variable is a calibration constraint.
    pub benchmark_mean: Option<f64>,
}

/// Weighted covariate balance of the pooled sample and of each sample
/// under the supplied weights.
pub fn balance_table(
    ds: &Dataset,
    weights: &WeightSet,
    benchmarks: Option<&BenchmarkVector>,
) -> Result<Vec<BalanceRow>> {
    let conv = ds.conv_indicator();
    let bench_mean = |name: &str| -> Option<f64> {
        let bench = benchmarks?;
        let size_pos = bench.names.iter().position(|n| n == INTERCEPT)?;
        let pos = bench.names.iter().position(|n| n == name)?;
        Some(bench.totals[pos] / bench.totals[size_pos])
    };
    let mut rows = Vec::new();
    for var in &ds.schema().auxiliaries {
        let values = ds.variable(var)?;
        let mut parts: [(Vec<f64>, Vec<f64>); 3] = Default::default();
        for i in 0..ds.len() {
            if let Some(v) = values[i] {
                let w = weights.weights[i];
                parts[2].0.push(v);
                parts[2].1.push(w);
                let g = usize::from(conv[i]);
                parts[g].0.push(v);
                parts[g].1.push(w);
            }
        }
        rows.push(BalanceRow {
            variable: var.clone(),
            mean_prob: weighted_mean(&parts[0].0, &parts[0].1)?,
            mean_conv: weighted_mean(&parts[1].0, &parts[1].1)?,
            mean_pooled: weighted_mean(&parts[2].0, &parts[2].1)?,
            benchmark_mean: bench_mean(var),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Membership, Schema, Unit};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// A blended data set with one continuous and one binary auxiliary and
    /// an outcome that depends on both.
    fn fixture(seed: u64, n_prob: usize, n_conv: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let schema = Schema::new(["z", "b"], ["y", "y2"]).unwrap();
        let mut units = Vec::new();
        for i in 0..(n_prob + n_conv) {
            let prob = i < n_prob;
            let z: f64 = rng.gen_range(-1.0..1.0);
            let b = f64::from(rng.gen_bool(if prob { 0.4 } else { 0.6 }));
            let y = 2.0 + 1.5 * z + 0.8 * b + rng.gen_range(-0.5..0.5);
            units.push(Unit {
                id: format!("u{i}"),
                membership: if prob {
                    Membership::Prob
                } else {
                    Membership::Conv
                },
                d_star: prob.then_some(0.08),
                r_hat: None,
                x: vec![z, b],
                y: vec![Some(y), Some(2.0 * y)],
            });
        }
        Dataset::new(schema, units).unwrap()
    }

    fn spec(scheme: Scheme) -> WeightSpec {
        let mut s = WeightSpec::new(scheme, vec!["z".into(), "b".into()]);
        s.trim_pct = 0.0;
        s
    }

    #[test]
    fn all_four_schemes_produce_valid_weights() {
        let ds = fixture(1, 60, 45);
        for scheme in [Scheme::Sps, Scheme::Dps, Scheme::Sc, Scheme::Dc] {
            let out = compute_weights(&ds, &spec(scheme)).unwrap();
            assert_eq!(out.weights.len(), ds.len());
            assert_eq!(out.weights.scheme, scheme);
            assert!(out
                .weights
                .weights
                .iter()
                .all(|&w| w.is_finite() && w >= 0.0));
            if scheme.is_disjoint() {
                let k = out.weights.kappa.expect("disjoint schemes carry kappa");
                assert!((0.0..=1.0).contains(&k));
            } else {
                assert!(out.weights.kappa.is_none());
            }
            if matches!(scheme, Scheme::Sc | Scheme::Dc) {
                assert!(out.benchmarks.is_some());
            }
        }
    }

    #[test]
    fn calibrated_schemes_meet_their_benchmarks() {
        let ds = fixture(2, 50, 40);
        for scheme in [Scheme::Sc, Scheme::Dc] {
            let out = compute_weights(&ds, &spec(scheme)).unwrap();
            let bench = out.benchmarks.as_ref().unwrap();
            let x = bench
                .design_for(&ds, &(0..ds.len()).collect::<Vec<_>>())
                .unwrap();
            for j in 0..bench.len() {
                let fitted: f64 = (0..ds.len())
                    .map(|i| out.weights.weights[i] * x[(i, j)])
                    .sum();
                assert_relative_eq!(fitted, bench.totals[j], max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn trimming_is_applied_and_summarized() {
        let ds = fixture(3, 60, 45);
        let mut s = spec(Scheme::Sps);
        s.trim_pct = 0.05;
        let out = compute_weights(&ds, &s).unwrap();
        let summary = out.trim.expect("trim summary present");
        assert_eq!(summary.pct, 0.05);
        assert_eq!(out.weights.trim_pct, 0.05);
        // The applied weights match an independent trim of the raw weights.
        assert!(summary.n_low + summary.n_high > 0);
        let max = out.weights.weights.iter().cloned().fold(0.0, f64::max);
        assert!(max <= summary.high * summary.rescale.max(1.0) + 1e-9);
    }

    #[test]
    fn benchmark_resolution_covers_all_three_paths() {
        let ds = fixture(4, 50, 30);
        let mut s = spec(Scheme::Sc);
        let gamma = estimate_gamma(&ds, &s.model_vars).unwrap();
        let r_hat = vec![1.0; ds.len()];
        let probs = assemble_inclusion(&ds, &gamma.gamma, &r_hat).unwrap();

        let estimated = resolve_benchmarks(&ds, &probs, &s).unwrap();
        assert_eq!(estimated.provenance, Provenance::HtEstimated);
        assert_eq!(estimated.names[0], INTERCEPT);

        s.known_benchmarks = Some(
            BenchmarkVector::new(
                ["z", INTERCEPT, "b"],
                vec![1.0, 600.0, 260.0],
                Provenance::Known,
            )
            .unwrap(),
        );
        let known = resolve_benchmarks(&ds, &probs, &s).unwrap();
        assert_eq!(known.provenance, Provenance::Known);
        assert_eq!(
            known.names,
            vec![INTERCEPT.to_string(), "z".to_string(), "b".to_string()]
        );
        assert_eq!(known.totals, vec![600.0, 1.0, 260.0]);

        s.known_benchmarks =
            Some(BenchmarkVector::new([INTERCEPT], vec![600.0], Provenance::Known).unwrap());
        let two_stage = resolve_benchmarks(&ds, &probs, &s).unwrap();
        assert_eq!(two_stage.provenance, Provenance::TwoStage);
        assert_relative_eq!(two_stage.totals[0], 600.0, epsilon = 1e-9);

        s.known_benchmarks =
            Some(BenchmarkVector::new(["nope"], vec![1.0], Provenance::Known).unwrap());
        assert!(matches!(
            resolve_benchmarks(&ds, &probs, &s).unwrap_err(),
            Error::BadConfig(_)
        ));
    }

    #[test]
    fn linearized_estimates_are_reported_per_outcome() {
        let ds = fixture(5, 60, 45);
        let espec = EstimateSpec::new(VarianceMethod::Linearized);
        let reports = estimate_means(&ds, &spec(Scheme::Sps), &espec).unwrap();
        assert_eq!(reports.len(), 2);
        assert_eq!(reports[0].estimand, "y");
        assert_eq!(reports[1].estimand, "y2");
        // The second outcome is exactly twice the first.
        assert_relative_eq!(
            reports[1].estimate,
            2.0 * reports[0].estimate,
            epsilon = 1e-10
        );
        assert_relative_eq!(reports[1].se, 2.0 * reports[0].se, epsilon = 1e-10);
        for r in &reports {
            assert!(r.se > 0.0);
            assert!(r.ci_low < r.estimate && r.estimate < r.ci_high);
            assert!(r.deff >= 1.0);
            assert_eq!(r.n_used, ds.len());
        }
    }

    #[test]
    fn jackknife_estimates_are_deterministic() {
        let ds = fixture(6, 70, 50);
        let mut espec = EstimateSpec::new(VarianceMethod::Jackknife);
        espec.groups = 10;
        espec.seed = 99;
        espec.outcomes = vec!["y".into()];
        let a = estimate_means(&ds, &spec(Scheme::Dps), &espec).unwrap();
        let b = estimate_means(&ds, &spec(Scheme::Dps), &espec).unwrap();
        assert_eq!(a[0].estimate, b[0].estimate);
        assert_eq!(a[0].se, b[0].se);
        assert!(a[0].se > 0.0);
        assert_eq!(a[0].variance_method, VarianceMethod::Jackknife);
        // Same point estimate as the linearized run.
        let lin = estimate_means(
            &ds,
            &spec(Scheme::Dps),
            &EstimateSpec {
                outcomes: vec!["y".into()],
                ..EstimateSpec::new(VarianceMethod::Linearized)
            },
        )
        .unwrap();
        assert_relative_eq!(a[0].estimate, lin[0].estimate, epsilon = 1e-12);
    }

    #[test]
    fn jackknife_and_linearized_ses_are_comparable() {
        let ds = fixture(7, 80, 60);
        let mut espec = EstimateSpec::new(VarianceMethod::Jackknife);
        espec.groups = 20;
        espec.outcomes = vec!["y".into()];
        let jk = estimate_means(&ds, &spec(Scheme::Sps), &espec).unwrap();
        let lin = estimate_means(
            &ds,
            &spec(Scheme::Sps),
            &EstimateSpec {
                outcomes: vec!["y".into()],
                ..EstimateSpec::new(VarianceMethod::Linearized)
            },
        )
        .unwrap();
        let ratio = jk[0].se / lin[0].se;
        assert!(
            (0.4..2.5).contains(&ratio),
            "jackknife/linearized se ratio {ratio}"
        );
    }

    #[test]
    fn missing_outcomes_shrink_n_used() {
        let mut ds = fixture(8, 40, 30);
        // Knock out y for the first five units.
        let mut units = ds.units().to_vec();
        for u in units.iter_mut().take(5) {
            u.y[0] = None;
        }
        ds = Dataset::new(ds.schema().clone(), units).unwrap();
        let espec = EstimateSpec {
            outcomes: vec!["y".into()],
            ..EstimateSpec::new(VarianceMethod::Linearized)
        };
        let reports = estimate_means(&ds, &spec(Scheme::Sps), &espec).unwrap();
        assert_eq!(reports[0].n_used, ds.len() - 5);
    }

    #[test]
    fn adequacy_runs_for_disjoint_and_refuses_simultaneous() {
        let ds = fixture(9, 60, 45);
        let tests = run_adequacy(&ds, &spec(Scheme::Dps), &["y".to_string()]).unwrap();
        assert_eq!(tests.len(), 1);
        assert!(tests[0].p_value > 0.0 && tests[0].p_value <= 1.0);
        assert!(matches!(
            run_adequacy(&ds, &spec(Scheme::Sps), &[]).unwrap_err(),
            Error::WrongScheme { .. }
        ));
    }

    #[test]
    fn balance_table_reports_all_auxiliaries() {
        let ds = fixture(10, 60, 45);
        let out = compute_weights(&ds, &spec(Scheme::Sc)).unwrap();
        let rows = balance_table(&ds, &out.weights, out.benchmarks.as_ref()).unwrap();
        assert_eq!(rows.len(), 2);
        for row in &rows {
            assert!(row.mean_pooled.is_finite());
            let bench = row
                .benchmark_mean
                .expect("calibrated variables have benchmarks");
            // Pooled calibration reproduces the benchmark means exactly.
            assert_relative_eq!(row.mean_pooled, bench, max_relative = 1e-6);
        }
    }

    #[test]
    fn unknown_outcome_is_rejected() {
        let ds = fixture(11, 40, 30);
        let espec = EstimateSpec {
            outcomes: vec!["nope".into()],
            ..EstimateSpec::new(VarianceMethod::Linearized)
        };
        assert!(matches!(
            estimate_means(&ds, &spec(Scheme::Sps), &espec).unwrap_err(),
            Error::UnknownVariable(_)
        ));
    }
}
