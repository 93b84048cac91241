//! Variance-estimator study on synthetic populations.
//!
//! Each iteration regenerates a population of `N(0, 1)` covariates
//! `x1, x2, x3` and an outcome `y = β·(x1 + x2) + ε` whose mean is exactly
//! zero; `β` is chosen so that `x1 + x2` explain a requested share of the
//! outcome variance. A small simple random sample with `x3`-driven
//! nonresponse is blended with a convenience sample that self-selects on
//! `x1 + x2` — so the stronger the outcome depends on those covariates, the
//! more the blending correction matters — and the simultaneous
//! propensity-score blend estimates the mean.
//!
//! Three interval styles are scored against the true mean: the probability
//! sample alone with a linearized error, the blend with a linearized error
//! (which ignores the estimated-weight step), and the blend with a grouped
//! jackknife that refits every model on each replicate.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::blending::sps_weights;
use crate::dataset::{Dataset, Membership, Schema, Unit};
use crate::error::{Error, Result};
use crate::estimation::weighted_mean;
use crate::propensity::{assemble_inclusion, estimate_gamma, logistic, ResponseModel};
use crate::variance::{self, linearized_se_mean};

/// Random substreams reserved per iteration.
const STREAMS_PER_ITERATION: u64 = 8;
/// Two-sided 97.5% normal quantile.
const Z975: f64 = 1.959_963_984_540_054;
/// Log-odds of responding: `0.15 · x3`.
const RESPONSE_SLOPE: f64 = 0.15;
/// Self-selection log-odds: `-4.2 + 0.5 (x1 + x2)`.
const CONV_INTERCEPT: f64 = -4.2;
const CONV_SLOPE: f64 = 0.5;

/// Configuration of the synthetic study.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    /// Shares of outcome variance explained by the selection covariates.
    pub r_squared: Vec<f64>,
    /// Monte Carlo iterations per share.
    pub iterations: usize,
    /// Master seed.
    pub seed: u64,
    /// Jackknife groups.
    pub groups: usize,
    /// Population size drawn each iteration.
    pub population: usize,
    /// Simple-random-sample size.
    pub sample_size: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            r_squared: vec![0.0, 0.25, 0.5, 0.75, 0.9],
            iterations: 1000,
            seed: 20_240_816,
            groups: variance::DEFAULT_GROUPS,
            population: 10_000,
            sample_size: 200,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if self.r_squared.is_empty() {
            return Err(Error::BadConfig("no variance shares requested".into()));
        }
        for &r2 in &self.r_squared {
            if !(0.0..1.0).contains(&r2) {
                return Err(Error::BadConfig(format!(
                    "variance share must lie in [0, 1), got {r2}"
                )));
            }
        }
        if self.iterations == 0 {
            return Err(Error::BadConfig("iterations must be positive".into()));
        }
        if self.groups < 2 {
            return Err(Error::BadConfig("need at least 2 jackknife groups".into()));
        }
        if self.sample_size < 2 || self.sample_size >= self.population {
            return Err(Error::BadConfig(format!(
                "sample size {} must lie in [2, population {})",
                self.sample_size, self.population
            )));
        }
        Ok(())
    }
}

/// Monte Carlo summary for one variance share.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticCell {
    pub r_squared: f64,
    pub iterations: usize,
    /// Iterations where some model or replicate failed (excluded from all
    /// the summaries).
    pub failures: usize,
    /// Mean blended estimate (the true mean is zero).
    pub mean_estimate: f64,
    /// Share of probability-only intervals covering the true mean.
    pub coverage_prob_only: f64,
    /// Share of linearized blend intervals covering the true mean.
    pub coverage_linearized: f64,
    /// Share of jackknife blend intervals covering the true mean.
    pub coverage_jackknife: f64,
    pub mean_se_prob_only: f64,
    pub mean_se_linearized: f64,
    pub mean_se_jackknife: f64,
}

struct IterStat {
    theta_prob: f64,
    se_prob: f64,
    theta: f64,
    se_lin: f64,
    se_jk: f64,
}

struct Population {
    x: Vec<[f64; 3]>,
    y: Vec<f64>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn generate_population(rng: &mut ChaCha8Rng, size: usize, r_squared: f64) -> Population {
    let beta = (r_squared / 2.0).sqrt();
    let noise_sd = (1.0 - r_squared).sqrt();
    let mut x = Vec::with_capacity(size);
    let mut y = Vec::with_capacity(size);
    for _ in 0..size {
        let x1: f64 = rng.sample(StandardNormal);
        let x2: f64 = rng.sample(StandardNormal);
        let x3: f64 = rng.sample(StandardNormal);
        let eps: f64 = rng.sample(StandardNormal);
        x.push([x1, x2, x3]);
        y.push(beta * (x1 + x2) + noise_sd * eps);
    }
    Population { x, y }
}

struct BlendFit {
    theta: f64,
    /// Simultaneous propensity-score weights for all units.
    weights: Vec<f64>,
    /// Estimated design-times-response inclusion probabilities.
    d_hat: Vec<f64>,
}

/// Blended mean of `sub` with full model refits: response on `x3` over the
/// frame (kept nonrespondents plus the present probability units),
/// membership on `(x1, x2)`, then simultaneous propensity-score weights.
/// Everyone is on the frame, so response predictions apply to every pooled
/// unit, convenience units included.
fn blended_mean(sub: &Dataset, nonresp_x3: &[f64], gamma_vars: &[String]) -> Result<BlendFit> {
    let prob_rows = sub.prob_indices();
    let n_frame = nonresp_x3.len() + prob_rows.len();
    let mut frame = DMatrix::zeros(n_frame, 2);
    let mut responded = vec![false; n_frame];
    for (r, &x3) in nonresp_x3.iter().enumerate() {
        frame[(r, 0)] = 1.0;
        frame[(r, 1)] = x3;
    }
    for (k, &i) in prob_rows.iter().enumerate() {
        let r = nonresp_x3.len() + k;
        frame[(r, 0)] = 1.0;
        frame[(r, 1)] = sub.units()[i].x[2];
        responded[r] = true;
    }
    let model = ResponseModel::fit(&frame, &responded)?;
    let mut pooled = DMatrix::zeros(sub.len(), 2);
    for (i, unit) in sub.units().iter().enumerate() {
        pooled[(i, 0)] = 1.0;
        pooled[(i, 1)] = unit.x[2];
    }
    let r_hat = model.predict(&pooled);
    let gamma = estimate_gamma(sub, gamma_vars)?;
    let probs = assemble_inclusion(sub, &gamma.gamma, &r_hat)?;
    let ws = sps_weights(&probs)?;
    let y: Vec<f64> = sub
        .units()
        .iter()
        .map(|u| u.y[0].expect("simulated outcomes are complete"))
        .collect();
    let theta = weighted_mean(&y, &ws.weights)?;
    Ok(BlendFit {
        theta,
        weights: ws.weights,
        d_hat: probs.d_hat,
    })
}

fn run_iteration(config: &SyntheticConfig, r_squared: f64, iteration: u64) -> Option<IterStat> {
    let base = iteration * STREAMS_PER_ITERATION;
    let mut rng_pop = stream_rng(config.seed, base);
    let pop = generate_population(&mut rng_pop, config.population, r_squared);
    let d_star = config.sample_size as f64 / config.population as f64;

    let mut rng_sel = stream_rng(config.seed, base + 1);
    let mut selected =
        rand::seq::index::sample(&mut rng_sel, config.population, config.sample_size).into_vec();
    selected.sort_unstable();

    let mut rng_resp = stream_rng(config.seed, base + 2);
    let mut respondent = vec![false; config.population];
    let mut nonresp_x3 = Vec::new();
    for &i in &selected {
        let responds = rng_resp.gen::<f64>() < logistic(RESPONSE_SLOPE * pop.x[i][2]);
        if responds {
            respondent[i] = true;
        } else {
            nonresp_x3.push(pop.x[i][2]);
        }
    }

    let mut rng_conv = stream_rng(config.seed, base + 3);
    let mut units = Vec::new();
    for i in 0..config.population {
        let lin = CONV_INTERCEPT + CONV_SLOPE * (pop.x[i][0] + pop.x[i][1]);
        let opted_in = rng_conv.gen::<f64>() < logistic(lin);
        if respondent[i] {
            units.push(Unit {
                id: format!("p{i}"),
                membership: Membership::Prob,
                d_star: Some(d_star),
                r_hat: None,
                x: pop.x[i].to_vec(),
                y: vec![Some(pop.y[i])],
            });
        } else if opted_in {
            units.push(Unit {
                id: format!("c{i}"),
                membership: Membership::Conv,
                // The simple random sample draws from the whole population,
                // so the design probability is known for opt-in units too.
                d_star: Some(d_star),
                r_hat: None,
                x: pop.x[i].to_vec(),
                y: vec![Some(pop.y[i])],
            });
        }
    }

    let schema = Schema::new(["x1", "x2", "x3"], ["y"]).ok()?;
    let ds = Dataset::new(schema, units).ok()?;
    let gamma_vars: Vec<String> = vec!["x1".into(), "x2".into()];

    let fit = blended_mean(&ds, &nonresp_x3, &gamma_vars).ok()?;
    let y: Vec<f64> = ds
        .units()
        .iter()
        .map(|u| u.y[0].expect("simulated outcomes are complete"))
        .collect();
    let theta = fit.theta;
    let se_lin = linearized_se_mean(&y, &fit.weights).ok()?;

    // Probability sample alone, weighted by inverse design-times-response
    // probabilities.
    let prob_rows = ds.prob_indices();
    let y1: Vec<f64> = prob_rows.iter().map(|&i| y[i]).collect();
    let w1: Vec<f64> = prob_rows.iter().map(|&i| 1.0 / fit.d_hat[i]).collect();
    let theta_prob = weighted_mean(&y1, &w1).ok()?;
    let se_prob = linearized_se_mean(&y1, &w1).ok()?;

    let group_seed: u64 = stream_rng(config.seed, base + 4).gen();
    let jk = variance::jackknife(&ds, config.groups, group_seed, |sub| {
        blended_mean(sub, &nonresp_x3, &gamma_vars).map(|fit| vec![fit.theta])
    })
    .ok()?;
    Some(IterStat {
        theta_prob,
        se_prob,
        theta,
        se_lin,
        se_jk: jk.ses[0],
    })
}

/// Run every requested variance share.
pub fn run_synthetic(config: &SyntheticConfig) -> Result<Vec<SyntheticCell>> {
    config.validate()?;
    let mut cells = Vec::with_capacity(config.r_squared.len());
    for &r_squared in &config.r_squared {
        let stats: Vec<Option<IterStat>> = (0..config.iterations as u64)
            .into_par_iter()
            .map(|k| run_iteration(config, r_squared, k))
            .collect();
        let ok: Vec<&IterStat> = stats.iter().flatten().collect();
        let n = ok.len().max(1) as f64;
        let covered = |f: &dyn Fn(&IterStat) -> (f64, f64)| -> f64 {
            ok.iter()
                .filter(|s| {
                    let (t, se) = f(s);
                    t.abs() <= Z975 * se
                })
                .count() as f64
                / n
        };
        cells.push(SyntheticCell {
            r_squared,
            iterations: config.iterations,
            failures: config.iterations - ok.len(),
            mean_estimate: ok.iter().map(|s| s.theta).sum::<f64>() / n,
            coverage_prob_only: covered(&|s| (s.theta_prob, s.se_prob)),
            coverage_linearized: covered(&|s| (s.theta, s.se_lin)),
            coverage_jackknife: covered(&|s| (s.theta, s.se_jk)),
            mean_se_prob_only: ok.iter().map(|s| s.se_prob).sum::<f64>() / n,
            mean_se_linearized: ok.iter().map(|s| s.se_lin).sum::<f64>() / n,
            mean_se_jackknife: ok.iter().map(|s| s.se_jk).sum::<f64>() / n,
        });
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SyntheticConfig {
        SyntheticConfig {
            r_squared: vec![0.5],
            iterations: 24,
            groups: 10,
            population: 2_000,
            sample_size: 100,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn tiny_run_is_deterministic_and_sane() {
        let config = small_config();
        let cells = run_synthetic(&config).unwrap();
        assert_eq!(cells.len(), 1);
        let c = &cells[0];
        assert_eq!(c.iterations, 24);
        assert!(c.failures <= 4, "{} failures", c.failures);
        for cov in [
            c.coverage_prob_only,
            c.coverage_linearized,
            c.coverage_jackknife,
        ] {
            assert!((0.0..=1.0).contains(&cov));
        }
        for se in [
            c.mean_se_prob_only,
            c.mean_se_linearized,
            c.mean_se_jackknife,
        ] {
            assert!(se > 0.0 && se < 1.0, "standard error {se}");
        }
        assert!(
            c.mean_estimate.abs() < 0.5,
            "mean estimate {}",
            c.mean_estimate
        );
        // The jackknife tracks the extra estimated-weight variability, so on
        // average it should not undercut the linearized error.
        assert!(c.mean_se_jackknife > 0.5 * c.mean_se_linearized);

        let again = run_synthetic(&config).unwrap();
        assert_eq!(cells, again);
    }

    #[test]
    fn coverage_is_reasonable_when_outcome_ignores_selection() {
        let config = SyntheticConfig {
            r_squared: vec![0.0],
            iterations: 60,
            ..small_config()
        };
        let c = &run_synthetic(&config).unwrap()[0];
        assert!(c.coverage_linearized >= 0.8, "{}", c.coverage_linearized);
        assert!(c.coverage_jackknife >= 0.8, "{}", c.coverage_jackknife);
        assert!(c.coverage_prob_only >= 0.8, "{}", c.coverage_prob_only);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut c = SyntheticConfig::default();
        c.r_squared = vec![];
        assert!(run_synthetic(&c).is_err());
        let mut c = SyntheticConfig::default();
        c.r_squared = vec![1.0];
        assert!(run_synthetic(&c).is_err());
        let mut c = SyntheticConfig::default();
        c.iterations = 0;
        assert!(run_synthetic(&c).is_err());
        let mut c = SyntheticConfig::default();
        c.groups = 1;
        assert!(run_synthetic(&c).is_err());
        let mut c = SyntheticConfig::default();
        c.sample_size = c.population;
        assert!(run_synthetic(&c).is_err());
    }
}
