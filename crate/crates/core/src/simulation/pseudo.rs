//! Blending study on a fixed pseudo-population of service members.
//!
//! A population of 940 people carries eight roster covariates (always
//! available, including for nonrespondents) and two correlated outcome
//! scores, `depression` and `anxiety`. Each iteration draws
//!
//! 1. a probability sample (Bernoulli, inclusion probability 0.16) whose
//!    members respond with a probability driven by sex and age,
//! 2. an opt-in convenience sample whose self-selection depends on roster
//!    traits and, in some settings, on an outcome score directly; people who
//!    already responded to the probability sample are excluded from it,
//!
//! and then estimates the population mean of `depression` under eight
//! strategies: the probability sample alone, the pooled unweighted mean,
//! the four blending schemes, and the two post-hoc compromise estimates
//! built from per-sample means and a grouped-jackknife covariance.
//!
//! Settings differ in what the self-selection depends on and which
//! auxiliaries the models may use:
//!
//! | setting | self-selection            | auxiliaries            |
//! |---------|---------------------------|------------------------|
//! | 1       | roster only               | roster                 |
//! | 2       | roster only               | roster + anxiety       |
//! | 3       | roster + anxiety (`τ`)    | roster                 |
//! | 4       | roster + depression (`τ`) | roster                 |
//! | 5       | roster + depression (`τ`) | roster + anxiety       |
//!
//! Setting 4 is the hostile case: selection depends on the outcome itself
//! and no auxiliary tracks it. Setting 5 adds anxiety, a strong proxy for
//! depression, so adjustment partially recovers.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::blending::{dps_weights, kish_deff, sps_weights, KappaRule, WeightSet};
use crate::calibration::{
    dc_weights, estimate_benchmarks, rake, sc_weights, RakeInit, RakeOptions,
};
use crate::dataset::{Dataset, Membership, Schema, Unit};
use crate::error::{Error, Result};
use crate::estimation::{posthoc_blend, two_group_stat, weighted_mean};
use crate::propensity::{
    assemble_inclusion, estimate_gamma, logistic, InclusionProbs, ResponseModel,
};
use crate::simulation::{summarize_scheme, SchemeMetrics};
use crate::variance;

/// People in the fixed pseudo-population.
pub const POPULATION: usize = 940;
/// Frame inclusion probability of the probability sample.
const DESIGN_PROB: f64 = 0.16;
/// Roster covariates observed for every person.
const ROSTER: usize = 8;
/// Random substreams reserved per iteration.
const STREAMS_PER_ITERATION: u64 = 8;
/// Two-sided level of the blending-adequacy rejection tracking.
const ADEQUACY_LEVEL: f64 = 0.05;

const ROSTER_NAMES: [&str; ROSTER] = [
    "female",
    "age",
    "lives_with",
    "single",
    "deployed",
    "disability",
    "rating70",
    "tbi",
];

/// Population means of the roster covariates (age is a 1–5 band).
const ROSTER_MEAN: [f64; ROSTER] = [0.55, 2.95, 0.45, 0.25, 0.56, 0.56, 0.28, 0.16];
/// Population variances of the roster covariates.
const ROSTER_VAR: [f64; ROSTER] = [
    0.2475, 1.6475, 0.2475, 0.1875, 0.2464, 0.2464, 0.2016, 0.1344,
];
/// Loadings of the shared severity factor on the centred roster covariates.
const SEVERITY_LOADING: [f64; ROSTER] = [0.30, -0.08, 0.15, 0.10, 0.15, 0.25, 0.35, 0.45];
/// Self-selection coefficients on the standardized roster covariates.
const CONV_COEF: [f64; ROSTER] = [
    4.0 / 3.0,
    0.0,
    1.0 / 3.0,
    1.0 / 3.0,
    1.0 / 3.0,
    1.0,
    1.0,
    1.0,
];
/// Self-selection intercept: odds of one half at the roster means.
const CONV_INTERCEPT: f64 = -std::f64::consts::LN_2;

const AGE_CUMULATIVE: [f64; 5] = [0.15, 0.40, 0.65, 0.85, 1.0];

const DEP_LOCATION: f64 = 8.8;
const DEP_SCALE: f64 = 4.5;
const ANX_LOCATION: f64 = 47.0;
const ANX_SCALE: f64 = 17.0;
/// Standard deviation of the latent factor shared by both scores.
const SHARED_SD: f64 = 0.748_331_477_354_788_3; // √0.56
/// Standard deviation of the depression-specific noise.
const DEP_NOISE_SD: f64 = 0.547_722_557_505_166_1; // √0.30
/// Standard deviation of the anxiety-specific noise.
const ANX_NOISE_SD: f64 = 0.655_743_852_430_200_1; // √0.43
/// Loading of the shared latent factor in the anxiety score, tuned so both
/// standardized scores have unit-ish variance and correlate near 0.63.
const ANX_SHARED_LOADING: f64 = 0.8763;

/// Scheme labels, in reporting order.
pub const PSEUDO_SCHEMES: [&str; 8] = [
    "prob_only",
    "unweighted",
    "sps",
    "dps",
    "sc",
    "dc",
    "posthoc_ps",
    "posthoc_c",
];

/// One person of the pseudo-population.
#[derive(Debug, Clone)]
struct Person {
    roster: [f64; ROSTER],
    dep: f64,
    anx: f64,
}

/// Configuration of the pseudo-population study.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoConfig {
    /// Self-selection setting, 1–5.
    pub setting: u8,
    /// Monte Carlo iterations.
    pub iterations: usize,
    /// Master seed for the per-iteration draws.
    pub seed: u64,
    /// Seed of the fixed population (shared across settings so that the
    /// probability-sample draws coincide).
    pub population_seed: u64,
    /// Strength of the outcome term in the self-selection of settings 3–5.
    pub tau: f64,
    /// Jackknife groups for the post-hoc covariance.
    pub groups: usize,
}

impl PseudoConfig {
    pub fn new(setting: u8) -> Self {
        PseudoConfig {
            setting,
            iterations: 1000,
            seed: 20_240_816,
            population_seed: 940,
            tau: 0.5,
            groups: variance::DEFAULT_GROUPS,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.setting) {
            return Err(Error::BadConfig(format!(
                "setting must be 1–5, got {}",
                self.setting
            )));
        }
        if self.iterations == 0 {
            return Err(Error::BadConfig("iterations must be positive".into()));
        }
        if self.groups < 2 {
            return Err(Error::BadConfig("need at least 2 jackknife groups".into()));
        }
        if !self.tau.is_finite() {
            return Err(Error::BadConfig(format!("tau is {}", self.tau)));
        }
        Ok(())
    }
}

/// Monte Carlo summary of one setting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PseudoResult {
    pub setting: u8,
    pub tau: f64,
    pub iterations: usize,
    /// True population mean of the depression score.
    pub population_mean: f64,
    pub mean_n_prob: f64,
    pub mean_n_conv: f64,
    /// Per-scheme summaries, ordered as [`PSEUDO_SCHEMES`].
    pub metrics: Vec<SchemeMetrics>,
}

/// Auxiliaries available to the models in a setting.
pub fn setting_auxiliaries(setting: u8) -> Vec<String> {
    let mut vars: Vec<String> = ROSTER_NAMES.iter().map(|s| s.to_string()).collect();
    if setting == 2 || setting == 5 {
        vars.push("anxiety".to_string());
    }
    vars
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn generate_population(seed: u64) -> Vec<Person> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..POPULATION)
        .map(|_| {
            let female = f64::from(rng.gen::<f64>() < ROSTER_MEAN[0]);
            let age_u: f64 = rng.gen();
            let age = 1.0 + AGE_CUMULATIVE.iter().filter(|&&c| age_u >= c).count() as f64;
            let lives_with = f64::from(rng.gen::<f64>() < ROSTER_MEAN[2]);
            let single = f64::from(rng.gen::<f64>() < ROSTER_MEAN[3]);
            let deployed = f64::from(rng.gen::<f64>() < ROSTER_MEAN[4]);
            let disability = f64::from(rng.gen::<f64>() < ROSTER_MEAN[5]);
            // Draw unconditionally so consumption stays constant per person.
            let rating_u: f64 = rng.gen();
            let rating70 = f64::from(disability > 0.5 && rating_u < 0.5);
            let tbi = f64::from(rng.gen::<f64>() < ROSTER_MEAN[7]);
            let roster = [
                female, age, lives_with, single, deployed, disability, rating70, tbi,
            ];
            let severity: f64 = (0..ROSTER)
                .map(|j| SEVERITY_LOADING[j] * (roster[j] - ROSTER_MEAN[j]))
                .sum();
            let shared: f64 = rng.sample::<f64, _>(StandardNormal) * SHARED_SD;
            let dep_noise: f64 = rng.sample::<f64, _>(StandardNormal) * DEP_NOISE_SD;
            let anx_noise: f64 = rng.sample::<f64, _>(StandardNormal) * ANX_NOISE_SD;
            let dep = DEP_LOCATION + DEP_SCALE * (severity + shared + dep_noise);
            let anx =
                ANX_LOCATION + ANX_SCALE * (severity + ANX_SHARED_LOADING * shared + anx_noise);
            Person { roster, dep, anx }
        })
        .collect()
}

/// Log-odds of responding to the probability sample: women respond a little
/// more, older age bands markedly less.
fn response_logit(p: &Person) -> f64 {
    (p.roster[0] - ROSTER_MEAN[0]) / 3.0 - 2.0 * (p.roster[1] - ROSTER_MEAN[1]) / 3.0
}

/// Log-odds of opting into the convenience sample.
fn convenience_logit(p: &Person, setting: u8, tau: f64) -> f64 {
    let mut lin = CONV_INTERCEPT;
    for j in 0..ROSTER {
        lin += CONV_COEF[j] * (p.roster[j] - ROSTER_MEAN[j]) / ROSTER_VAR[j].sqrt();
    }
    match setting {
        3 => lin + tau * (p.anx - ANX_LOCATION) / ANX_SCALE,
        4 | 5 => lin + tau * (p.dep - DEP_LOCATION) / DEP_SCALE,
        _ => lin,
    }
}

fn aux_values(p: &Person, n_aux: usize) -> Vec<f64> {
    let mut x = p.roster.to_vec();
    if n_aux > ROSTER {
        x.push(p.anx);
    }
    x
}

/// Refit the response model on the frame (nonrespondents plus the
/// probability units of `ds`), then the membership model on the pooled
/// units, and assemble the inclusion probabilities. The response model uses
/// the roster covariates only — those are known for nonrespondents — and its
/// predictions apply to every pooled unit: everyone in this population sits
/// on the frame with the same design probability, so opt-in units also carry
/// a modeled chance of having entered through the probability door. The
/// membership model uses all auxiliaries of the setting.
fn assemble_probs(
    ds: &Dataset,
    nonresp_roster: &[[f64; ROSTER]],
    aux: &[String],
) -> Result<InclusionProbs> {
    let prob_rows = ds.prob_indices();
    let n_frame = nonresp_roster.len() + prob_rows.len();
    let mut frame = DMatrix::zeros(n_frame, 1 + ROSTER);
    let mut responded = vec![false; n_frame];
    for (r, roster) in nonresp_roster.iter().enumerate() {
        frame[(r, 0)] = 1.0;
        for j in 0..ROSTER {
            frame[(r, 1 + j)] = roster[j];
        }
    }
    for (k, &i) in prob_rows.iter().enumerate() {
        let r = nonresp_roster.len() + k;
        frame[(r, 0)] = 1.0;
        for j in 0..ROSTER {
            frame[(r, 1 + j)] = ds.units()[i].x[j];
        }
        responded[r] = true;
    }
    let model = ResponseModel::fit(&frame, &responded)?;
    let mut pooled = DMatrix::zeros(ds.len(), 1 + ROSTER);
    for (i, unit) in ds.units().iter().enumerate() {
        pooled[(i, 0)] = 1.0;
        for j in 0..ROSTER {
            pooled[(i, 1 + j)] = unit.x[j];
        }
    }
    let r_hat = model.predict(&pooled);
    let gamma = estimate_gamma(ds, aux)?;
    assemble_inclusion(ds, &gamma.gamma, &r_hat)
}

/// Per-sample estimates feeding the post-hoc blends: inverse-probability
/// means of both samples, then calibrated means of both samples (each raked
/// from equal starting weights to the same estimated benchmarks).
fn posthoc_components(
    ds: &Dataset,
    nonresp_roster: &[[f64; ROSTER]],
    aux: &[String],
) -> Result<Vec<f64>> {
    let probs = assemble_probs(ds, nonresp_roster, aux)?;
    let prob_rows = ds.prob_indices();
    let conv_rows = ds.conv_indices();
    let y1: Vec<f64> = prob_rows
        .iter()
        .map(|&i| ds.units()[i].y[0].expect("simulated outcomes are complete"))
        .collect();
    let y2: Vec<f64> = conv_rows
        .iter()
        .map(|&i| ds.units()[i].y[0].expect("simulated outcomes are complete"))
        .collect();
    let w1: Vec<f64> = prob_rows.iter().map(|&i| 1.0 / probs.d_hat[i]).collect();
    let w2: Vec<f64> = conv_rows.iter().map(|&i| 1.0 / probs.q_hat[i]).collect();
    let theta1_ps = weighted_mean(&y1, &w1)?;
    let theta2_ps = weighted_mean(&y2, &w2)?;

    let bench = estimate_benchmarks(ds, &probs, aux)?;
    let n_hat: f64 = w1.iter().sum();
    let opts = RakeOptions::default();
    let calibrated = |rows: &[usize], y: &[f64], label: &str| -> Result<f64> {
        let x = bench.design_for(ds, rows)?;
        let base = vec![n_hat / rows.len() as f64; rows.len()];
        let sol = rake(&x, &base, &bench.totals, &opts)?;
        if !sol.converged {
            return Err(Error::RakingNonconvergence(format!(
                "{label} sample failed to calibrate (residual {:.3e})",
                sol.max_rel_residual
            )));
        }
        weighted_mean(y, &sol.weights)
    };
    let theta1_c = calibrated(&prob_rows, &y1, "probability")?;
    let theta2_c = calibrated(&conv_rows, &y2, "convenience")?;
    Ok(vec![theta1_ps, theta2_ps, theta1_c, theta2_c])
}

/// Raw per-iteration results; `None` marks a scheme that failed.
struct IterOutcome {
    /// Percent relative errors, ordered as [`PSEUDO_SCHEMES`].
    errors: [Option<f64>; 8],
    /// Weight design effects for the first six schemes.
    deffs: [Option<f64>; 6],
    /// Adequacy-test rejections for unweighted, sps, dps, sc, dc.
    rejections: [Option<bool>; 5],
    n_prob: usize,
    n_conv: usize,
}

impl IterOutcome {
    fn all_failed(n_prob: usize, n_conv: usize) -> Self {
        IterOutcome {
            errors: [None; 8],
            deffs: [None; 6],
            rejections: [None; 5],
            n_prob,
            n_conv,
        }
    }
}

fn record_weighted(
    out: &mut IterOutcome,
    scheme: usize,
    rejection: usize,
    ws: Result<WeightSet>,
    y: &[f64],
    conv: &[bool],
    mu: f64,
) {
    let Ok(ws) = ws else { return };
    let Ok(theta) = weighted_mean(y, &ws.weights) else {
        return;
    };
    out.errors[scheme] = Some(100.0 * (theta - mu) / mu);
    out.deffs[scheme] = Some(ws.kish_deff());
    if let Ok(stat) = two_group_stat(y, &ws.weights, conv) {
        out.rejections[rejection] = Some(stat.p_value < ADEQUACY_LEVEL);
    }
}

fn run_iteration(
    pop: &[Person],
    config: &PseudoConfig,
    iteration: u64,
    aux: &[String],
    mu: f64,
) -> IterOutcome {
    let base = iteration * STREAMS_PER_ITERATION;
    // One uniform per person on each stream, so the probability-sample and
    // response draws coincide across settings run with the same seed.
    let mut rng_sel = stream_rng(config.seed, base);
    let sampled: Vec<bool> = (0..pop.len())
        .map(|_| rng_sel.gen::<f64>() < DESIGN_PROB)
        .collect();
    let mut rng_resp = stream_rng(config.seed, base + 1);
    let resp_u: Vec<f64> = (0..pop.len()).map(|_| rng_resp.gen()).collect();
    let mut rng_conv = stream_rng(config.seed, base + 2);
    let conv_u: Vec<f64> = (0..pop.len()).map(|_| rng_conv.gen()).collect();

    let mut units = Vec::new();
    let mut nonresp_roster: Vec<[f64; ROSTER]> = Vec::new();
    for (i, person) in pop.iter().enumerate() {
        let respondent = sampled[i] && resp_u[i] < logistic(response_logit(person));
        if respondent {
            units.push(Unit {
                id: format!("p{i}"),
                membership: Membership::Prob,
                d_star: Some(DESIGN_PROB),
                r_hat: None,
                x: aux_values(person, aux.len()),
                y: vec![Some(person.dep)],
            });
        } else if sampled[i] {
            nonresp_roster.push(person.roster);
        }
        // People who already responded to the probability sample are removed
        // from the opt-in sample.
        let opted_in = conv_u[i] < logistic(convenience_logit(person, config.setting, config.tau));
        if opted_in && !respondent {
            units.push(Unit {
                id: format!("c{i}"),
                membership: Membership::Conv,
                // Everyone in the population is on the frame, so the design
                // probability is known for opt-in units too.
                d_star: Some(DESIGN_PROB),
                r_hat: None,
                x: aux_values(person, aux.len()),
                y: vec![Some(person.dep)],
            });
        }
    }
    let n_prob = units
        .iter()
        .filter(|u| u.membership == Membership::Prob)
        .count();
    let n_conv = units.len() - n_prob;

    let schema = match Schema::new(aux.iter().cloned(), ["depression"]) {
        Ok(s) => s,
        Err(_) => return IterOutcome::all_failed(n_prob, n_conv),
    };
    let ds = match Dataset::new(schema, units) {
        Ok(d) => d,
        Err(_) => return IterOutcome::all_failed(n_prob, n_conv),
    };

    let mut out = IterOutcome::all_failed(n_prob, n_conv);
    let y: Vec<f64> = ds
        .units()
        .iter()
        .map(|u| u.y[0].expect("simulated outcomes are complete"))
        .collect();
    let conv_flag = ds.conv_indicator();
    let prob_rows = ds.prob_indices();
    let y1: Vec<f64> = prob_rows.iter().map(|&i| y[i]).collect();
    let err = |theta: f64| 100.0 * (theta - mu) / mu;

    // Probability sample alone: the plain respondent mean, with no
    // adjustment for who responded.
    let ones1 = vec![1.0; y1.len()];
    if let Ok(theta) = weighted_mean(&y1, &ones1) {
        out.errors[0] = Some(err(theta));
        out.deffs[0] = Some(kish_deff(&ones1));
    }

    // Pooled unweighted mean.
    let ones = vec![1.0; ds.len()];
    if let Ok(theta) = weighted_mean(&y, &ones) {
        out.errors[1] = Some(err(theta));
        out.deffs[1] = Some(kish_deff(&ones));
        if let Ok(stat) = two_group_stat(&y, &ones, &conv_flag) {
            out.rejections[0] = Some(stat.p_value < ADEQUACY_LEVEL);
        }
    }

    let probs = match assemble_probs(&ds, &nonresp_roster, aux) {
        Ok(p) => p,
        Err(_) => return out,
    };

    record_weighted(&mut out, 2, 1, sps_weights(&probs), &y, &conv_flag, mu);
    record_weighted(
        &mut out,
        3,
        2,
        dps_weights(&ds, &probs, KappaRule::Auto),
        &y,
        &conv_flag,
        mu,
    );
    if let Ok(bench) = estimate_benchmarks(&ds, &probs, aux) {
        let opts = RakeOptions::default();
        record_weighted(
            &mut out,
            4,
            3,
            sc_weights(&ds, &probs, &bench, RakeInit::Equal, &opts),
            &y,
            &conv_flag,
            mu,
        );
        record_weighted(
            &mut out,
            5,
            4,
            dc_weights(&ds, &probs, &bench, KappaRule::Auto, RakeInit::Equal, &opts),
            &y,
            &conv_flag,
            mu,
        );
    }

    // Post-hoc blends of per-sample estimates, with a grouped-jackknife
    // covariance of the four components.
    let group_seed: u64 = stream_rng(config.seed, base + 3).gen();
    if let Ok(components) = posthoc_components(&ds, &nonresp_roster, aux) {
        let jk = variance::jackknife(&ds, config.groups, group_seed, |sub| {
            posthoc_components(sub, &nonresp_roster, aux)
        });
        if let Ok(jk) = jk {
            if let Ok(blend) = posthoc_blend(
                components[0],
                jk.cov[(0, 0)],
                components[1],
                jk.cov[(1, 1)],
                jk.cov[(0, 1)],
            ) {
                out.errors[6] = Some(err(blend.estimate));
            }
            if let Ok(blend) = posthoc_blend(
                components[2],
                jk.cov[(2, 2)],
                components[3],
                jk.cov[(3, 3)],
                jk.cov[(2, 3)],
            ) {
                out.errors[7] = Some(err(blend.estimate));
            }
        }
    }
    out
}

/// Run one setting of the study.
pub fn run_pseudo(config: &PseudoConfig) -> Result<PseudoResult> {
    config.validate()?;
    let pop = generate_population(config.population_seed);
    let mu = pop.iter().map(|p| p.dep).sum::<f64>() / pop.len() as f64;
    let aux = setting_auxiliaries(config.setting);
    let outcomes: Vec<IterOutcome> = (0..config.iterations as u64)
        .into_par_iter()
        .map(|k| run_iteration(&pop, config, k, &aux, mu))
        .collect();

    let mut metrics = Vec::with_capacity(PSEUDO_SCHEMES.len());
    for (s, name) in PSEUDO_SCHEMES.iter().enumerate() {
        let errors: Vec<Option<f64>> = outcomes.iter().map(|o| o.errors[s]).collect();
        let deffs: Option<Vec<Option<f64>>> =
            (s < 6).then(|| outcomes.iter().map(|o| o.deffs[s]).collect());
        let rejections: Option<Vec<Option<bool>>> = (1..=5)
            .contains(&s)
            .then(|| outcomes.iter().map(|o| o.rejections[s - 1]).collect());
        metrics.push(summarize_scheme(
            name,
            &errors,
            deffs.as_deref(),
            rejections.as_deref(),
        ));
    }
    let n = config.iterations as f64;
    Ok(PseudoResult {
        setting: config.setting,
        tau: config.tau,
        iterations: config.iterations,
        population_mean: mu,
        mean_n_prob: outcomes.iter().map(|o| o.n_prob as f64).sum::<f64>() / n,
        mean_n_conv: outcomes.iter().map(|o| o.n_conv as f64).sum::<f64>() / n,
        metrics,
    })
}

/// Run several settings with the same seeds, so the probability-sample
/// draws coincide across them.
pub fn run_pseudo_settings(base: &PseudoConfig, settings: &[u8]) -> Result<Vec<PseudoResult>> {
    settings
        .iter()
        .map(|&setting| {
            run_pseudo(&PseudoConfig {
                setting,
                ..base.clone()
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let (ma, mb) = (mean(a), mean(b));
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn population_is_deterministic_and_matches_design_moments() {
        let pop = generate_population(940);
        let again = generate_population(940);
        assert_eq!(pop.len(), POPULATION);
        let dep: Vec<f64> = pop.iter().map(|p| p.dep).collect();
        let dep2: Vec<f64> = again.iter().map(|p| p.dep).collect();
        assert_eq!(dep, dep2);

        for j in 0..ROSTER {
            let m = mean(&pop.iter().map(|p| p.roster[j]).collect::<Vec<f64>>());
            let sd = (ROSTER_VAR[j] / POPULATION as f64).sqrt();
            assert!(
                (m - ROSTER_MEAN[j]).abs() < 4.0 * sd,
                "roster {} mean {m} too far from {}",
                ROSTER_NAMES[j],
                ROSTER_MEAN[j]
            );
        }
        // Only people with a disability can hold a high rating.
        assert!(pop.iter().all(|p| p.roster[6] <= p.roster[5]));

        let anx: Vec<f64> = pop.iter().map(|p| p.anx).collect();
        let r = correlation(&dep, &anx);
        assert!((0.5..0.75).contains(&r), "dep/anx correlation {r}");
        let mu = mean(&dep);
        assert!((7.6..10.0).contains(&mu), "population mean {mu}");
        let var = dep.iter().map(|d| (d - mu) * (d - mu)).sum::<f64>() / dep.len() as f64;
        assert!((12.0..30.0).contains(&var), "depression variance {var}");
    }

    #[test]
    fn small_run_produces_all_schemes() {
        let config = PseudoConfig {
            iterations: 12,
            groups: 10,
            ..PseudoConfig::new(1)
        };
        let result = run_pseudo(&config).unwrap();
        assert_eq!(result.setting, 1);
        assert_eq!(result.iterations, 12);
        let labels: Vec<&str> = result.metrics.iter().map(|m| m.scheme.as_str()).collect();
        assert_eq!(labels, PSEUDO_SCHEMES);
        assert!(
            (40.0..120.0).contains(&result.mean_n_prob),
            "{}",
            result.mean_n_prob
        );
        assert!(
            (150.0..650.0).contains(&result.mean_n_conv),
            "{}",
            result.mean_n_conv
        );
        for m in &result.metrics {
            assert!(m.failures <= 2, "{} failed {} times", m.scheme, m.failures);
            assert!(m.bias_pct.is_finite() && m.rmse_pct >= 0.0);
        }
        for m in &result.metrics[..6] {
            let deff = m
                .mean_deff
                .expect("weighted schemes report a design effect");
            assert!(deff >= 0.99, "{} deff {deff}", m.scheme);
        }
        assert!(result.metrics[6].mean_deff.is_none());
        for m in &result.metrics[1..6] {
            assert!(
                m.rejection_rate.is_some(),
                "{} lacks rejection rate",
                m.scheme
            );
        }
        assert!(result.metrics[0].rejection_rate.is_none());
        // Self-selection favours higher-severity people, so the pooled
        // unweighted mean overshoots.
        assert!(
            result.metrics[1].bias_pct > 3.0,
            "unweighted bias {}",
            result.metrics[1].bias_pct
        );
    }

    #[test]
    fn runs_are_deterministic() {
        let config = PseudoConfig {
            iterations: 6,
            groups: 8,
            ..PseudoConfig::new(3)
        };
        let a = run_pseudo(&config).unwrap();
        let b = run_pseudo(&config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn probability_draws_coincide_across_settings() {
        let base = PseudoConfig {
            iterations: 5,
            groups: 8,
            ..PseudoConfig::new(1)
        };
        let results = run_pseudo_settings(&base, &[1, 4]).unwrap();
        // Same selection and response streams: identical probability samples.
        assert_eq!(results[0].mean_n_prob, results[1].mean_n_prob);
        // The outcome term shifts who opts in.
        assert_ne!(results[0].mean_n_conv, results[1].mean_n_conv);
        assert_eq!(results[0].population_mean, results[1].population_mean);
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(run_pseudo(&PseudoConfig::new(0)).is_err());
        assert!(run_pseudo(&PseudoConfig::new(6)).is_err());
        let mut c = PseudoConfig::new(2);
        c.iterations = 0;
        assert!(run_pseudo(&c).is_err());
        let mut c = PseudoConfig::new(2);
        c.groups = 1;
        assert!(run_pseudo(&c).is_err());
        let mut c = PseudoConfig::new(2);
        c.tau = f64::NAN;
        assert!(run_pseudo(&c).is_err());
    }
}
