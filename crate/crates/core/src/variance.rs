//! Variance estimation: Taylor linearization for weighted means and
//! weighted-least-squares coefficients, and a delete-a-group jackknife that
//! reruns an arbitrary estimation pipeline on each replicate.
//!
//! The jackknife deals units into `G` random groups, deletes one group at a
//! time, reruns the full pipeline (model fitting included) on the remaining
//! units, and estimates the variance from the spread of the replicate
//! estimates around their mean:
//!
//! `v̂ = (G-1)/G · Σ_g (θ̂₍g₎ − θ̄)²`

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Default number of jackknife groups.
pub const DEFAULT_GROUPS: usize = 40;

/// Deal `n` units into `groups` random groups of near-equal size
/// (sizes differ by at most one). Returns the group index of each unit.
///
/// The assignment is a deterministic function of `(n, groups, seed)`.
pub fn make_groups(n: usize, groups: usize, seed: u64) -> Result<Vec<usize>> {
    if groups < 2 {
        return Err(Error::BadArgument(format!(
            "need at least 2 jackknife groups, got {groups}"
        )));
    }
    if n < groups {
        return Err(Error::TooFewUnits { units: n, groups });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut assignment = vec![0usize; n];
    for (position, &unit) in order.iter().enumerate() {
        assignment[unit] = position % groups;
    }
    Ok(assignment)
}

/// Linearized standard error of the weighted mean `Σwy / Σw`:
///
/// `se² = n/(n-1) · Σ (wᵢ (yᵢ − μ̂))² / (Σw)²`
pub fn linearized_se_mean(y: &[f64], w: &[f64]) -> Result<f64> {
    let n = y.len();
    if n != w.len() {
        return Err(Error::BadArgument(format!(
            "{} outcomes but {} weights",
            n,
            w.len()
        )));
    }
    if n < 2 {
        return Err(Error::NotEnoughUnits {
            needed: 2,
            found: n,
        });
    }
    let wsum: f64 = w.iter().sum();
    if !(wsum > 0.0) {
        return Err(Error::BadArgument("weights sum to zero".into()));
    }
    let mean = y.iter().zip(w).map(|(&y, &w)| w * y).sum::<f64>() / wsum;
    let ss: f64 = y
        .iter()
        .zip(w)
        .map(|(&y, &w)| {
            let u = w * (y - mean);
            u * u
        })
        .sum();
    let var = (n as f64 / (n as f64 - 1.0)) * ss / (wsum * wsum);
    Ok(var.sqrt())
}

/// Sandwich covariance of weighted-least-squares coefficients:
///
/// `cov = (XᵀWX)⁻¹ · M · (XᵀWX)⁻¹`, with
/// `M = n/(n-1) · Σ (wᵢ eᵢ xᵢ)(wᵢ eᵢ xᵢ)ᵀ`
///
/// where `eᵢ` are the residuals at the fitted coefficients.
pub fn sandwich_cov(x: &DMatrix<f64>, w: &[f64], residuals: &[f64]) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    let p = x.ncols();
    if w.len() != n || residuals.len() != n {
        return Err(Error::BadArgument(format!(
            "design has {n} rows but {} weights and {} residuals",
            w.len(),
            residuals.len()
        )));
    }
    if n < 2 {
        return Err(Error::NotEnoughUnits {
            needed: 2,
            found: n,
        });
    }
    let mut bread = DMatrix::<f64>::zeros(p, p);
    let mut meat = DMatrix::<f64>::zeros(p, p);
    for i in 0..n {
        let xi = x.row(i).transpose();
        bread += w[i] * &xi * xi.transpose();
        let score = w[i] * residuals[i] * xi;
        meat += &score * score.transpose();
    }
    meat *= n as f64 / (n as f64 - 1.0);
    let inv = bread
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| bread.clone().try_inverse())
        .ok_or(Error::RankDeficient {
            rank: bread.rank(1e-10),
            cols: p,
        })?;
    Ok(&inv * meat * &inv)
}

/// Replicate estimates and the variance summaries derived from them.
#[derive(Debug, Clone)]
pub struct JackknifeResult {
    pub groups: usize,
    /// One row of estimates per deleted group.
    pub replicates: Vec<Vec<f64>>,
    /// Jackknife standard error of each estimand.
    pub ses: Vec<f64>,
    /// Jackknife covariance across estimands.
    pub cov: DMatrix<f64>,
}

/// Variance summaries from an already-computed replicate matrix; deviations
/// are taken around the replicate mean.
pub fn jackknife_core(replicates: &[Vec<f64>]) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let g = replicates.len();
    if g < 2 {
        return Err(Error::BadArgument(format!(
            "need at least 2 replicates, got {g}"
        )));
    }
    let k = replicates[0].len();
    if replicates.iter().any(|r| r.len() != k) {
        return Err(Error::BadArgument(
            "replicate rows have unequal lengths".into(),
        ));
    }
    if k == 0 {
        return Err(Error::BadArgument("replicates carry no estimands".into()));
    }
    let gf = g as f64;
    let mut mean = vec![0.0; k];
    for row in replicates {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v / gf;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(k, k);
    for row in replicates {
        for a in 0..k {
            let da = row[a] - mean[a];
            for b in 0..k {
                cov[(a, b)] += da * (row[b] - mean[b]);
            }
        }
    }
    cov *= (gf - 1.0) / gf;
    let ses = (0..k).map(|a| cov[(a, a)].max(0.0).sqrt()).collect();
    Ok((ses, cov))
}

/// Delete-a-group jackknife over a data set.
///
/// `pipeline` must map any subset of the data to the vector of estimands;
/// it is rerun from scratch on every replicate so that all fitted models
/// (response, membership, calibration) reflect the deletion. Replicates run
/// in parallel; the first failing group aborts with the offending group
/// index attached.
pub fn jackknife<F>(ds: &Dataset, groups: usize, seed: u64, pipeline: F) -> Result<JackknifeResult>
where
    F: Fn(&Dataset) -> Result<Vec<f64>> + Sync,
{
    let assignment = make_groups(ds.len(), groups, seed)?;
    let replicates: Vec<Vec<f64>> = (0..groups)
        .into_par_iter()
        .map(|g| {
            let keep: Vec<bool> = assignment.iter().map(|&a| a != g).collect();
            ds.retain(&keep)
                .and_then(|sub| pipeline(&sub))
                .map_err(|e| Error::ReplicateFailure {
                    group: g,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let (ses, cov) = jackknife_core(&replicates)?;
    Ok(JackknifeResult {
        groups,
        replicates,
        ses,
        cov,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Membership, Schema, Unit};
    use approx::assert_relative_eq;

    #[test]
    fn groups_are_deterministic_and_balanced() {
        let a = make_groups(103, 40, 7).unwrap();
        let b = make_groups(103, 40, 7).unwrap();
        assert_eq!(a, b);
        let c = make_groups(103, 40, 8).unwrap();
        assert_ne!(a, c);
        let mut sizes = vec![0usize; 40];
        for &g in &a {
            sizes[g] += 1;
        }
        let min = *sizes.iter().min().unwrap();
        let max = *sizes.iter().max().unwrap();
        assert!(max - min <= 1, "sizes {min}..{max}");
        assert_eq!(sizes.iter().sum::<usize>(), 103);
    }

    #[test]
    fn too_few_units_is_fatal() {
        let err = make_groups(5, 10, 0).unwrap_err();
        assert!(matches!(
            err,
            Error::TooFewUnits {
                units: 5,
                groups: 10
            }
        ));
    }

    #[test]
    fn equal_weight_linearized_se_is_sd_over_root_n() {
        let y: Vec<f64> = (0..10).map(f64::from).collect();
        let w = vec![3.0; 10];
        let se = linearized_se_mean(&y, &w).unwrap();
        // Sample SD of 0..9 is √(82.5/9); se = s/√10 = 0.9574271…
        assert_relative_eq!(se, 0.957_427_107_756_338, epsilon = 1e-12);
    }

    #[test]
    fn linearized_se_is_scale_invariant_in_weights() {
        let y = [2.0, 5.0, 3.5, 8.0, 1.0];
        let w = [1.0, 2.0, 0.5, 1.5, 3.0];
        let scaled: Vec<f64> = w.iter().map(|v| v * 17.0).collect();
        let a = linearized_se_mean(&y, &w).unwrap();
        let b = linearized_se_mean(&y, &scaled).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn intercept_only_sandwich_matches_mean_linearization() {
        let y = [2.0, 5.0, 3.5, 8.0, 1.0, 4.0];
        let w = [1.0, 2.0, 0.5, 1.5, 3.0, 1.2];
        let wsum: f64 = w.iter().sum();
        let mean = y.iter().zip(&w).map(|(&y, &w)| w * y).sum::<f64>() / wsum;
        let resid: Vec<f64> = y.iter().map(|&v| v - mean).collect();
        let x = DMatrix::from_element(6, 1, 1.0);
        let cov = sandwich_cov(&x, &w, &resid).unwrap();
        let se = linearized_se_mean(&y, &w).unwrap();
        assert_relative_eq!(cov[(0, 0)].sqrt(), se, epsilon = 1e-12);
    }

    #[test]
    fn sandwich_rejects_singular_designs() {
        // Two identical columns.
        let x = DMatrix::from_fn(5, 2, |i, _| i as f64 + 1.0);
        let w = [1.0; 5];
        let resid = [0.5, -0.5, 0.2, -0.2, 0.0];
        let err = sandwich_cov(&x, &w, &resid).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }));
    }

    #[test]
    fn core_formula_known_value() {
        // Two replicates of one estimand: mean 1.5, deviations ±0.5,
        // v = (1/2)·(0.25+0.25) = 0.25 → se = 0.5.
        let (ses, cov) = jackknife_core(&[vec![1.0], vec![2.0]]).unwrap();
        assert_relative_eq!(ses[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(cov[(0, 0)], 0.25, epsilon = 1e-15);
    }

    fn mixed_dataset(y: &[f64]) -> Dataset {
        let schema = Schema::new(Vec::<String>::new(), ["y"]).unwrap();
        let units = y
            .iter()
            .enumerate()
            .map(|(i, &v)| Unit {
                id: format!("u{i}"),
                membership: if i % 2 == 0 {
                    Membership::Prob
                } else {
                    Membership::Conv
                },
                d_star: if i % 2 == 0 { Some(0.5) } else { None },
                r_hat: None,
                x: vec![],
                y: vec![Some(v)],
            })
            .collect();
        Dataset::new(schema, units).unwrap()
    }

    #[test]
    fn leave_one_out_jackknife_of_the_mean_is_exact() {
        // With one unit per group the jackknife variance of the unweighted
        // mean reduces algebraically to s²/n.
        let y: Vec<f64> = (0..10).map(f64::from).collect();
        let ds = mixed_dataset(&y);
        let result = jackknife(&ds, 10, 42, |sub| {
            let values: Vec<f64> = sub
                .variable("y")
                .unwrap()
                .into_iter()
                .map(Option::unwrap)
                .collect();
            Ok(vec![values.iter().sum::<f64>() / values.len() as f64])
        })
        .unwrap();
        assert_eq!(result.replicates.len(), 10);
        assert_relative_eq!(result.ses[0], 0.957_427_107_756_338, epsilon = 1e-10);
    }

    #[test]
    fn jackknife_is_deterministic_and_seed_sensitive() {
        let y = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0, 5.0, 3.0, 5.0, 8.0];
        let ds = mixed_dataset(&y);
        let mean_pipeline = |sub: &Dataset| {
            let values: Vec<f64> = sub
                .variable("y")
                .unwrap()
                .into_iter()
                .map(Option::unwrap)
                .collect();
            Ok(vec![values.iter().sum::<f64>() / values.len() as f64])
        };
        let a = jackknife(&ds, 4, 11, mean_pipeline).unwrap();
        let b = jackknife(&ds, 4, 11, mean_pipeline).unwrap();
        assert_eq!(a.replicates, b.replicates);
        let c = jackknife(&ds, 4, 12, mean_pipeline).unwrap();
        assert_ne!(a.replicates, c.replicates);
    }

    #[test]
    fn replicate_failures_carry_the_group_index() {
        let y = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let ds = mixed_dataset(&y);
        let err = jackknife(&ds, 3, 0, |_| {
            Err::<Vec<f64>, _>(Error::BadArgument("boom".into()))
        })
        .unwrap_err();
        match err {
            Error::ReplicateFailure { group, source } => {
                assert!(group < 3);
                assert!(matches!(*source, Error::BadArgument(_)));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn covariance_matches_pairwise_definition() {
        let reps = vec![
            vec![1.0, 2.0],
            vec![2.0, 1.0],
            vec![3.0, 3.0],
            vec![2.0, 2.0],
        ];
        let (_, cov) = jackknife_core(&reps).unwrap();
        // Means (2, 2); cross products: (-1)(0)+0(-1)+1·1+0·0 = 1 → ¾·1.
        assert_relative_eq!(cov[(0, 1)], 0.75, epsilon = 1e-15);
        assert_relative_eq!(cov[(0, 1)], cov[(1, 0)], epsilon = 1e-15);
    }

    proptest::proptest! {
        #[test]
        fn jackknife_covariance_is_positive_semidefinite(
            seed in 0u64..1000,
            g in 3usize..12,
        ) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let reps: Vec<Vec<f64>> = (0..g)
                .map(|_| (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect())
                .collect();
            let (_, cov) = jackknife_core(&reps).unwrap();
            let eig = cov.symmetric_eigenvalues();
            proptest::prop_assert!(eig.iter().all(|&l| l >= -1e-9));
        }
    }
}
