//! Output writers: CSV tables for weights, estimates, adequacy tests,
//! benchmarks, and covariate balance; a JSON run manifest; and small
//! self-contained SVG plots.
//!
//! All writers are deterministic — identical inputs give byte-identical
//! files (floats use the shortest round-trip formatting, manifests carry
//! no timestamps).

use std::path::Path;

use serde::Serialize;

use crate::blending::WeightSet;
use crate::calibration::BenchmarkVector;
use crate::dataset::Dataset;
use crate::error::Result;
use crate::estimation::{AdequacyTest, EstimateReport};
use crate::workflow::BalanceRow;

fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// `id, sample, weight, trimmed` — one row per unit.
pub fn write_weights_csv(path: &Path, ds: &Dataset, wset: &WeightSet) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "sample", "weight", "trimmed"])?;
    for (unit, (&weight, &trimmed)) in ds
        .units()
        .iter()
        .zip(wset.weights.iter().zip(&wset.trimmed))
    {
        w.write_record([
            unit.id.as_str(),
            unit.membership.label(),
            &fmt(weight),
            if trimmed { "true" } else { "false" },
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per estimand with the interval and variance method.
pub fn write_estimates_csv(path: &Path, reports: &[EstimateReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "estimand",
        "estimate",
        "se",
        "deff",
        "ci_low",
        "ci_high",
        "variance_method",
        "n_used",
    ])?;
    for r in reports {
        w.write_record([
            r.estimand.as_str(),
            &fmt(r.estimate),
            &fmt(r.se),
            &fmt(r.deff),
            &fmt(r.ci_low),
            &fmt(r.ci_high),
            r.variance_method.label(),
            &r.n_used.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per tested outcome.
pub fn write_adequacy_csv(path: &Path, tests: &[AdequacyTest]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "outcome",
        "delta",
        "se",
        "z",
        "p_value",
        "mean_prob",
        "mean_conv",
        "n_prob",
        "n_conv",
    ])?;
    for t in tests {
        w.write_record([
            t.outcome.as_str(),
            &fmt(t.delta),
            &fmt(t.se),
            &fmt(t.z),
            &fmt(t.p_value),
            &fmt(t.mean_prob),
            &fmt(t.mean_conv),
            &t.n_prob.to_string(),
            &t.n_conv.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `name, total, provenance` — one row per constraint.
pub fn write_benchmarks_csv(path: &Path, bench: &BenchmarkVector) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["name", "total", "provenance"])?;
    let provenance = match bench.provenance {
        crate::calibration::Provenance::Known => "known",
        crate::calibration::Provenance::HtEstimated => "ht_estimated",
        crate::calibration::Provenance::TwoStage => "two_stage",
    };
    for (name, &total) in bench.names.iter().zip(&bench.totals) {
        w.write_record([name.as_str(), &fmt(total), provenance])?;
    }
    w.flush()?;
    Ok(())
}

/// Weighted covariate means by sample, with benchmark means when present.
pub fn write_balance_csv(path: &Path, rows: &[BalanceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "variable",
        "mean_prob",
        "mean_conv",
        "mean_pooled",
        "benchmark_mean",
    ])?;
    for r in rows {
        w.write_record([
            r.variable.as_str(),
            &fmt(r.mean_prob),
            &fmt(r.mean_conv),
            &fmt(r.mean_pooled),
            &r.benchmark_mean.map(fmt).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reproducibility record for a run: tool version, resolved inputs, and the
/// files written. Deliberately carries no timestamps so reruns are
/// byte-identical.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_units: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_prob: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_conv: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scheme: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_vars: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration_vars: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_rule: Option<String>,
    /// Realized blending coefficient (disjoint schemes).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trim_pct: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub groups: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    // Simulation runs record their design instead of a data file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub settings: Option<Vec<u8>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub population_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_squared: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub population: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_size: Option<usize>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: impl Into<String>) -> Self {
        Manifest {
            tool: "blendstat",
            version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            ..Manifest::default()
        }
    }
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

const SVG_WIDTH: f64 = 640.0;
const SVG_HEIGHT: f64 = 400.0;
const SVG_MARGIN: f64 = 56.0;

fn svg_header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_WIDTH}\" height=\"{SVG_HEIGHT}\" \
         viewBox=\"0 0 {SVG_WIDTH} {SVG_HEIGHT}\">\n\
         <rect width=\"{SVG_WIDTH}\" height=\"{SVG_HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{:.1}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" \
         text-anchor=\"middle\">{title}</text>\n",
        SVG_WIDTH / 2.0
    )
}

/// Sorted weight curve: unit rank against weight, with the trimming shape
/// visible as flat segments at the ends.
pub fn write_weight_curve_svg(path: &Path, wset: &WeightSet) -> Result<()> {
    let mut sorted = wset.weights.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite weights"));
    let n = sorted.len();
    let lo = sorted.first().copied().unwrap_or(0.0);
    let hi = sorted.last().copied().unwrap_or(1.0);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let plot_w = SVG_WIDTH - 2.0 * SVG_MARGIN;
    let plot_h = SVG_HEIGHT - 2.0 * SVG_MARGIN;
    let mut svg = svg_header(&format!("weights by rank ({})", wset.scheme));
    let mut points = String::new();
    for (i, &w) in sorted.iter().enumerate() {
        let fx = if n > 1 {
            i as f64 / (n - 1) as f64
        } else {
            0.5
        };
        let x = SVG_MARGIN + fx * plot_w;
        let y = SVG_HEIGHT - SVG_MARGIN - (w - lo) / span * plot_h;
        points.push_str(&format!("{x:.2},{y:.2} "));
    }
    svg.push_str(&format!(
        "<polyline fill=\"none\" stroke=\"#2a6fdb\" stroke-width=\"1.5\" points=\"{}\"/>\n",
        points.trim_end()
    ));
    // Axes and range labels.
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{m}\" y=\"{lb}\" font-family=\"sans-serif\" font-size=\"11\">rank 1</text>\n\
         <text x=\"{r}\" y=\"{lb}\" font-family=\"sans-serif\" font-size=\"11\" \
         text-anchor=\"end\">rank {n}</text>\n\
         <text x=\"{lx}\" y=\"{b}\" font-family=\"sans-serif\" font-size=\"11\" \
         text-anchor=\"end\">{lo_s}</text>\n\
         <text x=\"{lx}\" y=\"{tt}\" font-family=\"sans-serif\" font-size=\"11\" \
         text-anchor=\"end\">{hi_s}</text>\n",
        m = SVG_MARGIN,
        b = SVG_HEIGHT - SVG_MARGIN,
        r = SVG_WIDTH - SVG_MARGIN,
        t = SVG_MARGIN,
        lb = SVG_HEIGHT - SVG_MARGIN + 16.0,
        lx = SVG_MARGIN - 6.0,
        tt = SVG_MARGIN + 4.0,
        lo_s = format!("{lo:.3}"),
        hi_s = format!("{hi:.3}"),
    ));
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

/// Point estimates with confidence intervals, one horizontal line each.
pub fn write_interval_svg(path: &Path, reports: &[EstimateReport]) -> Result<()> {
    let lo = reports
        .iter()
        .map(|r| r.ci_low)
        .fold(f64::INFINITY, f64::min);
    let hi = reports
        .iter()
        .map(|r| r.ci_high)
        .fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if reports.is_empty() || !(hi > lo) {
        (0.0, 1.0)
    } else {
        (lo, hi)
    };
    let span = hi - lo;
    let plot_w = SVG_WIDTH - 2.0 * SVG_MARGIN - 80.0;
    let x_of = |v: f64| SVG_MARGIN + 80.0 + (v - lo) / span * plot_w;
    let mut svg = svg_header("estimates with confidence intervals");
    for (k, r) in reports.iter().enumerate() {
        let y = SVG_MARGIN + 30.0 + k as f64 * 34.0;
        svg.push_str(&format!(
            "<text x=\"{lx}\" y=\"{ty:.1}\" font-family=\"sans-serif\" font-size=\"12\" \
             text-anchor=\"end\">{name}</text>\n\
             <line x1=\"{x1:.2}\" y1=\"{y:.1}\" x2=\"{x2:.2}\" y2=\"{y:.1}\" \
             stroke=\"#2a6fdb\" stroke-width=\"2\"/>\n\
             <circle cx=\"{cx:.2}\" cy=\"{y:.1}\" r=\"4\" fill=\"#d6452c\"/>\n",
            lx = SVG_MARGIN + 70.0,
            ty = y + 4.0,
            name = r.estimand,
            x1 = x_of(r.ci_low),
            x2 = x_of(r.ci_high),
            cx = x_of(r.estimate),
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{m}\" y=\"{b}\" font-family=\"sans-serif\" font-size=\"11\">{lo:.3}</text>\n\
         <text x=\"{r}\" y=\"{b}\" font-family=\"sans-serif\" font-size=\"11\" \
         text-anchor=\"end\">{hi:.3}</text>\n",
        m = SVG_MARGIN + 80.0,
        b = SVG_HEIGHT - 20.0,
        r = SVG_WIDTH - SVG_MARGIN,
    ));
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}
