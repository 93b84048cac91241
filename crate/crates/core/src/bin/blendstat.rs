//! Command-line front end: compute blending weights, estimates, and
//! diagnostics from a TOML run configuration, or reproduce the two Monte
//! Carlo studies. All outputs are plain files (CSV, JSON, SVG) written to
//! `--out-dir`, and reruns with the same inputs are byte-identical.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use blendstat::config::RunConfig;
use blendstat::dataset::Dataset;
use blendstat::propensity::{assemble_inclusion, estimate_gamma};
use blendstat::report::{self, Manifest};
use blendstat::simulation::{pseudo, synthetic, write_pseudo_csv, write_synthetic_csv};
use blendstat::workflow::{self, WeightSpec};
use blendstat::{KappaRule, Result, Scheme};

#[derive(Parser)]
#[command(
    name = "blendstat",
    version,
    about = "Blend a probability sample with a convenience sample: weighting, estimation, diagnostics, and simulation studies"
)]
struct Cli {
    /// Worker threads (default: one per core).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute blending weights, a balance table, and the benchmarks used.
    Weights(PlottableArgs),
    /// Estimate outcome means with standard errors and intervals.
    Estimate(PlottableArgs),
    /// Test whether the two samples agree enough to blend (disjoint schemes).
    Adequacy(CommonArgs),
    /// Resolve and report the calibration benchmark totals.
    Benchmarks(CommonArgs),
    /// Reproduce a Monte Carlo study.
    #[command(subcommand)]
    Simulate(SimulateCommand),
}

#[derive(Args)]
struct CommonArgs {
    /// Run-configuration file (TOML).
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PlottableArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Also write an SVG plot.
    #[arg(long)]
    plot: bool,
}

#[derive(Subcommand)]
enum SimulateCommand {
    /// Blending study on the fixed pseudo-population.
    Pseudo(PseudoArgs),
    /// Variance-estimator study on synthetic populations.
    Synthetic(SyntheticArgs),
}

#[derive(Args)]
struct PseudoArgs {
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    /// Self-selection settings to run (1-5).
    #[arg(long, value_delimiter = ',', default_values_t = vec![1u8, 2, 3, 4, 5])]
    settings: Vec<u8>,
    /// Monte Carlo iterations per setting.
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    /// Master seed of the per-iteration draws.
    #[arg(long, default_value_t = 20_240_816)]
    seed: u64,
    /// Seed of the fixed population.
    #[arg(long, default_value_t = 940)]
    population_seed: u64,
    /// Strength of the outcome term in the self-selection of settings 3-5.
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// Jackknife groups for the post-hoc covariance.
    #[arg(long, default_value_t = 40)]
    groups: usize,
}

#[derive(Args)]
struct SyntheticArgs {
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    /// Shares of outcome variance explained by the selection covariates.
    #[arg(long = "r2", value_delimiter = ',', default_values_t = vec![0.0, 0.25, 0.5, 0.75, 0.9])]
    r_squared: Vec<f64>,
    /// Monte Carlo iterations per share.
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    /// Master seed.
    #[arg(long, default_value_t = 20_240_816)]
    seed: u64,
    /// Jackknife groups.
    #[arg(long, default_value_t = 40)]
    groups: usize,
    /// Population size drawn each iteration.
    #[arg(long, default_value_t = 10_000)]
    population: usize,
    /// Simple-random-sample size.
    #[arg(long, default_value_t = 200)]
    sample_size: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: could not configure {threads} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Weights(args) => cmd_weights(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::Adequacy(args) => cmd_adequacy(args),
        Command::Benchmarks(args) => cmd_benchmarks(args),
        Command::Simulate(SimulateCommand::Pseudo(args)) => cmd_simulate_pseudo(args),
        Command::Simulate(SimulateCommand::Synthetic(args)) => cmd_simulate_synthetic(args),
    }
}

fn analysis_manifest(command: &str, cfg: &RunConfig, ds: &Dataset, wspec: &WeightSpec) -> Manifest {
    let mut m = Manifest::new(command);
    m.data_file = Some(cfg.data_path().display().to_string());
    m.n_units = Some(ds.len());
    m.n_prob = Some(ds.n_prob());
    m.n_conv = Some(ds.n_conv());
    m.scheme = Some(wspec.scheme.label().to_string());
    m.model_vars = Some(wspec.model_vars.clone());
    if matches!(wspec.scheme, Scheme::Sc | Scheme::Dc) {
        m.calibration_vars = Some(wspec.calibration_vars().to_vec());
    }
    if matches!(wspec.scheme, Scheme::Dps | Scheme::Dc) {
        m.kappa_rule = Some(match wspec.kappa {
            KappaRule::Auto => "auto".to_string(),
            KappaRule::Fixed(v) => format!("{v}"),
        });
    }
    m.trim_pct = Some(wspec.trim_pct);
    m
}

fn finish_manifest(dir: &std::path::Path, mut manifest: Manifest, outputs: &[&str]) -> Result<()> {
    manifest.outputs = outputs.iter().map(|s| s.to_string()).collect();
    report::write_manifest(&dir.join("manifest.json"), &manifest)?;
    for name in outputs.iter().chain(["manifest.json"].iter()) {
        println!("wrote {}", dir.join(name).display());
    }
    Ok(())
}

fn cmd_weights(args: PlottableArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.common.config)?;
    let ds = cfg.load_data()?;
    let wspec = cfg.weight_spec()?;
    let out = workflow::compute_weights(&ds, &wspec)?;
    let dir = &args.common.out_dir;
    std::fs::create_dir_all(dir)?;

    let mut outputs = vec!["weights.csv", "balance.csv"];
    report::write_weights_csv(&dir.join("weights.csv"), &ds, &out.weights)?;
    let balance = workflow::balance_table(&ds, &out.weights, out.benchmarks.as_ref())?;
    report::write_balance_csv(&dir.join("balance.csv"), &balance)?;
    if let Some(bench) = &out.benchmarks {
        report::write_benchmarks_csv(&dir.join("benchmarks.csv"), bench)?;
        outputs.push("benchmarks.csv");
    }
    if args.plot {
        report::write_weight_curve_svg(&dir.join("weights.svg"), &out.weights)?;
        outputs.push("weights.svg");
    }

    println!(
        "{} weights for {} units ({} probability + {} convenience), design effect {:.3}",
        out.weights.scheme.label(),
        ds.len(),
        ds.n_prob(),
        ds.n_conv(),
        out.weights.kish_deff()
    );
    if let Some(kappa) = out.weights.kappa {
        println!("blending coefficient kappa = {kappa:.4}");
    }
    if let Some(trim) = &out.trim {
        println!(
            "trimmed {} low / {} high weights to [{:.4}, {:.4}]",
            trim.n_low, trim.n_high, trim.low, trim.high
        );
    }
    let mut manifest = analysis_manifest("weights", &cfg, &ds, &wspec);
    manifest.kappa = out.weights.kappa;
    finish_manifest(dir, manifest, &outputs)
}

fn cmd_estimate(args: PlottableArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.common.config)?;
    let ds = cfg.load_data()?;
    let wspec = cfg.weight_spec()?;
    let espec = cfg.estimate_spec()?;
    let reports = workflow::estimate_means(&ds, &wspec, &espec)?;
    let dir = &args.common.out_dir;
    std::fs::create_dir_all(dir)?;

    let mut outputs = vec!["estimates.csv"];
    report::write_estimates_csv(&dir.join("estimates.csv"), &reports)?;
    if args.plot {
        report::write_interval_svg(&dir.join("estimates.svg"), &reports)?;
        outputs.push("estimates.svg");
    }

    let level = 100.0 * (1.0 - espec.alpha);
    for r in &reports {
        println!(
            "{}: {:.4} (se {:.4}, {level:.0}% interval {:.4} to {:.4}, deff {:.3}, n {})",
            r.estimand, r.estimate, r.se, r.ci_low, r.ci_high, r.deff, r.n_used
        );
    }
    let mut manifest = analysis_manifest("estimate", &cfg, &ds, &wspec);
    manifest.variance = Some(espec.variance.label().to_string());
    manifest.alpha = Some(espec.alpha);
    if matches!(
        espec.variance,
        blendstat::estimation::VarianceMethod::Jackknife
    ) {
        manifest.groups = Some(espec.groups);
        manifest.seed = Some(espec.seed);
    }
    finish_manifest(dir, manifest, &outputs)
}

fn cmd_adequacy(args: CommonArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let ds = cfg.load_data()?;
    let wspec = cfg.weight_spec()?;
    let espec = cfg.estimate_spec()?;
    let tests = workflow::run_adequacy(&ds, &wspec, &espec.outcomes)?;
    std::fs::create_dir_all(&args.out_dir)?;
    report::write_adequacy_csv(&args.out_dir.join("adequacy.csv"), &tests)?;

    for t in &tests {
        println!(
            "{}: convenience minus probability mean {:.4} (se {:.4}, z {:.3}, p {:.4})",
            t.outcome, t.delta, t.se, t.z, t.p_value
        );
    }
    let manifest = analysis_manifest("adequacy", &cfg, &ds, &wspec);
    finish_manifest(&args.out_dir, manifest, &["adequacy.csv"])
}

fn cmd_benchmarks(args: CommonArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let ds = cfg.load_data()?;
    let wspec = cfg.weight_spec()?;
    let r_hat: Vec<f64> = ds.units().iter().map(|u| u.r_hat.unwrap_or(1.0)).collect();
    let gamma = estimate_gamma(&ds, &wspec.model_vars)?;
    let probs = assemble_inclusion(&ds, &gamma.gamma, &r_hat)?;
    let bench = workflow::resolve_benchmarks(&ds, &probs, &wspec)?;
    std::fs::create_dir_all(&args.out_dir)?;
    report::write_benchmarks_csv(&args.out_dir.join("benchmarks.csv"), &bench)?;

    for (name, total) in bench.names.iter().zip(&bench.totals) {
        println!("{name}: {total:.4}");
    }
    let manifest = analysis_manifest("benchmarks", &cfg, &ds, &wspec);
    finish_manifest(&args.out_dir, manifest, &["benchmarks.csv"])
}

fn cmd_simulate_pseudo(args: PseudoArgs) -> Result<()> {
    let base = pseudo::PseudoConfig {
        setting: *args.settings.first().unwrap_or(&1),
        iterations: args.iterations,
        seed: args.seed,
        population_seed: args.population_seed,
        tau: args.tau,
        groups: args.groups,
    };
    let results = pseudo::run_pseudo_settings(&base, &args.settings)?;
    std::fs::create_dir_all(&args.out_dir)?;
    write_pseudo_csv(&args.out_dir.join("pseudo_metrics.csv"), &results)?;

    for r in &results {
        println!(
            "setting {} (mean mental-health mean {:.3}; avg samples {:.1} probability + {:.1} convenience):",
            r.setting, r.population_mean, r.mean_n_prob, r.mean_n_conv
        );
        for m in &r.metrics {
            let deff = m
                .mean_deff
                .map(|d| format!(" deff {d:.2}"))
                .unwrap_or_default();
            let rej = m
                .rejection_rate
                .map(|p| format!(" rejected {:.1}%", 100.0 * p))
                .unwrap_or_default();
            let fail = if m.failures > 0 {
                format!(" ({} failures)", m.failures)
            } else {
                String::new()
            };
            println!(
                "  {:<10} bias {:+.2}% rmse {:.2}%{deff}{rej}{fail}",
                m.scheme, m.bias_pct, m.rmse_pct
            );
        }
    }
    let mut manifest = Manifest::new("simulate pseudo");
    manifest.iterations = Some(args.iterations);
    manifest.settings = Some(args.settings.clone());
    manifest.tau = Some(args.tau);
    manifest.seed = Some(args.seed);
    manifest.population_seed = Some(args.population_seed);
    manifest.groups = Some(args.groups);
    finish_manifest(&args.out_dir, manifest, &["pseudo_metrics.csv"])
}

fn cmd_simulate_synthetic(args: SyntheticArgs) -> Result<()> {
    let config = synthetic::SyntheticConfig {
        r_squared: args.r_squared.clone(),
        iterations: args.iterations,
        seed: args.seed,
        groups: args.groups,
        population: args.population,
        sample_size: args.sample_size,
    };
    let cells = synthetic::run_synthetic(&config)?;
    std::fs::create_dir_all(&args.out_dir)?;
    write_synthetic_csv(&args.out_dir.join("synthetic_metrics.csv"), &cells)?;

    for c in &cells {
        println!(
            "share {:.2}: coverage prob-only {:.3}, linearized {:.3}, jackknife {:.3}; mean se {:.4} / {:.4} / {:.4}{}",
            c.r_squared,
            c.coverage_prob_only,
            c.coverage_linearized,
            c.coverage_jackknife,
            c.mean_se_prob_only,
            c.mean_se_linearized,
            c.mean_se_jackknife,
            if c.failures > 0 {
                format!(" ({} failures)", c.failures)
            } else {
                String::new()
            }
        );
    }
    let mut manifest = Manifest::new("simulate synthetic");
    manifest.iterations = Some(args.iterations);
    manifest.r_squared = Some(args.r_squared.clone());
    manifest.seed = Some(args.seed);
    manifest.groups = Some(args.groups);
    manifest.population = Some(args.population);
    manifest.sample_size = Some(args.sample_size);
    finish_manifest(&args.out_dir, manifest, &["synthetic_metrics.csv"])
}
