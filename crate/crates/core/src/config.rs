//! TOML run configuration: one file describes the data layout, the
//! weighting scheme, and the estimation controls for a command-line run.
//!
//! ```toml
//! [data]
//! file = "units.csv"
//! auxiliaries = ["age", "female"]
//! outcomes = ["score"]
//! # response_column = "r_hat"        # optional response probabilities
//!
//! [weights]
//! scheme = "dps"                     # sps | dps | sc | dc
//! # model_vars = ["age", "female"]   # default: the auxiliaries
//! # calibration_vars = ["age"]       # default: model_vars
//! # kappa = "auto"                   # or a number in [0, 1]
//! # trim_pct = 0.01
//! # rake_init = "propensity"         # or "equal"
//! # rake_lower = 0.0
//! # rake_upper = 4.0                 # default: unbounded
//! # rake_max_iter = 50
//! # rake_tol = 1e-8
//! # [weights.benchmarks]             # known totals (optional)
//! # "(intercept)" = 9500.0
//! # female = 5200.0
//!
//! [estimate]
//! # outcomes = []                    # default: every schema outcome
//! # variance = "linearized"          # or "jackknife"
//! # groups = 40
//! # seed = 0
//! # alpha = 0.05
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::blending::{KappaRule, Scheme};
use crate::calibration::{BenchmarkVector, Provenance, RakeInit, RakeOptions};
use crate::dataset::{load_dataset, Dataset, Schema};
use crate::error::{Error, Result};
use crate::estimation::VarianceMethod;
use crate::variance::DEFAULT_GROUPS;
use crate::workflow::{EstimateSpec, WeightSpec};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub weights: WeightsSection,
    #[serde(default)]
    pub estimate: EstimateSection,
    #[serde(skip)]
    base_dir: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// CSV file with the pooled sample, relative to the config file.
    pub file: String,
    pub auxiliaries: Vec<String>,
    pub outcomes: Vec<String>,
    /// Column holding response probabilities for probability-sample units.
    #[serde(default)]
    pub response_column: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSection {
    pub scheme: String,
    #[serde(default)]
    pub model_vars: Option<Vec<String>>,
    #[serde(default)]
    pub calibration_vars: Option<Vec<String>>,
    #[serde(default)]
    pub kappa: Option<KappaField>,
    #[serde(default = "default_trim")]
    pub trim_pct: f64,
    #[serde(default = "default_init")]
    pub rake_init: String,
    #[serde(default)]
    pub rake_lower: f64,
    #[serde(default)]
    pub rake_upper: Option<f64>,
    #[serde(default = "default_max_iter")]
    pub rake_max_iter: usize,
    #[serde(default = "default_tol")]
    pub rake_tol: f64,
    /// Known benchmark totals by constraint name.
    #[serde(default)]
    pub benchmarks: Option<BTreeMap<String, f64>>,
}

/// `kappa = "auto"` or a number in `[0, 1]`.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum KappaField {
    Name(String),
    Value(f64),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSection {
    #[serde(default)]
    pub outcomes: Vec<String>,
    #[serde(default = "default_variance")]
    pub variance: String,
    #[serde(default = "default_groups")]
    pub groups: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

impl Default for EstimateSection {
    fn default() -> Self {
        EstimateSection {
            outcomes: Vec::new(),
            variance: default_variance(),
            groups: default_groups(),
            seed: 0,
            alpha: default_alpha(),
        }
    }
}

fn default_trim() -> f64 {
    0.01
}
fn default_init() -> String {
    "propensity".into()
}
fn default_max_iter() -> usize {
    50
}
fn default_tol() -> f64 {
    1e-8
}
fn default_variance() -> String {
    "linearized".into()
}
fn default_groups() -> usize {
    DEFAULT_GROUPS
}
fn default_alpha() -> f64 {
    0.05
}

impl RunConfig {
    /// Parse a TOML run configuration; relative paths inside it resolve
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::BadConfig(format!("{}: {e}", path.display())))?;
        config.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(config)
    }

    pub fn schema(&self) -> Result<Schema> {
        let schema = Schema::new(
            self.data.auxiliaries.iter().cloned(),
            self.data.outcomes.iter().cloned(),
        )?;
        match &self.data.response_column {
            Some(col) => schema.with_response_override(col.clone()),
            None => Ok(schema),
        }
    }

    pub fn data_path(&self) -> PathBuf {
        self.base_dir.join(&self.data.file)
    }

    pub fn load_data(&self) -> Result<Dataset> {
        load_dataset(&self.data_path(), self.schema()?)
    }

    pub fn weight_spec(&self) -> Result<WeightSpec> {
        let scheme: Scheme = self.weights.scheme.parse()?;
        let model_vars = self
            .weights
            .model_vars
            .clone()
            .unwrap_or_else(|| self.data.auxiliaries.clone());
        let mut spec = WeightSpec::new(scheme, model_vars);
        spec.calibration_vars = self.weights.calibration_vars.clone();
        spec.kappa = match &self.weights.kappa {
            None => KappaRule::Auto,
            Some(KappaField::Value(v)) => KappaRule::Fixed(*v),
            Some(KappaField::Name(name)) if name.eq_ignore_ascii_case("auto") => KappaRule::Auto,
            Some(KappaField::Name(name)) => {
                return Err(Error::BadConfig(format!(
                    "kappa must be \"auto\" or a number, got \"{name}\""
                )))
            }
        };
        spec.trim_pct = self.weights.trim_pct;
        spec.rake_init = match self.weights.rake_init.to_ascii_lowercase().as_str() {
            "propensity" => RakeInit::Propensity,
            "equal" => RakeInit::Equal,
            other => {
                return Err(Error::BadConfig(format!(
                    "rake_init must be \"propensity\" or \"equal\", got \"{other}\""
                )))
            }
        };
        spec.rake_options = RakeOptions {
            lower: self.weights.rake_lower,
            upper: self.weights.rake_upper.unwrap_or(f64::INFINITY),
            max_iter: self.weights.rake_max_iter,
            tol: self.weights.rake_tol,
        };
        if let Some(map) = &self.weights.benchmarks {
            let names: Vec<String> = map.keys().cloned().collect();
            let totals: Vec<f64> = map.values().cloned().collect();
            spec.known_benchmarks = Some(BenchmarkVector::new(names, totals, Provenance::Known)?);
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn estimate_spec(&self) -> Result<EstimateSpec> {
        let variance = match self.estimate.variance.to_ascii_lowercase().as_str() {
            "linearized" => VarianceMethod::Linearized,
            "jackknife" => VarianceMethod::Jackknife,
            other => {
                return Err(Error::BadConfig(format!(
                    "variance must be \"linearized\" or \"jackknife\", got \"{other}\""
                )))
            }
        };
        let spec = EstimateSpec {
            outcomes: self.estimate.outcomes.clone(),
            variance,
            groups: self.estimate.groups,
            seed: self.estimate.seed,
            alpha: self.estimate.alpha,
        };
        spec.validate()?;
        Ok(spec)
    }
}
