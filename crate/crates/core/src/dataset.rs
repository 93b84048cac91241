//! Input data model: a pooled sample of probability-sample and
//! convenience-sample units with auxiliary variables and outcomes.
//!
//! The on-disk format is delimited text with three reserved columns:
//!
//! * `id` — unique unit identifier (any non-empty string),
//! * `sample` — membership label, `prob` or `conv`,
//! * `d_star` — design inclusion probability; required for `prob` units,
//!   optional for `conv` units (imputed downstream when absent).
//!
//! Auxiliary and outcome columns are declared by name in a [`Schema`].
//! Auxiliary values must be complete; outcome cells may be empty. An optional
//! response-probability override column can be declared for data sets whose
//! probability units carry an externally estimated response adjustment.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which sample a unit belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Membership {
    /// Probability sample (design-based inclusion probabilities known).
    Prob,
    /// Convenience sample (inclusion mechanism unknown).
    Conv,
}

impl Membership {
    /// The label used in the `sample` column.
    pub fn label(self) -> &'static str {
        match self {
            Membership::Prob => "prob",
            Membership::Conv => "conv",
        }
    }
}

impl fmt::Display for Membership {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Declared variable layout of a data set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    /// Complete numeric covariates available for every unit.
    pub auxiliaries: Vec<String>,
    /// Outcome variables; individual cells may be missing.
    pub outcomes: Vec<String>,
    /// Optional column carrying externally supplied response probabilities
    /// for probability-sample units.
    #[serde(default)]
    pub response_override: Option<String>,
}

const RESERVED: [&str; 3] = ["id", "sample", "d_star"];

impl Schema {
    /// Build a schema, rejecting duplicate, reserved, or empty names.
    pub fn new<A: Into<String>, O: Into<String>>(
        auxiliaries: impl IntoIterator<Item = A>,
        outcomes: impl IntoIterator<Item = O>,
    ) -> Result<Self> {
        let schema = Schema {
            auxiliaries: auxiliaries.into_iter().map(Into::into).collect(),
            outcomes: outcomes.into_iter().map(Into::into).collect(),
            response_override: None,
        };
        schema.validate()?;
        Ok(schema)
    }

    /// Declare a response-probability override column.
    pub fn with_response_override(mut self, column: impl Into<String>) -> Result<Self> {
        self.response_override = Some(column.into());
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let all = self
            .auxiliaries
            .iter()
            .chain(self.outcomes.iter())
            .chain(self.response_override.iter());
        for name in all {
            if name.is_empty() {
                return Err(Error::BadConfig("empty variable name".into()));
            }
            if RESERVED.contains(&name.as_str()) {
                return Err(Error::BadConfig(format!(
                    "variable name `{name}` collides with a reserved column"
                )));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::BadConfig(format!(
                    "variable `{name}` is declared more than once"
                )));
            }
        }
        Ok(())
    }

    fn aux_index(&self, name: &str) -> Option<usize> {
        self.auxiliaries.iter().position(|a| a == name)
    }

    fn outcome_index(&self, name: &str) -> Option<usize> {
        self.outcomes.iter().position(|o| o == name)
    }
}

/// One observed unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub id: String,
    pub membership: Membership,
    /// Design inclusion probability of the unit's frame selection.
    pub d_star: Option<f64>,
    /// Externally supplied response probability, when the schema declares an
    /// override column.
    pub r_hat: Option<f64>,
    /// Auxiliary values, ordered as in [`Schema::auxiliaries`].
    pub x: Vec<f64>,
    /// Outcome values, ordered as in [`Schema::outcomes`].
    pub y: Vec<Option<f64>>,
}

/// A validated pooled sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Schema,
    units: Vec<Unit>,
    n_prob: usize,
    n_conv: usize,
}

/// A design matrix extracted from a data set, together with the unit indices
/// that produced each row (rows are in data-set order).
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub matrix: DMatrix<f64>,
    pub rows: Vec<usize>,
}

impl Dataset {
    /// Validate and assemble a data set. Both samples must be non-empty, ids
    /// unique, `d_star` present and in (0, 1] for probability units, and all
    /// numeric values finite.
    pub fn new(schema: Schema, units: Vec<Unit>) -> Result<Self> {
        schema.validate()?;
        let mut ids = HashSet::new();
        let mut n_prob = 0;
        let mut n_conv = 0;
        for unit in &units {
            if unit.id.is_empty() {
                return Err(Error::BadArgument("unit with empty id".into()));
            }
            if !ids.insert(unit.id.clone()) {
                return Err(Error::DuplicateId {
                    id: unit.id.clone(),
                });
            }
            match unit.membership {
                Membership::Prob => {
                    n_prob += 1;
                    if unit.d_star.is_none() {
                        return Err(Error::MissingValue {
                            id: unit.id.clone(),
                            column: "d_star".into(),
                        });
                    }
                }
                Membership::Conv => n_conv += 1,
            }
            if let Some(d) = unit.d_star {
                if !(d.is_finite() && d > 0.0 && d <= 1.0) {
                    return Err(Error::BadProbability {
                        id: unit.id.clone(),
                        value: d,
                    });
                }
            }
            if let Some(r) = unit.r_hat {
                if !(r.is_finite() && r > 0.0 && r <= 1.0) {
                    return Err(Error::BadProbability {
                        id: unit.id.clone(),
                        value: r,
                    });
                }
            }
            if unit.x.len() != schema.auxiliaries.len() {
                return Err(Error::BadArgument(format!(
                    "unit `{}` has {} auxiliary values, schema declares {}",
                    unit.id,
                    unit.x.len(),
                    schema.auxiliaries.len()
                )));
            }
            if unit.y.len() != schema.outcomes.len() {
                return Err(Error::BadArgument(format!(
                    "unit `{}` has {} outcome values, schema declares {}",
                    unit.id,
                    unit.y.len(),
                    schema.outcomes.len()
                )));
            }
            for (name, v) in schema.auxiliaries.iter().zip(&unit.x) {
                if !v.is_finite() {
                    return Err(Error::BadNumber {
                        id: unit.id.clone(),
                        column: name.clone(),
                        raw: v.to_string(),
                    });
                }
            }
            for (name, v) in schema.outcomes.iter().zip(&unit.y) {
                if let Some(v) = v {
                    if !v.is_finite() {
                        return Err(Error::BadNumber {
                            id: unit.id.clone(),
                            column: name.clone(),
                            raw: v.to_string(),
                        });
                    }
                }
            }
        }
        if n_prob == 0 {
            return Err(Error::EmptySample("probability"));
        }
        if n_conv == 0 {
            return Err(Error::EmptySample("convenience"));
        }
        Ok(Dataset {
            schema,
            units,
            n_prob,
            n_conv,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn n_prob(&self) -> usize {
        self.n_prob
    }

    pub fn n_conv(&self) -> usize {
        self.n_conv
    }

    /// Indices of probability-sample units, in data-set order.
    pub fn prob_indices(&self) -> Vec<usize> {
        self.indices_of(Membership::Prob)
    }

    /// Indices of convenience-sample units, in data-set order.
    pub fn conv_indices(&self) -> Vec<usize> {
        self.indices_of(Membership::Conv)
    }

    fn indices_of(&self, m: Membership) -> Vec<usize> {
        self.units
            .iter()
            .enumerate()
            .filter(|(_, u)| u.membership == m)
            .map(|(i, _)| i)
            .collect()
    }

    /// Per-unit convenience-membership indicator.
    pub fn conv_indicator(&self) -> Vec<bool> {
        self.units
            .iter()
            .map(|u| u.membership == Membership::Conv)
            .collect()
    }

    /// Values of a declared variable for every unit. Auxiliaries are always
    /// complete; outcome cells may be `None`.
    pub fn variable(&self, name: &str) -> Result<Vec<Option<f64>>> {
        if let Some(j) = self.schema.aux_index(name) {
            return Ok(self.units.iter().map(|u| Some(u.x[j])).collect());
        }
        if let Some(j) = self.schema.outcome_index(name) {
            return Ok(self.units.iter().map(|u| u.y[j]).collect());
        }
        Err(Error::UnknownVariable(name.into()))
    }

    /// Design matrix over all units; see [`Dataset::design_matrix_for`].
    pub fn design_matrix(&self, vars: &[String], intercept: bool) -> Result<DesignMatrix> {
        let rows: Vec<usize> = (0..self.units.len()).collect();
        self.design_matrix_for(&rows, vars, intercept)
    }

    /// Design matrix over the given unit indices. Columns are the intercept
    /// (when requested) followed by `vars` in the order given. Variables may
    /// be auxiliaries or outcomes; a missing outcome cell among the selected
    /// rows is an error because design matrices must be complete.
    pub fn design_matrix_for(
        &self,
        rows: &[usize],
        vars: &[String],
        intercept: bool,
    ) -> Result<DesignMatrix> {
        let mut columns: Vec<Vec<f64>> = Vec::with_capacity(vars.len() + usize::from(intercept));
        if intercept {
            columns.push(vec![1.0; rows.len()]);
        }
        for name in vars {
            let values = self.variable(name)?;
            let mut col = Vec::with_capacity(rows.len());
            for &r in rows {
                match values[r] {
                    Some(v) => col.push(v),
                    None => {
                        return Err(Error::MissingValue {
                            id: self.units[r].id.clone(),
                            column: name.clone(),
                        })
                    }
                }
            }
            columns.push(col);
        }
        let ncols = columns.len();
        let matrix = DMatrix::from_fn(rows.len(), ncols, |r, c| columns[c][r]);
        Ok(DesignMatrix {
            matrix,
            rows: rows.to_vec(),
        })
    }

    /// A copy keeping only the units whose flag is `true`. Fails if either
    /// sample would become empty.
    pub fn retain(&self, keep: &[bool]) -> Result<Dataset> {
        if keep.len() != self.units.len() {
            return Err(Error::BadArgument(format!(
                "retain mask has {} entries for {} units",
                keep.len(),
                self.units.len()
            )));
        }
        let units = self
            .units
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(u, _)| u.clone())
            .collect();
        Dataset::new(self.schema.clone(), units)
    }

    /// Write the data set as delimited text; [`load_dataset`] reads it back
    /// to an identical value.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["id".to_string(), "sample".into(), "d_star".into()];
        if let Some(r) = &self.schema.response_override {
            header.push(r.clone());
        }
        header.extend(self.schema.auxiliaries.iter().cloned());
        header.extend(self.schema.outcomes.iter().cloned());
        w.write_record(&header)?;
        for u in &self.units {
            let mut rec = vec![
                u.id.clone(),
                u.membership.label().to_string(),
                u.d_star.map(|d| d.to_string()).unwrap_or_default(),
            ];
            if self.schema.response_override.is_some() {
                rec.push(u.r_hat.map(|r| r.to_string()).unwrap_or_default());
            }
            rec.extend(u.x.iter().map(|v| v.to_string()));
            rec.extend(
                u.y.iter()
                    .map(|v| v.map(|v| v.to_string()).unwrap_or_default()),
            );
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn parse_cell(raw: &str, id: &str, column: &str) -> Result<Option<f64>> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    match f64::from_str(raw) {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(Error::BadNumber {
            id: id.to_string(),
            column: column.to_string(),
            raw: raw.to_string(),
        }),
    }
}

/// Load a data set from delimited text, validating it against the schema.
pub fn load_dataset(path: &Path, schema: Schema) -> Result<Dataset> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let position = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let id_col = position("id")?;
    let sample_col = position("sample")?;
    let d_star_col = position("d_star")?;
    let r_hat_col = match &schema.response_override {
        Some(name) => Some(position(name)?),
        None => None,
    };
    let aux_cols: Vec<usize> = schema
        .auxiliaries
        .iter()
        .map(|n| position(n))
        .collect::<Result<_>>()?;
    let out_cols: Vec<usize> = schema
        .outcomes
        .iter()
        .map(|n| position(n))
        .collect::<Result<_>>()?;

    let mut units = Vec::new();
    for record in reader.records() {
        let record = record?;
        let id = record.get(id_col).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(Error::MissingValue {
                id: format!("row {}", units.len() + 2),
                column: "id".into(),
            });
        }
        let label = record.get(sample_col).unwrap_or("").trim();
        let membership = match label {
            "prob" => Membership::Prob,
            "conv" => Membership::Conv,
            other => {
                return Err(Error::BadSampleLabel {
                    id,
                    label: other.to_string(),
                })
            }
        };
        let d_star = parse_cell(record.get(d_star_col).unwrap_or(""), &id, "d_star")?;
        let r_hat = match r_hat_col {
            Some(col) => parse_cell(
                record.get(col).unwrap_or(""),
                &id,
                schema.response_override.as_deref().unwrap_or("r_hat"),
            )?,
            None => None,
        };
        let mut x = Vec::with_capacity(aux_cols.len());
        for (col, name) in aux_cols.iter().zip(&schema.auxiliaries) {
            match parse_cell(record.get(*col).unwrap_or(""), &id, name)? {
                Some(v) => x.push(v),
                None => {
                    return Err(Error::MissingValue {
                        id,
                        column: name.clone(),
                    })
                }
            }
        }
        let mut y = Vec::with_capacity(out_cols.len());
        for (col, name) in out_cols.iter().zip(&schema.outcomes) {
            y.push(parse_cell(record.get(*col).unwrap_or(""), &id, name)?);
        }
        units.push(Unit {
            id,
            membership,
            d_star,
            r_hat,
            x,
            y,
        });
    }
    Dataset::new(schema, units)
}
