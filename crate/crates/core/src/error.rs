//! Error type shared across the crate.
//!
//! Every fallible operation returns [`Result`]. Variants are grouped into
//! coarse classes (configuration, data validation, model fitting, propensity
//! algebra, calibration, scheme misuse, degenerate variance, replication) so
//! the command-line frontend can map them onto distinct exit codes.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // --- configuration / arguments ---
    #[error("invalid configuration: {0}")]
    BadConfig(String),

    #[error("invalid argument: {0}")]
    BadArgument(String),

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    // --- data validation ---
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed delimited input: {0}")]
    Csv(#[from] csv::Error),

    #[error("required column `{0}` is missing from the input")]
    MissingColumn(String),

    #[error("unit `{id}`: column `{column}` has no value")]
    MissingValue { id: String, column: String },

    #[error("unit `{id}`: column `{column}`: cannot parse `{raw}` as a number")]
    BadNumber {
        id: String,
        column: String,
        raw: String,
    },

    #[error("unit `{id}`: sample label `{label}` is neither `prob` nor `conv`")]
    BadSampleLabel { id: String, label: String },

    #[error("unit `{id}`: probability {value} lies outside (0, 1]")]
    BadProbability { id: String, value: f64 },

    #[error("unit id `{id}` appears more than once")]
    DuplicateId { id: String },

    #[error("the {0} sample contains no units")]
    EmptySample(&'static str),

    // --- model fitting ---
    #[error("design matrix is rank deficient (rank {rank} of {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },

    #[error("binary response is constant; logistic fit is undefined")]
    AllSameClass,

    #[error("need at least {needed} units, found {found}")]
    NotEnoughUnits { needed: usize, found: usize },

    // --- propensity algebra ---
    #[error(
        "estimated convenience share reaches 1 for unit `{id}`; its inclusion odds are unbounded"
    )]
    GammaAtOne { id: String },

    #[error("convenience-side inclusion probability is zero for unit `{id}`")]
    ZeroConvenienceProb { id: String },

    // --- calibration ---
    #[error("calibration did not converge: {0}")]
    RakingNonconvergence(String),

    // --- scheme misuse ---
    #[error("weights carry scheme `{found}` where a {needed} scheme is required")]
    WrongScheme { needed: String, found: String },

    // --- degenerate variance ---
    #[error(
        "variance of the estimator difference is not positive; blend coefficient is undefined"
    )]
    DegenerateVariance,

    // --- replication ---
    #[error("cannot split {units} units into {groups} replicate groups")]
    TooFewUnits { units: usize, groups: usize },

    #[error("replicate group {group} failed: {source}")]
    ReplicateFailure { group: usize, source: Box<Error> },
}

impl Error {
    /// Exit code for the command-line frontend: one code per error class.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            BadConfig(_) | BadArgument(_) | UnknownVariable(_) => 2,
            Io(_)
            | Csv(_)
            | MissingColumn(_)
            | MissingValue { .. }
            | BadNumber { .. }
            | BadSampleLabel { .. }
            | BadProbability { .. }
            | DuplicateId { .. }
            | EmptySample(_) => 3,
            RankDeficient { .. } | AllSameClass | NotEnoughUnits { .. } => 4,
            GammaAtOne { .. } | ZeroConvenienceProb { .. } => 5,
            RakingNonconvergence(_) => 6,
            WrongScheme { .. } => 7,
            DegenerateVariance => 8,
            TooFewUnits { .. } | ReplicateFailure { .. } => 9,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct_per_class() {
        let cases = [
            (Error::BadConfig("x".into()), 2),
            (Error::MissingColumn("id".into()), 3),
            (Error::AllSameClass, 4),
            (
                Error::GammaAtOne {
                    id: "u1".to_string(),
                },
                5,
            ),
            (Error::RakingNonconvergence("residual 0.2".into()), 6),
            (
                Error::WrongScheme {
                    needed: "disjoint".into(),
                    found: "sps".into(),
                },
                7,
            ),
            (Error::DegenerateVariance, 8),
            (
                Error::TooFewUnits {
                    units: 3,
                    groups: 5,
                },
                9,
            ),
        ];
        for (err, code) in cases {
            assert_eq!(err.exit_code(), code, "{err}");
        }
    }

    #[test]
    fn replicate_failure_carries_its_cause() {
        let inner = Error::EmptySample("convenience");
        let err = Error::ReplicateFailure {
            group: 7,
            source: Box::new(inner),
        };
        let msg = err.to_string();
        assert!(msg.contains("group 7"), "{msg}");
        assert!(msg.contains("convenience"), "{msg}");
    }
}
