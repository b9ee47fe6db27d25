use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}, column `{column}`: {reason} (value {value:?})")]
    InvalidValue {
        row: usize,
        column: String,
        value: String,
        reason: String,
    },

    #[error("duplicate unit id `{0}`")]
    DuplicateId(String),

    #[error("set {set_id} violates min(m, n-m)=1 (m={m}, n={n})")]
    SetInvariant { set_id: i64, m: usize, n: usize },

    #[error("version column absent")]
    VersionsAbsent,

    #[error("no covariates available")]
    NoCovariates,

    #[error("infeasible match: {0}")]
    Infeasible(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("exact enumeration needs {count} assignments, above the cap of {cap}")]
    EnumerationTooLarge { count: u128, cap: u128 },

    #[error("non-monotone p-value path on the {side} side near tau0={near}; use grid inversion")]
    NonMonotone { side: &'static str, near: f64 },

    #[error("empty acceptance region: {0}")]
    EmptyAcceptance(String),

    #[error("design matrix is rank deficient")]
    RankDeficient,
}
