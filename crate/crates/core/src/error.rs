use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GradError {
    #[error("matrix is {rows}x{cols} but the state space has {states} states")]
    DimensionMismatch {
        rows: usize,
        cols: usize,
        states: usize,
    },
    #[error("invalid state space: {0}")]
    InvalidStateSpace(String),
    #[error("row {row} ({label}) is not stochastic: sums to {sum}")]
    NonStochasticRow { row: usize, label: String, sum: f64 },
    #[error("row {row} ({label}) has entry {value} outside [0, 1]")]
    ProbabilityOutOfRange {
        row: usize,
        label: String,
        value: f64,
    },
    #[error("absorbing state {label} does not have an identity row")]
    MalformedAbsorbingRow { label: String },
    #[error("chain is not absorbing: no absorbing state is reachable from {label}")]
    NonAbsorbing { label: String },
    #[error("matrix is singular within tolerance (pivot {pivot:e} at column {column})")]
    Singular { column: usize, pivot: f64 },
    #[error("state {label} is not transient")]
    StartNotTransient { label: String },
    #[error("chain has no {0} state")]
    MissingStartOrGraduate(&'static str),
    #[error("student {student_id}: duplicate record for term {year}-{term}")]
    DuplicateTermRecord {
        student_id: String,
        year: i32,
        term: u8,
    },
    #[error("level {0} is not part of the configured level vocabulary")]
    UnknownLevel(String),
    #[error("invalid trajectory for student {student_id}: {reason}")]
    InvalidTrajectory { student_id: String, reason: String },
    #[error("no transitions observed")]
    EmptyCounts,
    #[error("state {label} has no outgoing observations")]
    ZeroExposure { label: String },
    #[error("cohort has no starting students")]
    EmptyCohort,
    #[error("{0}")]
    InvalidCohort(String),
    #[error("empty list")]
    EmptyList,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("no samples")]
    EmptySamples,
    #[error("batch {batch}: observations for student {student_id} changed from an earlier batch")]
    InconsistentBatches { batch: usize, student_id: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("replication {replication}, estimator {estimator}: {source}")]
    Replication {
        replication: usize,
        estimator: String,
        #[source]
        source: Box<GradError>,
    },
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, GradError>;
