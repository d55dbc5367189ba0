//! Graduation-rate estimation with absorbing Markov chains.
//!
//! The crate covers the chain algebra ([`chain`]), trajectory ingestion and
//! maximum-likelihood fitting ([`trajectory`]), the estimators themselves
//! ([`estimators`]) and a Monte Carlo harness for comparing them
//! ([`simulator`]).

pub mod chain;
pub mod error;
pub mod estimators;
pub mod io;
pub mod kde;
pub mod linalg;
pub mod presets;
pub mod report;
pub mod simulator;
pub mod trajectory;

pub use chain::{
    build_chain, AbsorbingChain, AbsorptionSummary, ChainDocument, Role, State, StateDistribution, StateId,
    StateSpace, StepAbsorption,
};
pub use error::{GradError, Result};
pub use estimators::{
    amc_grad_rate, entry_year_batches, ml_amc_fit, ml_amc_grad_rate, rolling_sygr, ruml_series, sample_stats, sygr, CohortOutcome,
    EstimateSample, EstimatorSpec, MlAmcFit, RumlSeries, SampleStats,
};
pub use kde::{kde_curve, Grid};
pub use linalg::Matrix;
pub use presets::Preset;
pub use report::{to_json_fixed, EstimateReport, ExperimentReport, SweepRow};
pub use simulator::{
    generate_staggered, run_experiment, run_experiment_with_workers, sample_binomial_cohort, sample_trajectory,
    ChainSampler, ErrorDecomposition, EstimatorOutcome, ExperimentConfig, ExperimentOutcome, FailurePolicy,
    GroundTruth, KdeConfig, StaggeredConfig, TruthChain, TruthConfig,
};
pub use trajectory::{
    count_transitions, expand_levels, fit_transition_matrix, ingest_records, mle_transition_matrix,
    EnrollmentRecord, ExpandedTrajectory, FittedChain, Ingested, Level, LevelSpec, Outcome, Standing, SubState,
    Term, Trajectory, TransitionCounts, UnobservedPolicy,
};
