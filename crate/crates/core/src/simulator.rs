//! Ground truths, data samplers and the replication engine.
//!
//! Replication `i` draws from a ChaCha8 stream keyed by `(seed, i)`, and
//! results are collected in replication order, so a report depends only on
//! the configuration, never on how many worker threads ran it.

use std::path::PathBuf;

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{AbsorbingChain, ChainDocument, StateId};
use crate::error::{GradError, Result};
use crate::estimators::{
    amc_grad_rate, rolling_sygr, ruml_series, sample_stats, sygr, CohortOutcome, EstimateSample, EstimatorSpec,
    SampleStats,
};
use crate::kde::{kde_curve, Grid};
use crate::presets::Preset;
use crate::trajectory::{
    count_transitions, fit_transition_matrix, Level, LevelSpec, Outcome, Trajectory, UnobservedPolicy,
};

/// Categorical sampler over the rows of a chain.
#[derive(Debug, Clone)]
pub struct ChainSampler {
    /// Per row: `(target, cumulative probability)` over non-zero entries.
    cumulative: Vec<Vec<(usize, f64)>>,
    n_transient: usize,
}

impl ChainSampler {
    pub fn new(chain: &AbsorbingChain) -> Self {
        let p = chain.full_matrix();
        let cumulative = (0..p.rows())
            .map(|i| {
                let mut acc = 0.0;
                p.row(i)
                    .iter()
                    .enumerate()
                    .filter(|(_, &x)| x > 0.0)
                    .map(|(j, &x)| {
                        acc += x;
                        (j, acc)
                    })
                    .collect()
            })
            .collect();
        ChainSampler {
            cumulative,
            n_transient: chain.space().n_transient(),
        }
    }

    pub fn next_state<R: Rng + ?Sized>(&self, from: usize, rng: &mut R) -> usize {
        let row = &self.cumulative[from];
        let u: f64 = rng.random::<f64>() * row.last().map_or(1.0, |&(_, c)| c);
        row.iter().find(|&&(_, c)| u < c).unwrap_or(row.last().expect("stochastic row")).0
    }

    /// Walks from `start` for at most `max_steps` steps, returning the visited
    /// states after `start` (the last one absorbing if absorption happened).
    pub fn walk<R: Rng + ?Sized>(&self, start: StateId, rng: &mut R, max_steps: usize) -> Vec<StateId> {
        let mut path = Vec::new();
        let mut s = start.0;
        for _ in 0..max_steps {
            if s >= self.n_transient {
                break;
            }
            s = self.next_state(s, rng);
            path.push(StateId(s));
        }
        path
    }
}

/// A generating chain over an expanded level space.
#[derive(Debug, Clone)]
pub struct TruthChain {
    spec: LevelSpec,
    chain: AbsorbingChain,
    sampler: ChainSampler,
}

impl TruthChain {
    /// The chain's states must be `START`, `<level><k>` for `k = 1..n` per
    /// level, `HALT`, `GRAD`, as produced by [`LevelSpec::state_space`].
    pub fn new(chain: AbsorbingChain) -> Result<Self> {
        let spec = infer_spec(&chain)?;
        let p = chain.full_matrix();
        let start = spec.start_index();
        if p[(start, spec.halt_index())] > 0.0 || p[(start, spec.grad_index())] > 0.0 {
            return Err(GradError::InvalidConfig(
                "truth chain must route START to a level before absorption".into(),
            ));
        }
        let sampler = ChainSampler::new(&chain);
        Ok(TruthChain { spec, chain, sampler })
    }

    pub fn spec(&self) -> &LevelSpec {
        &self.spec
    }

    pub fn chain(&self) -> &AbsorbingChain {
        &self.chain
    }

    /// Exact `100 [P^(h+1)]_{Start, Grad}`.
    pub fn horizon_rate(&self, horizon: u32) -> Result<f64> {
        amc_grad_rate(&self.chain, horizon)
    }

    fn level_of(&self, idx: usize) -> Level {
        self.spec.levels[(idx - 1) / self.spec.n as usize]
    }
}

fn infer_spec(chain: &AbsorbingChain) -> Result<LevelSpec> {
    let space = chain.space();
    let bad = || {
        GradError::InvalidConfig(
            "truth chain states must be START, <level><k> sub-states, HALT, GRAD in standard order".into(),
        )
    };
    let mut levels: Vec<Level> = Vec::new();
    let mut n = 0u8;
    for s in &space.states()[1..space.n_transient()] {
        if s.label.len() < 3 {
            return Err(bad());
        }
        let level: Level = s.label[..2].parse().map_err(|_| bad())?;
        let sub: u8 = s.label[2..].parse().map_err(|_| bad())?;
        if levels.last() != Some(&level) {
            levels.push(level);
        }
        n = n.max(sub);
    }
    if levels.is_empty() || n == 0 {
        return Err(bad());
    }
    let spec = LevelSpec::new(n, levels).map_err(|_| bad())?;
    if spec.state_space() != *space {
        return Err(bad());
    }
    Ok(spec)
}

#[derive(Debug, Clone)]
pub enum GroundTruth {
    BinomialTheta(f64),
    ChainTruth(TruthChain),
}

impl GroundTruth {
    pub fn binomial(theta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(GradError::InvalidConfig(format!("theta {theta} outside [0, 1]")));
        }
        Ok(GroundTruth::BinomialTheta(theta))
    }

    pub fn chain(chain: AbsorbingChain) -> Result<Self> {
        TruthChain::new(chain).map(GroundTruth::ChainTruth)
    }

    /// Percent rate the estimators are judged against.
    pub fn true_rate(&self, horizon: u32) -> Result<f64> {
        match self {
            GroundTruth::BinomialTheta(theta) => Ok(100.0 * theta),
            GroundTruth::ChainTruth(t) => t.horizon_rate(horizon),
        }
    }
}

/// Serializable description of a ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TruthConfig {
    Binomial { theta: f64 },
    Preset { name: String },
    Chain { document: ChainDocument },
    ChainFile { path: PathBuf },
}

impl TruthConfig {
    pub fn resolve(&self) -> Result<GroundTruth> {
        match self {
            TruthConfig::Binomial { theta } => GroundTruth::binomial(*theta),
            TruthConfig::Preset { name } => GroundTruth::chain(Preset::from_name(name)?.chain()),
            TruthConfig::Chain { document } => GroundTruth::chain(document.to_chain()?),
            TruthConfig::ChainFile { path } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| GradError::InvalidConfig(format!("{}: {e}", path.display())))?;
                let doc = ChainDocument::from_json(&text)
                    .map_err(|e| GradError::InvalidConfig(format!("{}: {e}", path.display())))?;
                GroundTruth::chain(doc.to_chain()?)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaggeredConfig {
    /// Entrants per year; defaults to the cohort size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_year: Option<usize>,
    /// Length of the observation window; defaults to the horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub years: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailurePolicy {
    Abort,
    #[default]
    RecordAndSkip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdeConfig {
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Grid>,
}

fn default_sigma() -> f64 {
    1.0
}

fn default_replications() -> usize {
    10_000
}

fn default_horizon() -> u32 {
    6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub truth: TruthConfig,
    pub cohort_size: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_horizon")]
    pub horizon: u32,
    pub estimators: Vec<EstimatorSpec>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub staggered: Option<StaggeredConfig>,
    /// Years each full cohort is followed; defaults to the horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation_years: Option<u32>,
    #[serde(default)]
    pub failure_policy: FailurePolicy,
    /// Optional external rate (percent) to report a second bias against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kde: Option<KdeConfig>,
}

impl ExperimentConfig {
    /// A config with defaults for everything but the essentials.
    pub fn new(truth: TruthConfig, cohort_size: usize, estimators: Vec<EstimatorSpec>, seed: u64) -> Self {
        ExperimentConfig {
            truth,
            cohort_size,
            replications: default_replications(),
            horizon: default_horizon(),
            estimators,
            seed,
            staggered: None,
            observation_years: None,
            failure_policy: FailurePolicy::default(),
            reference_rate: None,
            kde: None,
        }
    }

    pub fn observation_years(&self) -> u32 {
        self.observation_years.unwrap_or(self.horizon)
    }

    /// `(per_year, years)` for staggered entry.
    pub fn staggered_window(&self) -> (usize, u32) {
        let s = self.staggered.unwrap_or(StaggeredConfig {
            per_year: None,
            years: None,
        });
        (s.per_year.unwrap_or(self.cohort_size), s.years.unwrap_or(self.horizon))
    }

    pub fn validate(&self, truth: &GroundTruth) -> Result<()> {
        let fail = |m: String| Err(GradError::InvalidConfig(m));
        if self.cohort_size == 0 {
            return fail("cohort_size must be positive".into());
        }
        if self.replications == 0 {
            return fail("replications must be positive".into());
        }
        if self.horizon == 0 {
            return fail("horizon must be positive".into());
        }
        if self.estimators.is_empty() {
            return fail("at least one estimator is required".into());
        }
        let (per_year, years) = self.staggered_window();
        if per_year == 0 || years == 0 {
            return fail("staggered per_year and years must be positive".into());
        }
        if self.observation_years() < self.horizon && self.estimators.iter().any(|e| !e.is_chain_based()) {
            return fail(format!(
                "observation_years {} is shorter than the horizon {}; completion counts would be truncated",
                self.observation_years(),
                self.horizon
            ));
        }
        for e in &self.estimators {
            match *e {
                EstimatorSpec::RollingSygr { cohorts: 0 } => return fail("rolling-sygr needs at least one cohort".into()),
                EstimatorSpec::MlAmc { levels: 0, .. } | EstimatorSpec::RumlAmc { levels: 0, .. } => {
                    return fail("levels must be at least 1".into())
                }
                _ => {}
            }
            if e.is_chain_based() && matches!(truth, GroundTruth::BinomialTheta(_)) {
                return fail(format!("{} needs trajectories; a binomial truth only yields counts", e.name()));
            }
        }
        Ok(())
    }
}

/// `n` Bernoulli(θ) draws.
pub fn sample_binomial_cohort<R: Rng + ?Sized>(theta: f64, n: u64, rng: &mut R) -> CohortOutcome {
    let graduated = (0..n).filter(|_| rng.random::<f64>() < theta).count() as u64;
    CohortOutcome {
        n_started: n,
        n_graduated: graduated,
    }
}

/// Walks the truth from Start for the entry hop plus up to `max_years`
/// yearly steps, reporting levels with sub-states collapsed.
pub fn sample_trajectory<R: Rng + ?Sized>(truth: &TruthChain, rng: &mut R, max_years: u32) -> Trajectory {
    sample_with_id(truth, rng, max_years, String::new(), 0)
}

fn sample_with_id<R: Rng + ?Sized>(
    truth: &TruthChain,
    rng: &mut R,
    max_years: u32,
    student_id: String,
    entry_year: i32,
) -> Trajectory {
    let spec = &truth.spec;
    let first = truth.sampler.next_state(spec.start_index(), rng);
    let mut states = vec![truth.level_of(first)];
    let mut s = first;
    let mut outcome = Outcome::Censored;
    for _ in 0..max_years {
        s = truth.sampler.next_state(s, rng);
        if s == spec.grad_index() {
            outcome = Outcome::Graduated;
            break;
        }
        if s == spec.halt_index() {
            outcome = Outcome::Halted;
            break;
        }
        states.push(truth.level_of(s));
    }
    Trajectory {
        student_id,
        entry_year,
        states,
        outcome,
    }
}

/// Cohort `c` (1-based) enters in year `c` of a `years`-long window and is
/// observed until the window closes, `years - c + 1` years. Batch `t` holds
/// cohorts `1..=t`, so each batch extends the previous one by a cohort.
pub fn generate_staggered<R: Rng + ?Sized>(
    truth: &TruthChain,
    per_year: usize,
    years: u32,
    rng: &mut R,
) -> Vec<Vec<Trajectory>> {
    let mut batches: Vec<Vec<Trajectory>> = Vec::with_capacity(years as usize);
    let mut pooled: Vec<Trajectory> = Vec::with_capacity(per_year * years as usize);
    for c in 1..=years {
        pooled.extend((0..per_year).map(|k| sample_with_id(truth, rng, years - c + 1, format!("c{c}-{k}"), c as i32)));
        batches.push(pooled.clone());
    }
    batches
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorDecomposition {
    pub bias: f64,
    pub std: f64,
    pub total: f64,
}

impl ErrorDecomposition {
    pub fn new(stats: &SampleStats, true_rate: f64) -> Self {
        let bias = stats.mean - true_rate;
        ErrorDecomposition {
            bias,
            std: stats.std,
            total: bias.abs() + stats.std,
        }
    }
}

/// Everything one estimator produced across the replications.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorOutcome {
    pub spec: EstimatorSpec,
    pub name: String,
    /// Estimates from replications that succeeded, in replication order. For
    /// RUML this is the final year.
    pub sample: EstimateSample,
    /// RUML only: one sample per observation year.
    pub yearly: Option<Vec<EstimateSample>>,
    pub skipped: usize,
    pub first_failure: Option<String>,
}

impl EstimatorOutcome {
    pub fn stats(&self) -> Result<SampleStats> {
        sample_stats(&self.sample)
    }

    pub fn decomposition(&self, true_rate: f64) -> Result<ErrorDecomposition> {
        Ok(ErrorDecomposition::new(&self.stats()?, true_rate))
    }

    pub fn year_stats(&self) -> Option<Result<Vec<SampleStats>>> {
        self.yearly.as_ref().map(|ys| ys.iter().map(sample_stats).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub true_rate: f64,
    pub estimators: Vec<EstimatorOutcome>,
}

impl ExperimentOutcome {
    pub fn estimator(&self, name: &str) -> Option<&EstimatorOutcome> {
        self.estimators.iter().find(|e| e.name == name)
    }

    /// Density curve of an estimator's sample, per the config's KDE settings
    /// (σ = 1 and a ±6σ padded grid when unset).
    pub fn kde(&self, outcome: &EstimatorOutcome) -> Result<Vec<(f64, f64)>> {
        let cfg = self.config.kde.unwrap_or(KdeConfig {
            sigma: 1.0,
            grid: None,
        });
        let grid = match cfg.grid {
            Some(g) => g,
            None => Grid::around(&outcome.sample.estimates, 6.0 * cfg.sigma, 0.1)?,
        };
        kde_curve(&outcome.sample.estimates, cfg.sigma, grid)
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    run_experiment_with_workers(config, None)
}

/// Runs on a dedicated pool of `workers` threads (all cores when `None`).
pub fn run_experiment_with_workers(config: &ExperimentConfig, workers: Option<usize>) -> Result<ExperimentOutcome> {
    let truth = config.truth.resolve()?;
    config.validate(&truth)?;
    let true_rate = truth.true_rate(config.horizon)?;
    info!(
        "running {} replications of {} estimators, true rate {true_rate:.4}%",
        config.replications,
        config.estimators.len()
    );
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| GradError::InvalidConfig(format!("thread pool: {e}")))?;
    let plan = Plan::new(config);
    let results: Vec<Vec<Result<Vec<f64>>>> = pool.install(|| {
        (0..config.replications)
            .into_par_iter()
            .map(|rep| replicate(config, &truth, &plan, rep))
            .collect()
    });
    aggregate(config, true_rate, results)
}

/// Data requirements shared by all estimators of a replication.
struct Plan {
    full_cohorts: usize,
    staggered: bool,
}

impl Plan {
    fn new(config: &ExperimentConfig) -> Self {
        let full_cohorts = config
            .estimators
            .iter()
            .map(|e| match e {
                EstimatorSpec::RollingSygr { cohorts } => *cohorts,
                EstimatorSpec::RumlAmc { .. } => 0,
                _ => 1,
            })
            .max()
            .unwrap_or(0);
        let staggered = config.estimators.iter().any(|e| matches!(e, EstimatorSpec::RumlAmc { .. }));
        Plan { full_cohorts, staggered }
    }
}

enum Cohorts {
    Counts(Vec<CohortOutcome>),
    Trajectories(Vec<Vec<Trajectory>>),
}

fn replicate(config: &ExperimentConfig, truth: &GroundTruth, plan: &Plan, rep: usize) -> Vec<Result<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(rep as u64);
    let horizon = config.horizon;
    let cohorts = match truth {
        GroundTruth::BinomialTheta(theta) => Cohorts::Counts(
            (0..plan.full_cohorts)
                .map(|_| sample_binomial_cohort(*theta, config.cohort_size as u64, &mut rng))
                .collect(),
        ),
        GroundTruth::ChainTruth(t) => Cohorts::Trajectories(
            (0..plan.full_cohorts)
                .map(|_| {
                    (0..config.cohort_size)
                        .map(|_| sample_trajectory(t, &mut rng, config.observation_years()))
                        .collect()
                })
                .collect(),
        ),
    };
    let batches = match truth {
        GroundTruth::ChainTruth(t) if plan.staggered => {
            let (per_year, years) = config.staggered_window();
            generate_staggered(t, per_year, years, &mut rng)
        }
        _ => Vec::new(),
    };
    let outcome = |k: usize| -> CohortOutcome {
        match &cohorts {
            Cohorts::Counts(c) => c[k],
            Cohorts::Trajectories(c) => CohortOutcome::from_trajectories(&c[k], horizon),
        }
    };
    config
        .estimators
        .iter()
        .map(|spec| match *spec {
            EstimatorSpec::Sygr => sygr(outcome(0)).map(|r| vec![r]),
            EstimatorSpec::RollingSygr { cohorts: k } => {
                let pooled: Vec<CohortOutcome> = (0..k).map(outcome).collect();
                rolling_sygr(&pooled).map(|r| vec![r])
            }
            EstimatorSpec::Amc { unobserved } => chain_fit(&cohorts, 1, horizon, unobserved),
            EstimatorSpec::MlAmc { levels, unobserved } => chain_fit(&cohorts, levels, horizon, unobserved),
            EstimatorSpec::RumlAmc { levels, unobserved } => {
                ruml_series(&batches, &LevelSpec::standard(levels), horizon, unobserved).map(|s| s.estimates)
            }
        })
        .collect()
}

fn chain_fit(cohorts: &Cohorts, levels: u8, horizon: u32, policy: UnobservedPolicy) -> Result<Vec<f64>> {
    let Cohorts::Trajectories(c) = cohorts else {
        unreachable!("validated: chain estimators need trajectories")
    };
    let counts = count_transitions(&c[0], &LevelSpec::standard(levels), true)?;
    let chain = fit_transition_matrix(&counts, policy)?.chain;
    amc_grad_rate(&chain, horizon).map(|r| vec![r])
}

fn aggregate(
    config: &ExperimentConfig,
    true_rate: f64,
    results: Vec<Vec<Result<Vec<f64>>>>,
) -> Result<ExperimentOutcome> {
    let (_, ruml_years) = config.staggered_window();
    let mut outcomes: Vec<EstimatorOutcome> = config
        .estimators
        .iter()
        .map(|spec| EstimatorOutcome {
            spec: *spec,
            name: spec.name(),
            sample: EstimateSample::default(),
            yearly: matches!(spec, EstimatorSpec::RumlAmc { .. })
                .then(|| vec![EstimateSample::default(); ruml_years as usize]),
            skipped: 0,
            first_failure: None,
        })
        .collect();
    for (rep, per_estimator) in results.into_iter().enumerate() {
        for (out, result) in outcomes.iter_mut().zip(per_estimator) {
            match result {
                Ok(values) => {
                    out.sample.estimates.push(*values.last().expect("at least one estimate"));
                    if let Some(yearly) = out.yearly.as_mut() {
                        for (y, v) in yearly.iter_mut().zip(&values) {
                            y.estimates.push(*v);
                        }
                    }
                }
                Err(e) => {
                    if config.failure_policy == FailurePolicy::Abort {
                        return Err(GradError::Replication {
                            replication: rep,
                            estimator: out.name.clone(),
                            source: Box::new(e),
                        });
                    }
                    debug!("replication {rep}, {}: {e}", out.name);
                    out.skipped += 1;
                    out.first_failure.get_or_insert_with(|| format!("replication {rep}: {e}"));
                }
            }
        }
    }
    Ok(ExperimentOutcome {
        config: config.clone(),
        true_rate,
        estimators: outcomes,
    })
}
