//! Graduation-rate estimators and replication summary statistics.
//!
//! All rates crossing this API are percentages (0 to 100). Chain-based
//! estimators read `[P^(h+1)]_{Start, Graduate}`: one step for the hop out of
//! the Start state plus `h` yearly steps.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::chain::{AbsorbingChain, StateDistribution};
use crate::error::{GradError, Result};
use crate::trajectory::{
    fit_transition_matrix, transition_count, LevelSpec, Outcome, Trajectory, TransitionCounts, UnobservedPolicy,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortOutcome {
    pub n_started: u64,
    pub n_graduated: u64,
}

impl CohortOutcome {
    pub fn new(n_started: u64, n_graduated: u64) -> Result<Self> {
        if n_graduated > n_started {
            return Err(GradError::InvalidCohort(format!(
                "{n_graduated} graduates out of {n_started} students"
            )));
        }
        Ok(CohortOutcome {
            n_started,
            n_graduated,
        })
    }

    /// Graduates within `horizon` years among a cohort of trajectories.
    pub fn from_trajectories<'a>(cohort: impl IntoIterator<Item = &'a Trajectory>, horizon: u32) -> Self {
        let (mut started, mut graduated) = (0, 0);
        for t in cohort {
            started += 1;
            graduated += u64::from(t.graduated_within(horizon));
        }
        CohortOutcome {
            n_started: started,
            n_graduated: graduated,
        }
    }
}

pub fn sygr(cohort: CohortOutcome) -> Result<f64> {
    if cohort.n_started == 0 {
        return Err(GradError::EmptyCohort);
    }
    Ok(100.0 * cohort.n_graduated as f64 / cohort.n_started as f64)
}

/// Pooled rate over several cohorts: total graduates over total starters.
pub fn rolling_sygr(cohorts: &[CohortOutcome]) -> Result<f64> {
    if cohorts.is_empty() {
        return Err(GradError::EmptyList);
    }
    if cohorts.iter().any(|c| c.n_started == 0) {
        return Err(GradError::EmptyCohort);
    }
    let started: u64 = cohorts.iter().map(|c| c.n_started).sum();
    let graduated: u64 = cohorts.iter().map(|c| c.n_graduated).sum();
    Ok(100.0 * graduated as f64 / started as f64)
}

pub fn amc_grad_rate(chain: &AbsorbingChain, horizon_years: u32) -> Result<f64> {
    let space = chain.space();
    let start = space.start().ok_or(GradError::MissingStartOrGraduate("start"))?;
    let grad = space.graduate().ok_or(GradError::MissingStartOrGraduate("graduate"))?;
    let mut x = StateDistribution::point(space, start);
    for _ in 0..=horizon_years {
        x = x.step(chain);
    }
    Ok(100.0 * x.probs()[grad.0])
}

/// The fitted chain behind an ML-AMC estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct MlAmcFit {
    pub rate: f64,
    pub chain: AbsorbingChain,
}

/// Expands to `spec.n` duration sub-states, fits by maximum likelihood and
/// reads the horizon rate. With `spec.n == 1` this is the plain AMC.
pub fn ml_amc_grad_rate(
    trajectories: &[Trajectory],
    spec: &LevelSpec,
    horizon_years: u32,
    policy: UnobservedPolicy,
) -> Result<f64> {
    ml_amc_fit(trajectories, spec, horizon_years, policy).map(|f| f.rate)
}

pub fn ml_amc_fit(
    trajectories: &[Trajectory],
    spec: &LevelSpec,
    horizon_years: u32,
    policy: UnobservedPolicy,
) -> Result<MlAmcFit> {
    if trajectories.is_empty() {
        return Err(GradError::EmptyList);
    }
    let counts = crate::trajectory::count_transitions(trajectories, spec, true)?;
    fit_counts(&counts, horizon_years, policy)
}

fn fit_counts(counts: &TransitionCounts, horizon_years: u32, policy: UnobservedPolicy) -> Result<MlAmcFit> {
    let chain = fit_transition_matrix(counts, policy)?.chain;
    let rate = amc_grad_rate(&chain, horizon_years)?;
    Ok(MlAmcFit { rate, chain })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RumlSeries {
    /// One estimate per batch (observation year), percent.
    pub estimates: Vec<f64>,
    pub chains: Vec<AbsorbingChain>,
    /// Pooled counts after each batch.
    pub counts: Vec<TransitionCounts>,
}

/// Refits after every batch, pooling counts incrementally. A student seen
/// in an earlier batch may reappear with a longer (extended) observation;
/// only the new transitions are added.
pub fn ruml_series(
    yearly_batches: &[Vec<Trajectory>],
    spec: &LevelSpec,
    horizon_years: u32,
    policy: UnobservedPolicy,
) -> Result<RumlSeries> {
    if yearly_batches.is_empty() {
        return Err(GradError::EmptyList);
    }
    let mut counts = TransitionCounts::new(spec);
    let mut seen: HashMap<&str, &Trajectory> = HashMap::new();
    let mut series = RumlSeries {
        estimates: Vec::with_capacity(yearly_batches.len()),
        chains: Vec::with_capacity(yearly_batches.len()),
        counts: Vec::with_capacity(yearly_batches.len()),
    };
    for (b, batch) in yearly_batches.iter().enumerate() {
        let inconsistent = |id: &str| GradError::InconsistentBatches {
            batch: b + 1,
            student_id: id.to_string(),
        };
        let mut in_batch = std::collections::HashSet::with_capacity(batch.len());
        for t in batch {
            if !in_batch.insert(t.student_id.as_str()) {
                return Err(inconsistent(&t.student_id));
            }
            match seen.get(t.student_id.as_str()) {
                Some(old) => {
                    if !extends(old, t) {
                        return Err(inconsistent(&t.student_id));
                    }
                    let skip = transition_count(old, true);
                    counts.add_trajectory_from(t, true, skip)?;
                }
                None => counts.add_trajectory(t, true)?,
            }
            seen.insert(t.student_id.as_str(), t);
        }
        if seen.len() > in_batch.len() {
            let missing = seen.keys().find(|id| !in_batch.contains(*id)).expect("an earlier student is absent");
            return Err(inconsistent(missing));
        }
        let fit = fit_counts(&counts, horizon_years, policy)?;
        series.estimates.push(fit.rate);
        series.chains.push(fit.chain);
        series.counts.push(counts.clone());
    }
    Ok(series)
}

/// Groups observed trajectories into cumulative batches by entry year:
/// batch `t` holds every student who entered within the first `t` entry
/// years (counting from the earliest), each at its full observation.
pub fn entry_year_batches(trajectories: &[Trajectory]) -> Vec<Vec<Trajectory>> {
    let Some(first) = trajectories.iter().map(|t| t.entry_year).min() else {
        return Vec::new();
    };
    let last = trajectories.iter().map(|t| t.entry_year).max().unwrap_or(first);
    (first..=last)
        .map(|year| trajectories.iter().filter(|t| t.entry_year <= year).cloned().collect())
        .collect()
}

/// `new` keeps every observation of `old` and only adds later ones.
fn extends(old: &Trajectory, new: &Trajectory) -> bool {
    if old.entry_year != new.entry_year || !new.states.starts_with(&old.states) {
        return false;
    }
    match old.outcome {
        Outcome::Censored => true,
        outcome => new.outcome == outcome && new.states.len() == old.states.len(),
    }
}

/// Summary of a set of replication estimates, percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation with the `count - 1` denominator.
    pub std: f64,
    pub q05: f64,
    pub q95: f64,
}

impl SampleStats {
    /// Standard error of `std` under normality, `s / sqrt(2 (m - 1))`.
    pub fn std_error_of_std(&self) -> f64 {
        self.std / (2.0 * (self.count as f64 - 1.0)).sqrt()
    }

    /// Standard error of the mean, `s / sqrt(m)`.
    pub fn std_error_of_mean(&self) -> f64 {
        self.std / (self.count as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EstimateSample {
    pub estimates: Vec<f64>,
}

impl EstimateSample {
    pub fn new(estimates: Vec<f64>) -> Self {
        EstimateSample { estimates }
    }

    pub fn summary(&self) -> Result<SampleStats> {
        sample_stats(self)
    }
}

pub fn sample_stats(sample: &EstimateSample) -> Result<SampleStats> {
    let xs = &sample.estimates;
    if xs.len() < 2 {
        return Err(GradError::TooFewSamples {
            needed: 2,
            got: xs.len(),
        });
    }
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    let std = (ss / (m - 1.0)).sqrt();
    let mut sorted = xs.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(SampleStats {
        count: xs.len(),
        mean,
        std,
        q05: quantile_sorted(&sorted, 0.05),
        q95: quantile_sorted(&sorted, 0.95),
    })
}

/// Linear interpolation between order statistics at rank `p (m - 1)`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Estimator selection for experiments and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EstimatorSpec {
    Sygr,
    RollingSygr {
        cohorts: usize,
    },
    Amc {
        #[serde(default)]
        unobserved: UnobservedPolicy,
    },
    MlAmc {
        levels: u8,
        #[serde(default)]
        unobserved: UnobservedPolicy,
    },
    RumlAmc {
        levels: u8,
        #[serde(default)]
        unobserved: UnobservedPolicy,
    },
}

impl EstimatorSpec {
    pub fn name(&self) -> String {
        match self {
            EstimatorSpec::Sygr => "sygr".into(),
            EstimatorSpec::RollingSygr { cohorts } => format!("rolling-sygr-{cohorts}"),
            EstimatorSpec::Amc { .. } => "amc".into(),
            EstimatorSpec::MlAmc { levels, .. } => format!("ml-amc-n{levels}"),
            EstimatorSpec::RumlAmc { levels, .. } => format!("ruml-amc-n{levels}"),
        }
    }

    /// Sub-states per level for chain estimators.
    pub fn levels(&self) -> Option<u8> {
        match *self {
            EstimatorSpec::Amc { .. } => Some(1),
            EstimatorSpec::MlAmc { levels, .. } | EstimatorSpec::RumlAmc { levels, .. } => Some(levels),
            _ => None,
        }
    }

    pub fn with_levels(self, n: u8) -> Self {
        match self {
            EstimatorSpec::MlAmc { unobserved, .. } => EstimatorSpec::MlAmc { levels: n, unobserved },
            EstimatorSpec::RumlAmc { unobserved, .. } => EstimatorSpec::RumlAmc { levels: n, unobserved },
            other => other,
        }
    }

    pub fn unobserved(&self) -> UnobservedPolicy {
        match *self {
            EstimatorSpec::Amc { unobserved }
            | EstimatorSpec::MlAmc { unobserved, .. }
            | EstimatorSpec::RumlAmc { unobserved, .. } => unobserved,
            _ => UnobservedPolicy::Error,
        }
    }

    pub fn is_chain_based(&self) -> bool {
        self.levels().is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{build_chain, Role, State, StateSpace};
    use crate::linalg::Matrix;
    use crate::trajectory::Level::*;

    fn c(s: u64, g: u64) -> CohortOutcome {
        CohortOutcome::new(s, g).unwrap()
    }

    #[test]
    fn sygr_values() {
        assert_eq!(sygr(c(50, 40)).unwrap(), 80.0);
        assert!((sygr(c(10000, 7120)).unwrap() - 71.2).abs() < 1e-12);
        assert_eq!(sygr(c(37, 0)).unwrap(), 0.0);
        assert_eq!(sygr(CohortOutcome { n_started: 0, n_graduated: 0 }), Err(GradError::EmptyCohort));
        assert!(CohortOutcome::new(3, 4).is_err());
    }

    #[test]
    fn rolling_pools() {
        assert_eq!(rolling_sygr(&[c(50, 40)]).unwrap(), 80.0);
        assert_eq!(rolling_sygr(&[c(50, 40), c(100, 50)]).unwrap(), 60.0);
        assert_eq!(rolling_sygr(&[]), Err(GradError::EmptyList));
    }

    #[test]
    fn one_hop_graduation() {
        let space = StateSpace::new(vec![
            State::new("START", Role::Start),
            State::new("HALT", Role::Halt),
            State::new("GRAD", Role::Graduate),
        ])
        .unwrap();
        let m = Matrix::from_rows(&[vec![0.0, 0.0, 1.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        let chain = build_chain(space, &m).unwrap();
        for h in 1..8 {
            assert_eq!(amc_grad_rate(&chain, h).unwrap(), 100.0);
        }
    }

    #[test]
    fn missing_start() {
        let space = StateSpace::new(vec![State::new("T", Role::Transient), State::new("G", Role::Graduate)]).unwrap();
        let chain = build_chain(space, &Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0]])).unwrap();
        assert_eq!(amc_grad_rate(&chain, 6), Err(GradError::MissingStartOrGraduate("start")));
    }

    #[test]
    fn all_direct_graduates() {
        let ts: Vec<_> = (0..5)
            .map(|i| Trajectory::new(i.to_string(), 2008, vec![Freshman], Outcome::Graduated).unwrap())
            .collect();
        for n in 1..=3 {
            let r = ml_amc_grad_rate(&ts, &LevelSpec::standard(n), 6, UnobservedPolicy::BorrowLowerSubState);
            // SO/JU/SE first sub-states are unobserved and cannot borrow
            assert!(r.is_err());
        }
        let spec = LevelSpec::new(1, vec![Freshman]).unwrap();
        assert_eq!(ml_amc_grad_rate(&ts, &spec, 6, UnobservedPolicy::Error).unwrap(), 100.0);
    }

    #[test]
    fn stats_hand_values() {
        let s = sample_stats(&EstimateSample::new(vec![70.0, 70.0, 70.0])).unwrap();
        assert_eq!((s.mean, s.std), (70.0, 0.0));
        let s = sample_stats(&EstimateSample::new(vec![60.0, 80.0])).unwrap();
        assert_eq!(s.mean, 70.0);
        assert!((s.std - 200f64.sqrt()).abs() < 1e-12);
        assert!((s.q05 - 61.0).abs() < 1e-12);
        assert!((s.q95 - 79.0).abs() < 1e-12);
        assert_eq!(
            sample_stats(&EstimateSample::new(vec![1.0])),
            Err(GradError::TooFewSamples { needed: 2, got: 1 })
        );
    }

    #[test]
    fn ten_cohort_formula() {
        // x̄ = 1/10 Σ x, s = sqrt(1/9 Σ (x - x̄)^2)
        let xs: Vec<f64> = vec![72.0, 68.0, 70.0, 74.0, 66.0, 71.0, 69.0, 73.0, 67.0, 70.0];
        let s = sample_stats(&EstimateSample::new(xs.clone())).unwrap();
        assert!((s.mean - 70.0).abs() < 1e-12);
        let ss: f64 = xs.iter().map(|x| (x - 70.0).powi(2)).sum();
        assert!((s.std - (ss / 9.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn quantile_interpolates() {
        let v: Vec<f64> = (0..=100).map(f64::from).collect();
        assert_eq!(quantile_sorted(&v, 0.05), 5.0);
        assert_eq!(quantile_sorted(&[3.0], 0.95), 3.0);
        assert_eq!(quantile_sorted(&[0.0, 10.0], 0.25), 2.5);
    }

    #[test]
    fn entry_year_batches_accumulate() {
        let ts = vec![
            Trajectory::new("a", 2008, vec![Freshman, Sophomore, Junior], Outcome::Graduated).unwrap(),
            Trajectory::new("b", 2010, vec![Freshman, Freshman], Outcome::Censored).unwrap(),
        ];
        let b = entry_year_batches(&ts);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![1, 1, 2]);
        assert_eq!(b[0][0], ts[0]);
        assert_eq!(b[2], ts);
    }

    #[test]
    fn ruml_rejects_rewritten_history() {
        let a1 = Trajectory::new("a", 1, vec![Freshman, Sophomore], Outcome::Censored).unwrap();
        let a2 = Trajectory::new("a", 1, vec![Freshman, Freshman, Sophomore], Outcome::Graduated).unwrap();
        let g = Trajectory::new("g", 1, vec![Freshman, Sophomore], Outcome::Graduated).unwrap();
        let spec = LevelSpec::new(1, vec![Freshman, Sophomore]).unwrap();
        let r = ruml_series(&[vec![a1.clone(), g.clone()], vec![a2, g.clone()]], &spec, 6, UnobservedPolicy::Error);
        assert_eq!(r.unwrap_err(), GradError::InconsistentBatches { batch: 2, student_id: "a".into() });
        let r = ruml_series(&[vec![a1, g.clone()], vec![g]], &spec, 6, UnobservedPolicy::Error);
        assert!(matches!(r, Err(GradError::InconsistentBatches { batch: 2, .. })));
    }

    #[test]
    fn ruml_incremental_equals_batch_refit() {
        let a1 = Trajectory::new("a", 1, vec![Freshman, Sophomore], Outcome::Censored).unwrap();
        let b1 = Trajectory::new("b", 1, vec![Freshman], Outcome::Halted).unwrap();
        let a2 = Trajectory::new("a", 1, vec![Freshman, Sophomore], Outcome::Graduated).unwrap();
        let c2 = Trajectory::new("c", 2, vec![Freshman, Sophomore], Outcome::Censored).unwrap();
        let spec = LevelSpec::new(1, vec![Freshman, Sophomore]).unwrap();
        let g = Trajectory::new("g", 1, vec![Freshman, Sophomore], Outcome::Graduated).unwrap();
        let batches = vec![
            vec![a1, b1.clone(), g.clone()],
            vec![a2.clone(), b1.clone(), g.clone(), c2.clone()],
        ];
        let s = ruml_series(&batches, &spec, 6, UnobservedPolicy::Error).unwrap();
        let direct = crate::trajectory::count_transitions(&[a2, b1, g, c2], &spec, true).unwrap();
        assert_eq!(s.counts[1], direct);
        assert_eq!(s.estimates.len(), 2);
    }

    #[test]
    fn estimator_spec_json() {
        let spec: EstimatorSpec = serde_json::from_str(r#"{"kind":"ml-amc","levels":2}"#).unwrap();
        assert_eq!(spec, EstimatorSpec::MlAmc { levels: 2, unobserved: UnobservedPolicy::Error });
        assert_eq!(spec.name(), "ml-amc-n2");
        let spec: EstimatorSpec =
            serde_json::from_str(r#"{"kind":"ruml-amc","levels":3,"unobserved":"borrow-lower-sub-state"}"#).unwrap();
        assert_eq!(spec.unobserved(), UnobservedPolicy::BorrowLowerSubState);
    }
}
