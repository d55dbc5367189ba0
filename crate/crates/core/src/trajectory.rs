//! Student trajectories: ingestion from term records, duration sub-state
//! expansion, transition counting and maximum-likelihood fitting.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::chain::{build_chain, AbsorbingChain, Role, State, StateId, StateSpace};
use crate::error::{GradError, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    #[serde(rename = "FR")]
    Freshman,
    #[serde(rename = "SO")]
    Sophomore,
    #[serde(rename = "JU")]
    Junior,
    #[serde(rename = "SE")]
    Senior,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::Freshman, Level::Sophomore, Level::Junior, Level::Senior];

    pub fn code(self) -> &'static str {
        match self {
            Level::Freshman => "FR",
            Level::Sophomore => "SO",
            Level::Junior => "JU",
            Level::Senior => "SE",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Level {
    type Err = GradError;

    fn from_str(s: &str) -> Result<Level> {
        match s.trim().to_ascii_uppercase().as_str() {
            "FR" => Ok(Level::Freshman),
            "SO" => Ok(Level::Sophomore),
            "JU" => Ok(Level::Junior),
            "SE" | "SN" => Ok(Level::Senior),
            other => Err(GradError::UnknownLevel(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    #[serde(rename = "GR")]
    Graduated,
    #[serde(rename = "HT")]
    Halted,
    #[serde(rename = "CEN")]
    Censored,
}

impl Outcome {
    pub fn code(self) -> &'static str {
        match self {
            Outcome::Graduated => "GR",
            Outcome::Halted => "HT",
            Outcome::Censored => "CEN",
        }
    }
}

impl FromStr for Outcome {
    type Err = GradError;

    fn from_str(s: &str) -> Result<Outcome> {
        match s.trim().to_ascii_uppercase().as_str() {
            "GR" => Ok(Outcome::Graduated),
            "HT" => Ok(Outcome::Halted),
            "CEN" => Ok(Outcome::Censored),
            other => Err(GradError::Parse(format!("unknown outcome {other}"))),
        }
    }
}

/// An academic term: `term` is 1, 2 or 3 within `year`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Term {
    pub year: i32,
    pub term: u8,
}

impl Term {
    pub fn new(year: i32, term: u8) -> Result<Term> {
        if !(1..=3).contains(&term) {
            return Err(GradError::Parse(format!("term index {term} outside 1..=3")));
        }
        Ok(Term { year, term })
    }

    fn ordinal(self) -> i64 {
        self.year as i64 * 3 + (self.term as i64 - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Standing {
    Enrolled(Level),
    Graduated,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnrollmentRecord {
    pub student_id: String,
    pub term: Term,
    pub standing: Standing,
}

/// One student's yearly levels. `states[0]` is the level at entry; each
/// further element is one more year. The outcome follows the last state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub student_id: String,
    pub entry_year: i32,
    pub states: Vec<Level>,
    pub outcome: Outcome,
}

impl Trajectory {
    pub fn new(student_id: impl Into<String>, entry_year: i32, states: Vec<Level>, outcome: Outcome) -> Result<Self> {
        let student_id = student_id.into();
        if states.is_empty() {
            return Err(GradError::InvalidTrajectory {
                student_id,
                reason: "no yearly states".into(),
            });
        }
        Ok(Trajectory {
            student_id,
            entry_year,
            states,
            outcome,
        })
    }

    /// Yearly transitions observed after entry, including the absorbing one.
    pub fn observed_years(&self) -> usize {
        match self.outcome {
            Outcome::Censored => self.states.len() - 1,
            _ => self.states.len(),
        }
    }

    /// Graduated no later than `horizon` years after entry.
    pub fn graduated_within(&self, horizon: u32) -> bool {
        self.outcome == Outcome::Graduated && self.states.len() <= horizon as usize
    }

    /// Whether the within-`horizon` outcome is known.
    pub fn resolved_at(&self, horizon: u32) -> bool {
        self.outcome != Outcome::Censored || self.observed_years() >= horizon as usize
    }

    /// Censors the trajectory after `years` observed yearly transitions.
    pub fn truncated(&self, years: usize) -> Trajectory {
        if self.observed_years() <= years {
            return self.clone();
        }
        Trajectory {
            student_id: self.student_id.clone(),
            entry_year: self.entry_year,
            states: self.states[..years + 1].to_vec(),
            outcome: Outcome::Censored,
        }
    }

    /// Hyphen-joined label form, e.g. `FR-SO-GR`.
    pub fn progression(&self) -> String {
        let mut s: Vec<&str> = self.states.iter().map(|l| l.code()).collect();
        match self.outcome {
            Outcome::Graduated => s.push("GR"),
            Outcome::Halted => s.push("HT"),
            Outcome::Censored => {}
        }
        s.join("-")
    }
}

// ---------------------------------------------------------------------------
// ingestion

/// Result of collapsing term records into yearly trajectories.
#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub trajectories: Vec<Trajectory>,
    pub rejected: Vec<GradError>,
}

/// Terms without enrollment that mark a student as halted.
pub const HALT_GAP_TERMS: i64 = 3;

/// Groups records by student and builds one trajectory each. The yearly
/// state is the level held at the last enrolled term of the year. A run of
/// three or more consecutive unenrolled terms before `observation_end`
/// halts the student; a Graduate record graduates them; anything else is
/// censored.
pub fn ingest_records(records: &[EnrollmentRecord], observation_end: Term) -> Ingested {
    let mut by_student: BTreeMap<&str, Vec<&EnrollmentRecord>> = BTreeMap::new();
    for r in records {
        by_student.entry(r.student_id.as_str()).or_default().push(r);
    }
    let mut out = Ingested::default();
    for (id, mut recs) in by_student {
        recs.sort_by_key(|r| r.term);
        match collapse_student(id, &recs, observation_end) {
            Ok(t) => out.trajectories.push(t),
            Err(e) => {
                log::warn!("rejecting records for student {id}: {e}");
                out.rejected.push(e);
            }
        }
    }
    out
}

fn collapse_student(id: &str, recs: &[&EnrollmentRecord], observation_end: Term) -> Result<Trajectory> {
    if let Some(w) = recs.windows(2).find(|w| w[0].term == w[1].term) {
        return Err(GradError::DuplicateTermRecord {
            student_id: id.to_string(),
            year: w[0].term.year,
            term: w[0].term.term,
        });
    }
    let mut years: Vec<(i32, Level)> = Vec::new();
    let mut last_enrolled: Option<Term> = None;
    let mut outcome = None;
    for r in recs {
        if r.term > observation_end {
            break;
        }
        if let Some(prev) = last_enrolled {
            if r.term.ordinal() - prev.ordinal() > HALT_GAP_TERMS {
                outcome = Some(Outcome::Halted);
                break;
            }
        }
        match r.standing {
            Standing::Graduated => {
                outcome = Some(Outcome::Graduated);
                break;
            }
            Standing::Enrolled(level) => {
                match years.last_mut() {
                    Some((y, l)) if *y == r.term.year => *l = level,
                    _ => years.push((r.term.year, level)),
                }
                last_enrolled = Some(r.term);
            }
        }
    }
    let Some(last) = last_enrolled else {
        return Err(GradError::InvalidTrajectory {
            student_id: id.to_string(),
            reason: "no enrolled term before graduation or observation end".into(),
        });
    };
    let outcome = outcome.unwrap_or({
        if observation_end.ordinal() - last.ordinal() >= HALT_GAP_TERMS {
            Outcome::Halted
        } else {
            Outcome::Censored
        }
    });
    Trajectory::new(id, years[0].0, years.into_iter().map(|(_, l)| l).collect(), outcome)
}

// ---------------------------------------------------------------------------
// duration sub-states

/// `n` duration sub-states per academic level. `n = 1` is the plain chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelSpec {
    pub n: u8,
    pub levels: Vec<Level>,
}

impl LevelSpec {
    pub fn new(n: u8, levels: Vec<Level>) -> Result<Self> {
        if n == 0 {
            return Err(GradError::InvalidConfig("levels per state must be at least 1".into()));
        }
        if levels.is_empty() {
            return Err(GradError::InvalidConfig("empty level vocabulary".into()));
        }
        Ok(LevelSpec { n, levels })
    }

    /// All four academic levels with `n` sub-states each.
    pub fn standard(n: u8) -> Self {
        LevelSpec::new(n, Level::ALL.to_vec()).expect("valid standard spec")
    }

    fn level_pos(&self, level: Level) -> Result<usize> {
        self.levels
            .iter()
            .position(|&l| l == level)
            .ok_or_else(|| GradError::UnknownLevel(level.code().to_string()))
    }

    /// Number of states in the expanded space (with the Start state).
    pub fn n_states(&self) -> usize {
        1 + self.levels.len() * self.n as usize + 2
    }

    pub fn state_space(&self) -> StateSpace {
        let mut states = vec![State::new("START", Role::Start)];
        for l in &self.levels {
            for k in 1..=self.n {
                states.push(State::new(format!("{}{k}", l.code()), Role::Transient));
            }
        }
        states.push(State::new("HALT", Role::Halt));
        states.push(State::new("GRAD", Role::Graduate));
        StateSpace::new(states).expect("level spaces are well formed")
    }

    pub fn start_index(&self) -> usize {
        0
    }

    pub fn halt_index(&self) -> usize {
        self.n_states() - 2
    }

    pub fn grad_index(&self) -> usize {
        self.n_states() - 1
    }

    pub fn index_of(&self, s: SubState) -> Result<usize> {
        Ok(1 + self.level_pos(s.level)? * self.n as usize + (s.sub as usize - 1))
    }

    fn absorbing_index(&self, outcome: Outcome) -> Option<usize> {
        match outcome {
            Outcome::Graduated => Some(self.grad_index()),
            Outcome::Halted => Some(self.halt_index()),
            Outcome::Censored => None,
        }
    }
}

/// A level plus the (saturating) count of years spent in it, starting at 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubState {
    pub level: Level,
    pub sub: u8,
}

impl fmt::Display for SubState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.level.code(), self.sub)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpandedTrajectory {
    pub student_id: String,
    pub entry_year: i32,
    pub states: Vec<SubState>,
    pub outcome: Outcome,
}

impl ExpandedTrajectory {
    /// Drops sub-indices.
    pub fn collapse(&self) -> Trajectory {
        Trajectory {
            student_id: self.student_id.clone(),
            entry_year: self.entry_year,
            states: self.states.iter().map(|s| s.level).collect(),
            outcome: self.outcome,
        }
    }

    pub fn progression(&self) -> String {
        let mut s: Vec<String> = self.states.iter().map(|s| s.to_string()).collect();
        match self.outcome {
            Outcome::Graduated => s.push("GR".into()),
            Outcome::Halted => s.push("HT".into()),
            Outcome::Censored => {}
        }
        s.join("-")
    }
}

/// Maps the k-th consecutive year at a level to sub-state `min(k, n)`.
pub fn expand_levels(trajectory: &Trajectory, spec: &LevelSpec) -> Result<ExpandedTrajectory> {
    let mut states = Vec::with_capacity(trajectory.states.len());
    let mut run = 0u8;
    let mut prev = None;
    for &level in &trajectory.states {
        spec.level_pos(level)?;
        run = if prev == Some(level) { run.saturating_add(1) } else { 1 };
        prev = Some(level);
        states.push(SubState {
            level,
            sub: run.min(spec.n),
        });
    }
    Ok(ExpandedTrajectory {
        student_id: trajectory.student_id.clone(),
        entry_year: trajectory.entry_year,
        states,
        outcome: trajectory.outcome,
    })
}

/// Calls `f(from, to)` for every transition of the trajectory in the expanded
/// space, in time order: the Start hop (when enabled), each consecutive pair,
/// and the absorbing step for resolved outcomes.
pub fn for_each_transition(
    trajectory: &Trajectory,
    spec: &LevelSpec,
    with_start: bool,
    mut f: impl FnMut(usize, usize),
) -> Result<()> {
    let n = spec.n as usize;
    let mut prev: Option<(Level, usize)> = None;
    let mut prev_idx = spec.start_index();
    for (i, &level) in trajectory.states.iter().enumerate() {
        let pos = spec.level_pos(level)?;
        let run = match prev {
            Some((l, k)) if l == level => k + 1,
            _ => 1,
        };
        let idx = 1 + pos * n + run.min(n) - 1;
        if i > 0 || with_start {
            f(prev_idx, idx);
        }
        prev = Some((level, run));
        prev_idx = idx;
    }
    if let Some(a) = spec.absorbing_index(trajectory.outcome) {
        f(prev_idx, a);
    }
    Ok(())
}

/// Number of transitions `for_each_transition` emits.
pub fn transition_count(trajectory: &Trajectory, with_start: bool) -> usize {
    trajectory.states.len() - 1
        + usize::from(with_start)
        + usize::from(trajectory.outcome != Outcome::Censored)
}

/// Exact integer transition counts over an expanded state space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionCounts {
    spec: LevelSpec,
    n: usize,
    counts: Vec<u64>,
}

impl TransitionCounts {
    pub fn new(spec: &LevelSpec) -> Self {
        let n = spec.n_states();
        TransitionCounts {
            spec: spec.clone(),
            n,
            counts: vec![0; n * n],
        }
    }

    pub fn spec(&self) -> &LevelSpec {
        &self.spec
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn get(&self, from: usize, to: usize) -> u64 {
        self.counts[from * self.n + to]
    }

    pub fn increment(&mut self, from: usize, to: usize) {
        self.counts[from * self.n + to] += 1;
    }

    pub fn exposure(&self, state: usize) -> u64 {
        self.counts[state * self.n..(state + 1) * self.n].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds every transition of the trajectory. Nothing is added when a
    /// level is outside the vocabulary.
    pub fn add_trajectory(&mut self, trajectory: &Trajectory, with_start: bool) -> Result<()> {
        self.add_trajectory_from(trajectory, with_start, 0)
    }

    /// Adds only the transitions after the first `skip`.
    pub fn add_trajectory_from(&mut self, trajectory: &Trajectory, with_start: bool, skip: usize) -> Result<()> {
        for &level in &trajectory.states {
            self.spec.level_pos(level)?;
        }
        let TransitionCounts { spec, n, counts } = self;
        let mut seen = 0;
        for_each_transition(trajectory, spec, with_start, |a, b| {
            if seen >= skip {
                counts[a * *n + b] += 1;
            }
            seen += 1;
        })
    }

    /// Elementwise sum.
    pub fn merge(&mut self, other: &TransitionCounts) {
        assert_eq!(self.spec, other.spec, "merging counts over different spaces");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.n).map(<[u64]>::to_vec).collect()
    }
}

pub fn count_transitions(trajectories: &[Trajectory], spec: &LevelSpec, with_start: bool) -> Result<TransitionCounts> {
    let mut c = TransitionCounts::new(spec);
    for t in trajectories {
        c.add_trajectory(t, with_start)?;
    }
    Ok(c)
}

/// What to do with a transient state that has no outgoing observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnobservedPolicy {
    #[default]
    Error,
    /// Probability 1 on the state itself; usually makes the chain non-absorbing.
    SelfLoop,
    /// Copy the row of the next-lower duration sub-state of the same level,
    /// with its "stay" transition pointed at this state's successor.
    #[serde(alias = "borrow-lower")]
    BorrowLowerSubState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedChain {
    pub chain: AbsorbingChain,
    /// States whose rows were filled in by the unobserved policy.
    pub imputed: Vec<StateId>,
}

pub fn mle_transition_matrix(counts: &TransitionCounts, policy: UnobservedPolicy) -> Result<AbsorbingChain> {
    fit_transition_matrix(counts, policy).map(|f| f.chain)
}

/// Row-normalised transition counts; see [`UnobservedPolicy`] for rows
/// without observations.
pub fn fit_transition_matrix(counts: &TransitionCounts, policy: UnobservedPolicy) -> Result<FittedChain> {
    if counts.total() == 0 {
        return Err(GradError::EmptyCounts);
    }
    let spec = &counts.spec;
    let space = spec.state_space();
    let n = counts.n;
    let t = space.n_transient();
    let sub_n = spec.n as usize;
    let mut p = Matrix::zeros(n, n);
    let mut imputed = Vec::new();
    for i in t..n {
        p[(i, i)] = 1.0;
    }
    for i in 0..t {
        let exposure = counts.exposure(i);
        if exposure > 0 {
            let e = exposure as f64;
            for j in 0..n {
                p[(i, j)] = counts.get(i, j) as f64 / e;
            }
            continue;
        }
        let label = space.label(StateId(i)).to_string();
        match policy {
            UnobservedPolicy::Error => return Err(GradError::ZeroExposure { label }),
            UnobservedPolicy::SelfLoop => {
                log::warn!("state {label} unobserved; assigning a self-loop");
                p[(i, i)] = 1.0;
            }
            UnobservedPolicy::BorrowLowerSubState => {
                // sub-state index within its level, 0-based; Start has none
                let k = if i == 0 { 0 } else { (i - 1) % sub_n };
                if i == 0 || k == 0 {
                    return Err(GradError::ZeroExposure { label });
                }
                let lower = i - 1;
                let next = if k + 1 < sub_n { i + 1 } else { i };
                for j in 0..n {
                    let v = p[(lower, j)];
                    let target = if j == i { next } else { j };
                    p[(i, target)] += v;
                }
                log::debug!("state {label} unobserved; borrowing row of {}", space.label(StateId(lower)));
            }
        }
        imputed.push(StateId(i));
    }
    let chain = build_chain(space, &p)?;
    Ok(FittedChain { chain, imputed })
}
