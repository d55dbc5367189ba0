//! Finite absorbing Markov chains in canonical form `P = [[Q, R], [0, I]]`.
//!
//! States are kept in canonical order: transient states first (the Start
//! state, when present, at index 0), absorbing states last. All operations
//! are pure; a chain is immutable once built.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{GradError, Result};
use crate::linalg::Matrix;

/// Row sums must match 1 within this tolerance.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Entries may undershoot 0 or overshoot 1 by at most this much.
const ENTRY_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Start,
    Transient,
    Halt,
    Graduate,
}

impl Role {
    pub fn is_absorbing(self) -> bool {
        matches!(self, Role::Halt | Role::Graduate)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct State {
    pub label: String,
    pub role: Role,
}

impl State {
    pub fn new(label: impl Into<String>, role: Role) -> Self {
        State {
            label: label.into(),
            role,
        }
    }
}

/// Position of a state in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateId(pub usize);

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    states: Vec<State>,
    n_transient: usize,
}

impl StateSpace {
    /// Validates labels and ordering: unique labels, transient states
    /// strictly before absorbing ones, at most one Start (and it comes
    /// first), at most one Halt and one Graduate.
    pub fn new(states: Vec<State>) -> Result<Self> {
        let invalid = |msg: String| Err(GradError::InvalidStateSpace(msg));
        let mut seen = HashSet::new();
        for s in &states {
            if !seen.insert(s.label.as_str()) {
                return invalid(format!("duplicate label {}", s.label));
            }
        }
        let n_transient = states.iter().take_while(|s| !s.role.is_absorbing()).count();
        if states[n_transient..].iter().any(|s| !s.role.is_absorbing()) {
            return invalid("transient states must precede absorbing states".into());
        }
        if n_transient == 0 {
            return invalid("no transient states".into());
        }
        if n_transient == states.len() {
            return invalid("no absorbing states".into());
        }
        for role in [Role::Start, Role::Halt, Role::Graduate] {
            if states.iter().filter(|s| s.role == role).count() > 1 {
                return invalid(format!("more than one {role:?} state"));
            }
        }
        if let Some(pos) = states.iter().position(|s| s.role == Role::Start) {
            if pos != 0 {
                return invalid("Start must be the first state".into());
            }
        }
        Ok(StateSpace {
            states,
            n_transient,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn n_transient(&self) -> usize {
        self.n_transient
    }

    pub fn n_absorbing(&self) -> usize {
        self.states.len() - self.n_transient
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn state(&self, id: StateId) -> &State {
        &self.states[id.0]
    }

    pub fn label(&self, id: StateId) -> &str {
        &self.states[id.0].label
    }

    pub fn is_transient(&self, id: StateId) -> bool {
        id.0 < self.n_transient
    }

    pub fn index_of(&self, label: &str) -> Option<StateId> {
        self.states.iter().position(|s| s.label == label).map(StateId)
    }

    fn find_role(&self, role: Role) -> Option<StateId> {
        self.states.iter().position(|s| s.role == role).map(StateId)
    }

    pub fn start(&self) -> Option<StateId> {
        self.find_role(Role::Start)
    }

    pub fn halt(&self) -> Option<StateId> {
        self.find_role(Role::Halt)
    }

    pub fn graduate(&self) -> Option<StateId> {
        self.find_role(Role::Graduate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbsorbingChain {
    space: StateSpace,
    q: Matrix,
    r: Matrix,
}

/// Absorption probabilities `B = F R` and expected steps `U = F 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorptionSummary {
    pub b: Matrix,
    pub u: Vec<f64>,
}

/// Probability mass absorbed within `year` years of entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepAbsorption {
    pub year: u32,
    pub grad: f64,
    pub halt: f64,
    pub retention: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateDistribution {
    probs: Vec<f64>,
}

impl StateDistribution {
    pub fn point(space: &StateSpace, id: StateId) -> Self {
        let mut probs = vec![0.0; space.len()];
        probs[id.0] = 1.0;
        StateDistribution { probs }
    }

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|&p| !(-ENTRY_SLACK..=1.0 + ENTRY_SLACK).contains(&p))
            || (sum - 1.0).abs() > ROW_SUM_TOLERANCE
        {
            return Err(GradError::NonStochasticRow {
                row: 0,
                label: "distribution".into(),
                sum,
            });
        }
        Ok(StateDistribution { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// One year forward: `x(y+1) = x(y) P`.
    pub fn step(&self, chain: &AbsorbingChain) -> StateDistribution {
        let t = chain.space.n_transient();
        let mut next = vec![0.0; self.probs.len()];
        next[t..].copy_from_slice(&self.probs[t..]);
        for (i, &x) in self.probs[..t].iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (j, &p) in chain.q.row(i).iter().enumerate() {
                next[j] += x * p;
            }
            for (a, &p) in chain.r.row(i).iter().enumerate() {
                next[t + a] += x * p;
            }
        }
        StateDistribution { probs: next }
    }
}

/// Validates a full row-stochastic matrix and partitions it into `Q` and `R`.
pub fn build_chain(space: StateSpace, rows: &Matrix) -> Result<AbsorbingChain> {
    let n = space.len();
    if rows.rows() != n || rows.cols() != n {
        return Err(GradError::DimensionMismatch {
            rows: rows.rows(),
            cols: rows.cols(),
            states: n,
        });
    }
    let t = space.n_transient();
    for i in 0..n {
        let label = || space.states[i].label.clone();
        let row = rows.row(i);
        if let Some(&value) = row
            .iter()
            .find(|&&p| !p.is_finite() || !(-ENTRY_SLACK..=1.0 + ENTRY_SLACK).contains(&p))
        {
            return Err(GradError::ProbabilityOutOfRange {
                row: i,
                label: label(),
                value,
            });
        }
        if i >= t {
            let ok = row
                .iter()
                .enumerate()
                .all(|(j, &p)| if j == i { (p - 1.0).abs() <= ROW_SUM_TOLERANCE } else { p.abs() <= ROW_SUM_TOLERANCE });
            if !ok {
                return Err(GradError::MalformedAbsorbingRow { label: label() });
            }
            continue;
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(GradError::NonStochasticRow {
                row: i,
                label: label(),
                sum,
            });
        }
    }
    let chain = AbsorbingChain {
        q: rows.block(0, 0, t, t),
        r: rows.block(0, t, t, n - t),
        space,
    };
    chain.check_absorbing()?;
    // numerical invertibility of I - Q, beyond the structural check
    chain.fundamental_matrix()?;
    Ok(chain)
}

impl AbsorbingChain {
    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn r(&self) -> &Matrix {
        &self.r
    }

    /// Reassembles `[[Q, R], [0, I]]`.
    pub fn full_matrix(&self) -> Matrix {
        let n = self.space.len();
        let t = self.space.n_transient();
        let mut p = Matrix::zeros(n, n);
        for i in 0..t {
            for j in 0..t {
                p[(i, j)] = self.q[(i, j)];
            }
            for a in 0..n - t {
                p[(i, t + a)] = self.r[(i, a)];
            }
        }
        for i in t..n {
            p[(i, i)] = 1.0;
        }
        p
    }

    /// Structural check: every transient state reaches an absorbing state.
    fn check_absorbing(&self) -> Result<()> {
        let t = self.space.n_transient();
        // states known to reach absorption, filled to a fixed point
        let mut reaches: Vec<bool> = (0..t).map(|i| self.r.row(i).iter().any(|&p| p > 0.0)).collect();
        loop {
            let mut changed = false;
            for i in 0..t {
                if !reaches[i] && (0..t).any(|j| reaches[j] && self.q[(i, j)] > 0.0) {
                    reaches[i] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        match reaches.iter().position(|&r| !r) {
            Some(i) => Err(GradError::NonAbsorbing {
                label: self.space.states[i].label.clone(),
            }),
            None => Ok(()),
        }
    }

    /// `F = (I - Q)^{-1}`; `F[i][j]` is the expected number of visits to
    /// transient `j` starting from `i`.
    pub fn fundamental_matrix(&self) -> Result<Matrix> {
        let t = self.space.n_transient();
        let i_minus_q = Matrix::identity(t).sub(&self.q);
        i_minus_q.inverse().map_err(|_| GradError::NonAbsorbing {
            label: self.space.states[0].label.clone(),
        })
    }

    pub fn absorption_summary(&self) -> Result<AbsorptionSummary> {
        let f = self.fundamental_matrix()?;
        let b = f.matmul(&self.r);
        let u = f.row_sums();
        for (i, s) in b.row_sums().into_iter().enumerate() {
            assert!(
                (s - 1.0).abs() <= ROW_SUM_TOLERANCE,
                "absorption probabilities for {} sum to {s}",
                self.space.states[i].label
            );
        }
        Ok(AbsorptionSummary { b, u })
    }

    /// `P^n` by repeated squaring.
    pub fn n_step(&self, n: u32) -> Matrix {
        self.full_matrix().pow(n)
    }

    /// Cumulative graduation, halting and retention after `k = 1..=horizon`
    /// years, i.e. row `start` of `P^(k+1)` (one extra step for the hop out
    /// of the Start state).
    pub fn absorption_by_step(&self, start: StateId, horizon: u32) -> Result<Vec<StepAbsorption>> {
        if !self.space.is_transient(start) {
            return Err(GradError::StartNotTransient {
                label: self.space.label(start).to_string(),
            });
        }
        let grad = self.space.graduate().ok_or(GradError::MissingStartOrGraduate("graduate"))?;
        let halt = self.space.halt();
        let mut x = StateDistribution::point(&self.space, start).step(self);
        let mut out = Vec::with_capacity(horizon as usize);
        for year in 1..=horizon {
            x = x.step(self);
            let g = x.probs[grad.0];
            let h = halt.map_or(0.0, |h| x.probs[h.0]);
            out.push(StepAbsorption {
                year,
                grad: g,
                halt: h,
                retention: x.probs[..self.space.n_transient()].iter().sum(),
            });
        }
        Ok(out)
    }
}

/// Plain-text exchange document for a chain. Probabilities are decimal
/// strings with 12 significant digits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDocument {
    pub states: Vec<State>,
    pub rows: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

pub fn format_probability(p: f64) -> String {
    format!("{p:.11e}")
}

impl ChainDocument {
    pub fn from_chain(chain: &AbsorbingChain, notes: Vec<String>) -> Self {
        let p = chain.full_matrix();
        ChainDocument {
            states: chain.space.states.clone(),
            rows: (0..p.rows())
                .map(|i| p.row(i).iter().map(|&x| format_probability(x)).collect())
                .collect(),
            notes,
        }
    }

    pub fn to_chain(&self) -> Result<AbsorbingChain> {
        let space = StateSpace::new(self.states.clone())?;
        let mut rows = Vec::with_capacity(self.rows.len());
        for (i, r) in self.rows.iter().enumerate() {
            let parsed: std::result::Result<Vec<f64>, _> = r.iter().map(|s| s.trim().parse::<f64>()).collect();
            let parsed = parsed.map_err(|e| GradError::Parse(format!("row {i}: {e}")))?;
            if parsed.len() != self.rows.len() {
                return Err(GradError::DimensionMismatch {
                    rows: self.rows.len(),
                    cols: parsed.len(),
                    states: space.len(),
                });
            }
            rows.push(parsed);
        }
        if rows.is_empty() {
            return Err(GradError::DimensionMismatch {
                rows: 0,
                cols: 0,
                states: space.len(),
            });
        }
        build_chain(space, &Matrix::from_rows(&rows))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("chain document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| GradError::Parse(format!("line {} column {}: {e}", e.line(), e.column())))
    }
}
