//! Serializable reports and the fixed six-decimal JSON writer.

use std::io;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::chain::ChainDocument;
use crate::error::{GradError, Result};
use crate::estimators::{EstimatorSpec, SampleStats};
use crate::simulator::{ErrorDecomposition, EstimatorOutcome, ExperimentConfig, ExperimentOutcome, TruthConfig};

pub const UNIT: &str = "percent";

fn unit() -> String {
    UNIT.to_string()
}

/// Pretty JSON where every float is written with exactly six decimals.
struct FixedFormatter<'a> {
    pretty: PrettyFormatter<'a>,
}

fn fixed6(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

impl Formatter for FixedFormatter<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(fixed6(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value.into())
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.pretty.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.pretty.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.end_object_value(w)
    }
}

/// Serializes `value` as pretty JSON with fixed six-decimal floats and a
/// trailing newline.
pub fn to_json_fixed<T: Serialize + ?Sized>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(
        &mut buf,
        FixedFormatter {
            pretty: PrettyFormatter::new(),
        },
    );
    value.serialize(&mut ser).expect("report types serialize");
    buf.push(b'\n');
    String::from_utf8(buf).expect("JSON is UTF-8")
}

pub fn from_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| GradError::Parse(format!("line {} column {}: {e}", e.line(), e.column())))
}

/// Formats a float the way reports do, for CSV cells.
pub fn format_fixed(v: f64) -> String {
    fixed6(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBlock {
    pub estimates_summary: SampleStats,
    pub bias: f64,
    pub std: f64,
    pub total_error: f64,
    pub q05: f64,
    pub q95: f64,
}

impl ErrorBlock {
    fn new(stats: SampleStats, true_rate: f64) -> Self {
        let d = ErrorDecomposition::new(&stats, true_rate);
        ErrorBlock {
            estimates_summary: stats,
            bias: d.bias,
            std: d.std,
            total_error: d.total,
            q05: stats.q05,
            q95: stats.q95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearBlock {
    pub year: u32,
    #[serde(flatten)]
    pub errors: ErrorBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub name: String,
    pub spec: EstimatorSpec,
    #[serde(default = "unit")]
    pub unit: String,
    pub replications_used: usize,
    pub skipped: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_failure: Option<String>,
    /// Present when at least two replications succeeded.
    #[serde(default, flatten, skip_serializing_if = "Option::is_none")]
    pub errors: Option<ErrorBlock>,
    /// Set instead of `errors` when the summary cannot be formed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary_error: Option<String>,
    /// Raw estimates, echoed only when no summary could be formed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimates: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_vs_reference: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yearly: Option<Vec<YearBlock>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kde: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    #[serde(default = "unit")]
    pub unit: String,
    pub config_echo: ExperimentConfig,
    pub true_rate: f64,
    pub true_rate_source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_rate: Option<f64>,
    pub estimators: Vec<EstimatorReport>,
}

impl ExperimentReport {
    pub fn from_outcome(outcome: &ExperimentOutcome) -> Self {
        let reference = outcome.config.reference_rate;
        let estimators = outcome
            .estimators
            .iter()
            .map(|e| estimator_report(outcome, e, reference))
            .collect();
        let true_rate_source = match outcome.config.truth {
            TruthConfig::Binomial { .. } => "binomial theta",
            _ => "exact horizon rate of the truth chain",
        };
        ExperimentReport {
            unit: unit(),
            config_echo: outcome.config.clone(),
            true_rate: outcome.true_rate,
            true_rate_source: true_rate_source.into(),
            reference_rate: reference,
            estimators,
        }
    }

    pub fn to_json(&self) -> String {
        to_json_fixed(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        from_json(text)
    }
}

fn estimator_report(outcome: &ExperimentOutcome, e: &EstimatorOutcome, reference: Option<f64>) -> EstimatorReport {
    let (errors, summary_error, estimates) = match e.stats() {
        Ok(s) => (Some(ErrorBlock::new(s, outcome.true_rate)), None, None),
        Err(err) => (None, Some(err.to_string()), Some(e.sample.estimates.clone())),
    };
    let bias_vs_reference = match (&errors, reference) {
        (Some(b), Some(r)) => Some(b.estimates_summary.mean - r),
        _ => None,
    };
    let yearly = e.yearly.as_ref().map(|years| {
        years
            .iter()
            .enumerate()
            .filter_map(|(i, s)| {
                s.summary().ok().map(|st| YearBlock {
                    year: i as u32 + 1,
                    errors: ErrorBlock::new(st, outcome.true_rate),
                })
            })
            .collect()
    });
    let kde = if outcome.config.kde.is_some() {
        outcome
            .kde(e)
            .ok()
            .map(|c| c.into_iter().map(|(x, d)| [x, d]).collect())
    } else {
        None
    };
    EstimatorReport {
        name: e.name.clone(),
        spec: e.spec,
        unit: unit(),
        replications_used: e.sample.estimates.len(),
        skipped: e.skipped,
        first_failure: e.first_failure.clone(),
        errors,
        summary_error,
        estimates,
        bias_vs_reference,
        yearly,
        kde,
    }
}

/// Output of a single estimate on observed data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    #[serde(default = "unit")]
    pub unit: String,
    pub estimator: String,
    pub horizon: u32,
    pub students: usize,
    /// The headline estimate (the final year for RUML).
    pub estimate: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cohorts: Vec<CohortRate>,
    /// RUML only: estimate after each observation year.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub yearly: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<ChainDocument>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub imputed_states: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected_records: Vec<String>,
}

impl EstimateReport {
    pub fn to_json(&self) -> String {
        to_json_fixed(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        from_json(text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortRate {
    pub entry_year: i32,
    pub n_started: u64,
    pub n_graduated: u64,
    pub rate: f64,
}

/// One row of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub estimator: String,
    pub mean: f64,
    pub std: f64,
    pub bias: f64,
    pub q05: f64,
    pub q95: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SweepCsvRow {
    axis: String,
    value: String,
    estimator: String,
    mean: String,
    std: String,
    bias: String,
    q05: String,
    q95: String,
}

pub fn write_sweep_csv<W: io::Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(SweepCsvRow {
            axis: r.axis.clone(),
            value: r.value.clone(),
            estimator: r.estimator.clone(),
            mean: fixed6(r.mean),
            std: fixed6(r.std),
            bias: fixed6(r.bias),
            q05: fixed6(r.q05),
            q95: fixed6(r.q95),
        })
        .map_err(|e| GradError::Parse(e.to_string()))?;
    }
    w.flush().map_err(|e| GradError::Parse(e.to_string()))
}

pub fn read_sweep_csv<R: io::Read>(input: R) -> Result<Vec<SweepRow>> {
    let mut reader = csv::Reader::from_reader(input);
    reader
        .deserialize::<SweepRow>()
        .map(|r| {
            r.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                GradError::Parse(format!("line {line}: {e}"))
            })
        })
        .collect()
}
