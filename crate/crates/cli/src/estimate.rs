use std::collections::BTreeMap;

use anyhow::{bail, Context};
use gradchain_core::io::{detect_kind, read_records, read_trajectories, CsvKind};
use gradchain_core::report::{format_fixed, CohortRate};
use gradchain_core::{
    amc_grad_rate, entry_year_batches, count_transitions, fit_transition_matrix, ingest_records, rolling_sygr,
    ruml_series, sygr, ChainDocument, CohortOutcome, EstimateReport, LevelSpec, Term, Trajectory,
    UnobservedPolicy,
};
use log::info;

use crate::{emit, read_file, EstimateArgs, EstimatorKind, Format};

fn parse_term(s: &str) -> anyhow::Result<Term> {
    let (y, t) = s
        .split_once('-')
        .with_context(|| format!("observation end {s:?} is not YEAR-TERM"))?;
    Ok(Term::new(y.trim().parse()?, t.trim().parse()?)?)
}

pub fn run(args: &EstimateArgs) -> anyhow::Result<()> {
    let text = read_file(&args.data)?;
    let header = text.lines().next().unwrap_or_default();
    let context = || format!("{}", args.data.display());
    let mut rejected = Vec::new();
    let trajectories = match detect_kind(header).with_context(context)? {
        CsvKind::Trajectories => read_trajectories(text.as_bytes()).with_context(context)?,
        CsvKind::Records => {
            let records = read_records(text.as_bytes()).with_context(context)?;
            let end = match &args.observation_end {
                Some(s) => parse_term(s)?,
                None => match records.iter().map(|r| r.term).max() {
                    Some(t) => t,
                    None => bail!("{}: no records", args.data.display()),
                },
            };
            let ingested = ingest_records(&records, end);
            rejected = ingested.rejected.iter().map(ToString::to_string).collect();
            for r in &rejected {
                log::warn!("rejected: {r}");
            }
            ingested.trajectories
        }
    };
    if trajectories.is_empty() {
        bail!("{}: no usable trajectories", args.data.display());
    }
    info!("{} trajectories", trajectories.len());

    let report = estimate(args, &trajectories, rejected)?;
    let out = match args.format {
        Format::Json => report.to_json(),
        Format::Csv => csv(&report),
    };
    emit(args.out.as_deref(), &out)
}

fn cohorts(trajectories: &[Trajectory], horizon: u32) -> Vec<CohortRate> {
    let mut by_year: BTreeMap<i32, Vec<&Trajectory>> = BTreeMap::new();
    for t in trajectories {
        by_year.entry(t.entry_year).or_default().push(t);
    }
    by_year
        .into_iter()
        .map(|(year, ts)| {
            let c = CohortOutcome::from_trajectories(ts, horizon);
            CohortRate {
                entry_year: year,
                n_started: c.n_started,
                n_graduated: c.n_graduated,
                rate: 100.0 * c.n_graduated as f64 / c.n_started as f64,
            }
        })
        .collect()
}

fn estimate(args: &EstimateArgs, trajectories: &[Trajectory], rejected: Vec<String>) -> anyhow::Result<EstimateReport> {
    let policy: UnobservedPolicy = args.unobserved.into();
    let levels = match args.estimator {
        EstimatorKind::Amc => 1,
        _ => args.levels,
    };
    let spec = LevelSpec::standard(levels);
    let mut report = EstimateReport {
        unit: "percent".into(),
        estimator: String::new(),
        horizon: args.horizon,
        students: trajectories.len(),
        estimate: 0.0,
        cohorts: Vec::new(),
        yearly: Vec::new(),
        chain: None,
        imputed_states: Vec::new(),
        rejected_records: rejected,
    };
    match args.estimator {
        EstimatorKind::Sygr | EstimatorKind::RollingSygr => {
            let all = cohorts(trajectories, args.horizon);
            let outcomes: Vec<CohortOutcome> = all
                .iter()
                .map(|c| CohortOutcome::new(c.n_started, c.n_graduated))
                .collect::<Result<_, _>>()?;
            if args.estimator == EstimatorKind::Sygr {
                report.estimator = "sygr".into();
                let i = match args.cohort {
                    Some(y) => all
                        .iter()
                        .position(|c| c.entry_year == y)
                        .with_context(|| format!("no students entered in {y}"))?,
                    None => 0,
                };
                report.estimate = sygr(outcomes[i])?;
            } else {
                if args.cohorts > outcomes.len() {
                    bail!("rolling-sygr needs {} cohorts, the data has {}", args.cohorts, outcomes.len());
                }
                report.estimator = format!("rolling-sygr-{}", args.cohorts);
                report.estimate = rolling_sygr(&outcomes[..args.cohorts])?;
            }
            report.cohorts = all;
        }
        EstimatorKind::Amc | EstimatorKind::MlAmc => {
            report.estimator = if args.estimator == EstimatorKind::Amc {
                "amc".into()
            } else {
                format!("ml-amc-n{levels}")
            };
            let counts = count_transitions(trajectories, &spec, true)?;
            let fitted = fit_transition_matrix(&counts, policy)?;
            report.estimate = amc_grad_rate(&fitted.chain, args.horizon)?;
            report.imputed_states = fitted
                .imputed
                .iter()
                .map(|&id| fitted.chain.space().label(id).to_string())
                .collect();
            report.chain = Some(ChainDocument::from_chain(&fitted.chain, Vec::new()));
        }
        EstimatorKind::RumlAmc => {
            report.estimator = format!("ruml-amc-n{levels}");
            let batches = entry_year_batches(trajectories);
            let series = ruml_series(&batches, &spec, args.horizon, policy)?;
            report.estimate = *series.estimates.last().expect("one estimate per batch");
            report.yearly = series.estimates;
            report.chain = series
                .chains
                .last()
                .map(|c| ChainDocument::from_chain(c, Vec::new()));
        }
    }
    Ok(report)
}

fn csv(report: &EstimateReport) -> String {
    let mut out = String::from("estimator,scope,estimate\n");
    out.push_str(&format!("{},overall,{}\n", report.estimator, format_fixed(report.estimate)));
    for c in &report.cohorts {
        out.push_str(&format!("{},cohort-{},{}\n", report.estimator, c.entry_year, format_fixed(c.rate)));
    }
    for (i, v) in report.yearly.iter().enumerate() {
        out.push_str(&format!("{},year-{},{}\n", report.estimator, i + 1, format_fixed(*v)));
    }
    out
}
