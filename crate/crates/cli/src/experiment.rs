use std::path::Path;

use anyhow::{bail, Context};
use gradchain_core::report::{to_json_fixed, write_sweep_csv};
use gradchain_core::{
    run_experiment_with_workers, ExperimentConfig, ExperimentOutcome, ExperimentReport, SweepRow, TruthConfig,
};
use log::info;

use crate::{emit, read_file, Format, SimulateArgs, SweepArgs};

/// Reads a config, applies the command-line seed and resolves a truth file
/// path relative to the config's directory.
fn load_config(path: &Path, seed: u64) -> anyhow::Result<ExperimentConfig> {
    let text = read_file(path)?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("{}: malformed JSON", path.display()))?;
    let Some(obj) = value.as_object_mut() else {
        bail!("{}: config must be a JSON object", path.display());
    };
    obj.insert("seed".into(), seed.into());
    let mut config: ExperimentConfig =
        serde_json::from_value(value).with_context(|| format!("{}: invalid experiment config", path.display()))?;
    if let TruthConfig::ChainFile { path: truth } = &mut config.truth {
        if truth.is_relative() {
            if let Some(dir) = path.parent() {
                *truth = dir.join(&*truth);
            }
        }
    }
    Ok(config)
}

fn run(config: &ExperimentConfig, workers: Option<u64>) -> anyhow::Result<ExperimentOutcome> {
    Ok(run_experiment_with_workers(config, workers.map(|w| w as usize))?)
}

fn rows(axis: &str, value: &str, outcome: &ExperimentOutcome) -> Vec<SweepRow> {
    outcome
        .estimators
        .iter()
        .filter_map(|e| match e.stats() {
            Ok(s) => Some(SweepRow {
                axis: axis.into(),
                value: value.into(),
                estimator: e.name.clone(),
                mean: s.mean,
                std: s.std,
                bias: s.mean - outcome.true_rate,
                q05: s.q05,
                q95: s.q95,
            }),
            Err(err) => {
                log::warn!("{}: no summary ({err})", e.name);
                None
            }
        })
        .collect()
}

fn csv(rows: &[SweepRow]) -> anyhow::Result<String> {
    let mut buf = Vec::new();
    write_sweep_csv(rows, &mut buf)?;
    Ok(String::from_utf8(buf)?)
}

pub fn simulate(args: &SimulateArgs) -> anyhow::Result<()> {
    let config = load_config(&args.config, args.seed)?;
    let outcome = run(&config, args.workers)?;
    for e in &outcome.estimators {
        if e.skipped > 0 {
            log::warn!("{}: skipped {} replications", e.name, e.skipped);
        }
    }
    let text = match args.format {
        Format::Json => ExperimentReport::from_outcome(&outcome).to_json(),
        Format::Csv => csv(&rows("config", "", &outcome))?,
    };
    emit(args.out.as_deref(), &text)
}

pub fn sweep(args: &SweepArgs) -> anyhow::Result<()> {
    let base = load_config(&args.config, args.seed)?;
    let mut points: Vec<(String, String, ExperimentConfig)> = Vec::new();
    if !args.cohort_sizes.is_empty() {
        for &n in &args.cohort_sizes {
            let mut c = base.clone();
            c.cohort_size = n;
            points.push(("cohort_size".into(), n.to_string(), c));
        }
    } else {
        if !base.estimators.iter().any(|e| e.levels().is_some()) {
            bail!("a levels sweep needs at least one chain-based estimator in the config");
        }
        for &n in &args.levels {
            let mut c = base.clone();
            c.estimators = c.estimators.iter().map(|e| e.with_levels(n)).collect();
            points.push(("levels".into(), n.to_string(), c));
        }
    }
    let mut table = Vec::new();
    let mut reports = Vec::new();
    for (axis, value, config) in &points {
        info!("sweep point {axis}={value}");
        let outcome = run(config, args.workers)?;
        table.extend(rows(axis, value, &outcome));
        reports.push(ExperimentReport::from_outcome(&outcome));
    }
    let text = match args.format {
        Format::Csv => csv(&table)?,
        Format::Json => to_json_fixed(&reports),
    };
    emit(args.out.as_deref(), &text)
}
