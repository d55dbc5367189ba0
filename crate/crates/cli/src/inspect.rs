use std::fmt::Write as _;

use anyhow::Context;
use gradchain_core::report::{format_fixed, to_json_fixed};
use gradchain_core::{AbsorbingChain, ChainDocument, Preset, StateId, StepAbsorption};
use serde::Serialize;

use crate::{emit, read_file, Format, InspectArgs};

#[derive(Serialize)]
struct YearRow {
    year: u32,
    graduated: f64,
    halted: f64,
    retained: f64,
}

#[derive(Serialize)]
struct InspectReport {
    unit: &'static str,
    start: String,
    transient: Vec<String>,
    absorbing: Vec<String>,
    fundamental: Vec<Vec<f64>>,
    absorption: Vec<Vec<f64>>,
    expected_steps: Vec<f64>,
    yearly: Vec<YearRow>,
    eventual_graduation: f64,
}

fn load(args: &InspectArgs) -> anyhow::Result<AbsorbingChain> {
    if let Some(name) = &args.preset {
        return Ok(Preset::from_name(name)?.chain());
    }
    let path = args.matrix.as_deref().expect("clap requires --matrix or --preset");
    let doc = ChainDocument::from_json(&read_file(path)?).with_context(|| path.display().to_string())?;
    doc.to_chain().with_context(|| path.display().to_string())
}

pub fn run(args: &InspectArgs) -> anyhow::Result<()> {
    let chain = load(args)?;
    let space = chain.space();
    let start = space.start().unwrap_or(StateId(0));
    let f = chain.fundamental_matrix()?;
    let summary = chain.absorption_summary()?;
    let series = chain.absorption_by_step(start, args.horizon)?;
    let grad_col = space.graduate().map(|g| g.0 - space.n_transient());
    let eventual = grad_col.map_or(0.0, |c| 100.0 * summary.b[(start.0, c)]);
    let labels = |range: std::ops::Range<usize>| -> Vec<String> {
        range.map(|i| space.label(StateId(i)).to_string()).collect()
    };
    let report = InspectReport {
        unit: "percent",
        start: space.label(start).to_string(),
        transient: labels(0..space.n_transient()),
        absorbing: labels(space.n_transient()..space.len()),
        fundamental: f.to_rows(),
        absorption: summary.b.to_rows(),
        expected_steps: summary.u.clone(),
        yearly: series.iter().map(year_row).collect(),
        eventual_graduation: eventual,
    };
    let text = match args.format {
        Some(Format::Json) => to_json_fixed(&report),
        Some(Format::Csv) => csv(&report),
        None => text(&report),
    };
    emit(args.out.as_deref(), &text)
}

fn year_row(s: &StepAbsorption) -> YearRow {
    YearRow {
        year: s.year,
        graduated: 100.0 * s.grad,
        halted: 100.0 * s.halt,
        retained: 100.0 * s.retention,
    }
}

fn matrix_block(out: &mut String, title: &str, rows: &[String], cols: &[String], m: &[Vec<f64>]) {
    let _ = writeln!(out, "{title}");
    let _ = write!(out, "{:>8}", "");
    for c in cols {
        let _ = write!(out, " {c:>10}");
    }
    out.push('\n');
    for (label, row) in rows.iter().zip(m) {
        let _ = write!(out, "{label:>8}");
        for v in row {
            let _ = write!(out, " {:>10}", format_fixed(*v));
        }
        out.push('\n');
    }
    out.push('\n');
}

fn text(r: &InspectReport) -> String {
    let mut out = String::new();
    matrix_block(&mut out, "fundamental matrix F = (I - Q)^-1", &r.transient, &r.transient, &r.fundamental);
    matrix_block(&mut out, "absorption probabilities B = F R", &r.transient, &r.absorbing, &r.absorption);
    let u: Vec<Vec<f64>> = r.expected_steps.iter().map(|&x| vec![x]).collect();
    matrix_block(&mut out, "expected steps to absorption U = F 1", &r.transient, &["steps".to_string()], &u);
    let _ = writeln!(out, "yearly absorption from {} (percent)", r.start);
    let _ = writeln!(out, "{:>6} {:>12} {:>12} {:>12}", "year", "graduated", "halted", "retained");
    for y in &r.yearly {
        let _ = writeln!(
            out,
            "{:>6} {:>12} {:>12} {:>12}",
            y.year,
            format_fixed(y.graduated),
            format_fixed(y.halted),
            format_fixed(y.retained)
        );
    }
    let _ = writeln!(out, "eventual graduation {}", format_fixed(r.eventual_graduation));
    out
}

fn csv(r: &InspectReport) -> String {
    let mut out = String::from("year,graduated,halted,retained\n");
    for y in &r.yearly {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            y.year,
            format_fixed(y.graduated),
            format_fixed(y.halted),
            format_fixed(y.retained)
        );
    }
    out
}
