//! CSV readers and writers for term records and yearly trajectories.
//!
//! Term records: `student_id,year,term,level` with level one of
//! `FR SO JU SE` or `GR` for a graduation record.
//!
//! Trajectories: `student_id,entry_year,states,outcome` where `states` is a
//! dash-separated level list (`FR-FR-SO`) and outcome is `GR`, `HT` or `CEN`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{GradError, Result};
use crate::trajectory::{EnrollmentRecord, Level, Outcome, Standing, Term, Trajectory};

#[derive(Debug, Serialize, Deserialize)]
struct RecordRow {
    student_id: String,
    year: i32,
    term: u8,
    level: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryRow {
    student_id: String,
    entry_year: i32,
    states: String,
    outcome: String,
}

/// Which of the two layouts a header describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvKind {
    Records,
    Trajectories,
}

pub fn detect_kind(header_line: &str) -> Result<CsvKind> {
    let cols: Vec<String> = header_line.split(',').map(|c| c.trim().to_ascii_lowercase()).collect();
    let has = |c: &str| cols.iter().any(|x| x == c);
    if has("term") && has("level") {
        Ok(CsvKind::Records)
    } else if has("states") && has("outcome") {
        Ok(CsvKind::Trajectories)
    } else {
        Err(GradError::Parse(format!(
            "line 1: unrecognised header {header_line:?}; expected student_id,year,term,level or student_id,entry_year,states,outcome"
        )))
    }
}

fn at(line: u64, e: impl std::fmt::Display) -> GradError {
    GradError::Parse(format!("line {line}: {e}"))
}

fn csv_err(e: csv::Error) -> GradError {
    match e.position() {
        Some(p) => at(p.line(), e),
        None => GradError::Parse(e.to_string()),
    }
}

fn rows<R: Read, T: for<'de> Deserialize<'de>>(input: R) -> Result<Vec<(u64, T)>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers().map_err(csv_err)?.clone();
    let mut out = Vec::new();
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record).map_err(csv_err)? {
        let line = record.position().map_or(0, |p| p.line());
        out.push((line, record.deserialize(Some(&headers)).map_err(|e| at(line, e))?));
    }
    Ok(out)
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<EnrollmentRecord>> {
    rows::<R, RecordRow>(input)?
        .into_iter()
        .map(|(line, r)| {
            let term = Term::new(r.year, r.term).map_err(|e| at(line, e))?;
            let standing = if r.level.eq_ignore_ascii_case("GR") {
                Standing::Graduated
            } else {
                Standing::Enrolled(r.level.parse::<Level>().map_err(|e| at(line, e))?)
            };
            Ok(EnrollmentRecord {
                student_id: r.student_id,
                term,
                standing,
            })
        })
        .collect()
}

pub fn write_records<W: Write>(records: &[EnrollmentRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        let level = match r.standing {
            Standing::Enrolled(l) => l.code().to_string(),
            Standing::Graduated => "GR".to_string(),
        };
        w.serialize(RecordRow {
            student_id: r.student_id.clone(),
            year: r.term.year,
            term: r.term.term,
            level,
        })
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| GradError::Parse(e.to_string()))
}

pub fn read_trajectories<R: Read>(input: R) -> Result<Vec<Trajectory>> {
    rows::<R, TrajectoryRow>(input)?
        .into_iter()
        .map(|(line, r)| {
            let states = r
                .states
                .split('-')
                .map(str::parse::<Level>)
                .collect::<Result<Vec<_>>>()
                .map_err(|e| at(line, e))?;
            let outcome: Outcome = r.outcome.parse().map_err(|e| at(line, e))?;
            Trajectory::new(r.student_id, r.entry_year, states, outcome).map_err(|e| at(line, e))
        })
        .collect()
}

pub fn write_trajectories<W: Write>(trajectories: &[Trajectory], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for t in trajectories {
        w.serialize(TrajectoryRow {
            student_id: t.student_id.clone(),
            entry_year: t.entry_year,
            states: t.states.iter().map(|l| l.code()).collect::<Vec<_>>().join("-"),
            outcome: t.outcome.code().to_string(),
        })
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| GradError::Parse(e.to_string()))
}
