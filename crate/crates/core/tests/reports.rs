use gradchain_core::report::{read_sweep_csv, write_sweep_csv};
use gradchain_core::{
    run_experiment, EstimatorSpec, ExperimentConfig, ExperimentReport, KdeConfig, StaggeredConfig, SweepRow,
    TruthConfig, UnobservedPolicy,
};

fn small_config() -> ExperimentConfig {
    let mut config = ExperimentConfig::new(
        TruthConfig::Preset {
            name: "duration-demo".into(),
        },
        60,
        vec![
            EstimatorSpec::Sygr,
            EstimatorSpec::Amc {
                unobserved: UnobservedPolicy::BorrowLowerSubState,
            },
            EstimatorSpec::RumlAmc {
                levels: 2,
                unobserved: UnobservedPolicy::BorrowLowerSubState,
            },
        ],
        17,
    );
    config.replications = 40;
    config.staggered = Some(StaggeredConfig {
        per_year: Some(60),
        years: None,
    });
    config.reference_rate = Some(60.0);
    config.kde = Some(KdeConfig {
        sigma: 1.0,
        grid: None,
    });
    config
}

/// Every number token in the text has exactly six digits after the point.
fn all_numbers_fixed(json: &str, skip_keys: &[&str]) -> Result<(), String> {
    for line in json.lines() {
        let Some((key, value)) = line.split_once(": ") else {
            continue;
        };
        let key = key.trim().trim_matches('"');
        let value = value.trim().trim_end_matches(',');
        if skip_keys.contains(&key) || !value.starts_with(|c: char| c == '-' || c.is_ascii_digit()) {
            continue;
        }
        match value.split_once('.') {
            Some((_, frac)) if frac.len() == 6 => {}
            _ => return Err(format!("{key}: {value}")),
        }
    }
    Ok(())
}

#[test]
fn experiment_report_round_trips_through_json() {
    let outcome = run_experiment(&small_config()).unwrap();
    let report = ExperimentReport::from_outcome(&outcome);
    let text = report.to_json();
    let back = ExperimentReport::from_json(&text).unwrap();
    assert_eq!(back.to_json(), text);
    assert_eq!(back.config_echo, small_config());
    assert_eq!(back.estimators.len(), 3);
    let ruml = &back.estimators[2];
    assert_eq!(ruml.name, "ruml-amc-n2");
    assert_eq!(ruml.yearly.as_ref().map(Vec::len), Some(6));
    assert!(ruml.bias_vs_reference.is_some());
    assert!(back.estimators.iter().all(|e| e.kde.as_ref().is_some_and(|k| !k.is_empty())));
}

#[test]
fn report_floats_use_six_decimals() {
    let outcome = run_experiment(&small_config()).unwrap();
    let text = ExperimentReport::from_outcome(&outcome).to_json();
    let integer_keys = [
        "cohort_size",
        "replications",
        "horizon",
        "seed",
        "per_year",
        "levels",
        "replications_used",
        "skipped",
        "count",
        "year",
    ];
    all_numbers_fixed(&text, &integer_keys).unwrap();
    assert!(text.ends_with("}\n"));
}

#[test]
fn sweep_csv_round_trip() {
    let rows = vec![
        SweepRow {
            axis: "cohort_size".into(),
            value: "50".into(),
            estimator: "sygr".into(),
            mean: 71.08,
            std: 6.327304,
            bias: -0.1174,
            q05: 60.0,
            q95: 82.0,
        },
        SweepRow {
            axis: "levels".into(),
            value: "3".into(),
            estimator: "ml-amc-n3".into(),
            mean: 59.981963,
            std: 0.676374,
            bias: 0.016467,
            q05: 58.908903,
            q95: 61.14361,
        },
    ];
    let mut buf = Vec::new();
    write_sweep_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("axis,value,estimator,mean,std,bias,q05,q95\n"));
    assert!(text.contains("sygr,71.080000,6.327304,-0.117400,60.000000,82.000000"));
    assert_eq!(read_sweep_csv(buf.as_slice()).unwrap(), rows);
}

#[test]
fn sweep_csv_errors_carry_line_numbers() {
    let bad = "axis,value,estimator,mean,std,bias,q05,q95\nx,1,sygr,1,2,3,4,5\nx,2,sygr,oops,2,3,4,5\n";
    let err = read_sweep_csv(bad.as_bytes()).unwrap_err().to_string();
    assert!(err.contains("line 3"), "{err}");
}
