//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Tolerances are fixed below.

use std::process::{Command, ExitCode};
use std::time::Instant;

use gradchain_core::{
    build_chain, run_experiment, AbsorbingChain, EstimatorSpec, ExperimentConfig, ExperimentOutcome, Matrix, Preset,
    Role, SampleStats, StaggeredConfig, State, StateId, StateSpace, TruthConfig, UnobservedPolicy,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REPLICATIONS: usize = 10_000;
const THETA: f64 = 0.712;

// criterion 1
const SYGR_MEAN_TOL: f64 = 0.3;
const SYGR_STD_TOL: f64 = 0.3;
const SYGR_GRID: [(usize, f64); 4] = [(50, 6.36), (500, 2.04), (5000, 0.64), (10_000, 0.45)];
// criterion 2
const BINOMIAL_STD_REL_TOL: f64 = 0.05;
// criterion 3
const DESK_CHAINS: usize = 25;
const DESK_PATHS: usize = 200_000;
const SIGMAS: f64 = 3.0;
const POWER_LIMIT_TOL: f64 = 1e-6;
const INVERSE_RESIDUAL_TOL: f64 = 1e-9;
// criterion 4
const AMC_RATIO_TARGET: f64 = 10.0;
const AMC_RATIO_REL_TOL: f64 = 0.20;
const AMC_STD_50: (f64, f64) = (6.30, 1.0);
const AMC_STD_5000: (f64, f64) = (0.62, 0.10);
// criterion 5
const BIAS_N1_MIN: f64 = 1.0;
const BIAS_N3_MAX: f64 = 0.5;
// criterion 6
const RUML_RATIO_RANGE: (f64, f64) = (0.45, 0.70);
// criterion 8
const ROLLING_TARGETS: [(usize, f64); 2] = [(2, 4.6), (3, 3.7)];
const ROLLING_TOL: f64 = 0.3;
// criterion 9
const SUM_TOL: f64 = 1e-12;
const LIMIT_TOL: f64 = 1e-6;
const LIMIT_HORIZON: u32 = 600;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn run(config: &ExperimentConfig) -> ExperimentOutcome {
    run_experiment(config).expect("experiment runs")
}

fn stats(out: &ExperimentOutcome, name: &str) -> SampleStats {
    out.estimator(name)
        .unwrap_or_else(|| panic!("no estimator {name}"))
        .stats()
        .expect("enough replications")
}

/// `s_a - s_b` exceeds twice the combined standard error of the two stds.
fn clearly_smaller(b: &SampleStats, a: &SampleStats) -> bool {
    let se = (a.std_error_of_std().powi(2) + b.std_error_of_std().powi(2)).sqrt();
    a.std - b.std > 2.0 * se
}

fn binomial_runs() -> Vec<(usize, f64, SampleStats)> {
    SYGR_GRID
        .iter()
        .map(|&(n, target)| {
            let mut cfg = ExperimentConfig::new(TruthConfig::Binomial { theta: THETA }, n, vec![EstimatorSpec::Sygr], 2008);
            cfg.replications = REPLICATIONS;
            (n, target, stats(&run(&cfg), "sygr"))
        })
        .collect()
}

fn c1(runs: &[(usize, f64, SampleStats)]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for (n, target, s) in runs {
        ok &= (s.mean - 100.0 * THETA).abs() <= SYGR_MEAN_TOL && (s.std - target).abs() <= SYGR_STD_TOL;
        parts.push(format!("N={n} mean {:.3} std {:.3} (target {target})", s.mean, s.std));
    }
    verdict(ok, parts.join("; "))
}

fn c2(runs: &[(usize, f64, SampleStats)]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for (n, _, s) in runs {
        let law = 100.0 * (THETA * (1.0 - THETA) / *n as f64).sqrt();
        let rel = (s.std - law).abs() / law;
        ok &= rel <= BINOMIAL_STD_REL_TOL;
        parts.push(format!("N={n} std {:.4} law {:.4} rel {:.3}", s.std, law, rel));
    }
    verdict(ok, parts.join("; "))
}

/// A random chain with 2 to 8 transient states and one or two absorbing
/// states. Every transient row sends at least 10% to absorption.
fn desk_chain(rng: &mut ChaCha8Rng) -> AbsorbingChain {
    let t = rng.random_range(2..=8);
    let a = rng.random_range(1..=2);
    let mut states: Vec<State> = (0..t).map(|i| State::new(format!("T{i}"), Role::Transient)).collect();
    if a == 2 {
        states.push(State::new("H", Role::Halt));
    }
    states.push(State::new("G", Role::Graduate));
    let n = t + a;
    let mut rows = vec![vec![0.0; n]; n];
    for (i, row) in rows.iter_mut().enumerate().take(t) {
        let absorbed = rng.random_range(0.1..0.7);
        let mut w: Vec<f64> = (0..t).map(|_| if rng.random_bool(0.6) { rng.random::<f64>() } else { 0.0 }).collect();
        let total: f64 = w.iter().sum();
        if total == 0.0 {
            w[(i + 1) % t] = 1.0;
        }
        let total: f64 = w.iter().sum();
        for j in 0..t {
            row[j] = (1.0 - absorbed) * w[j] / total;
        }
        let split = rng.random::<f64>();
        if a == 2 {
            row[t] = absorbed * split;
            row[t + 1] = absorbed * (1.0 - split);
        } else {
            row[t] = absorbed;
        }
    }
    for (k, row) in rows.iter_mut().enumerate().skip(t) {
        row[k] = 1.0;
    }
    build_chain(StateSpace::new(states).unwrap(), &Matrix::from_rows(&rows)).expect("desk chain is valid")
}

/// Walks straight off the matrix rows, independent of the library sampler.
fn simulate_paths(chain: &AbsorbingChain, paths: usize, rng: &mut ChaCha8Rng) -> (Vec<u64>, f64, f64) {
    let p = chain.full_matrix().to_rows();
    let t = chain.space().n_transient();
    let mut hits = vec![0u64; p.len() - t];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..paths {
        let mut s = 0;
        let mut steps = 0u64;
        while s < t {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut next = p.len() - 1;
            for (j, &x) in p[s].iter().enumerate() {
                acc += x;
                if u < acc {
                    next = j;
                    break;
                }
            }
            s = next;
            steps += 1;
        }
        hits[s - t] += 1;
        sum += steps as f64;
        sum_sq += (steps * steps) as f64;
    }
    let m = paths as f64;
    let mean = sum / m;
    let sd = ((sum_sq - m * mean * mean) / (m - 1.0)).sqrt();
    (hits, mean, sd)
}

fn c3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_z, mut worst_pow, mut worst_res) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..DESK_CHAINS {
        let chain = desk_chain(&mut rng);
        let t = chain.space().n_transient();
        let summary = chain.absorption_summary().unwrap();
        let (hits, mean, sd) = simulate_paths(&chain, DESK_PATHS, &mut rng);
        let m = DESK_PATHS as f64;
        for (k, &h) in hits.iter().enumerate() {
            let b = summary.b[(0, k)];
            let se = (b * (1.0 - b) / m).sqrt();
            worst_z = worst_z.max((h as f64 / m - b).abs() / se);
        }
        worst_z = worst_z.max((mean - summary.u[0]).abs() / (sd / m.sqrt()));
        let limit = chain.n_step(256);
        for i in 0..t {
            for k in 0..summary.b.cols() {
                worst_pow = worst_pow.max((limit[(i, t + k)] - summary.b[(i, k)]).abs());
            }
        }
        let f = chain.fundamental_matrix().unwrap();
        let i_minus_q = Matrix::identity(t).sub(chain.q());
        worst_res = worst_res.max(f.matmul(&i_minus_q).max_abs_diff(&Matrix::identity(t)));
    }
    verdict(
        worst_z <= SIGMAS && worst_pow <= POWER_LIMIT_TOL && worst_res < INVERSE_RESIDUAL_TOL,
        format!(
            "{DESK_CHAINS} chains: worst MC deviation {worst_z:.2} sigma, |P^256 - B| {worst_pow:.1e}, |F(I-Q) - I| {worst_res:.1e}"
        ),
    )
}

fn c4() -> Verdict {
    let sizes = [50usize, 5000];
    let mut stds = Vec::new();
    let mut skipped = Vec::new();
    let mut true_rate = 0.0;
    for n in sizes {
        let mut cfg = ExperimentConfig::new(
            TruthConfig::Preset { name: Preset::Ucf2008Like.name().into() },
            n,
            vec![EstimatorSpec::Amc { unobserved: UnobservedPolicy::Error }],
            2009,
        );
        cfg.replications = REPLICATIONS;
        let out = run(&cfg);
        true_rate = out.true_rate;
        stds.push(stats(&out, "amc").std);
        skipped.push(out.estimators[0].skipped);
    }
    let ratio = stds[0] / stds[1];
    let ok = (ratio - AMC_RATIO_TARGET).abs() <= AMC_RATIO_REL_TOL * AMC_RATIO_TARGET
        && (stds[0] - AMC_STD_50.0).abs() <= AMC_STD_50.1
        && (stds[1] - AMC_STD_5000.0).abs() <= AMC_STD_5000.1;
    verdict(
        ok,
        format!(
            "truth {true_rate:.3}; std N=50 {:.3} (target 6.30), N=5000 {:.3} (target 0.62), ratio {ratio:.2}; skipped {:?}",
            stds[0], stds[1], skipped
        ),
    )
}

fn duration_truth() -> TruthConfig {
    TruthConfig::Preset { name: Preset::DurationDemo.name().into() }
}

fn chain_estimators(ruml: bool) -> Vec<EstimatorSpec> {
    (1..=3)
        .map(|levels| {
            let unobserved = UnobservedPolicy::BorrowLowerSubState;
            if ruml {
                EstimatorSpec::RumlAmc { levels, unobserved }
            } else {
                EstimatorSpec::MlAmc { levels, unobserved }
            }
        })
        .collect()
}

fn c5() -> Verdict {
    let mut cfg = ExperimentConfig::new(duration_truth(), 5000, chain_estimators(false), 2010);
    cfg.replications = REPLICATIONS;
    let out = run(&cfg);
    let bias: Vec<f64> = (1..=3).map(|n| stats(&out, &format!("ml-amc-n{n}")).mean - out.true_rate).collect();
    let ok = bias[0].abs() > BIAS_N1_MIN && bias[2].abs() < BIAS_N3_MAX && bias[1].abs() < bias[0].abs();
    verdict(
        ok,
        format!(
            "truth {:.3}; bias n=1 {:+.3}, n=2 {:+.3}, n=3 {:+.3}",
            out.true_rate, bias[0], bias[1], bias[2]
        ),
    )
}

fn staggered(per_year: usize) -> Option<StaggeredConfig> {
    Some(StaggeredConfig {
        per_year: Some(per_year),
        years: Some(6),
    })
}

fn c6() -> Verdict {
    let mut cfg = ExperimentConfig::new(
        TruthConfig::Preset { name: Preset::Ucf2008Like.name().into() },
        50,
        vec![EstimatorSpec::RumlAmc { levels: 1, unobserved: UnobservedPolicy::Error }],
        2011,
    );
    cfg.replications = REPLICATIONS;
    cfg.staggered = staggered(50);
    let out = run(&cfg);
    let years = out.estimators[0].year_stats().unwrap().unwrap();
    let monotone = years.windows(2).all(|w| clearly_smaller(&w[1], &w[0]));
    let ratio = years[5].std / years[0].std;
    let ok = monotone && (RUML_RATIO_RANGE.0..=RUML_RATIO_RANGE.1).contains(&ratio);
    let series: Vec<String> = years.iter().map(|s| format!("{:.3}", s.std)).collect();
    verdict(
        ok,
        format!(
            "yearly std [{}] (target 6.2 .. 3.4), 2-SE monotone {monotone}, year6/year1 {ratio:.3}; skipped {}",
            series.join(", "),
            out.estimators[0].skipped
        ),
    )
}

fn c7() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for per_year in [50usize, 250] {
        let mut cfg = ExperimentConfig::new(duration_truth(), per_year, chain_estimators(true), 2012);
        cfg.replications = REPLICATIONS;
        cfg.staggered = staggered(per_year);
        let out = run(&cfg);
        let s: Vec<SampleStats> = (1..=3).map(|n| stats(&out, &format!("ruml-amc-n{n}"))).collect();
        let totals: Vec<f64> = s.iter().map(|x| (x.mean - out.true_rate).abs() + x.std).collect();
        let best = (0..3).min_by(|&a, &b| totals[a].total_cmp(&totals[b])).unwrap() + 1;
        let intermediate = best == 2;
        ok &= intermediate;
        if per_year == 50 {
            let ordered = clearly_smaller(&s[0], &s[1]) && clearly_smaller(&s[1], &s[2]);
            ok &= ordered;
            parts.push(format!(
                "N={per_year}/yr std {:.3} < {:.3} < {:.3} (2-SE {ordered})",
                s[0].std, s[1].std, s[2].std
            ));
        }
        parts.push(format!(
            "N={per_year}/yr total {:.3}, {:.3}, {:.3} (min at n={best})",
            totals[0], totals[1], totals[2]
        ));
    }
    verdict(ok, parts.join("; "))
}

fn c8() -> Verdict {
    let estimators = ROLLING_TARGETS
        .iter()
        .map(|&(k, _)| EstimatorSpec::RollingSygr { cohorts: k })
        .collect();
    let mut cfg = ExperimentConfig::new(TruthConfig::Binomial { theta: THETA }, 50, estimators, 2013);
    cfg.replications = REPLICATIONS;
    let out = run(&cfg);
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, target) in ROLLING_TARGETS {
        let s = stats(&out, &format!("rolling-sygr-{k}"));
        ok &= (s.std - target).abs() <= ROLLING_TOL;
        parts.push(format!("{k} cohorts std {:.3} (target {target})", s.std));
    }
    verdict(ok, parts.join("; "))
}

fn c9() -> Verdict {
    let mut chains: Vec<(AbsorbingChain, StateId)> = Vec::new();
    let ucf = Preset::Ucf2008Like.chain();
    for label in ["START", "SO1", "JU1"] {
        let id = ucf.space().index_of(label).unwrap();
        chains.push((ucf.clone(), id));
    }
    chains.push((Preset::DurationDemo.chain(), StateId(0)));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..DESK_CHAINS {
        chains.push((desk_chain(&mut rng), StateId(0)));
    }
    let (mut worst_sum, mut worst_limit, mut monotone) = (0.0f64, 0.0f64, true);
    for (chain, start) in &chains {
        let series = chain.absorption_by_step(*start, LIMIT_HORIZON).unwrap();
        for w in series.windows(2) {
            monotone &= w[1].grad >= w[0].grad;
        }
        for s in &series {
            worst_sum = worst_sum.max((s.grad + s.halt + s.retention - 1.0).abs());
        }
        let b = chain.absorption_summary().unwrap().b;
        let g = chain.space().graduate().unwrap().0 - chain.space().n_transient();
        worst_limit = worst_limit.max((series.last().unwrap().grad - b[(start.0, g)]).abs());
    }
    verdict(
        worst_sum <= SUM_TOL && monotone && worst_limit <= LIMIT_TOL,
        format!(
            "{} chain/start pairs: |grad+halt+retention-1| {worst_sum:.1e}, grad nondecreasing {monotone}, |limit - B| {worst_limit:.1e}",
            chains.len()
        ),
    )
}

fn cli(args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_gradchain"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn c10() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.json");
    std::fs::write(
        &config,
        r#"{
  "truth": {"kind": "preset", "name": "duration-demo"},
  "cohort_size": 60,
  "replications": 400,
  "estimators": [
    {"kind": "sygr"},
    {"kind": "ml-amc", "levels": 2, "unobserved": "borrow-lower-sub-state"},
    {"kind": "ruml-amc", "levels": 1}
  ],
  "kde": {"sigma": 1.0}
}"#,
    )
    .unwrap();
    let config = config.to_str().unwrap();
    let invocations: [Vec<&str>; 3] = [
        vec!["simulate", "--config", config, "--seed", "77"],
        vec!["sweep", "--config", config, "--seed", "77", "--cohort-sizes", "40,80"],
        vec!["sweep", "--config", config, "--seed", "77", "--levels", "1,3", "--format", "json"],
    ];
    let mut identical = 0;
    for inv in &invocations {
        let outputs: Vec<Vec<u8>> = ["1", "3", "8"]
            .iter()
            .map(|w| {
                let mut a = inv.clone();
                a.extend(["--workers", w]);
                cli(&a)
            })
            .collect();
        if outputs.windows(2).all(|w| w[0] == w[1]) && !outputs[0].is_empty() {
            identical += 1;
        }
    }
    verdict(
        identical == invocations.len(),
        format!("{identical}/{} invocations byte-identical across --workers 1, 3, 8", invocations.len()),
    )
}

type Check<'a> = (&'static str, Box<dyn Fn() -> Verdict + 'a>);

fn main() -> ExitCode {
    let started = Instant::now();
    let runs = binomial_runs();
    let criteria: Vec<Check<'_>> = vec![
        ("SYGR sensitivity", Box::new(|| c1(&runs))),
        ("binomial std law", Box::new(|| c2(&runs))),
        ("chain-math oracles", Box::new(c3)),
        ("AMC dispersion trend", Box::new(c4)),
        ("bias elimination with duration sub-states", Box::new(c5)),
        ("RUML variance reduction", Box::new(c6)),
        ("complexity vs variance", Box::new(c7)),
        ("rolling SYGR", Box::new(c8)),
        ("yearly absorption coherence", Box::new(c9)),
        ("CLI determinism across workers", Box::new(c10)),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let v = check();
        failures += usize::from(!v.pass);
        println!(
            "criterion {:>2} {} {name}: {} [{:.1}s]",
            i + 1,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {}/{} passed in {:.1}s",
        criteria.len() - failures,
        criteria.len(),
        started.elapsed().as_secs_f64()
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
