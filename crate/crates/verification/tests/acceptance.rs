//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use metapop_cli::suite::{self, CheckOutcome, SuiteOptions};
use metapop_core::chain::{lambda0, mean_g, r0};
use metapop_core::model::build_rate_model;
use metapop_core::threshold::solve_fixed_point;
use metapop_core::RateFamily;
use serde_json::{json, Value};

/// Reference values of the logistic model (b0 = 3, d0 = 1, delta = 3,
/// gamma = 1, nu = 0.5), computed with 30-digit dense solves.
const FROZEN_R0: f64 = 1.125_677_084_595_991_2;
const FROZEN_S_STAR: f64 = 0.437_070_782_691_772_02;
const FROZEN_LAMBDA0: f64 = 0.145_420_013_116_488_57;
const FROZEN_G: [(f64, f64); 3] =
    [(0.5, 0.492_618_084_549_259_8), (1.0, 0.888_537_674_402_364_9), (2.0, 1.528_922_782_168_135_5)];

struct Criterion {
    number: usize,
    passed: bool,
    elapsed: Duration,
    limit: Option<Duration>,
    detail: Value,
}

fn all(checks: &[CheckOutcome]) -> (bool, Value) {
    let passed = checks.iter().all(|c| c.passed);
    let detail = checks.iter().map(|c| json!({ "id": c.id, "passed": c.passed, "detail": c.detail })).collect();
    (passed, Value::Array(detail))
}

fn timed(number: usize, limit_secs: Option<u64>, f: impl FnOnce() -> (bool, Value)) -> Criterion {
    let start = Instant::now();
    let (passed, detail) = f();
    let elapsed = start.elapsed();
    let limit = limit_secs.map(Duration::from_secs);
    let in_time = limit.is_none_or(|l| elapsed <= l);
    Criterion { number, passed: passed && in_time, elapsed, limit, detail }
}

fn frozen_logistic() -> (bool, Value) {
    let m = build_rate_model(RateFamily::LogisticDeath { b0: 3.0, d0: 1.0, delta: 3.0 }, 1.0, 0.5, 1.0).expect("logistic model");
    let r = r0(&m, 1e-12).unwrap_or(f64::NAN);
    let s = solve_fixed_point(&m, 1e-12).map(|rep| rep.s_star).unwrap_or(f64::NAN);
    let l = lambda0(&m, 1e-12).ok().flatten().unwrap_or(f64::NAN);
    let g_err = FROZEN_G.iter().map(|&(x, g)| (mean_g(&m, x, 1e-13).unwrap_or(f64::NAN) - g).abs()).fold(0.0, f64::max);
    let errs = [(r - FROZEN_R0).abs(), (s - FROZEN_S_STAR).abs(), (l - FROZEN_LAMBDA0).abs(), g_err];
    let ok = errs.iter().all(|e| *e < 1e-9);
    (ok, json!({ "r0_error": errs[0], "s_star_error": errs[1], "lambda0_error": errs[2], "g_max_error": errs[3] }))
}

/// The command-line binary built alongside this test in the same target directory.
fn metapop_binary() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let bin = exe.parent()?.parent()?.join(format!("metapop{}", std::env::consts::EXE_SUFFIX));
    bin.is_file().then_some(bin)
}

fn threshold_refusal() -> (bool, Value) {
    let model = format!("{}/../cli/models/unbounded_growth.json", env!("CARGO_MANIFEST_DIR"));
    let Some(bin) = metapop_binary() else {
        return (false, json!({ "error": "metapop binary not built; run the workspace tests" }));
    };
    let out = Command::new(bin).args(["threshold", "--model", &model]).output().expect("binary runs");
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    let ok = out.status.code() == Some(1) && stderr.contains("refusing: no nontrivial equilibrium");
    (ok, json!({ "exit": out.status.code(), "stderr": stderr.trim() }))
}

fn main() -> ExitCode {
    let opts = SuiteOptions::default();
    let mut bounds = None;
    let mut results = vec![
        timed(1, Some(1), || all(&[suite::equilibrium_mean_closed_form()])),
        timed(2, Some(10), || all(&[suite::r0_closed_form(&opts)])),
        timed(3, Some(60), || {
            let (ok, suite_detail) = all(&[suite::threshold_dichotomy(&opts)]);
            let (frozen_ok, frozen) = frozen_logistic();
            (ok && frozen_ok, json!({ "suite": suite_detail, "frozen_reference": frozen }))
        }),
        timed(4, Some(60), || all(&[suite::g_monotone_concave(&opts)])),
        timed(5, None, || all(&[suite::spectral_consistency(&opts)])),
        timed(6, Some(300), || {
            let [conv, bound] = suite::convergence_and_bounds(&opts);
            bounds = Some(bound);
            all(&[conv])
        }),
    ];
    let bound = bounds.take().expect("bounds computed with convergence");
    results.push(timed(7, None, || all(&[bound])));
    results.push(timed(8, Some(300), || all(&[suite::mean_field_agreement(&opts)])));
    results.push(timed(9, None, || all(&[suite::coupling_order(&opts), suite::second_differences(&opts)])));
    results.push(timed(10, None, || all(&[suite::oracle_equivalence(&opts)])));
    results.push(timed(11, None, || {
        let (ok, check) = all(&[suite::no_equilibrium()]);
        let (cli_ok, cli) = threshold_refusal();
        (ok && cli_ok, json!({ "analysis": check, "cli": cli }))
    }));

    let mut failed = 0;
    for c in &results {
        let limit = c.limit.map_or("none".to_string(), |l| format!("{}s", l.as_secs()));
        println!(
            "{} criterion {:>2}  runtime {:.2}s (limit {})  {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.number,
            c.elapsed.as_secs_f64(),
            limit,
            c.detail
        );
        failed += usize::from(!c.passed);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
