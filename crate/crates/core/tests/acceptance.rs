//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero if any fails.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use squareice::connect::{Adjacency, EventSpec, LevelPredicate};
use squareice::estimate::{
    a_n_estimate, estimate_event, renorm_table, torus_scan, variance_scan, EventStats, RunSettings,
};
use squareice::lattice::{build_even_box, build_split_square, BoundaryCondition};
use squareice::mcmc::half_width;
use squareice::verify::{annulus_suite, bijection_suite, cbc_suite, duality_suite, fkg_suite, sampler_suite, SuiteReport};

const SEED: u64 = 20240601;

fn rhat_ok(r: f64) -> bool {
    (0.9..=1.1).contains(&r)
}

fn suite_line(reports: &[SuiteReport]) -> (bool, String) {
    let ok = reports.iter().all(SuiteReport::passed);
    let text = reports
        .iter()
        .map(|r| format!("{} {} checks {} failures {:.1}s", r.name, r.checks, r.failures, r.seconds))
        .collect::<Vec<_>>()
        .join("; ");
    (ok, text)
}

fn c1() -> (bool, String) {
    let r = duality_suite(4, false).unwrap();
    let (ok, text) = suite_line(std::slice::from_ref(&r));
    (ok && r.seconds < 120.0, text)
}

fn c2() -> (bool, String) {
    suite_line(&[annulus_suite().unwrap()])
}

fn c3() -> (bool, String) {
    suite_line(&[fkg_suite(SEED).unwrap(), cbc_suite(SEED).unwrap()])
}

fn c4() -> (bool, String) {
    suite_line(&[bijection_suite(SEED, 1000).unwrap()])
}

fn c5() -> (bool, String) {
    let r = sampler_suite(SEED, 100_000).unwrap();
    let (ok, mut text) = suite_line(std::slice::from_ref(&r));
    text.push_str(&format!(" [{}]", r.details.join(", ")));
    (ok, text)
}

fn c6() -> (bool, String) {
    let (q, bc) = build_split_square(3).unwrap();
    let spec = EventSpec::crossing(&q.rotated(), LevelPredicate::at_least(2), Adjacency::Cross);
    let exact = estimate_event(&q.domain, &bc, &spec, &RunSettings::with_seed(SEED)).unwrap();
    let f = exact.exact.clone().expect("instance within the oracle limit");
    let (num, den): (u128, u128) = (f.num.parse().unwrap(), f.den.parse().unwrap());
    let run = RunSettings { seed: SEED, use_oracle: false, sweeps: Some(50_000), thin: Some(2), ..RunSettings::default() };
    let mc = estimate_event(&q.domain, &bc, &spec, &run).unwrap();
    let ok = 2 * num >= den && (mc.p_hat - exact.p_hat).abs() <= 3.0 * mc.sigma() && rhat_ok(mc.rhat);
    (ok, format!("exact {num}/{den}, mc {:.4} ± {:.4} (rhat {:.3})", mc.p_hat, mc.sigma(), mc.rhat))
}

fn c7() -> (bool, String) {
    let t = Instant::now();
    let rows = variance_scan(&[8, 16, 32, 64, 128], &RunSettings::with_seed(SEED)).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let increasing = rows.windows(2).all(|w| {
        let diff = w[1].variance - w[0].variance;
        diff > 2.0 * w[0].std_err.hypot(w[1].std_err)
    });
    let incs: Vec<f64> = rows.windows(2).map(|w| w[1].variance - w[0].variance).collect();
    let mean = incs.iter().sum::<f64>() / incs.len() as f64;
    let balanced = incs.iter().all(|d| (d - mean).abs() <= 0.5 * mean);
    let converged = rows.iter().all(|r| rhat_ok(r.rhat));
    let vals = rows.iter().map(|r| format!("{}:{:.4}±{:.4}", r.n, r.variance, r.std_err)).collect::<Vec<_>>().join(" ");
    let incs_s = incs.iter().map(|d| format!("{d:.4}")).collect::<Vec<_>>().join(" ");
    (
        increasing && balanced && converged && secs <= 1800.0,
        format!("var {vals}; increments {incs_s}; {secs:.0}s"),
    )
}

fn event_text(n: i32, s: &EventStats) -> String {
    format!("{n}:{:.4}±{:.4} (rhat {:.3})", s.p_hat, s.sigma(), s.rhat)
}

fn c8() -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for n in [16, 32, 64] {
        let d = Arc::new(build_even_box(2 * n).unwrap());
        let bc = BoundaryCondition::zero(&d).unwrap();
        let spec = EventSpec::rect_crossing(-n, n, -n, n, false, LevelPredicate::at_least(1), Adjacency::NN);
        let w = half_width(&d) as u64;
        let sweeps = 80 * 129 * 129 * (64 / n as u64).pow(2);
        let run = RunSettings { seed: SEED, chains: 4, sweeps: Some(sweeps), thin: Some(w), ..RunSettings::default() };
        let s = estimate_event(&d, &bc, &spec, &run).unwrap();
        ok &= s.p_hat - 3.0 * s.sigma() >= 0.05 && s.p_hat + 3.0 * s.sigma() <= 0.95 && rhat_ok(s.rhat);
        parts.push(event_text(n, &s));
    }
    (ok, parts.join(" "))
}

fn c9() -> (bool, String) {
    let stats: Vec<(i32, EventStats)> =
        [4, 8, 16].iter().map(|&n| (n, a_n_estimate(n, &RunSettings::with_seed(SEED)).unwrap())).collect();
    let ok = stats.iter().all(|(_, s)| s.p_hat + 3.0 * s.sigma() <= 0.95 && rhat_ok(s.rhat));
    let mut text = stats.iter().map(|(n, s)| event_text(*n, s)).collect::<Vec<_>>().join(" ");
    for r in renorm_table(&stats) {
        text.push_str(&format!("; a_{}/a_{}^2 = {:.4}", 2 * r.n, r.n, r.ratio));
    }
    (ok, text)
}

fn c10() -> (bool, String) {
    let scan = torus_scan(64, &[1, 2, 3, 4, 6, 8, 12, 16, 24, 32], &RunSettings::with_seed(SEED)).unwrap();
    let fit = scan.fit.expect("fit over distinct pairs");
    let err = fit.slope_err.unwrap_or(f64::INFINITY);
    let converged = scan.rows.iter().all(|r| rhat_ok(r.rhat));
    (fit.slope - 2.0 * err > 0.0 && converged, format!("slope {:.4} ± {:.4}", fit.slope, err))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> (bool, String)); 10] = [
        ("duality", c1),
        ("annulus duality", c2),
        ("fkg/cbc", c3),
        ("bijection", c4),
        ("sampler", c5),
        ("split square bound", c6),
        ("log variance", c7),
        ("crossing plateau", c8),
        ("a_n", c9),
        ("torus variance", c10),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (ok, text) = run();
        failed += !ok as usize;
        println!("{} {:>2} {name}: {text} [{:.1}s]", if ok { "PASS" } else { "FAIL" }, i + 1, t.elapsed().as_secs_f64());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
