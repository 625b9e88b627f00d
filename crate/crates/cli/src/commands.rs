use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use squareice::estimate::{
    a_n_estimate, diameter_decay, estimate_event, event_row, fmt9, log_fit, renorm_table, to_csv, torus_scan,
    variance_row, variance_scan, EventStats, EVENT_HEADER, ORACLE_FREE_LIMIT, VARIANCE_HEADER,
};
use squareice::exact::{exact_event_prob, free_vertex_count, ratio_f64, transfer_count, Sampler};
use squareice::height::{height_to_json, HeightFunction};
use squareice::lattice::{build_even_box, BoundaryCondition};
use squareice::mcmc::{derive_seed, half_width, minimal_height, run_chain};
use squareice::connect::{Adjacency, EventSpec, LevelPredicate};
use squareice::verify::{
    bijection_suite, cbc_suite, duality_suite, fkg_suite, sampler_suite, verify_all, SuiteReport, VerifyOptions,
};
use squareice::Error;

use crate::config::{Config, Format};

enum Failure {
    /// Invalid config or arguments: exit 2.
    Usage(String),
    /// Failed verification or internal error: exit 1.
    Failed(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        match e {
            Error::TooLarge(_) => Failure::Usage(format!("{e}; `estimate` gives a Monte Carlo answer")),
            Error::InvalidArgument(_) | Error::Unsupported(_) => Failure::Usage(e.to_string()),
            Error::Winding(_) | Error::Corruption(_) => Failure::Failed(e.to_string()),
        }
    }
}

impl From<String> for Failure {
    fn from(m: String) -> Failure {
        Failure::Usage(m)
    }
}

/// Body for the artifact plus a short summary for the status line.
struct Outcome {
    body: String,
    summary: String,
    passed: bool,
}

impl Outcome {
    fn ok(body: String, summary: String) -> Outcome {
        Outcome { body, summary, passed: true }
    }
}

pub fn execute(cfg: &Config) -> ExitCode {
    let command = cfg.command.clone().unwrap_or_default();
    let label = match &cfg.kind {
        Some(k) if command == "scan" || command == "verify" => format!("{command} {k}"),
        _ => command.clone(),
    };
    let result = match command.as_str() {
        "count" => count(cfg),
        "prob" => prob(cfg),
        "sample" => sample(cfg),
        "estimate" => estimate(cfg),
        "scan" => scan(cfg),
        "verify" => verify(cfg),
        other => Err(Failure::Usage(format!("unknown command {other:?}"))),
    };
    let outcome = match result {
        Ok(o) => o,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            return ExitCode::from(2);
        }
        Err(Failure::Failed(m)) => {
            eprintln!("error: {m}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = emit(cfg.output.as_deref(), &outcome.body) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    eprintln!(
        "squareice {label}: {} {} seed={} config={}",
        if outcome.passed { "ok" } else { "FAILED" },
        outcome.summary,
        cfg.seed(),
        cfg.hash()
    );
    if outcome.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

/// Writes to a sibling temp file and renames it over the target.
pub fn write_atomic(path: &Path, body: &str) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp)?;
    f.write_all(body.as_bytes())?;
    f.sync_all()?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

fn emit(path: Option<&Path>, body: &str) -> Result<(), String> {
    match path {
        Some(p) => write_atomic(p, body).map_err(|e| format!("writing {}: {e}", p.display())),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn format_or(cfg: &Config, default: Format) -> Format {
    cfg.format.unwrap_or(default)
}

fn pretty(v: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializes");
    s.push('\n');
    s
}

fn count(cfg: &Config) -> Result<Outcome, Failure> {
    let (d, bc) = cfg.instance()?;
    let total = transfer_count(&d, &bc)?.total;
    let body = match format_or(cfg, Format::Text) {
        Format::Text => format!("{total}\n"),
        Format::Csv => format!("count\n{total}\n"),
        Format::Json => pretty(&json!({ "count": total.to_string() })),
    };
    Ok(Outcome::ok(body, format!("count={total}")))
}

fn prob(cfg: &Config) -> Result<Outcome, Failure> {
    let (d, bc) = cfg.instance()?;
    let ev = cfg.event()?.compile(&d)?;
    let p = exact_event_prob(&d, &bc, |h| ev.eval(h))?;
    let (num, den, x) = (p.numer().to_string(), p.denom().to_string(), ratio_f64(&p));
    let body = match format_or(cfg, Format::Text) {
        Format::Text => format!("{num}/{den}\n"),
        Format::Csv => format!("num,den,p\n{num},{den},{}\n", fmt9(x)),
        Format::Json => pretty(&json!({ "num": num, "den": den, "p": x })),
    };
    Ok(Outcome::ok(body, format!("p={num}/{den}")))
}

fn sample(cfg: &Config) -> Result<Outcome, Failure> {
    let (d, bc) = cfg.instance()?;
    let run = cfg.run_settings()?;
    let samples = cfg.samples.unwrap_or(1).max(1);
    let exact = match cfg.exact {
        Some(e) => e,
        None => run.use_oracle && free_vertex_count(&d, &bc)? <= ORACLE_FREE_LIMIT,
    };
    let hs: Vec<HeightFunction> = if exact {
        let sampler = Sampler::new(&d, &bc)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(run.seed, 0, "sample"));
        (0..samples).map(|_| sampler.sample(&mut rng)).collect()
    } else {
        let w = half_width(&d).max(1) as u64;
        let thin = run.thin.unwrap_or(w * w);
        let chain = run.chain_config(&d, thin * samples, thin);
        let init = minimal_height(&d, &bc)?;
        run_chain(&d, &bc, &init, &chain)?.into_iter().take(samples as usize).collect()
    };
    let body = match format_or(cfg, Format::Json) {
        Format::Text => hs.iter().map(|h| height_to_json(h) + "\n").collect(),
        Format::Json => {
            let docs: Vec<serde_json::Value> =
                hs.iter().map(|h| serde_json::from_str(&height_to_json(h)).expect("valid JSON")).collect();
            pretty(&docs)
        }
        Format::Csv => {
            let mut rows = Vec::new();
            for (i, h) in hs.iter().enumerate() {
                for (v, x) in d.vertices().iter().zip(h.values()) {
                    rows.push(vec![i.to_string(), v.x.to_string(), v.y.to_string(), x.to_string()]);
                }
            }
            to_csv(&["sample", "x", "y", "h"], &rows)
        }
    };
    let how = if exact { "exact" } else { "mcmc" };
    Ok(Outcome::ok(body, format!("{} {how} samples", hs.len())))
}

fn event_body(cfg: &Config, rows: &[(String, EventStats)], extra: Option<serde_json::Value>) -> String {
    match format_or(cfg, Format::Csv) {
        Format::Json => {
            let rows: Vec<_> = rows.iter().map(|(p, s)| json!({ "param": p, "stats": s })).collect();
            match extra {
                Some(x) => pretty(&json!({ "rows": rows, "extra": x })),
                None => pretty(&json!({ "rows": rows })),
            }
        }
        _ => to_csv(&EVENT_HEADER, &rows.iter().map(|(p, s)| event_row(p, s)).collect::<Vec<_>>()),
    }
}

fn estimate(cfg: &Config) -> Result<Outcome, Failure> {
    let (d, bc) = cfg.instance()?;
    let s = estimate_event(&d, &bc, cfg.event()?, &cfg.run_settings()?)?;
    let summary = match &s.exact {
        Some(f) => format!("p={}/{} (exact)", f.num, f.den),
        None => format!("p={} sigma={} rhat={}", fmt9(s.p_hat), fmt9(s.sigma()), fmt9(s.rhat)),
    };
    Ok(Outcome::ok(event_body(cfg, &[(String::new(), s)], None), summary))
}

fn sizes(cfg: &Config, default: &[i32]) -> Vec<i32> {
    cfg.n.clone().unwrap_or_else(|| default.to_vec())
}

fn scan(cfg: &Config) -> Result<Outcome, Failure> {
    let run = cfg.run_settings()?;
    match cfg.kind.as_deref() {
        Some("variance") => {
            let rows = variance_scan(&sizes(cfg, &[8, 16, 32, 64, 128]), &run)?;
            let fit = log_fit(&rows);
            let body = match format_or(cfg, Format::Csv) {
                Format::Json => pretty(&json!({ "rows": rows, "fit": fit })),
                _ => to_csv(&VARIANCE_HEADER, &rows.iter().map(variance_row).collect::<Vec<_>>()),
            };
            let summary = fit.map(|f| format!("slope vs ln n = {}", fmt9(f.slope))).unwrap_or_default();
            Ok(Outcome::ok(body, format!("{} sizes {summary}", rows.len())))
        }
        Some("crossing") => {
            let level = cfg.level.unwrap_or(1);
            let mut rows = Vec::new();
            for n in sizes(cfg, &[16, 32, 64]) {
                let d = std::sync::Arc::new(build_even_box(2 * n)?);
                let bc = BoundaryCondition::zero(&d)?;
                let spec = EventSpec::rect_crossing(-n, n, -n, n, false, LevelPredicate::at_least(level), Adjacency::NN);
                rows.push((n.to_string(), estimate_event(&d, &bc, &spec, &run)?));
            }
            let n = rows.len();
            Ok(Outcome::ok(event_body(cfg, &rows, None), format!("{n} sizes level {level}")))
        }
        Some("an") => {
            let stats: Vec<(i32, EventStats)> =
                sizes(cfg, &[4, 8, 16]).into_iter().map(|n| Ok((n, a_n_estimate(n, &run)?))).collect::<Result<_, Error>>()?;
            let table = renorm_table(&stats);
            let rows: Vec<(String, EventStats)> = stats.into_iter().map(|(n, s)| (n.to_string(), s)).collect();
            let ratios = table.iter().map(|r| format!("{}:{}", r.n, fmt9(r.ratio))).collect::<Vec<_>>().join(" ");
            let body = event_body(cfg, &rows, Some(json!({ "renorm": table })));
            Ok(Outcome::ok(body, format!("a_2n/a_n^2 {ratios}")))
        }
        Some("diameter") => {
            let n = cfg.n.as_ref().and_then(|v| v.first().copied()).unwrap_or(8);
            let ks = cfg.k.clone().unwrap_or_else(|| (1..=6).collect());
            let r = diameter_decay(n, cfg.r.unwrap_or(2), &ks, &run)?;
            let rows: Vec<(String, EventStats)> = r.rows.iter().map(|row| (row.k.to_string(), row.stats.clone())).collect();
            let slope = r.slope.map(fmt9).unwrap_or_else(|| "none".into());
            Ok(Outcome::ok(event_body(cfg, &rows, Some(json!({ "slope": r.slope }))), format!("slope of ln p vs k = {slope}")))
        }
        Some("torus") => {
            let n = cfg.n.as_ref().and_then(|v| v.first().copied()).unwrap_or(64);
            if n < 2 {
                return Err(Failure::Usage("torus period must be at least 2".into()));
            }
            let ks = cfg.k.clone().unwrap_or_else(|| vec![1, 2, 3, 4, 6, 8, 12, 16, 24, 32]);
            let s = torus_scan(n as u32, &ks, &run)?;
            let body = match format_or(cfg, Format::Csv) {
                Format::Json => pretty(&s),
                _ => to_csv(&VARIANCE_HEADER, &s.rows.iter().map(variance_row).collect::<Vec<_>>()),
            };
            let summary = match &s.fit {
                Some(f) => format!("slope vs ln l1 = {} err {}", fmt9(f.slope), f.slope_err.map(fmt9).unwrap_or_default()),
                None => "no fit".into(),
            };
            Ok(Outcome::ok(body, summary))
        }
        Some(other) => Err(Failure::Usage(format!("unknown scan {other:?}; expected variance, crossing, an, diameter or torus"))),
        None => Err(Failure::Usage("scan needs a kind".into())),
    }
}

fn verify(cfg: &Config) -> Result<Outcome, Failure> {
    let seed = cfg.seed();
    let d = VerifyOptions::default();
    let o = VerifyOptions {
        seed,
        max_size: cfg.max_size.unwrap_or(d.max_size),
        bijection_samples: cfg.samples.unwrap_or(d.bijection_samples),
        sampler_samples: cfg.samples.unwrap_or(d.sampler_samples),
        fault: cfg.inject_fault.unwrap_or(false),
    };
    let reports: Vec<SuiteReport> = match cfg.kind.as_deref() {
        Some("duality") => vec![duality_suite(o.max_size, o.fault)?],
        Some("fkg") => vec![fkg_suite(seed)?],
        Some("cbc") => vec![cbc_suite(seed)?],
        Some("bijection") => vec![bijection_suite(seed, o.bijection_samples)?],
        Some("sampler") => vec![sampler_suite(seed, o.sampler_samples)?],
        Some("all") => verify_all(&o)?,
        Some(other) => return Err(Failure::Usage(format!("unknown suite {other:?}"))),
        None => return Err(Failure::Usage("verify needs a suite".into())),
    };
    let dir = cfg.dump_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let mut dumps = Vec::new();
    for r in &reports {
        if let Some(ce) = &r.counterexample {
            let path = dir.join(format!("counterexample-{}.json", r.name));
            write_atomic(&path, &pretty(ce)).map_err(|e| Failure::Failed(format!("writing {}: {e}", path.display())))?;
            dumps.push(path.display().to_string());
        }
    }
    let body = match format_or(cfg, Format::Text) {
        Format::Json => pretty(&reports),
        Format::Csv => to_csv(
            &["suite", "checks", "failures", "seconds", "passed"],
            &reports
                .iter()
                .map(|r| vec![r.name.clone(), r.checks.to_string(), r.failures.to_string(), fmt9(r.seconds), r.passed().to_string()])
                .collect::<Vec<_>>(),
        ),
        Format::Text => reports
            .iter()
            .map(|r| {
                let pct = if r.checks == 0 { 0.0 } else { 100.0 * (r.checks - r.failures) as f64 / r.checks as f64 };
                let mut line = format!(
                    "{} {}: {} checks, {} failures ({pct:.1}% pass)",
                    if r.passed() { "PASS" } else { "FAIL" },
                    r.name,
                    r.checks,
                    r.failures
                );
                if !r.details.is_empty() {
                    line.push_str(&format!(" [{}]", r.details.join("; ")));
                }
                line + "\n"
            })
            .collect(),
    };
    let passed = reports.iter().all(SuiteReport::passed);
    let failures: u64 = reports.iter().map(|r| r.failures).sum();
    let mut summary = format!("{} suites, {failures} failures", reports.len());
    if !dumps.is_empty() {
        summary.push_str(&format!(", counterexamples in {}", dumps.join(" ")));
    }
    Ok(Outcome { body, summary, passed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = std::env::temp_dir().join(format!("squareice-cli-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("out.csv");
        write_atomic(&p, "a\n").unwrap();
        write_atomic(&p, "b\n").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "b\n");
        assert_eq!(fs::read_dir(&dir).unwrap().count(), 1);
        fs::remove_dir_all(&dir).unwrap();
    }
}
