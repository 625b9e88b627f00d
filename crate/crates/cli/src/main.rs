mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Config, Format};
use squareice::mcmc::ScanOrder;

#[derive(Parser, Debug)]
#[command(name = "squareice", version, about = "Square-ice height functions: exact counts, sampling, estimators and checks")]
struct Cli {
    #[command(flatten)]
    common: Common,
    /// Taken from the config file's "command" key when omitted.
    #[command(subcommand)]
    cmd: Option<Cmd>,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// JSON config file; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    chains: Option<usize>,
    /// Sweeps per chain after burn-in.
    #[arg(long, global = true)]
    sweeps: Option<u64>,
    #[arg(long, global = true)]
    burn_in: Option<u64>,
    #[arg(long, global = true)]
    thin: Option<u64>,
    #[arg(long, global = true, value_parser = parse_scan)]
    scan: Option<ScanOrder>,
    #[arg(long, global = true, env = "SQUAREICE_THREADS")]
    threads: Option<usize>,
    /// Always sample, even when the exact oracle applies.
    #[arg(long, global = true)]
    no_oracle: bool,
    /// Output file, written atomically; stdout when absent.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum FormatArg {
    Text,
    Csv,
    Json,
}

fn parse_scan(s: &str) -> Result<ScanOrder, String> {
    s.parse().map_err(|e: squareice::Error| e.to_string())
}

#[derive(Args, Debug, Default)]
struct InstanceArg {
    /// Named instance (single-vertex, even-box:N, even-rect:A,B, split-square:N, mixed-box:W,N, strip:N,M,G,
    /// torus:N), inline JSON, or @file.
    #[arg(long, short)]
    instance: Option<String>,
}

#[derive(Args, Debug, Default)]
struct EventArg {
    /// Event as JSON, or @file.
    #[arg(long, short)]
    event: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Exact number of height functions.
    Count(InstanceArg),
    /// Exact probability of an event.
    Prob {
        #[command(flatten)]
        instance: InstanceArg,
        #[command(flatten)]
        event: EventArg,
    },
    /// Draw height functions, exactly when the oracle applies, else by heat-bath chains.
    Sample {
        #[command(flatten)]
        instance: InstanceArg,
        #[arg(long)]
        samples: Option<u64>,
        /// Force exact sampling.
        #[arg(long)]
        exact: bool,
    },
    /// Probability of an event: exact for small instances, Monte Carlo otherwise.
    Estimate {
        #[command(flatten)]
        instance: InstanceArg,
        #[command(flatten)]
        event: EventArg,
    },
    /// Estimator scans over system sizes or separations.
    Scan {
        #[command(subcommand)]
        kind: ScanCmd,
    },
    /// Verification suites.
    Verify {
        #[command(subcommand)]
        kind: VerifyCmd,
        /// Largest rectangle side in the duality grid.
        #[arg(long, global = true)]
        max_size: Option<i32>,
        /// Break the dual adjacency so the duality suite must fail.
        #[arg(long, global = true)]
        inject_fault: bool,
        /// MCMC samples for the bijection and sampler suites.
        #[arg(long, global = true)]
        samples: Option<u64>,
        /// Directory for counterexample dumps.
        #[arg(long, global = true)]
        dump_dir: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Default)]
struct Sizes {
    /// Comma-separated sizes.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<i32>>,
}

#[derive(Subcommand, Debug)]
enum ScanCmd {
    /// φ⁰[h_0²] on the even box of each size.
    Variance(Sizes),
    /// NN crossing of h ≥ level in [-n, n]² under zero boundary on the even box of size 2n.
    Crossing {
        #[command(flatten)]
        sizes: Sizes,
        #[arg(long, allow_hyphen_values = true)]
        level: Option<i32>,
    },
    /// a_n with the renormalisation table.
    An(Sizes),
    /// Probability of a ×-cluster of h ≥ k with diameter ≥ n, per level k.
    Diameter {
        #[arg(long)]
        n: Option<i32>,
        #[arg(long)]
        r: Option<i32>,
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<i32>>,
    },
    /// E[(h_0 − h_(k,k))²] on the torus of period n.
    Torus {
        #[arg(long)]
        n: Option<i32>,
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<i32>>,
    },
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum VerifyCmd {
    Duality,
    Fkg,
    Cbc,
    Bijection,
    Sampler,
    All,
}

fn read_arg(s: &str) -> Result<String, String> {
    match s.strip_prefix('@') {
        Some(path) => std::fs::read_to_string(path).map_err(|e| format!("reading {path}: {e}")),
        None => Ok(s.to_string()),
    }
}

/// Flag values as a config layer.
fn flags(cli: Cli) -> Result<Config, String> {
    let c = cli.common;
    let mut f = Config {
        seed: c.seed,
        chains: c.chains,
        sweeps: c.sweeps,
        burn_in: c.burn_in,
        thin: c.thin,
        scan: c.scan,
        threads: c.threads,
        use_oracle: c.no_oracle.then_some(false),
        output: c.output,
        format: c.format.map(|f| match f {
            FormatArg::Text => Format::Text,
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }),
        ..Config::default()
    };
    let instance = |a: InstanceArg| a.instance.map(serde_json::Value::String);
    let event = |a: EventArg| -> Result<_, String> {
        a.event.map(|s| serde_json::from_str(&read_arg(&s)?).map_err(|e| format!("event JSON: {e}"))).transpose()
    };
    let Some(cmd) = cli.cmd else { return Ok(f) };
    match cmd {
        Cmd::Count(i) => {
            f.command = Some("count".into());
            f.instance = instance(i);
        }
        Cmd::Prob { instance: i, event: e } | Cmd::Estimate { instance: i, event: e } => {
            f.instance = instance(i);
            f.event = event(e)?;
        }
        Cmd::Sample { instance: i, samples, exact } => {
            f.command = Some("sample".into());
            f.instance = instance(i);
            f.samples = samples;
            f.exact = exact.then_some(true);
        }
        Cmd::Scan { kind } => {
            f.command = Some("scan".into());
            let (name, n, k) = match kind {
                ScanCmd::Variance(s) => ("variance", s.n, None),
                ScanCmd::Crossing { sizes, level } => {
                    f.level = level;
                    ("crossing", sizes.n, None)
                }
                ScanCmd::An(s) => ("an", s.n, None),
                ScanCmd::Diameter { n, r, k } => {
                    f.r = r;
                    ("diameter", n.map(|n| vec![n]), k)
                }
                ScanCmd::Torus { n, k } => ("torus", n.map(|n| vec![n]), k),
            };
            f.kind = Some(name.into());
            f.n = n;
            f.k = k;
        }
        Cmd::Verify { kind, max_size, inject_fault, samples, dump_dir } => {
            f.command = Some("verify".into());
            f.kind = Some(format!("{kind:?}").to_lowercase());
            f.max_size = max_size;
            f.inject_fault = inject_fault.then_some(true);
            f.samples = samples;
            f.dump_dir = dump_dir;
        }
    }
    Ok(f)
}

fn resolve(cli: Cli) -> Result<Config, String> {
    let cmd_name = match &cli.cmd {
        Some(Cmd::Prob { .. }) => Some("prob"),
        Some(Cmd::Estimate { .. }) => Some("estimate"),
        _ => None,
    };
    let base = match &cli.common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let mut top = flags(cli)?;
    if let Some(name) = cmd_name {
        top.command = Some(name.into());
    }
    let c = base.overlay(top);
    if c.command.is_none() {
        return Err("no command given (use a subcommand or a config with \"command\")".into());
    }
    Ok(c)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let cfg = match resolve(cli) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    commands::execute(&cfg)
}
