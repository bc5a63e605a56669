// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod quadrature;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use eislab::config::{self, Config};
use eislab::regularity::Status;
use eislab::Execution;

use commands::{Check, Job};

/// Worker threads for the data-parallel parts; unset means one per core.
const WORKERS_VAR: &str = "EISLAB_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "eislab", version, about = "Consumption-savings experiments under recursive preferences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML experiment file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; created after the configuration validates.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-form two-period problem, numeric cross-check and comparative statics.
    TwoPeriod(Common),
    /// Budget lines, indifference curves and optimal bundles for varying Rf.
    Figure1(Common),
    /// Backward induction on a configured setting.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Reuse solutions stored in this directory.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Randomized consumption-response suite and monotonicity certificates.
    Statics(Common),
    /// Continuation-value drops for the configured shocks.
    Shock(Common),
    /// Synthetic panel and EIS estimation.
    Identify(Common),
    /// Gauss-Hermite discretisation of a mean-one log-normal shock, printed as
    /// a TOML distribution.
    Discretize {
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 5)]
        nodes: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load(path: Option<&Path>) -> Result<Option<Config>> {
    match path {
        None => Ok(None),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let cfg = config::parse(&text).with_context(|| format!("in {}", p.display()))?;
            Ok(Some(cfg))
        }
    }
}

fn execution(cfg: Option<&Config>) -> Result<Execution> {
    if let Ok(v) = std::env::var(WORKERS_VAR) {
        let n: usize = v
            .trim()
            .parse()
            .with_context(|| format!("{WORKERS_VAR} must be a positive integer, got `{v}`"))?;
        if n == 0 {
            bail!("{WORKERS_VAR} must be at least 1");
        }
        eislab::parallel::set_worker_count(n);
    }
    let sequential = cfg
        .and_then(|c| c.solver.as_ref())
        .is_some_and(|s| s.sequential);
    Ok(if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    })
}

fn run(cli: Cli) -> Result<bool> {
    let (common, cache) = match &cli.command {
        Command::Discretize { sigma, nodes } => {
            let d = quadrature::lognormal(*sigma, *nodes)?;
            println!("{}", quadrature::to_toml(&d));
            return Ok(true);
        }
        Command::Solve { common, cache } => (common.clone(), cache.clone()),
        Command::TwoPeriod(c)
        | Command::Figure1(c)
        | Command::Statics(c)
        | Command::Shock(c)
        | Command::Identify(c) => (c.clone(), None),
    };
    let cfg = load(common.config.as_deref())?;
    let exec = execution(cfg.as_ref())?;
    let cfg = cfg.as_ref();
    // everything that can be rejected from the file alone is checked here,
    // before the output directory exists
    let job = match cli.command {
        Command::TwoPeriod(_) => Job::two_period(cfg)?,
        Command::Figure1(_) => Job::figure1(cfg)?,
        Command::Solve { .. } => Job::solve(cfg, cache)?,
        Command::Statics(_) => Job::statics(cfg)?,
        Command::Shock(_) => Job::shock(cfg)?,
        Command::Identify(_) => Job::identify(cfg)?,
        Command::Discretize { .. } => unreachable!(),
    };
    let out = &common.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let checks = job.run(out, common.seed, exec)?;
    write_summary(out, &checks)
}

fn write_summary(out: &Path, checks: &[Check]) -> Result<bool> {
    let mut text = String::new();
    for c in checks {
        let line = format!("{} {}: {}", c.status, c.name, c.detail);
        println!("{line}");
        text.push_str(&line);
        text.push('\n');
    }
    let failed = checks.iter().filter(|c| c.status == Status::Fail).count();
    let tail = format!("{} checks, {failed} failed", checks.len());
    println!("{tail}");
    text.push_str(&tail);
    text.push('\n');
    fs::write(out.join("summary.txt"), text).context("writing summary.txt")?;
    Ok(failed == 0)
}
