use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use levy_bismut::{Command, ExperimentConfig, Harness};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Sub {
    /// Dump one trajectory.
    Simulate,
    /// Integration-by-parts suite and sign negative control.
    IbpCheck,
    /// Bismut estimator against finite differences.
    Gradient,
    /// Change-of-measure suite.
    GirsanovCheck,
    /// Contraction and total-variation decay.
    Converge,
    /// Jacobian, Poisson-moment, fractional-power and gradient bounds.
    Bounds,
    /// Every acceptance suite.
    All,
    /// Key estimates against the truncation dimension.
    TruncationSweep,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::Simulate => Command::Simulate,
            Sub::IbpCheck => Command::IbpCheck,
            Sub::Gradient => Command::Gradient,
            Sub::GirsanovCheck => Command::GirsanovCheck,
            Sub::Converge => Command::Converge,
            Sub::Bounds => Command::Bounds,
            Sub::All => Command::All,
            Sub::TruncationSweep => Command::TruncationSweep,
        }
    }
}

/// Monte Carlo verification suites for jump-driven semilinear equations.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    #[arg(value_enum)]
    subcommand: Sub,
    /// TOML configuration; the bundled reference configuration when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding `mc.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Path count of the main estimators, overriding `mc.samples`.
    #[arg(long)]
    samples: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Use the uncorrected Cameron-Martin sign.
    #[arg(long)]
    paper_sign: bool,
    /// Output directory for the CSV files.
    #[arg(long, env = "LEVY_BISMUT_OUT", default_value = "out")]
    out: PathBuf,
}

fn run(cli: Cli) -> levy_bismut::Result<bool> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => levy_bismut::config::reference(),
    };
    if let Some(s) = cli.seed {
        cfg.mc.seed = s;
    }
    if let Some(n) = cli.samples {
        cfg.mc.samples = n;
    }
    if let Some(w) = cli.workers {
        cfg.mc.workers = w;
    }
    if cli.paper_sign {
        cfg.flags.paper_sign = true;
    }
    let harness = Harness::new(cfg)?;
    let report = harness.run(cli.subcommand.into())?;
    for path in report.write(&cli.out)? {
        eprintln!("wrote {}", path.display());
    }
    for v in &report.verdicts {
        println!("{v}");
    }
    Ok(report.all_passed())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
