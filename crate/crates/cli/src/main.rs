use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use homog2d::harness::{self, ScenarioKind};
use homog2d::Error;

/// Periodic homogenization toolkit for 2D perfect fluids.
#[derive(Parser)]
#[command(name = "homog2d", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the cell problems.
    Cell(RunArgs),
    /// Effective tensors and their consistency checks.
    Tensor(RunArgs),
    /// Corrected harmonic coordinates and their Jacobian.
    Coord(RunArgs),
    /// Cell-flow trajectories, rotation vectors and Birkhoff averages.
    FlowMicro(RunArgs),
    /// Homogenized vorticity dynamics on the macroscopic torus.
    FlowMacro(RunArgs),
    /// Finite-ε lake runs against the homogenized limit.
    EpsStudy(RunArgs),
    /// Summarize run manifests.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the configured one).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; the solvers are sequential, so only 1 is meaningful.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Seed (overrides the configured one).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories or their parents.
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
    /// Write the summary CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(kind: ScenarioKind, args: RunArgs) -> Result<bool, Error> {
    if args.threads == 0 {
        return Err(Error::Config(vec!["--threads must be at least 1".into()]));
    }
    let mut cfg = harness::load_config(&args.config)?;
    if cfg.kind != kind {
        return Err(Error::Config(vec![format!(
            "configuration is a {} scenario, not {}",
            cfg.kind.as_str(),
            kind.as_str()
        )]));
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let manifest = harness::run_scenario(&cfg, args.out.as_deref())?;
    for a in &manifest.artifacts {
        println!("{}  {}", a.sha256, a.path);
    }
    for f in &manifest.failures {
        eprintln!("FAIL: {f}");
    }
    Ok(manifest.passed())
}

fn report(args: ReportArgs) -> Result<bool, Error> {
    let manifests = harness::collect_manifests(&args.dirs)?;
    let bytes = harness::report(&manifests).to_bytes();
    match args.out {
        Some(p) => std::fs::write(&p, &bytes).map_err(|e| Error::Io { path: p, source: e })?,
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    Ok(manifests.iter().all(|(_, m)| m.passed()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Cell(a) => run(ScenarioKind::Cell, a),
        Command::Tensor(a) => run(ScenarioKind::Tensor, a),
        Command::Coord(a) => run(ScenarioKind::Coord, a),
        Command::FlowMicro(a) => run(ScenarioKind::MicroFlow, a),
        Command::FlowMacro(a) => run(ScenarioKind::MacroFlow, a),
        Command::EpsStudy(a) => run(ScenarioKind::EpsStudy, a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Error::Config(errors)) => {
            for e in errors {
                eprintln!("config: {e}");
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
