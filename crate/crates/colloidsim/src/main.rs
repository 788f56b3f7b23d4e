//! Command-line front end: each subcommand runs one scenario family from a
//! configuration file and writes CSV outputs plus a run report.

use clap::{Args, Parser, Subcommand};
use colloidsim::scenarios::{
    is_solver_error, load_config, run_scenario, ScenarioError, ScenarioKind,
};
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_INVARIANT: u8 = 4;

#[derive(Parser)]
#[command(
    name = "colloidsim",
    about = "Multiscale simulator for colloid aggregation, transport and deposition in porous media",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Override the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the spatial resolution (cell-grid resolution or column
    /// node count, depending on the scenario).
    #[arg(long)]
    resolution: Option<usize>,
    /// Verbose logging.
    #[arg(long)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the periodic cell problems and emit effective tensors.
    Cell(RunArgs),
    /// Run a well-mixed batch aggregation simulation.
    Batch(RunArgs),
    /// Run a column breakthrough simulation (single or aggregating).
    Column(RunArgs),
    /// Compare blocking functions (none vs Langmuir vs RSA) on one column.
    Compare(RunArgs),
    /// Sweep the aggregation rate and compare cumulative outlet mass.
    Sweep(RunArgs),
}

impl Command {
    fn args(&self) -> &RunArgs {
        match self {
            Command::Cell(a)
            | Command::Batch(a)
            | Command::Column(a)
            | Command::Compare(a)
            | Command::Sweep(a) => a,
        }
    }

    fn accepts(&self, kind: ScenarioKind) -> bool {
        matches!(
            (self, kind),
            (Command::Cell(_), ScenarioKind::CellTensors)
                | (Command::Batch(_), ScenarioKind::BatchAggregation)
                | (Command::Column(_), ScenarioKind::ColumnSingle)
                | (Command::Column(_), ScenarioKind::ColumnAggregating)
                | (Command::Compare(_), ScenarioKind::BlockingCompare)
                | (Command::Sweep(_), ScenarioKind::RateSweep)
        )
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Cell(_) => "cell",
            Command::Batch(_) => "batch",
            Command::Column(_) => "column",
            Command::Compare(_) => "compare",
            Command::Sweep(_) => "sweep",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let args = cli.command.args();

    let mut builder = env_logger::Builder::from_default_env();
    if args.verbose {
        builder.filter_level(log::LevelFilter::Debug);
    }
    let _ = builder.try_init();

    let mut cfg = match load_config(&args.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };

    if !cli.command.accepts(cfg.kind) {
        eprintln!(
            "error: config error: scenario kind `{}` does not belong to subcommand `{}`",
            cfg.kind.name(),
            cli.command.name()
        );
        return ExitCode::from(EXIT_CONFIG);
    }

    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(res) = args.resolution {
        if let Some(g) = &mut cfg.geometry {
            g.resolution = res;
        }
        if let Some(n) = &mut cfg.numerics {
            n.nodes = res;
        }
    }

    match run_scenario(&cfg) {
        Ok(report) => {
            for line in &report.lines {
                println!("{line}");
            }
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                eprintln!(
                    "error: {} invariant check(s) failed",
                    report.invariant_failures
                );
                ExitCode::from(EXIT_INVARIANT)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            let code = match &e {
                ScenarioError::Config(_) => EXIT_CONFIG,
                _ if is_solver_error(&e) => EXIT_SOLVER,
                ScenarioError::Io(_) => EXIT_CONFIG,
                _ => EXIT_SOLVER,
            };
            ExitCode::from(code)
        }
    }
}
