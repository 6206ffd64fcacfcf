use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use dualgs::error::ErrorFamily;
use dualgs::par::{set_threads, Execution};
use dualgs::runner::{Runner, Stage};
use dualgs::scenario::ScenarioConfig;
use dualgs::Error;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StageArg {
    Estimate,
    Design,
    Explore,
    Validate,
    Full,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Estimate => Stage::Estimate,
            StageArg::Design => Stage::Design,
            StageArg::Explore => Stage::Explore,
            StageArg::Validate => Stage::Validate,
            StageArg::Full => Stage::Full,
        }
    }
}

/// Robust dual control design: targeted exploration plus a gain-scheduled
/// robust controller, with independent validation.
#[derive(Debug, Parser)]
#[command(name = "dualgs", version)]
struct Cli {
    /// Stage to run (same as --stage).
    #[arg(value_enum)]
    command: Option<StageArg>,
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory (default: `output.dir` from the config, else `out`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Root seed (default: `seeds.root` from the config).
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, value_enum, value_name = "NAME")]
    stage: Option<StageArg>,
    /// Replace one grid list, e.g. `lambda_s=10,100`. Repeatable.
    #[arg(long = "grid-override", value_name = "KEY=CSV")]
    grid_override: Vec<String>,
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    #[arg(long, short)]
    verbose: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e.family() {
        ErrorFamily::Config => 2,
        ErrorFamily::Infeasible => 3,
        ErrorFamily::IllPosed => 4,
        ErrorFamily::Numerical => 5,
        ErrorFamily::Io => 6,
        ErrorFamily::Validation => 7,
        ErrorFamily::Data => 8,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let stage: Stage = match (cli.command, cli.stage) {
        (Some(a), Some(b)) if a as u8 != b as u8 => {
            return Err(Error::config("--stage", "conflicts with the positional stage"));
        }
        (a, b) => a.or(b).map(Stage::from).unwrap_or(Stage::Full),
    };
    let mut scenario = ScenarioConfig::load(&cli.config)?;
    for o in &cli.grid_override {
        scenario.apply_grid_override(o)?;
    }
    let execution = match cli.jobs {
        Some(0) => return Err(Error::config("--jobs", "must be >= 1")),
        Some(1) => Execution::Sequential,
        Some(n) => {
            set_threads(n);
            Execution::Parallel
        }
        None => Execution::Parallel,
    };
    let out = cli.out.or_else(|| scenario.output.dir.clone().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"));
    let runner = Runner::new(scenario, out, cli.seed, execution)?;
    for line in runner.run(stage)? {
        println!("{line}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
