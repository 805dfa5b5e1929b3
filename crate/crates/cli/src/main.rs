use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mvip_core::harness::config::reference_config;
use mvip_core::harness::{run_scenario, Config, Overrides, ScenarioKind};

/// Maglev vibration isolation platform simulator.
#[derive(Parser)]
#[command(name = "mvip", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Hold the floater at the origin from an initial offset
    Levitate(RunArgs),
    /// Track a circle in the x-y plane
    Contour(RunArgs),
    /// Base-excitation sweep and transmissibility estimate
    Sweep(RunArgs),
    /// Estimate the cross-coupling matrix and its rectifier
    Identify(RunArgs),
    /// Reconfigure for every single and double actuator failure
    Failure(RunArgs),
    /// Compare QP and minimax allocation energy
    AllocCompare(RunArgs),
    /// Search actuator designs
    Design(RunArgs),
    /// Analytic loop-shape metrics for the default gains
    LoopAnalysis(RunArgs),
    /// Print the reference configuration
    ReferenceConfig,
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration; defaults apply to missing keys
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: out/<scenario>]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Simulated duration in seconds
    #[arg(long, allow_negative_numbers = true)]
    duration: Option<f64>,
    /// Disable sensor noise, quantization and calibration noise
    #[arg(long)]
    no_noise: bool,
}

fn run(kind: ScenarioKind, args: RunArgs) -> mvip_core::Result<PathBuf> {
    let mut config = match &args.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let overrides = Overrides { seed: args.seed, duration_s: args.duration, no_noise: args.no_noise };
    overrides.apply(&mut config, kind)?;
    let out = run_scenario(&config, kind)?;
    let dir = args.out.unwrap_or_else(|| PathBuf::from("out").join(kind.name()));
    out.write_to(&dir, &config)?;
    print!("{}", out.metrics_text());
    Ok(dir)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Levitate(a) => (ScenarioKind::Levitate, a),
        Command::Contour(a) => (ScenarioKind::Contour, a),
        Command::Sweep(a) => (ScenarioKind::Sweep, a),
        Command::Identify(a) => (ScenarioKind::Identify, a),
        Command::Failure(a) => (ScenarioKind::Failure, a),
        Command::AllocCompare(a) => (ScenarioKind::AllocCompare, a),
        Command::Design(a) => (ScenarioKind::Design, a),
        Command::LoopAnalysis(a) => (ScenarioKind::LoopAnalysis, a),
        Command::ReferenceConfig => {
            print!("{}", reference_config());
            return ExitCode::SUCCESS;
        }
    };
    match run(kind, args) {
        Ok(dir) => {
            eprintln!("wrote {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
