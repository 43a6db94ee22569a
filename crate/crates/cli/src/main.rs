use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use drivecal_cli::{execute, load_config, BenchProtocol, CalibrateMode, CliError, Command, Profile};

#[derive(Parser)]
#[command(name = "drivecal", version, about = "Pulse calibration and benchmarking on a simulated transmon")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// N-pulse amplitude calibration.
    Calibrate {
        #[arg(value_enum)]
        mode: CalibrateMode,
    },
    /// Randomized, purity or cross-entropy benchmarking.
    Bench {
        #[arg(value_enum)]
        protocol: BenchProtocol,
    },
    /// Runs the `[sim]` gate list once.
    Sim,
    /// Checks the config and exits.
    Validate,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let Some(path) = cli.config else {
        return Err(CliError::Validation(vec![drivecal_cli::config::FieldError {
            path: "--config".into(),
            message: "a config file is required".into(),
        }]));
    };
    let (cfg, _) = load_config(&path)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Validation(vec![drivecal_cli::config::FieldError {
                path: "--threads".into(),
                message: "must be positive".into(),
            }]));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::runtime("cli", e))?;
    }
    let command = match cli.command {
        Sub::Validate => {
            println!("{}: ok", path.display());
            return Ok(());
        }
        Sub::Calibrate { mode } => Command::Calibrate(mode),
        Sub::Bench { protocol } => Command::Bench(protocol),
        Sub::Sim => Command::Sim,
    };
    let result = execute(cfg, command, cli.seed, cli.profile, &cli.out)?;
    if let Some(b) = &result.benchmark {
        println!("E = {:.4e} ± {:.1e}", b.e.value, b.e.sigma());
        if let Some(c) = &b.e_coh {
            println!("E_coh = {:.4e} ± {:.1e}", c.value, c.sigma());
        }
    }
    if let Some(c) = &result.calibration {
        for r in &c.results {
            println!("{:>6}°: ε₀ = {:+.3}°, ε = {:+.3}°, A = {:.3} mV", r.target_deg, r.initial_epsilon(), r.epsilon, r.amplitude_after);
        }
    }
    println!("outputs in {}", cli.out.display());
    Ok(())
}
