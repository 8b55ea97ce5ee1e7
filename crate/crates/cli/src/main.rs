use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use gdb_cli::commands::{self, TrainMode};
use gdb_cli::CliError;

#[derive(Parser)]
#[command(name = "gdb", about = "Geometric diffusion bridges: data, training, sampling and evaluation")]
struct Cli {
    /// Worker threads; outputs are identical for any count.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Pairs,
    Traj,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate synthetic relaxation trajectories.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a score model on pairs or full trajectories.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "traj")]
        mode: Mode,
        /// Loss log, appended to (default: <out>.loss.log).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Predict target structures from the first frame of each input record.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Euler steps per segment (default from the checkpoint, normally 10).
        #[arg(long)]
        steps: Option<usize>,
        /// Write every chain frame instead of the final one.
        #[arg(long)]
        chain: bool,
    },
    /// Score predictions against references.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        json: bool,
        /// Align structures before the ADwT position errors.
        #[arg(long)]
        aligned: bool,
    },
    /// Per-segment KL between OU bridges and Brownian bridges.
    KlStudy {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.threads == 0 {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    match cli.command {
        Command::GenData { config, out } => {
            let cfg = commands::load_config(config.as_deref())?;
            let s = commands::gen_data(&cfg, &out)?;
            println!("records {} skipped {}", s.records, s.skipped);
        }
        Command::Train { config, data, out, mode, log } => {
            let cfg = commands::load_config(config.as_deref())?;
            let mode = match mode {
                Mode::Pairs => TrainMode::Pairs,
                Mode::Traj => TrainMode::Traj,
            };
            let s = commands::train(&cfg, &data, &out, mode, log.as_deref())?;
            println!("steps {} first_loss {} final_loss {}", s.steps, s.first_loss, s.final_loss);
        }
        Command::Sample { checkpoint, input, out, steps, chain } => {
            let n = commands::sample(&checkpoint, &input, &out, steps, chain)?;
            println!("predictions {n}");
        }
        Command::Eval { pred, reference, json, aligned } => {
            let report = commands::eval(&pred, &reference, aligned)?;
            print!("{}", commands::format_report(&report, json));
        }
        Command::KlStudy { config, out } => {
            let cfg = commands::load_config(config.as_deref())?;
            for row in commands::kl_study(&cfg, &out)? {
                println!("N {} mean_kl {} stderr {} max_kl {}", row.segments, row.mean_kl, row.stderr, row.max_kl);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gdb: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
