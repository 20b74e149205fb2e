//! `zsim`: scenario generation, behavior cloning, RL fine-tuning,
//! evaluation and step-time benchmarks.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "zsim",
    version,
    about = "Batched driving simulator and policy training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Directory receiving every artifact of the run.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Overrides the seed of the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scenario file.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Generator TOML; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scenario file to write (default `<out-dir>/scenarios.zsim`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the scenario count of the configuration.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Behavior cloning on the logged trajectories of a scenario file.
    Bc {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// PPO fine-tuning with V-trace targets.
    Rl {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainArgs,
        /// Held-out scenarios for the evaluation actor (default: --data).
        #[arg(long)]
        eval_data: Option<PathBuf>,
        /// Rank 0 of a multi-process run: accept the other workers here.
        #[arg(long, conflicts_with = "connect")]
        listen: Option<String>,
        /// Join a multi-process run whose rank 0 listens at this address.
        #[arg(long, requires = "rank")]
        connect: Option<String>,
        /// This process's rank when joining with --connect.
        #[arg(long)]
        rank: Option<usize>,
    },
    /// Greedy evaluation of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = EvalMode::NoDones)]
        mode: EvalMode,
        /// Training TOML supplying the simulator settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 25)]
        batch: usize,
    },
    /// Time environment steps at several batch sizes.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "1,16,32")]
        batch_sizes: Vec<usize>,
        /// Scenario file; a synthetic set is generated when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
    },
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Training TOML; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training scenario file.
    #[arg(long)]
    pub data: PathBuf,
    /// BC: resume from this checkpoint. RL: start from its parameters.
    #[arg(long)]
    pub init_checkpoint: Option<PathBuf>,
    /// Worker (BC) or learner (RL) count.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    /// Done signals terminate episodes, as in training.
    Dones,
    /// Episodes run to full length with violations latched.
    NoDones,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap reports usage errors with status 2 and help/version with 0
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let res = match cli.command {
        Command::Generate {
            common,
            config,
            out,
            count,
        } => commands::generate(&common, config.as_deref(), out.as_deref(), count),
        Command::Bc { common, train } => commands::bc(&common, &train),
        Command::Rl {
            common,
            train,
            eval_data,
            listen,
            connect,
            rank,
        } => commands::rl(
            &common,
            &train,
            eval_data.as_deref(),
            listen.as_deref(),
            connect.as_deref(),
            rank,
        ),
        Command::Eval {
            common,
            checkpoint,
            data,
            mode,
            config,
            batch,
        } => commands::eval(&common, &checkpoint, &data, mode, config.as_deref(), batch),
        Command::Bench {
            common,
            batch_sizes,
            data,
            steps,
            warmup,
        } => commands::bench(&common, &batch_sizes, data.as_deref(), steps, warmup),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("zsim: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
