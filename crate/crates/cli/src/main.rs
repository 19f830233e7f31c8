mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "taco", version, about = "Quadrotor aerobatics workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// TOML file layered over the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted-key override, e.g. `--set train.ppo.actor_lr=1e-4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    Policy,
    Se3,
    Mpc,
}

#[derive(Args, Debug, Clone)]
pub struct ControllerArgs {
    #[arg(long, value_enum, default_value = "policy")]
    pub controller: ControllerKind,
    /// Policy checkpoint (JSON).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainTask {
    Pos,
    Circle,
    Flip,
    Multi,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimTask {
    Pos,
    Circle,
    Flip,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum DumpFormat {
    Toml,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a policy with PPO.
    Train(TrainArgs),
    /// Run an evaluation and print a PASS/FAIL summary.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Fly one closed-loop scenario and write its trajectory log.
    Sim(SimArgs),
    /// Summarise a trajectory log.
    Replay { log: PathBuf },
    /// Start the live session service.
    Serve(ServeArgs),
    /// Vehicle parameters.
    #[command(subcommand)]
    Params(ParamsCommand),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value = "pos")]
    pub task: TrainTask,
    /// Per-layer spectral budget, or `none`.
    #[arg(long)]
    pub klip: Option<String>,
    #[arg(long)]
    pub obs: Option<String>,
    #[arg(long)]
    pub envs: Option<usize>,
    #[arg(long)]
    pub updates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; defaults to `runs/<task>-<obs>-<klip>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from `<out>/trainer_state.json`.
    #[arg(long)]
    pub resume: bool,
    /// Step environments on one thread.
    #[arg(long)]
    pub serial: bool,
    /// Print a progress line every this many updates (0 silences).
    #[arg(long, default_value_t = 10)]
    pub log_every: usize,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Subcommand, Debug)]
pub enum EvalCommand {
    /// Final hover error over a batch of randomized starts.
    Hover {
        #[command(flatten)]
        controller: ControllerArgs,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Controller output over yaw errors in (-π, π).
    YawSweep {
        #[command(flatten)]
        controller: ControllerArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Throttle smoothness on paired hover scenarios.
    Smoothness {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Second checkpoint flown on the same scenarios; PASS iff the first is smoother.
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Radius and velocity MSE on the circle.
    CircleMse {
        #[command(flatten)]
        controller: ControllerArgs,
        /// Comma-separated list of v* (m/s).
        #[arg(long, value_delimiter = ',')]
        speeds: Option<Vec<f64>>,
        /// Baseline flown on the same speeds; PASS also requires lower velocity MSE.
        #[arg(long, value_enum)]
        against: Option<ControllerKind>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Scripted consecutive flips.
    Flip {
        #[command(flatten)]
        controller: ControllerArgs,
        #[arg(long)]
        flips: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Empirical Lipschitz quotients against the analytic bound.
    Lipschitz {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        pairs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Args, Debug)]
pub struct SimArgs {
    #[command(flatten)]
    pub controller: ControllerArgs,
    #[arg(long, value_enum, default_value = "pos")]
    pub task: SimTask,
    /// CIRCLE speed command (m/s).
    #[arg(long, default_value_t = 2.0)]
    pub speed: f64,
    /// FLIP triggers.
    #[arg(long, default_value_t = 1)]
    pub flips: usize,
    /// Simulated seconds.
    #[arg(long, default_value_t = 10.0)]
    pub duration: f64,
    /// Seed of the POS initial condition.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for the log, config and run metadata.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Subcommand, Debug)]
pub enum ParamsCommand {
    /// Print the resolved vehicle parameters.
    Dump {
        #[arg(long, value_enum, default_value = "toml")]
        format: DumpFormat,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => commands::train(args),
        Command::Eval(cmd) => commands::eval(cmd),
        Command::Sim(args) => commands::sim(args),
        Command::Replay { log } => commands::replay(&log),
        Command::Serve(args) => commands::serve(args),
        Command::Params(ParamsCommand::Dump { format, config }) => {
            commands::params_dump(format, &config)
        }
    }
}

fn main() -> ExitCode {
    // exit quietly when piped into `head` instead of panicking in print!
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.render().to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("{}", CliError::Usage(first.to_string()).to_json_line());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
