use clap::{Args, Parser, Subcommand};
use smc_bandits_cli::config::Scale;
use smc_bandits_cli::run::{execute, prepare, Command, Overrides};
use smc_bandits_cli::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

/// Sequential Monte Carlo bandits: simulations, offline replay and timing.
#[derive(Parser)]
#[command(name = "smc-bandits", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a static or dynamic regret study.
    Simulate(RunArgs),
    /// Evaluate policies offline against a logged dataset.
    Replay(RunArgs),
    /// Time SMC updates against refitting MCMC.
    Bench(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run config, or a previous run's manifest.json.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Size preset for values the config leaves unset.
    #[arg(long, value_enum)]
    scale: Option<Scale>,
    /// Shorthand for `--scale paper`.
    #[arg(long, conflicts_with = "scale")]
    paper_scale: bool,
    /// Run on a single thread.
    #[arg(long)]
    deterministic: bool,
}

fn run(command: Command, args: RunArgs) -> Result<(), CliError> {
    let overrides = Overrides {
        seed: args.seed,
        out: args.out,
        scale: if args.paper_scale { Some(Scale::Paper) } else { args.scale },
        deterministic: args.deterministic,
    };
    let config = prepare(command, args.config.as_deref(), &overrides)?;
    let outcome = execute(command, &config)?;
    println!("{}", outcome.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (command, args) = match cli.command {
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Replay(a) => (Command::Replay, a),
        Cmd::Bench(a) => (Command::Bench, a),
    };
    match run(command, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
