use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use infercomp_cli::{load_config, run_stages, CliError, Stage};

#[derive(Parser)]
#[command(name = "infercomp", about = "Run attack-composition experiments from a TOML config")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[arg(long, global = true, default_value = "experiment.toml")]
    config: PathBuf,

    /// Comma-separated stages; overrides the subcommand.
    #[arg(long, global = true, value_delimiter = ',')]
    stages: Vec<String>,

    /// Worker threads for training and attack jobs (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    Prepare,
    Train,
    Attack,
    Compose,
    Report,
    /// Every stage in order.
    All,
    /// Validate the config and print it in canonical form.
    Check,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = load_config(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    let stages: Vec<Stage> = if cli.stages.is_empty() {
        match cli.command {
            Command::Prepare => vec![Stage::Prepare],
            Command::Train => vec![Stage::Train],
            Command::Attack => vec![Stage::Attack],
            Command::Compose => vec![Stage::Compose],
            Command::Report => vec![Stage::Report],
            Command::All => Stage::ALL.to_vec(),
            Command::Check => {
                print!("{}", cfg.canonical());
                return Ok(());
            }
        }
    } else {
        let parsed: Vec<Option<Stage>> = cli.stages.iter().map(|s| Stage::parse(s.trim())).collect();
        let bad: Vec<String> = cli.stages.iter().zip(&parsed).filter(|(_, p)| p.is_none()).map(|(s, _)| format!("--stages: unknown stage {s:?}")).collect();
        if !bad.is_empty() {
            return Err(CliError::Config(bad));
        }
        parsed.into_iter().flatten().collect()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(vec![format!("--workers: {e}")]))?;
    let summary = pool.install(|| run_stages(&cfg, &stages))?;
    println!("{summary}");
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
