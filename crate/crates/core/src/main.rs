use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pracstab::cli::{self, apply_overrides, parse_config_value, CliError, Command, ConfigErrors, ConfigIssue, IssueCode};

#[derive(Parser)]
#[command(name = "pracstab", version, about = "Finite-horizon practical stability analysis")]
struct Args {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Maximal admissible ball/ellipsoid of initial states for a linear system.
    Analyze(Common),
    /// Sampled check of a fixed initial set against the phase constraints.
    Verify(Common),
    /// V or W along one trajectory.
    LyapunovTrace(Common),
    /// c* over a range of one config parameter.
    Sweep(Common),
}

#[derive(clap::Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the (t, s, ratio) surface as CSV (analyze only).
    #[arg(long)]
    emit_surface: bool,
}

fn configure_threads() {
    let Ok(v) = std::env::var("PRACSTAB_THREADS") else {
        return;
    };
    match v.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                eprintln!("warning: could not size worker pool: {e}");
            }
        }
        _ => eprintln!("warning: ignoring PRACSTAB_THREADS={v:?}; expected a positive integer"),
    }
}

fn execute(command: Command, args: &Common) -> Result<cli::Outcome, CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|source| CliError::Io { path: args.config.clone(), source })?;
    let mut doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
        CliError::Config(ConfigErrors(vec![ConfigIssue {
            code: IssueCode::SchemaError,
            path: String::new(),
            message: e.to_string(),
        }]))
    })?;
    apply_overrides(&mut doc, args.grid, args.samples, args.seed);
    let config = parse_config_value(doc)?;
    cli::run(command, &config, &args.out, args.emit_surface)
}

fn main() -> ExitCode {
    let args = Args::parse();
    configure_threads();
    let (command, common) = match &args.command {
        Cmd::Analyze(c) => (Command::Analyze, c),
        Cmd::Verify(c) => (Command::Verify, c),
        Cmd::LyapunovTrace(c) => (Command::LyapunovTrace, c),
        Cmd::Sweep(c) => (Command::Sweep, c),
    };
    match execute(command, common) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            ExitCode::from(cli::EXIT_OK as u8)
        }
        Err(e) => {
            match &e {
                CliError::Config(issues) => {
                    for issue in &issues.0 {
                        eprintln!("error[config::{}] {}: {}", issue.code.as_str(), issue.path, issue.message);
                    }
                }
                other => eprintln!("error[{}] {other}", other.code()),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
