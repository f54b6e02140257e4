//! `rlstep` command-line tool.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rlstep::bench::Command;
use rlstep::bench::commands::{self, EXIT_USAGE};
use rlstep::bench::config::RunConfig;

#[derive(Parser)]
#[command(name = "rlstep", version, about = "Learned step-size control for quadrature and ODE integration")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Train a quadrature step-size learner.
    TrainQuad(Common),
    /// Train an ODE step-size learner.
    TrainOde(Common),
    /// Train a meta-learner over a trained learner and constant-step members.
    TrainMeta(Common),
    /// Compare quadrature learners with composite Simpson and subdivision.
    BenchQuad(Common),
    /// Compare ODE learners with adaptive RK45.
    BenchOde(Common),
    /// Fit or search optimal quadrature weights.
    Weights(Common),
    /// Write the per-step trace of a single run.
    Trace(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration layered over the command's preset.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override one field, e.g. `--set training.max_episodes=500` (repeatable).
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; defaults to the config value, then $RLSTEP_OUT_DIR, then ./rlstep-out.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, common) = match cli.command {
        Sub::TrainQuad(c) => (Command::TrainQuad, c),
        Sub::TrainOde(c) => (Command::TrainOde, c),
        Sub::TrainMeta(c) => (Command::TrainMeta, c),
        Sub::BenchQuad(c) => (Command::BenchQuad, c),
        Sub::BenchOde(c) => (Command::BenchOde, c),
        Sub::Weights(c) => (Command::Weights, c),
        Sub::Trace(c) => (Command::Trace, c),
    };
    let cfg = match RunConfig::load(cmd, common.config.as_deref(), &common.overrides) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("rlstep {}: {e}", cmd.name());
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    let out = cfg.output_dir(common.out.as_deref());
    let result = commands::run(cmd, &cfg, &out);
    match &result {
        Ok(report) => {
            for line in &report.notes {
                println!("{line}");
            }
            for f in &report.files {
                println!("wrote {}", f.display());
            }
            match &report.status {
                commands::Status::Success => {}
                commands::Status::CapHit => eprintln!("rlstep {}: episode cap reached before convergence", cmd.name()),
                commands::Status::Diverged(msg) => eprintln!("rlstep {}: training diverged: {msg}", cmd.name()),
            }
        }
        Err(e) => eprintln!("rlstep {}: {e}", cmd.name()),
    }
    ExitCode::from(commands::exit_code(&result) as u8)
}
