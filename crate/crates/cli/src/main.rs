//! `cctmpc`: template synthesis, invariant sets and tube MPC experiments.
//!
//! Exit codes: 0 success, 1 usage, 2 infeasibility, 3 invariant violation,
//! 4 numerical failure.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::commands::Context;
use crate::config::{LoadedConfig, TemplateSource};
use crate::error::{CliError, EXIT_USAGE};

#[derive(Parser, Debug)]
#[command(name = "cctmpc", version, about = "Configuration-constrained tube MPC experiments")]
struct Cli {
    /// Experiment config (JSON, schema "cc-tube-mpc/1").
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's "output".
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed; overrides the config's "seed".
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the template NLP and refinement; writes template.json and trace.json.
    SynthTemplate {
        /// Number of refinement iterations; overrides the config.
        #[arg(long)]
        i_max: Option<usize>,
        /// Starting template file; overrides the config's template source.
        #[arg(long)]
        initial_template: Option<PathBuf>,
        /// Trace output path.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Compute the optimal RCI set of the template; writes rci.json.
    ComputeRci,
    /// Closed-loop simulations; writes trajectory CSV/JSON files and summary.json.
    RunMpc,
    /// Region probing and problem sizes across schemes; writes comparison.json.
    CompareSchemes,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SynthTemplate { .. } => "synth-template",
            Command::ComputeRci => "compute-rci",
            Command::RunMpc => "run-mpc",
            Command::CompareSchemes => "compare-schemes",
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli.config.clone().ok_or_else(|| CliError::Usage("--config <file> is required".into()))?;
    let mut cfg = LoadedConfig::load(&path)?;
    if let Command::SynthTemplate { initial_template: Some(p), .. } = &cli.command {
        let abs = std::env::current_dir()?.join(p);
        if !abs.is_file() {
            return Err(CliError::Usage(format!("initial template {} does not exist", abs.display())));
        }
        cfg.config.template.source = TemplateSource::File;
        cfg.config.template.path = Some(abs);
    }
    let seed = cli.seed.unwrap_or(cfg.config.seed);
    let out_dir = match (&cli.out, &cfg.config.output) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => cfg.resolve(o),
        (None, None) => PathBuf::from("out"),
    };
    let ctx = Context { cfg, out_dir, seed };
    let started = chrono::Utc::now();
    let command = cli.command.name();
    let result = match cli.command {
        Command::SynthTemplate { i_max, trace_out, .. } => commands::synth_template(&ctx, i_max, trace_out),
        Command::ComputeRci => commands::compute_rci(&ctx),
        Command::RunMpc => commands::run_mpc(&ctx),
        Command::CompareSchemes => commands::compare_schemes(&ctx),
    };
    let meta = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": path,
        "config_hash": ctx.cfg.hash,
        "seed": ctx.seed,
        "started_at": started.to_rfc3339(),
        "finished_at": chrono::Utc::now().to_rfc3339(),
        "exit_code": result.as_ref().err().map_or(0, CliError::exit_code),
    });
    std::fs::create_dir_all(&ctx.out_dir)?;
    std::fs::write(ctx.out_dir.join("metadata.json"), serde_json::to_string_pretty(&meta).expect("metadata") + "\n")?;
    result
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
