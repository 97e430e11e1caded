use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use g2flow_cli::commands::{cmd_diagnose, cmd_resume, cmd_run, cmd_validate};
use g2flow_cli::config::RunConfig;
use g2flow_cli::{exit, CliError};

/// Numerical laboratory for G2 structures on flat tori.
///
/// Environment: G2FLOW_THREADS sets the worker count, G2FLOW_OUTPUT_DIR
/// overrides the output directory of `run` and `resume`.
#[derive(Parser)]
#[command(name = "g2flow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the pointwise algebraic identities.
    Validate {
        /// Flip one Hodge star sign, given as DEGREE,INDEX.
        #[arg(long, hide = true, value_parser = parse_fault)]
        inject_star_fault: Option<(usize, usize)>,
    },
    /// Run a flow described by a JSON config.
    Run { config: PathBuf },
    /// Continue a run from a checkpoint sidecar (`checkpoints/step_*.json`).
    Resume { checkpoint: PathBuf },
    /// Report diagnostics of a snapshot.
    Diagnose { snapshot: PathBuf },
}

fn parse_fault(s: &str) -> Result<(usize, usize), String> {
    let (k, i) = s.split_once(',').ok_or("expected DEGREE,INDEX")?;
    Ok((
        k.trim().parse().map_err(|e| format!("{e}"))?,
        i.trim().parse().map_err(|e| format!("{e}"))?,
    ))
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("G2FLOW_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Config(format!("G2FLOW_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

fn output_override() -> Option<PathBuf> {
    std::env::var_os("G2FLOW_OUTPUT_DIR").map(PathBuf::from)
}

fn main_inner(cli: Cli) -> Result<i32, CliError> {
    configure_threads()?;
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Validate { inject_star_fault } => {
            let ok = cmd_validate(&mut stdout, inject_star_fault)?;
            Ok(if ok { exit::OK } else { exit::VALIDATION })
        }
        Command::Run { config } => {
            let cfg = RunConfig::load(&config)?;
            let out = output_override().unwrap_or_else(|| cfg.output.dir.clone());
            Ok(cmd_run(&cfg, &out, &mut stdout)?.exit_code)
        }
        Command::Resume { checkpoint } => {
            Ok(cmd_resume(&checkpoint, output_override().as_deref(), &mut stdout)?.exit_code)
        }
        Command::Diagnose { snapshot } => {
            cmd_diagnose(&snapshot, &mut stdout)?;
            Ok(exit::OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("g2flow: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
