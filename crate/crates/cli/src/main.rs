use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gpcplast::{config, run};

/// Time-incremental energetic solver for single-slip crystal plasticity.
///
/// GPCPLAST_THREADS caps the number of worker threads (0 or unset: automatic).
#[derive(Parser)]
#[command(name = "gpcplast", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the evolution, run the enabled audits and write all outputs.
    Run {
        config: PathBuf,
        /// Exit with status 2 if any audit fails.
        #[arg(long)]
        strict: bool,
        /// Output directory (overrides `output.dir`).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Validate a configuration and print it with all defaults expanded.
    Check { config: PathBuf },
    /// Re-audit the trajectory saved in a run directory.
    Audit {
        dir: PathBuf,
        #[arg(long)]
        strict: bool,
    },
    /// Print the demo configuration.
    Demo,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    run::configure_threads_from_env();
    let code = match cli.command {
        Command::Run { config, strict, out } => run::run_command(&config, strict, out.as_deref()),
        Command::Check { config } => run::check_command(&config),
        Command::Audit { dir, strict } => run::audit_command(&dir, strict),
        Command::Demo => {
            print!("{}", config::demo_toml());
            run::EXIT_OK
        }
    };
    ExitCode::from(code as u8)
}
