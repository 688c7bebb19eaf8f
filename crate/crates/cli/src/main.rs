use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mfegan::app::{self, selftest, AppError, ExperimentConfig};

/// Imbalanced hyperspectral classification with a multi-fake evolutionary GAN.
///
/// Exit codes: 0 ok, 1 self-test failure, 2 input error, 3 training abort,
/// 4 artifact mismatch.
#[derive(Parser)]
#[command(name = "mfegan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reduce, patch and split the configured data set.
    Prepare { config: PathBuf },
    /// Train every configured variant.
    Train { config: PathBuf },
    /// Score trained variants on the test split and draw classification maps.
    Evaluate { config: PathBuf },
    /// Pairwise McNemar tests between prediction files.
    Compare { config: PathBuf },
    /// Draw a label raster as a P6 image.
    RenderMap { config: PathBuf },
    /// Gradient, shape and metric self-checks.
    Selftest,
}

type Handler = fn(&ExperimentConfig, &mut dyn Write) -> Result<(), AppError>;

fn run(cmd: Command, out: &mut dyn Write) -> Result<bool, AppError> {
    let (config, f): (PathBuf, Handler) = match cmd {
        Command::Prepare { config } => (config, app::cmd_prepare),
        Command::Train { config } => (config, app::cmd_train),
        Command::Evaluate { config } => (config, app::cmd_evaluate),
        Command::Compare { config } => (config, app::cmd_compare),
        Command::RenderMap { config } => (config, app::cmd_render_map),
        Command::Selftest => {
            let results = selftest::run_checks(&selftest::default_checks());
            return Ok(selftest::print_table(&results, out)?);
        }
    };
    f(&ExperimentConfig::load(config)?, out)?;
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    match run(cli.command, &mut stdout) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
