use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dtc_harness::{parse_config, run_experiment, workers_from_env, ExperimentFile, ExperimentSpec, HarnessError, Preset};

/// Discrete time crystal with delayed coherent feedback.
///
/// Exit status: 0 ok, 1 config error, 2 resource guard, 3 numerical failure.
/// The worker count is read from DTC_WORKERS (default: all cores).
#[derive(Parser)]
#[command(name = "dtc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Write results here instead of the configured output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run a preset (fig1, fig3a, fig3b, fig4a, fig4b).
    Preset {
        name: String,
        /// Replace a setting, e.g. `--override periods=20 --override gamma_l=0.5`.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check a config, including size guards, without running it.
    Validate { config: PathBuf },
}

fn load(path: &PathBuf) -> Result<ExperimentSpec, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.clone(),
        source,
    })?;
    parse_config(&text)
}

fn launch(mut spec: ExperimentSpec, output: Option<PathBuf>) -> Result<(), HarnessError> {
    if let Some(o) = output {
        spec.output = o;
    }
    let workers = workers_from_env()?;
    let files = run_experiment(&spec, workers)?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn main_inner(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { config, output } => launch(load(&config)?, output),
        Command::Preset { name, overrides, output } => {
            let preset: Preset = name.parse()?;
            let mut file = ExperimentFile::preset(preset);
            for o in &overrides {
                file.set(o)?;
            }
            launch(file.resolve()?, output)
        }
        Command::Validate { config } => {
            let spec = load(&config)?;
            let points = spec.points()?;
            println!(
                "ok: {} points x {} realizations, {} sites, {} periods",
                points.len(),
                spec.realizations,
                spec.params.n_sites,
                spec.run.periods
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dtc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
