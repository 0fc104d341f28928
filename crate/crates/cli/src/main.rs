//! Battery experiment harness: simulate cells, reproduce the sequential
//! estimation experiments, and export plot-ready CSVs.
//!
//! Exit codes: 0 success, 1 validation/config error, 2 estimation or
//! runtime failure.

use battkit_cli::{commands, config};
use std::path::PathBuf;
use std::process::ExitCode;

use battkit_core::CoreError;
use clap::{Args, Parser, Subcommand};

use commands::DataSources;
use config::ScenarioConfig;

#[derive(Parser)]
#[command(name = "battkit", version, about = "Battery SoC/SoH estimation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario config (TOML, or JSON by extension).
    #[arg(long)]
    config: PathBuf,
    /// Top-level seed; all randomness derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the injection steps and drive cycle; write measurement CSVs.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Run the sequential pipeline; write trace CSVs and a metrics report.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Step-1 measurement CSV (simulated when omitted).
        #[arg(long)]
        step1_csv: Option<PathBuf>,
        /// Step-2 measurement CSV.
        #[arg(long)]
        step2_csv: Option<PathBuf>,
        /// Step-3 (drive cycle) measurement CSV.
        #[arg(long)]
        step3_csv: Option<PathBuf>,
    },
    /// Voltage component breakdown per frequency.
    Analyze {
        #[command(flatten)]
        common: Common,
    },
    /// Matched sequential-vs-concurrent comparison over a seed batch.
    Compare {
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let outcome = match &cli.command {
        Command::Simulate { common } => with_config(common, |cfg, c| {
            commands::cmd_simulate(cfg, c.seed, &c.out)
        }),
        Command::Estimate {
            common,
            step1_csv,
            step2_csv,
            step3_csv,
        } => with_config(common, |cfg, c| {
            let data = DataSources {
                step1: step1_csv.clone(),
                step2: step2_csv.clone(),
                step3: step3_csv.clone(),
            };
            let report = commands::cmd_estimate(cfg, &data, c.seed, &c.out)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }),
        Command::Analyze { common } => with_config(common, |cfg, c| commands::cmd_analyze(cfg, &c.out)),
        Command::Compare { common } => with_config(common, |cfg, c| {
            let summary = commands::cmd_compare(cfg, c.seed, &c.out)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }),
    };

    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e))
        }
    }
}

fn with_config<F>(common: &Common, f: F) -> anyhow::Result<()>
where
    F: FnOnce(&ScenarioConfig, &Common) -> anyhow::Result<()>,
{
    let cfg = ScenarioConfig::load(&common.config).map_err(|e| e.context(ConfigStage))?;
    f(&cfg, common)
}

/// Marker pushed onto errors raised while loading the scenario config, so
/// they classify as validation failures even when an io::Error is the root.
#[derive(Debug)]
struct ConfigStage;

impl std::fmt::Display for ConfigStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("invalid scenario config")
    }
}

/// 1 for validation/config problems, 2 for estimation/runtime failures.
fn classify(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<ConfigStage>().is_some() {
        return 1;
    }
    for cause in e.chain() {
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            return match core {
                CoreError::Diverged { .. }
                | CoreError::SingularInnovation
                | CoreError::DegenerateExcitation { .. }
                | CoreError::Io(_) => 2,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}
