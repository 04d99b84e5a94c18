//! `stackgp` command-line driver.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stackgp::pipeline::{
    cmd_evaluate, cmd_fit, cmd_forecast, cmd_synth, Method, Overrides, PipelineConfig,
};
use stackgp::{Error, ErrorCategory};

#[derive(Parser)]
#[command(
    name = "stackgp",
    version,
    about = "Stacked GP forecasting for household energy panels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic panel (panel.json).
    Synth(ConfigArgs),
    /// Fit a forecasting method and write model.json.
    Fit(ConfigArgs),
    /// Forecast from a fitted model (forecast.csv).
    Forecast {
        #[arg(long)]
        model: PathBuf,
        /// Months past the training window; defaults to the test window.
        #[arg(long)]
        horizon: Option<usize>,
        /// Defaults to the model's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score forecasts against a panel of actual loads (report.json).
    Evaluate {
        #[arg(long)]
        forecast: PathBuf,
        /// Panel JSON holding the actual loads.
        #[arg(long)]
        actuals: PathBuf,
        /// Defaults to the forecast's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// stacked, task_gp or ar.
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    /// MPE threshold for admitting households to stage 2.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl ConfigArgs {
    fn load(&self) -> stackgp::Result<PipelineConfig> {
        let mut cfg = PipelineConfig::load(&self.config)?;
        cfg.apply(&Overrides {
            method: self.method,
            tau: self.tau,
            seed: self.seed,
            out_dir: self.out.clone(),
        })?;
        Ok(cfg)
    }
}

fn parent_of(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn run(cli: Cli) -> stackgp::Result<PathBuf> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a.load()?),
        Command::Fit(a) => cmd_fit(&a.load()?),
        Command::Forecast {
            model,
            horizon,
            out,
        } => {
            let out = out.unwrap_or_else(|| parent_of(&model));
            cmd_forecast(&model, horizon, &out)
        }
        Command::Evaluate {
            forecast,
            actuals,
            out,
        } => {
            let out = out.unwrap_or_else(|| parent_of(&forecast));
            cmd_evaluate(&forecast, &actuals, &out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.category() {
                ErrorCategory::Config => 2,
                ErrorCategory::Data => 3,
                ErrorCategory::Numerical => 4,
            })
        }
    }
}
