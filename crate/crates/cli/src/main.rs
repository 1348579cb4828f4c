use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use forecaster_core::Error;

use forecaster::commands;
use forecaster::config::RunConfig;

#[derive(Parser)]
#[command(name = "forecaster", version, about = "Windowed GAN + BiLSTM telemetry forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Smooth, fuse, split and scale the raw telemetry.
    Ingest(Common),
    /// Train the window GAN.
    TrainGan(Common),
    /// Train the BiLSTM window-to-window model.
    TrainBilstm(Common),
    /// Train both models.
    Train(Common),
    /// Produce both interleaved series in physical units.
    Forecast(Common),
    /// RMSE table against the test partition.
    Evaluate(Common),
    /// One SVG chart per feature.
    Plot(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key=value` overrides applied after the config file.
    overrides: Vec<String>,
}

impl Common {
    fn resolve(&self) -> forecaster_core::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_io() {
        2
    } else if e.is_numeric() {
        4
    } else {
        3
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common, run): (&str, &Common, fn(&RunConfig) -> forecaster_core::Result<()>) = match &cli.command {
        Command::Ingest(c) => ("ingest", c, commands::ingest),
        Command::TrainGan(c) => ("train-gan", c, commands::train_gan),
        Command::TrainBilstm(c) => ("train-bilstm", c, commands::train_bilstm),
        Command::Train(c) => ("train", c, commands::train),
        Command::Forecast(c) => ("forecast", c, commands::forecast_cmd),
        Command::Evaluate(c) => ("evaluate", c, commands::evaluate_cmd),
        Command::Plot(c) => ("plot", c, commands::plot_cmd),
    };
    match common.resolve().and_then(|cfg| run(&cfg)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {name}: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
