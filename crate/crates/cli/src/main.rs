use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rafe_cli::{ExperimentConfig, Pipeline, StageId};

#[derive(Parser)]
#[command(name = "rafe", version, about = "Generative radiance-field restoration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config file or built-in preset name.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config value.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render clean views of the scene.
    Synth(Common),
    /// Degrade the clean views.
    Degrade(Common),
    /// Restore degraded views independently with the oracle restorer.
    #[command(name = "restore-2d")]
    Restore2d(Common),
    /// Fit the coarse field on degraded views and the per-frame baseline on
    /// restored views.
    #[command(name = "fit-coarse")]
    FitCoarse(Common),
    /// Train the residual generator.
    Train(Common),
    /// Render test views for every method and latent sample.
    Render(Common),
    /// Compute metrics.
    Eval(Common),
    /// Write the markdown report and comparison strips.
    Report(Common),
    /// Run all stages.
    Run(Common),
    /// List the built-in presets.
    Presets,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (common, target) = match cli.command {
        Command::Presets => {
            for (name, _) in rafe_cli::config::PRESETS {
                println!("{name}");
            }
            return ExitCode::SUCCESS;
        }
        Command::Synth(c) => (c, StageId::Synth),
        Command::Degrade(c) => (c, StageId::Degrade),
        Command::Restore2d(c) => (c, StageId::Restore2d),
        Command::FitCoarse(c) => (c, StageId::Perframe),
        Command::Train(c) => (c, StageId::Train),
        Command::Render(c) => (c, StageId::Render),
        Command::Eval(c) => (c, StageId::Eval),
        Command::Report(c) => (c, StageId::Report),
        Command::Run(c) => (c, StageId::Report),
    };
    let setup = || -> anyhow::Result<Pipeline> {
        let mut cfg = ExperimentConfig::load(&common.config)?;
        if let Some(s) = common.seed {
            cfg.seed = s;
        }
        let out = common
            .out
            .clone()
            .or_else(|| cfg.out.clone())
            .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name));
        Pipeline::new(cfg, out)
    };
    let mut pipeline = match setup() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: stage `config` failed: {e:#}");
            return ExitCode::from(2);
        }
    };
    match pipeline.run_until(target) {
        Ok(summary) => {
            log::info!(
                "done: {} executed, {} cached, outputs in {}",
                summary.executed.len(),
                summary.cached.len(),
                pipeline.out.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
