use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use ovfl_cli::{presets, run_experiment, RunConfig};

#[derive(Parser)]
#[command(name = "ovfl", version, about = "Online vertical federated learning experiments")]
struct Cli {
    /// Run only this seed instead of the configured list.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    /// Output directory; overrides the config value.
    #[arg(long, global = true, env = "OVFL_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Shipped experiment presets.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    List,
    Run { name: String },
    /// Print a preset's config.
    Show { name: String },
}

fn preset(name: &str) -> Result<&'static presets::Preset> {
    presets::find(name).with_context(|| {
        let names: Vec<_> = presets::PRESETS.iter().map(|p| p.name).collect();
        format!("unknown preset `{name}`; available: {}", names.join(", "))
    })
}

fn execute(cli: &Cli, mut config: RunConfig) -> Result<()> {
    if let Some(seed) = cli.seed_override {
        config.seeds = vec![seed];
    }
    let out = cli.output_dir.clone().unwrap_or_else(|| config.output_dir.clone());
    let summary = run_experiment(&config, &out)?;
    println!("wrote {} run files to {}", summary.run_files.len(), summary.dir.display());
    for f in summary.regret_file.iter().chain(&summary.probe_file) {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => RunConfig::load(config)
            .map_err(anyhow::Error::from)
            .and_then(|c| execute(&cli, c)),
        Command::Presets { action } => match action {
            PresetAction::List => {
                for p in presets::PRESETS {
                    println!("{:<22} {}", p.name, p.description());
                }
                Ok(())
            }
            PresetAction::Show { name } => preset(name).map(|p| print!("{}", p.source)),
            PresetAction::Run { name } => preset(name)
                .and_then(|p| Ok(p.config()?))
                .and_then(|c| execute(&cli, c)),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
