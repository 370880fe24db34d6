use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use harmofl_cli::commands::{self, LandscapeArgs, Overrides};
use harmofl_cli::{CliResult, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "harmofl",
    version,
    about = "Federated learning with amplitude harmonization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Print the resolved config and exit without running.
    #[arg(long)]
    dry_run: bool,
    /// Replace `experiment.seeds`; repeat or comma-separate for several.
    #[arg(long, value_delimiter = ',')]
    seed_override: Vec<u64>,
    /// Replace `experiment.out_dir`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> CliResult<ExperimentConfig> {
        let overrides = Overrides {
            seeds: (!self.seed_override.is_empty()).then(|| self.seed_override.clone()),
            out_dir: self.out_dir.clone(),
        };
        commands::resolve(&self.config, &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured algorithm over every seed.
    Run(Common),
    /// Train fedavg, fedavg_ampnorm and harmofl on identical data.
    Ablate(Common),
    /// Write per-client loss surfaces around a checkpoint.
    ExportLandscape {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 21)]
        grid: usize,
        #[arg(long, default_value_t = 1.0)]
        span: f64,
        #[arg(long, default_value_t = 0)]
        direction_seed: u64,
    },
    /// Render the config's dataset to a binary dataset file.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn execute(cli: Cli) -> CliResult<()> {
    let common = match &cli.command {
        Command::Run(c) | Command::Ablate(c) => c,
        Command::ExportLandscape { common, .. } | Command::GenData { common, .. } => common,
    };
    let cfg = common.resolve()?;
    if common.dry_run {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    match cli.command {
        Command::Run(_) => {
            commands::run(&cfg)?;
            println!("wrote {}", cfg.experiment.out_dir.display());
        }
        Command::Ablate(_) => {
            commands::ablate(&cfg)?;
            println!(
                "wrote {}",
                cfg.experiment.out_dir.join("ablation.csv").display()
            );
        }
        Command::ExportLandscape {
            checkpoint,
            grid,
            span,
            direction_seed,
            ..
        } => {
            let args = LandscapeArgs {
                checkpoint,
                grid,
                span,
                direction_seed,
                out_dir: cfg.experiment.out_dir.join("landscape"),
            };
            for path in commands::export_landscape(&cfg, &args)? {
                println!("wrote {}", path.display());
            }
        }
        Command::GenData { seed, out, .. } => {
            commands::gen_data(&cfg, seed, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
