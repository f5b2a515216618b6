use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use clego::harness::ExperienceSchedule;
use clego_cli::config::{parse_seeds, ExperimentConfig, Family, Scale, WORKERS_ENV};
use clego_cli::error::{CliError, Result};

#[derive(Parser)]
#[command(name = "clego", version, about = "Continual LEGO experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write train and test datasets for every experience.
    Generate(Common),
    /// Train one model configuration for every seed.
    Train(Common),
    /// Train every (family, layers, heads) cell of the grid.
    #[command(after_help = format!("Set {WORKERS_ENV} to run cells in parallel."))]
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Layer counts of the grid, comma separated.
        #[arg(long, value_delimiter = ',')]
        grid_layers: Option<Vec<usize>>,
        /// Head counts of the grid, comma separated.
        #[arg(long, value_delimiter = ',')]
        grid_heads: Option<Vec<usize>>,
    },
    /// Attention and metric tables for finished run directories.
    Analyze {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// SVG figures from CSV tables.
    Plot {
        #[arg(required = true)]
        tables: Vec<PathBuf>,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
        /// Position shown when overlaying several metrics tables.
        #[arg(long, default_value_t = 5)]
        position: usize,
        /// Experience shown when overlaying several metrics tables.
        #[arg(long, default_value_t = 1)]
        experience: usize,
    },
}

#[derive(Args)]
struct Common {
    /// TOML or JSON config file layered over the scale preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    scale: Option<Scale>,
    #[arg(long, value_enum)]
    family: Option<Family>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    /// Fraction of each finished experience kept for replay.
    #[arg(long)]
    replay: Option<f64>,
    /// Seed count (`4` means seeds 0..4) or a comma-separated list.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long, value_parser = |s: &str| s.parse::<ExperienceSchedule>())]
    schedule: Option<ExperienceSchedule>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
}

impl Common {
    fn resolve(self) -> Result<ExperimentConfig> {
        let mut c = ExperimentConfig::load(self.config.as_deref(), self.scale)?;
        if let Some(v) = self.family {
            c.family = v;
            c.grid.families = vec![v];
        }
        if let Some(v) = self.layers {
            c.layers = v;
        }
        if let Some(v) = self.heads {
            c.heads = v;
        }
        if let Some(v) = self.replay {
            c.train.replay_fraction = v;
        }
        if let Some(v) = self.seeds {
            c.train.seeds = parse_seeds(&v).map_err(CliError::Config)?;
        }
        if let Some(v) = self.schedule {
            c.schedule = v;
        }
        if let Some(v) = self.out {
            c.out = v;
        }
        if let Some(v) = self.epochs {
            c.train.epochs_per_experience = v;
        }
        if let Some(v) = self.batch_size {
            c.train.batch_size = v;
        }
        if let Some(v) = self.train_size {
            c.train_size = v;
        }
        if let Some(v) = self.test_size {
            c.test_size = v;
        }
        c.validate()?;
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(common) => {
            let cfg = common.resolve()?;
            let manifest = clego_cli::cmd_generate(&cfg)?;
            for m in manifest {
                println!("{}\t{}\t{} examples", m.file, m.split, m.examples);
            }
        }
        Command::Train(common) => {
            let cfg = common.resolve()?;
            let summary = clego_cli::cmd_train(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&summary.mean).expect("metrics serialize"));
            println!("run written to {}", cfg.out.display());
        }
        Command::Sweep { common, grid_layers, grid_heads } => {
            let mut cfg = common.resolve()?;
            if let Some(l) = grid_layers {
                cfg.grid.layers = l;
            }
            if let Some(h) = grid_heads {
                cfg.grid.heads = h;
            }
            let report = clego_cli::cmd_sweep(&cfg)?;
            println!("{} jobs, {} trained, table in {}", report.jobs.len(), report.trained(), cfg.out.display());
            let failed = report.rows.iter().filter(|r| r.status.starts_with("failed")).count();
            if failed > 0 {
                return Err(CliError::Training(format!("{failed} sweep cells failed; see sweep.csv")));
            }
        }
        Command::Analyze { runs } => {
            clego_cli::cmd_analyze(&runs)?;
            for r in &runs {
                println!("tables written to {}", r.join("analysis").display());
            }
        }
        Command::Plot { tables, out, position, experience } => {
            for p in clego_cli::cmd_plot(&tables, &out, position, experience)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
