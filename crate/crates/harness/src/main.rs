use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use opex_core::dataset::generate_dataset_with_sensors;
use opex_core::nd::rng::{derive_seed, stream_id};
use opex_core::problem::ProblemDef;
use opex_harness::config::{ExperimentConfig, Scale};
use opex_harness::container::{export_dataset, import_dataset, save_model};
use opex_harness::experiments::{run_capacity_sweep, run_detection, run_heatmap, run_repair_comparison, rerun, train_model};
use opex_harness::registry::Registry;
use opex_harness::table::ResultTable;

#[derive(Parser)]
#[command(name = "opex", about = "DeepONet extrapolation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Writes a preset experiment config.
    Preset {
        #[arg(long)]
        problem: String,
        #[arg(long, value_enum, default_value = "desk")]
        scale: ScaleArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generates a dataset container for one correlation length.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        length: f64,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, env = "OPEX_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains a DeepONet at the first training length and first seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    SweepHeatmap {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    SweepCapacity {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    Detect {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    Repair {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validates a dataset container and prints its shape.
    Import {
        #[arg(long)]
        path: PathBuf,
    },
    /// Prints a result table as CSV; with `--rerun`, re-executes it and reports the largest mean difference.
    Report {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        rerun: bool,
    },
    /// Lists registered repair methods.
    Methods,
}

fn write_table(table: &ResultTable, out: &Path) -> anyhow::Result<()> {
    let (csv, json) = table.write(out, &table.experiment)?;
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let registry = Registry::default();
    match cli.command {
        Command::Preset { problem, scale, out } => {
            let Some(p) = ProblemDef::by_name(&problem) else { bail!("unknown problem {problem}") };
            let scale = match scale {
                ScaleArg::Desk => Scale::Desk,
                ScaleArg::Full => Scale::Full,
            };
            let cfg = ExperimentConfig::preset(p, scale);
            std::fs::write(&out, serde_json::to_string_pretty(&cfg)?).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::GenData { config, length, count, seed, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let data = generate_dataset_with_sensors(&cfg.problem, &cfg.field(length), count.unwrap_or(cfg.n_train), 100, derive_seed(seed, stream_id("gen-data")))?;
            let path = export_dataset(&data, &out)?;
            println!("wrote {} functions to {}", data.len(), path.display());
        }
        Command::Train { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let (model, _) = train_model(&cfg, cfg.l_train[0], cfg.seeds[0])?;
            let path = save_model(&model, &out)?;
            println!("wrote {}", path.display());
        }
        Command::SweepHeatmap { config, out } => {
            let outcome = run_heatmap(&ExperimentConfig::load(&config)?)?;
            if let (Some(fit), Some(rho)) = (&outcome.fit, outcome.spearman) {
                println!("ex+ power law exponent {:.3} ± {:.3}, spearman {:.3}", fit.exponent, fit.exponent_stderr, rho);
            }
            write_table(&outcome.table, &out)?;
        }
        Command::SweepCapacity { config, out } => write_table(&run_capacity_sweep(&ExperimentConfig::load(&config)?)?, &out)?,
        Command::Detect { config, out } => write_table(&run_detection(&ExperimentConfig::load(&config)?)?, &out)?,
        Command::Repair { config, out } => write_table(&run_repair_comparison(&ExperimentConfig::load(&config)?, &registry)?, &out)?,
        Command::Import { path } => {
            let data = import_dataset(&path)?;
            println!("{} functions, {} sensors, {} queries of dimension {}", data.len(), data.sensors.len(), data.queries.nrows(), data.queries.ncols());
        }
        Command::Report { table, rerun: again } => {
            let t = ResultTable::read_json(&table)?;
            print!("{}", t.to_csv()?);
            if again {
                let fresh = rerun(&t, &registry)?;
                let diff = fresh.max_mean_difference(&t).context("re-run produced a different set of rows")?;
                println!("max |mean difference| on re-run: {diff:.3e}");
            }
        }
        Command::Methods => {
            for name in registry.names() {
                println!("{name}");
            }
        }
    }
    Ok(())
}
