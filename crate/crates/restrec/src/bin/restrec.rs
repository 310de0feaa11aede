//! Command-line entry point: prepare, train, eval, simulate, visualize, and
//! the multi-seed driver.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use restrec::config::RunConfig;
use restrec::pipeline;
use restrec::scm::{self, ScmSpec};

#[derive(Parser)]
#[command(name = "restrec", about = "Debiased social recommendation via latent exposure-strategy reconstruction", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override single keys, e.g. --set train.seed=7 (repeatable; wins over
    /// the file).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> restrec::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for kv in &self.sets {
            let Some((k, v)) = kv.split_once('=') else {
                return Err(restrec::Error::Validation(format!(
                    "--set expects KEY=VALUE, got `{kv}`"
                )));
            };
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Load the raw TSVs, split, and materialize graph + counterfactual pool.
    Prepare(ConfigArgs),
    /// Train on the prepared split and keep the best-validation checkpoint.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Sweep the configured learning-rate grid instead of the single rate.
        #[arg(long)]
        grid: bool,
        /// Model variant: `full` or `rest-s` (overrides the config key).
        #[arg(long)]
        ablation: Option<String>,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Generate a synthetic exposure-biased dataset and verify the
    /// identification identity on the simulator.
    Simulate {
        /// SCM spec JSON; a built-in demonstration spec is used if omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value = "run/simulate")]
        out_dir: PathBuf,
    },
    /// Render grouped hard strategy codes as a CSV/PNG heatmap.
    Visualize {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Timestamp bucket width (seconds) for grouping rows.
        #[arg(long, default_value_t = 86400)]
        bucket_seconds: i64,
        /// Pixel size of one heatmap cell in the PNG.
        #[arg(long, default_value_t = 12)]
        cell_px: usize,
    },
    /// Train and evaluate over consecutive seeds; report mean and std.
    Seeds {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 5)]
        num_seeds: u64,
    },
}

fn run() -> restrec::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Prepare(cfg_args) => {
            let cfg = cfg_args.resolve()?;
            let arts = pipeline::cmd_prepare(&cfg)?;
            println!("{}", arts.summary);
            println!("manifest: {}", arts.manifest_path.display());
            println!("id maps:  {}", arts.id_maps_path.display());
            println!("pool:     {}", arts.pool_path.display());
        }
        Command::Train { cfg, grid, ablation } => {
            let mut cfg = cfg.resolve()?;
            if let Some(ablation) = ablation {
                cfg.set("model.ablation", &ablation)?;
            }
            let arts = pipeline::cmd_train(&cfg, grid)?;
            println!(
                "best val {:.6} at step {} (lr {}), stopped at step {}",
                arts.outcome.best_val.value,
                arts.outcome.best_step,
                arts.selected_lr,
                arts.outcome.stopped_at
            );
            println!("checkpoint: {}", arts.checkpoint_path.display());
            println!("log:        {}", arts.log_path.display());
        }
        Command::Eval { cfg, checkpoint } => {
            let cfg = cfg.resolve()?;
            let (path, report) = pipeline::cmd_eval(&cfg, &checkpoint)?;
            for (name, (mean, _)) in &report.metrics {
                println!("{name} = {mean:.6}");
            }
            println!("report: {}", path.display());
        }
        Command::Simulate { spec, out_dir } => {
            let spec = match spec {
                Some(path) => ScmSpec::load(&path)?,
                None => scm::demo_biased_spec(),
            };
            let arts = pipeline::cmd_simulate(&spec, &out_dir)?;
            println!("logged interactions: {}", arts.logged);
            println!("max adjustment discrepancy: {:.3e}", arts.max_discrepancy);
            println!("max selection bias (TV): {:.4}", arts.max_bias);
            println!("report: {}", arts.report_path.display());
        }
        Command::Visualize {
            cfg,
            checkpoint,
            bucket_seconds,
            cell_px,
        } => {
            let cfg = cfg.resolve()?;
            let (csv, png) = pipeline::cmd_visualize(&cfg, &checkpoint, bucket_seconds, cell_px)?;
            println!("csv: {}", csv.display());
            println!("png: {}", png.display());
        }
        Command::Seeds { cfg, num_seeds } => {
            let cfg = cfg.resolve()?;
            let (path, report) = pipeline::cmd_seeds(&cfg, num_seeds)?;
            for (name, (mean, std)) in &report.metrics {
                println!("{name} = {mean:.6} +- {std:.6}");
            }
            println!("aggregate: {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
