use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use gmlab::experiment::{parse_config, read_results, run_and_write, ExperimentConfig, ExperimentKind};

#[derive(Parser, Debug)]
#[command(name = "gmlab", version, about = "Monte Carlo validation experiments for Gauss-Markov additive functionals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the experiment described by a JSON config file.
    Run {
        config: PathBuf,
        /// Overrides `master_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `output_dir`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Overrides `mc_budget_guard` (total simulated path steps).
        #[arg(long)]
        budget: Option<f64>,
        /// Also write raw samples under `samples/`.
        #[arg(long)]
        dump_samples: bool,
    },
    /// List the available experiments.
    ListExperiments,
    /// Print a config with every default filled in.
    PrintDefaults {
        /// Experiment name, e.g. `phase_transition`.
        experiment: Option<String>,
    },
}

fn parse_kind(name: &str) -> Result<ExperimentKind> {
    ExperimentKind::ALL.into_iter().find(|k| k.name() == name).with_context(|| {
        let names: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
        format!("unknown experiment `{name}`, expected one of: {}", names.join(", "))
    })
}

fn run(
    path: PathBuf,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    threads: Option<usize>,
    budget: Option<f64>,
    dump_samples: bool,
) -> Result<()> {
    let raw = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = parse_config(&raw).with_context(|| format!("invalid config {}", path.display()))?;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if let Some(b) = budget {
        cfg.mc_budget_guard = b;
    }
    if let Some(d) = out_dir {
        cfg.output_dir = d;
    }
    cfg.validate().with_context(|| format!("invalid config {}", path.display()))?;
    if let Some(t) = threads {
        if t == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("configuring thread pool")?;
    }
    log::info!("running {} into {}", cfg.experiment.name(), cfg.output_dir.display());
    let manifest = run_and_write(&cfg, &cfg.output_dir, dump_samples)?;
    let failed = read_results(&cfg.output_dir.join("results.csv"))?.iter().filter(|r| r.pass == Some(false)).count();
    println!(
        "{}: {} rows, {} failing checks, {:.1}s -> {}",
        manifest.experiment,
        manifest.rows,
        failed,
        manifest.wall_time_seconds,
        cfg.output_dir.join("results.csv").display()
    );
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run { config, seed, out_dir, threads, budget, dump_samples } => {
            run(config, seed, out_dir, threads, budget, dump_samples)
        }
        Command::ListExperiments => {
            for k in ExperimentKind::ALL {
                println!("{:<20} {}", k.name(), k.description());
            }
            Ok(())
        }
        Command::PrintDefaults { experiment } => {
            let kinds = match experiment {
                Some(name) => vec![parse_kind(&name)?],
                None => ExperimentKind::ALL.to_vec(),
            };
            let cfgs: Vec<ExperimentConfig> = kinds.into_iter().map(ExperimentConfig::with_defaults).collect();
            let out = if cfgs.len() == 1 {
                serde_json::to_string_pretty(&cfgs[0])?
            } else {
                serde_json::to_string_pretty(&cfgs)?
            };
            println!("{out}");
            Ok(())
        }
    }
}
