use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use prl_core::agents::Support;
use prl_core::envs::EnvId;
use prl_core::net::{read_checkpoint, Head, Network};
use prl_core::prune::{PruneSchedule, PruneScope};
use prl_core::RngStream;
use prl_harness::analysis::analyze_checkpoint;
use prl_harness::dataset::{record_dataset_with_epsilon, DatasetFile};
use prl_harness::registry::{calibrate, format_registry};
use prl_harness::report::{emit_report, schedule_csv, schedule_svg, write_square_csv};
use prl_harness::sweep::{run_seed, run_single, run_sweep, save_run};
use prl_harness::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "prl",
    version,
    about = "Gradual magnitude pruning lab for value-based deep RL"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a single cell online.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a single cell from a recorded dataset.
    TrainOffline {
        #[arg(long)]
        config: PathBuf,
        /// Dataset file; overrides `dataset` in the config.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Roll out a checkpoint and write a subsampled transition file.
    RecordDataset {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        env: EnvId,
        #[arg(long, default_value_t = 50_000)]
        steps: u64,
        #[arg(long, default_value_t = 0.05)]
        rate: f64,
        /// Behaviour ε of the rollout.
        #[arg(long, default_value_t = 0.01)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every cell × seed of a config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Replace the config's seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gradient covariance and representation diagnostics of a checkpoint.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 32)]
        items: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render charts and a summary for a finished sweep directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a sparsity schedule as CSV and SVG.
    ScheduleDump {
        #[arg(long, default_value_t = 0.95)]
        sparsity: f64,
        #[arg(long, default_value_t = 100_000)]
        total: u64,
        #[arg(long, default_value_t = 0.2)]
        start: f64,
        #[arg(long, default_value_t = 0.8)]
        end: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-measure random-policy baselines and write a registry file.
    Calibrate {
        #[arg(long, default_value_t = 10_000)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(
    path: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(o) = out {
        cfg.out = o;
    }
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    Ok(cfg)
}

fn train_one(cfg: &ExperimentConfig, dataset: Option<&Path>) -> anyhow::Result<()> {
    let cells = cfg.cells();
    if cells.len() != 1 {
        bail!(
            "train runs one cell but the config spans {}; use `sweep`",
            cells.len()
        );
    }
    let cell = &cells[0];
    let seed = cfg.seeds[0];
    let data = match dataset {
        Some(p) => {
            let d = DatasetFile::load(p)?;
            if d.env != cell.env {
                bail!(
                    "dataset was recorded on {}, config asks for {}",
                    d.env,
                    cell.env
                );
            }
            Some(d.transitions)
        }
        None => None,
    };
    let outcome = run_single(cfg, cell, seed, data.as_deref())?;
    save_run(&outcome, &cfg.out)?;
    if let Some(f) = &outcome.failure {
        bail!("run stopped: {f}");
    }
    let last = outcome.records.last();
    println!(
        "{} seed {} (run seed {}): {} gradient steps, final return {:.3}, sparsity {:.4}",
        cell.label(),
        seed,
        run_seed(cell, seed),
        outcome.grad_steps,
        last.map_or(f64::NAN, |r| r.episode_return),
        last.map_or(f64::NAN, |r| r.sparsity)
    );
    println!("wrote {}", cfg.out.display());
    Ok(())
}

fn load_network(path: &Path) -> anyhow::Result<Network> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(
        read_checkpoint(BufReader::new(f))
            .with_context(|| format!("reading {}", path.display()))?,
    )
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let cfg = load_config(&config, out, seed)?;
            if cfg.agent.is_offline() {
                bail!("{} is an offline agent; use `train-offline`", cfg.agent);
            }
            train_one(&cfg, None)
        }
        Command::TrainOffline {
            config,
            dataset,
            seed,
            out,
        } => {
            let cfg = load_config(&config, out, seed)?;
            let path = dataset
                .or_else(|| cfg.dataset.clone())
                .context("no dataset given")?;
            train_one(&cfg, Some(&path))
        }
        Command::RecordDataset {
            checkpoint,
            env,
            steps,
            rate,
            epsilon,
            seed,
            out,
        } => {
            let net = load_network(&checkpoint)?;
            let support = match net.head() {
                Head::Categorical { num_atoms } => Some(Support::new(
                    -env.return_scale(),
                    env.return_scale(),
                    num_atoms,
                )?),
                Head::Scalar => None,
            };
            let (file, summary) = record_dataset_with_epsilon(
                &net,
                support.as_ref(),
                env,
                steps,
                rate,
                epsilon,
                RngStream::new(seed, 0),
            )?;
            file.save(&out)?;
            println!(
                "wrote {} of {} transitions to {} (behaviour return {:.4} over {} episodes)",
                summary.written,
                summary.steps,
                out.display(),
                summary.behavior_return,
                summary.episodes
            );
            Ok(())
        }
        Command::Sweep {
            config,
            workers,
            seed,
            out,
        } => {
            let cfg = load_config(&config, out, seed)?;
            let table = run_sweep(&cfg, workers)?;
            print!("{}", prl_harness::report::summary_text(&table));
            Ok(())
        }
        Command::Analyze {
            config,
            checkpoint,
            items,
            seed,
            out,
        } => {
            let cfg = load_config(&config, None, None)?;
            let cell = cfg
                .cells()
                .into_iter()
                .next()
                .context("config has no cells")?;
            let spec = cfg.train_spec(&cell)?;
            let net = load_network(&checkpoint)?;
            let a =
                analyze_checkpoint(&net, &spec.agent, cell.env, items, RngStream::new(seed, 0))?;
            let dir = out.join("covariance");
            fs::create_dir_all(&dir)?;
            let stem = checkpoint
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("checkpoint");
            let path = dir.join(format!("{stem}.csv"));
            fs::write(&path, write_square_csv(&a.covariance))?;
            println!(
                "srank {} dormant {:.4} q_norm {:.4} params_norm {:.4} sparsity {:.4}",
                a.srank, a.dormant_fraction, a.q_norm, a.params_norm, a.sparsity
            );
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Report { out } => {
            for p in emit_report(&out)? {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::ScheduleDump {
            sparsity,
            total,
            start,
            end,
            out,
        } => {
            let sched = PruneSchedule::from_fractions(
                sparsity,
                total,
                start,
                end,
                1,
                PruneScope::PerLayer,
            )?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("schedule.csv"), schedule_csv(&sched, total, 1000))?;
            fs::write(out.join("schedule.svg"), schedule_svg(&sched, total))?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Calibrate {
            episodes,
            seed,
            out,
        } => {
            let reg = calibrate(episodes, seed);
            fs::write(&out, format_registry(&reg))?;
            print!("{}", format_registry(&reg));
            Ok(())
        }
    }
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
