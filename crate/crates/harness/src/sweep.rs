//! Sweep execution: one isolated training run per (cell, seed), metrics
//! CSV and checkpoint per run, and the results table.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use prl_core::agents::{train, DataSource, TrainOutcome};
use prl_core::diagnostics::MetricRecord;
use prl_core::envs::EnvId;
use prl_core::interventions::InterventionKind;
use prl_core::net::write_checkpoint;
use prl_core::replay::Transition;
use prl_core::rng::hash_label;
use prl_core::RngStream;

use crate::config::{Cell, ExperimentConfig};
use crate::dataset::DatasetFile;
use crate::error::{HarnessError, Result};
use crate::stats::{iqm, stratified_bootstrap_ci, DEFAULT_RESAMPLES};

pub const METRICS_HEADER: &str =
    "step,return,norm_return,sparsity,q_variance,params_norm,q_norm,srank,dormant_fraction,loss";
pub const RESULTS_HEADER: &str =
    "cell,env,width,sparsity,replay_ratio,intervention,seed,run_seed,status,final_return,final_norm_return,final_sparsity,grad_steps";

pub fn format_metric_row(r: &MetricRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        r.step,
        r.episode_return,
        r.normalized_return,
        r.sparsity,
        r.q_variance,
        r.params_norm,
        r.q_norm,
        r.srank,
        r.dormant_fraction,
        r.loss
    )
}

pub fn parse_metric_row(line: &str) -> std::result::Result<MetricRecord, String> {
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != 10 {
        return Err(format!("expected 10 fields, got {}", f.len()));
    }
    let float = |i: usize| {
        f[i].parse::<f64>()
            .map_err(|e| format!("field {i} `{}`: {e}", f[i]))
    };
    Ok(MetricRecord {
        step: f[0].parse().map_err(|e| format!("step `{}`: {e}", f[0]))?,
        episode_return: float(1)?,
        normalized_return: float(2)?,
        sparsity: float(3)?,
        q_variance: float(4)?,
        params_norm: float(5)?,
        q_norm: float(6)?,
        srank: f[7].parse().map_err(|e| format!("srank `{}`: {e}", f[7]))?,
        dormant_fraction: float(8)?,
        loss: float(9)?,
    })
}

pub fn write_metrics<W: Write>(records: &[MetricRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in records {
        writeln!(w, "{}", format_metric_row(r))?;
    }
    w.flush()
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let f = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut lines = BufReader::new(f).lines();
    match lines.next() {
        Some(Ok(h)) if h == METRICS_HEADER => {}
        _ => return Err(HarnessError::format(path, "missing metrics header")),
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let l = l.map_err(|e| HarnessError::io(path, e))?;
            parse_metric_row(&l)
                .map_err(|d| HarnessError::format(path, format!("row {}: {d}", i + 2)))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunStatus {
    Ok,
    Failed(String),
}

/// One row of the results table.
#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub cell: Cell,
    pub seed: u64,
    pub run_seed: u64,
    pub status: RunStatus,
    pub final_return: f64,
    pub final_norm_return: f64,
    pub final_sparsity: f64,
    pub grad_steps: u64,
}

impl RunResult {
    fn to_csv(&self) -> String {
        let status = match &self.status {
            RunStatus::Ok => "ok".to_string(),
            RunStatus::Failed(m) => format!("failed: {}", m.replace([',', '\n'], ";")),
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.cell.label(),
            self.cell.env,
            self.cell.width,
            self.cell.sparsity,
            self.cell.replay_ratio,
            self.cell.intervention,
            self.seed,
            self.run_seed,
            status,
            self.final_return,
            self.final_norm_return,
            self.final_sparsity,
            self.grad_steps
        )
    }

    fn from_csv(line: &str) -> std::result::Result<Self, String> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 13 {
            return Err(format!("expected 13 fields, got {}", f.len()));
        }
        let f = &f;
        let e = |i: usize, err: String| format!("field {i} `{}`: {err}", f[i]);
        let float = |i: usize| f[i].parse::<f64>().map_err(|x| e(i, x.to_string()));
        let int = |i: usize| f[i].parse::<u64>().map_err(|x| e(i, x.to_string()));
        let status = if f[8] == "ok" {
            RunStatus::Ok
        } else {
            RunStatus::Failed(f[8].trim_start_matches("failed: ").to_string())
        };
        Ok(Self {
            cell: Cell {
                env: f[1].parse::<EnvId>().map_err(|x| e(1, x.to_string()))?,
                width: int(2)? as usize,
                sparsity: float(3)?,
                replay_ratio: float(4)?,
                intervention: f[5]
                    .parse::<InterventionKind>()
                    .map_err(|x| e(5, x.to_string()))?,
            },
            seed: int(6)?,
            run_seed: int(7)?,
            status,
            final_return: float(9)?,
            final_norm_return: float(10)?,
            final_sparsity: float(11)?,
            grad_steps: int(12)?,
        })
    }

    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }
}

/// Per-run rows in execution order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<RunResult>,
}

impl ResultTable {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{RESULTS_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.to_csv());
        }
        s
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        if lines.next() != Some(RESULTS_HEADER) {
            return Err("missing results header".into());
        }
        let rows = lines
            .enumerate()
            .map(|(i, l)| RunResult::from_csv(l).map_err(|e| format!("row {}: {e}", i + 2)))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text).map_err(|d| HarnessError::format(path, d))
    }

    /// IQM of final normalised returns per group, pooled across
    /// environments, with a stratified bootstrap interval when every
    /// environment has at least two successful seeds.
    pub fn aggregate(&self) -> Vec<GroupSummary> {
        let mut groups: Vec<(String, Vec<&RunResult>)> = Vec::new();
        for r in &self.rows {
            let g = r.cell.group();
            match groups.iter_mut().find(|(k, _)| *k == g) {
                Some((_, v)) => v.push(r),
                None => groups.push((g, vec![r])),
            }
        }
        groups
            .into_iter()
            .map(|(group, runs)| {
                let ok: Vec<&RunResult> = runs.iter().copied().filter(|r| r.is_ok()).collect();
                let mut strata: Vec<(EnvId, Vec<f64>)> = Vec::new();
                for r in &ok {
                    match strata.iter_mut().find(|(e, _)| *e == r.cell.env) {
                        Some((_, v)) => v.push(r.final_norm_return),
                        None => strata.push((r.cell.env, vec![r.final_norm_return])),
                    }
                }
                let pooled: Vec<f64> = strata.iter().flat_map(|(_, v)| v.iter().copied()).collect();
                let point = iqm(&pooled).ok();
                let scores: Vec<Vec<f64>> = strata.into_iter().map(|(_, v)| v).collect();
                let mut rng = RngStream::new(hash_label(&group), 0);
                let ci = stratified_bootstrap_ci(&scores, 0.95, DEFAULT_RESAMPLES, &mut rng).ok();
                let first = &runs[0].cell;
                GroupSummary {
                    width: first.width,
                    sparsity: first.sparsity,
                    replay_ratio: first.replay_ratio,
                    intervention: first.intervention,
                    group,
                    runs: runs.len(),
                    failed: runs.len() - ok.len(),
                    iqm: point,
                    ci,
                    mean_final_sparsity: if ok.is_empty() {
                        f64::NAN
                    } else {
                        ok.iter().map(|r| r.final_sparsity).sum::<f64>() / ok.len() as f64
                    },
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupSummary {
    pub group: String,
    pub width: usize,
    pub sparsity: f64,
    pub replay_ratio: f64,
    pub intervention: InterventionKind,
    pub runs: usize,
    pub failed: usize,
    pub iqm: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub mean_final_sparsity: f64,
}

/// Seed of the run for `cell` under base seed `seed`.
pub fn run_seed(cell: &Cell, seed: u64) -> u64 {
    seed ^ hash_label(&cell.label())
}

pub fn run_dir(out: &Path, cell: &Cell, seed: u64) -> PathBuf {
    out.join("runs")
        .join(cell.label())
        .join(format!("seed{seed}"))
}

/// Train one cell for one seed; `dataset` switches to offline mode.
pub fn run_single(
    cfg: &ExperimentConfig,
    cell: &Cell,
    seed: u64,
    dataset: Option<&[Transition]>,
) -> Result<TrainOutcome> {
    let spec = cfg.train_spec(cell)?;
    let source = match dataset {
        Some(d) => DataSource::Offline(d),
        None => DataSource::Online,
    };
    Ok(train(
        &spec,
        source,
        RngStream::new(run_seed(cell, seed), 0),
    )?)
}

/// Write a run's metrics CSV and final checkpoint into `dir`.
pub fn save_run(outcome: &TrainOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let metrics = dir.join("metrics.csv");
    let f = File::create(&metrics).map_err(|e| HarnessError::io(&metrics, e))?;
    write_metrics(&outcome.records, BufWriter::new(f))
        .map_err(|e| HarnessError::io(&metrics, e))?;
    let ckpt = dir.join("checkpoint.prlc");
    let f = File::create(&ckpt).map_err(|e| HarnessError::io(&ckpt, e))?;
    write_checkpoint(&outcome.network, BufWriter::new(f))?;
    Ok(())
}

fn execute(
    cfg: &ExperimentConfig,
    cell: &Cell,
    seed: u64,
    dataset: Option<&[Transition]>,
) -> RunResult {
    let mut result = RunResult {
        cell: cell.clone(),
        seed,
        run_seed: run_seed(cell, seed),
        status: RunStatus::Ok,
        final_return: f64::NAN,
        final_norm_return: f64::NAN,
        final_sparsity: f64::NAN,
        grad_steps: 0,
    };
    let outcome = run_single(cfg, cell, seed, dataset)
        .and_then(|o| save_run(&o, &run_dir(&cfg.out, cell, seed)).map(|_| o));
    match outcome {
        Ok(o) => {
            if let Some(last) = o.records.last() {
                result.final_return = last.episode_return;
                result.final_norm_return = last.normalized_return;
                result.final_sparsity = last.sparsity;
            }
            result.grad_steps = o.grad_steps;
            if let Some(f) = o.failure {
                result.status = RunStatus::Failed(f);
            }
        }
        Err(e) => result.status = RunStatus::Failed(e.to_string()),
    }
    result
}

/// Run every (cell, seed) pair with up to `workers` threads, then write
/// `results.csv` and `summary.txt` under the config's output directory.
/// Failed runs are recorded, not propagated.
pub fn run_sweep(cfg: &ExperimentConfig, workers: usize) -> Result<ResultTable> {
    let dataset = match (&cfg.dataset, cfg.agent.is_offline()) {
        (Some(p), true) => {
            let d = DatasetFile::load(p)?;
            if cfg.envs != [d.env] {
                return Err(HarnessError::Invalid(format!(
                    "dataset was recorded on {}, config asks for {:?}",
                    d.env, cfg.envs
                )));
            }
            Some(d.transitions)
        }
        (None, true) => {
            return Err(HarnessError::Invalid(
                "offline agents need `dataset = PATH`".into(),
            ))
        }
        (_, false) => None,
    };
    let jobs: Vec<(Cell, u64)> = cfg
        .cells()
        .into_iter()
        .flat_map(|c| cfg.seeds.iter().map(move |&s| (c.clone(), s)))
        .collect();
    fs::create_dir_all(&cfg.out).map_err(|e| HarnessError::io(&cfg.out, e))?;
    let slots: Mutex<Vec<Option<RunResult>>> = Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((cell, seed)) = jobs.get(i) else {
                    break;
                };
                let r = execute(cfg, cell, *seed, dataset.as_deref());
                slots.lock().expect("results lock")[i] = Some(r);
            });
        }
    });
    let rows = slots
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect();
    let table = ResultTable { rows };
    let results = cfg.out.join("results.csv");
    fs::write(&results, table.to_csv()).map_err(|e| HarnessError::io(&results, e))?;
    let summary = cfg.out.join("summary.txt");
    fs::write(&summary, crate::report::summary_text(&table))
        .map_err(|e| HarnessError::io(&summary, e))?;
    Ok(table)
}
