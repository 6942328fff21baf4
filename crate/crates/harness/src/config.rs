//! Plain-text experiment configuration: `key = value` lines, `#` comments,
//! comma-separated lists on the sweep axes. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use prl_core::agents::{AgentConfig, AgentKind, LossKind, SparsityConfig, TrainSpec};
use prl_core::envs::{EnvId, ScoreRegistry};
use prl_core::interventions::{InterventionConfig, InterventionKind};
use prl_core::net::Arch;
use prl_core::prune::PruneScope;

use crate::error::{HarnessError, Result};

/// Keys that accept a list of values and span the sweep grid.
const AXES: &[&str] = &["env", "width", "sparsity", "replay_ratio", "intervention"];

const SCALARS: &[&str] = &[
    "agent",
    "arch",
    "seeds",
    "total_steps",
    "log_interval",
    "eval_episodes",
    "diagnostics",
    "out",
    "dataset",
    "start_fraction",
    "end_fraction",
    "update_interval",
    "scope",
    "head_prunable",
    "gamma",
    "n_step",
    "lr",
    "adam_eps",
    "batch_size",
    "min_replay",
    "replay_capacity",
    "target_sync",
    "eps_start",
    "eps_end",
    "eps_decay_steps",
    "eval_epsilon",
    "num_atoms",
    "v_min",
    "v_max",
    "cql_alpha",
    "prioritized",
    "priority_alpha",
    "priority_beta",
    "loss",
    "intervention_period",
    "redo_tau",
    "weight_decay",
    "registry",
];

/// Parsed `key = value` pairs; each value is its comma-separated items.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, Vec<String>>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HarnessError::config(i + 1, format!("expected `key = value`, got `{line}`"))
            })?;
            let key = key.trim().to_string();
            if !AXES.contains(&key.as_str()) && !SCALARS.contains(&key.as_str()) {
                return Err(HarnessError::config(i + 1, format!("unknown key `{key}`")));
            }
            let items: Vec<String> = value.split(',').map(|v| v.trim().to_string()).collect();
            if items.iter().any(|v| v.is_empty()) {
                return Err(HarnessError::config(
                    i + 1,
                    format!("empty value for `{key}`"),
                ));
            }
            if items.len() > 1 && !AXES.contains(&key.as_str()) && key != "seeds" {
                return Err(HarnessError::config(
                    i + 1,
                    format!("`{key}` takes a single value"),
                ));
            }
            if entries.insert(key.clone(), items).is_some() {
                return Err(HarnessError::config(
                    i + 1,
                    format!("duplicate key `{key}`"),
                ));
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<&[String]> {
        self.entries.get(key).map(|v| v.as_slice())
    }

    fn scalar<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(v) => parse_value(key, &v[0]).map(Some),
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: fmt::Display,
    {
        self.get(key)
            .map(|v| v.iter().map(|s| parse_value(key, s)).collect())
            .transpose()
    }
}

fn parse_value<T: FromStr>(key: &str, s: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    s.parse()
        .map_err(|e: T::Err| HarnessError::Invalid(format!("bad value `{s}` for `{key}`: {e}")))
}

fn parse_bool(key: &str, s: &str) -> Result<bool> {
    match s {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(HarnessError::Invalid(format!(
            "bad value `{s}` for `{key}`: expected true/false"
        ))),
    }
}

fn parse_arch(s: &str) -> Result<Arch> {
    match s {
        "mlp" => Ok(Arch::Mlp),
        "residual" | "resmlp" => Ok(Arch::Residual),
        _ => Err(HarnessError::Invalid(format!("unknown arch `{s}`"))),
    }
}

pub fn arch_name(a: Arch) -> &'static str {
    match a {
        Arch::Mlp => "mlp",
        Arch::Residual => "residual",
    }
}

/// One point of the sweep grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub env: EnvId,
    pub width: usize,
    pub sparsity: f64,
    pub replay_ratio: f64,
    pub intervention: InterventionKind,
}

impl Cell {
    /// Stable identifier, also used to derive run seeds.
    pub fn label(&self) -> String {
        format!(
            "{}_w{}_s{}_rr{}_{}",
            self.env.name(),
            self.width,
            self.sparsity,
            self.replay_ratio,
            self.intervention.name()
        )
    }

    /// The cell without its environment: runs sharing a group are pooled
    /// across environments when aggregating.
    pub fn group(&self) -> String {
        format!(
            "w{}_s{}_rr{}_{}",
            self.width,
            self.sparsity,
            self.replay_ratio,
            self.intervention.name()
        )
    }
}

/// A full experiment: sweep axes plus shared hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub envs: Vec<EnvId>,
    pub agent: AgentKind,
    pub arch: Arch,
    pub widths: Vec<usize>,
    pub sparsities: Vec<f64>,
    pub start_fraction: f64,
    pub end_fraction: f64,
    pub update_interval: u64,
    pub scope: PruneScope,
    pub head_prunable: bool,
    pub replay_ratios: Vec<f64>,
    pub interventions: Vec<InterventionKind>,
    pub intervention_period: u64,
    pub redo_tau: f64,
    pub weight_decay: f64,
    pub seeds: Vec<u64>,
    /// Environment steps online, gradient steps offline.
    pub total_steps: u64,
    pub log_interval: u64,
    pub eval_episodes: usize,
    pub diagnostics: bool,
    pub out: PathBuf,
    pub dataset: Option<PathBuf>,
    pub registry: Option<PathBuf>,
    /// Agent overrides applied on top of the per-kind defaults.
    overrides: Vec<(String, String)>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let sparsity = SparsityConfig::default();
        let iv = InterventionConfig::default();
        Self {
            envs: vec![EnvId::CartPole],
            agent: AgentKind::Dqn,
            arch: Arch::Mlp,
            widths: vec![1],
            sparsities: vec![0.0],
            start_fraction: sparsity.start_fraction,
            end_fraction: sparsity.end_fraction,
            update_interval: sparsity.update_interval,
            scope: sparsity.scope,
            head_prunable: true,
            replay_ratios: vec![0.25],
            interventions: vec![InterventionKind::None],
            intervention_period: iv.period,
            redo_tau: iv.redo_tau,
            weight_decay: iv.weight_decay,
            seeds: vec![0],
            total_steps: 100_000,
            log_interval: 10_000,
            eval_episodes: 10,
            diagnostics: true,
            out: PathBuf::from("runs"),
            dataset: None,
            registry: None,
            overrides: Vec::new(),
        }
    }
}

impl FromStr for ExperimentConfig {
    type Err = HarnessError;

    fn from_str(text: &str) -> Result<Self> {
        Self::from_raw(&RawConfig::parse(text)?)
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        text.parse()
    }

    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        let mut c = Self::default();
        if let Some(v) = raw.list::<EnvId>("env")? {
            c.envs = v;
        }
        if let Some(v) = raw.scalar::<AgentKind>("agent")? {
            c.agent = v;
        }
        if let Some(v) = raw.get("arch") {
            c.arch = parse_arch(&v[0])?;
        }
        if let Some(v) = raw.list("width")? {
            c.widths = v;
        }
        if let Some(v) = raw.list("sparsity")? {
            c.sparsities = v;
        }
        if let Some(v) = raw.scalar("start_fraction")? {
            c.start_fraction = v;
        }
        if let Some(v) = raw.scalar("end_fraction")? {
            c.end_fraction = v;
        }
        if let Some(v) = raw.scalar("update_interval")? {
            c.update_interval = v;
        }
        if let Some(v) = raw.get("scope") {
            c.scope = match v[0].as_str() {
                "layer" | "per-layer" | "per_layer" => PruneScope::PerLayer,
                "global" => PruneScope::Global,
                other => return Err(HarnessError::Invalid(format!("unknown scope `{other}`"))),
            };
        }
        if let Some(v) = raw.get("head_prunable") {
            c.head_prunable = parse_bool("head_prunable", &v[0])?;
        }
        if let Some(v) = raw.list("replay_ratio")? {
            c.replay_ratios = v;
        }
        if let Some(v) = raw.list::<InterventionKind>("intervention")? {
            c.interventions = v;
        }
        if let Some(v) = raw.scalar("intervention_period")? {
            c.intervention_period = v;
        }
        if let Some(v) = raw.scalar("redo_tau")? {
            c.redo_tau = v;
        }
        if let Some(v) = raw.scalar("weight_decay")? {
            c.weight_decay = v;
        }
        if let Some(v) = raw.list("seeds")? {
            c.seeds = v;
        }
        if let Some(v) = raw.scalar("total_steps")? {
            c.total_steps = v;
        }
        if let Some(v) = raw.scalar("log_interval")? {
            c.log_interval = v;
        }
        if let Some(v) = raw.scalar("eval_episodes")? {
            c.eval_episodes = v;
        }
        if let Some(v) = raw.get("diagnostics") {
            c.diagnostics = parse_bool("diagnostics", &v[0])?;
        }
        if let Some(v) = raw.get("out") {
            c.out = PathBuf::from(&v[0]);
        }
        if let Some(v) = raw.get("dataset") {
            c.dataset = Some(PathBuf::from(&v[0]));
        }
        if let Some(v) = raw.get("registry") {
            c.registry = Some(PathBuf::from(&v[0]));
        }
        for key in AGENT_KEYS {
            if let Some(v) = raw.get(key) {
                c.overrides.push((key.to_string(), v[0].clone()));
            }
        }
        c.validate()?;
        Ok(c)
    }

    /// Set an agent hyperparameter by its config key.
    pub fn set_agent_option(&mut self, key: &str, value: &str) -> Result<()> {
        if !AGENT_KEYS.contains(&key) {
            return Err(HarnessError::Invalid(format!(
                "unknown agent option `{key}`"
            )));
        }
        self.overrides.retain(|(k, _)| k != key);
        self.overrides.push((key.to_string(), value.to_string()));
        // Surface bad values immediately.
        self.agent_config(EnvId::CartPole, 0.25).map(|_| ())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Invalid(m.to_string()));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if !(0.0..=1.0).contains(&self.start_fraction)
            || !(0.0..=1.0).contains(&self.end_fraction)
            || self.start_fraction >= self.end_fraction
        {
            return bad("window fractions must satisfy 0 <= start < end <= 1");
        }
        if self.envs.is_empty()
            || self.widths.is_empty()
            || self.sparsities.is_empty()
            || self.replay_ratios.is_empty()
            || self.interventions.is_empty()
        {
            return bad("sweep axes must not be empty");
        }
        if self.sparsities.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return bad("sparsity values must lie in [0, 1]");
        }
        if self.agent.is_offline() && self.envs.len() > 1 {
            return bad("offline agents train on one dataset, so take a single env");
        }
        for cell in self.cells() {
            self.train_spec(&cell)?;
        }
        Ok(())
    }

    /// Cartesian product of the sweep axes, in a fixed order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &env in &self.envs {
            for &width in &self.widths {
                for &sparsity in &self.sparsities {
                    for &replay_ratio in &self.replay_ratios {
                        for &intervention in &self.interventions {
                            cells.push(Cell {
                                env,
                                width,
                                sparsity,
                                replay_ratio,
                                intervention,
                            });
                        }
                    }
                }
            }
        }
        cells
    }

    fn agent_config(&self, env: EnvId, replay_ratio: f64) -> Result<AgentConfig> {
        let mut a = AgentConfig::for_kind(self.agent, env.return_scale());
        a.replay_ratio = replay_ratio;
        for (k, v) in &self.overrides {
            apply_agent_option(&mut a, k, v)?;
        }
        a.validate()?;
        Ok(a)
    }

    pub fn registry(&self) -> Result<ScoreRegistry> {
        match &self.registry {
            Some(p) => crate::registry::load_registry(p),
            None => Ok(ScoreRegistry::default()),
        }
    }

    pub fn train_spec(&self, cell: &Cell) -> Result<TrainSpec> {
        let mut spec = TrainSpec::new(cell.env, self.agent);
        spec.agent = self.agent_config(cell.env, cell.replay_ratio)?;
        spec.arch = self.arch;
        spec.width = cell.width;
        spec.head_prunable = self.head_prunable;
        spec.sparsity = SparsityConfig {
            final_sparsity: cell.sparsity,
            start_fraction: self.start_fraction,
            end_fraction: self.end_fraction,
            update_interval: self.update_interval,
            scope: self.scope,
        };
        spec.intervention = InterventionConfig {
            kind: cell.intervention,
            period: self.intervention_period,
            redo_tau: self.redo_tau,
            weight_decay: self.weight_decay,
        };
        spec.total_steps = self.total_steps;
        spec.log_interval = self.log_interval;
        spec.eval_episodes = self.eval_episodes;
        spec.diagnostics = self.diagnostics;
        spec.normalization = self.registry()?.get(cell.env.name());
        spec.validate()?;
        Ok(spec)
    }
}

const AGENT_KEYS: &[&str] = &[
    "gamma",
    "n_step",
    "lr",
    "adam_eps",
    "batch_size",
    "min_replay",
    "replay_capacity",
    "target_sync",
    "eps_start",
    "eps_end",
    "eps_decay_steps",
    "eval_epsilon",
    "num_atoms",
    "v_min",
    "v_max",
    "cql_alpha",
    "prioritized",
    "priority_alpha",
    "priority_beta",
    "loss",
];

fn apply_agent_option(a: &mut AgentConfig, key: &str, v: &str) -> Result<()> {
    match key {
        "gamma" => a.gamma = parse_value(key, v)?,
        "n_step" => a.n_step = parse_value(key, v)?,
        "lr" => a.adam.lr = parse_value(key, v)?,
        "adam_eps" => a.adam.eps = parse_value(key, v)?,
        "batch_size" => a.batch_size = parse_value(key, v)?,
        "min_replay" => a.min_replay = parse_value(key, v)?,
        "replay_capacity" => a.replay_capacity = parse_value(key, v)?,
        "target_sync" => a.target_sync_period = parse_value(key, v)?,
        "eps_start" => a.eps_start = parse_value(key, v)?,
        "eps_end" => a.eps_end = parse_value(key, v)?,
        "eps_decay_steps" => a.eps_decay_steps = Some(parse_value(key, v)?),
        "eval_epsilon" => a.eval_epsilon = parse_value(key, v)?,
        "num_atoms" => a.num_atoms = parse_value(key, v)?,
        "v_min" => a.v_min = parse_value(key, v)?,
        "v_max" => a.v_max = parse_value(key, v)?,
        "cql_alpha" => a.cql_alpha = parse_value(key, v)?,
        "prioritized" => a.prioritized = parse_bool(key, v)?,
        "priority_alpha" => a.priority_alpha = parse_value(key, v)?,
        "priority_beta" => a.priority_beta = parse_value(key, v)?,
        "loss" => {
            a.loss = match v {
                "squared" | "mse" => LossKind::Squared,
                "huber" => LossKind::Huber,
                _ => return Err(HarnessError::Invalid(format!("unknown loss `{v}`"))),
            }
        }
        _ => {
            return Err(HarnessError::Invalid(format!(
                "unknown agent option `{key}`"
            )))
        }
    }
    Ok(())
}
