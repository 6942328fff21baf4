use std::collections::VecDeque;

use super::{agent_loss, q_matrix, select_action, AgentConfig, AgentKind, LossOutput, Support};
use crate::diagnostics::{dormant_fraction, params_norm, q_norm, q_variance, srank, MetricRecord, WindowMean, PROBE_BATCH, SRANK_DELTA};
use crate::envs::{make_env, EnvId, ScoreRegistry};
use crate::error::{Error, Result};
use crate::interventions::{apply_l2_unit, apply_weight_decay, redo, reset_last_layers, InterventionConfig, InterventionKind};
use crate::net::{Adam, Arch, Network};
use crate::prune::{
    prune_step, PruneSchedule, PruneScope, DEFAULT_END_FRACTION, DEFAULT_START_FRACTION, DEFAULT_UPDATE_INTERVAL,
};
use crate::replay::{n_step_assemble, ReplayBuffer, ReplayConfig, Transition};
use crate::rng::{hash_label, RngStream};
use crate::tensor::Matrix;

/// Pruning target and window, as fractions of the run's gradient steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SparsityConfig {
    pub final_sparsity: f64,
    pub start_fraction: f64,
    pub end_fraction: f64,
    pub update_interval: u64,
    pub scope: PruneScope,
}

impl Default for SparsityConfig {
    fn default() -> Self {
        Self {
            final_sparsity: 0.0,
            start_fraction: DEFAULT_START_FRACTION,
            end_fraction: DEFAULT_END_FRACTION,
            update_interval: DEFAULT_UPDATE_INTERVAL,
            scope: PruneScope::PerLayer,
        }
    }
}

impl SparsityConfig {
    pub fn dense() -> Self {
        Self::default()
    }

    pub fn with_target(final_sparsity: f64) -> Self {
        Self {
            final_sparsity,
            ..Self::default()
        }
    }

    /// Schedule over `grad_steps` gradient steps; `None` when nothing is pruned.
    pub fn schedule(&self, grad_steps: u64) -> Result<Option<PruneSchedule>> {
        let sched = PruneSchedule::from_fractions(
            self.final_sparsity,
            grad_steps.max(1),
            self.start_fraction,
            self.end_fraction,
            self.update_interval,
            self.scope,
        )?;
        Ok((self.final_sparsity > 0.0 && grad_steps > 0).then_some(sched))
    }
}

/// Everything that defines one training run apart from its seed.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSpec {
    pub env: EnvId,
    pub agent: AgentConfig,
    pub arch: Arch,
    pub width: usize,
    pub head_prunable: bool,
    pub sparsity: SparsityConfig,
    pub intervention: InterventionConfig,
    /// Environment steps online, gradient steps offline.
    pub total_steps: u64,
    /// Logging period in the same unit as `total_steps`.
    pub log_interval: u64,
    /// Greedy evaluation episodes per log row; 0 logs the mean training return.
    pub eval_episodes: usize,
    /// Compute probe-batch diagnostics (q-norm, srank, dormant fraction).
    pub diagnostics: bool,
    /// (random, reference) returns used for normalisation.
    pub normalization: Option<(f64, f64)>,
}

impl TrainSpec {
    pub fn new(env: EnvId, kind: AgentKind) -> Self {
        Self {
            env,
            agent: AgentConfig::for_kind(kind, env.return_scale()),
            arch: Arch::Mlp,
            width: 1,
            head_prunable: true,
            sparsity: SparsityConfig::dense(),
            intervention: InterventionConfig::default(),
            total_steps: 100_000,
            log_interval: 10_000,
            eval_episodes: 10,
            diagnostics: true,
            normalization: ScoreRegistry::default().get(env.name()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.agent.validate()?;
        self.intervention.validate()?;
        if self.total_steps == 0 || self.log_interval == 0 {
            return Err(Error::InvalidArgument("total steps and log interval must be >= 1".into()));
        }
        Ok(())
    }

    /// Gradient steps the run will perform: `⌊ρ·(T − warmup)⌋` online.
    pub fn planned_grad_steps(&self, offline: bool) -> u64 {
        if offline {
            self.total_steps
        } else {
            let after = self.total_steps.saturating_sub(self.agent.min_replay as u64);
            (self.agent.replay_ratio * after as f64).floor() as u64
        }
    }

    fn normalize(&self, raw: f64) -> f64 {
        match self.normalization {
            Some((random, reference)) if reference != random => (raw - random) / (reference - random),
            _ => raw,
        }
    }
}

pub enum DataSource<'a> {
    /// Collect experience by acting in the environment.
    Online,
    /// Train from a fixed set of transitions; no new data is collected.
    Offline(&'a [Transition]),
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub records: Vec<MetricRecord>,
    pub network: Network,
    pub env_steps: u64,
    pub grad_steps: u64,
    /// Set when the run stopped on a non-finite value; the last record
    /// carries a NaN loss at the failing step.
    pub failure: Option<String>,
}

/// Mean undiscounted return over `episodes` episodes at exploration rate `epsilon`.
pub fn evaluate(
    net: &Network,
    support: Option<&Support>,
    env_id: EnvId,
    episodes: usize,
    epsilon: f64,
    rng: RngStream,
) -> Result<f64> {
    let mut env = make_env(env_id, rng.fork(hash_label("env")));
    let mut act = rng.fork(hash_label("act"));
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut obs = env.reset();
        loop {
            let a = select_action(net, support, &obs, epsilon, &mut act)?;
            let s = env.step(a)?;
            total += s.reward;
            if s.done() {
                break;
            }
            obs = s.obs;
        }
    }
    Ok(total / episodes.max(1) as f64)
}

/// Network, optimiser and per-window statistics of one run.
struct Learner<'s> {
    spec: &'s TrainSpec,
    support: Option<Support>,
    net: Network,
    target: Network,
    opt: Adam,
    schedule: Option<PruneSchedule>,
    grad_steps: u64,
    losses: WindowMean,
    target_variance: WindowMean,
    probe: Option<Matrix>,
    sample_rng: RngStream,
    intervention_rng: RngStream,
}

impl Learner<'_> {
    fn loss(&self, batch: &[Transition], weights: Option<&[f64]>) -> Result<LossOutput> {
        agent_loss(&self.spec.agent, &self.net, &self.target, batch, weights)
    }

    /// One gradient step: loss, optimiser update, pruning, interventions
    /// and target synchronisation.
    fn update(&mut self, buffer: &mut ReplayBuffer) -> Result<()> {
        let batch = buffer.sample(self.spec.agent.batch_size, &mut self.sample_rng)?;
        let weights = buffer.config().prioritized.then_some(batch.weights.as_slice());
        let out = self.loss(&batch.transitions, weights)?;
        if !out.loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at gradient step {}", self.grad_steps + 1)));
        }
        self.losses.push(out.loss);
        if out.targets.len() >= 2 {
            self.target_variance.push(q_variance(&out.targets)?);
        }
        buffer.update_priorities(&batch.indices, &out.per_item);

        let iv = self.spec.intervention;
        let mut grads = out.grads;
        if iv.kind == InterventionKind::WeightDecay {
            apply_weight_decay(&mut grads, &self.net.params, iv.weight_decay);
        }
        self.opt.step(&mut self.net.params, &grads)?;
        if iv.kind == InterventionKind::L2Unit {
            apply_l2_unit(&mut self.net.params);
            self.net.params.apply_masks();
        }
        self.grad_steps += 1;
        if let Some(sched) = &self.schedule {
            prune_step(&mut self.net.params, sched, self.grad_steps);
        }
        if iv.fires_at(self.grad_steps) {
            match iv.kind {
                InterventionKind::Reset => reset_last_layers(&mut self.net, &mut self.opt, &mut self.intervention_rng),
                InterventionKind::Redo => {
                    let probe = match &self.probe {
                        Some(p) => p.clone(),
                        None => obs_matrix(&batch.transitions)?,
                    };
                    let out = self.net.forward(&probe, true)?;
                    let cache = out.cache.as_ref().ok_or(Error::MissingCache)?;
                    let report = dormant_fraction(&cache.hidden_activations(), iv.redo_tau);
                    redo(
                        &mut self.net,
                        &mut self.opt,
                        Some(&report),
                        iv.redo_tau,
                        &mut self.intervention_rng,
                    )?;
                }
                _ => {}
            }
            self.net.params.apply_masks();
        }
        if self.grad_steps % self.spec.agent.target_sync_period == 0 {
            self.target = self.net.clone();
        }
        Ok(())
    }

    fn record(&mut self, step: u64, episode_return: f64) -> Result<MetricRecord> {
        let mut rec = MetricRecord {
            step,
            episode_return,
            normalized_return: self.spec.normalize(episode_return),
            sparsity: self.net.params.prunable_sparsity(),
            q_variance: self.target_variance.take(),
            params_norm: params_norm(&self.net.params),
            q_norm: 0.0,
            srank: 0,
            dormant_fraction: 0.0,
            loss: self.losses.take(),
        };
        if let (true, Some(probe)) = (self.spec.diagnostics, &self.probe) {
            let out = self.net.forward(probe, true)?;
            rec.q_norm = q_norm(&q_matrix(&out, self.support.as_ref())?);
            let cache = out.cache.as_ref().ok_or(Error::MissingCache)?;
            rec.srank = srank(cache.features(), SRANK_DELTA)?;
            rec.dormant_fraction = dormant_fraction(&cache.hidden_activations(), self.spec.intervention.redo_tau).fraction;
        }
        Ok(rec)
    }

    fn failure_record(&self, step: u64) -> MetricRecord {
        MetricRecord {
            step,
            episode_return: f64::NAN,
            normalized_return: f64::NAN,
            sparsity: self.net.params.prunable_sparsity(),
            q_variance: f64::NAN,
            params_norm: params_norm(&self.net.params),
            q_norm: f64::NAN,
            srank: 0,
            dormant_fraction: 0.0,
            loss: f64::NAN,
        }
    }
}

fn obs_matrix(ts: &[Transition]) -> Result<Matrix> {
    let d = ts.first().map_or(0, |t| t.obs.len());
    Matrix::new(ts.len(), d, ts.iter().flat_map(|t| t.obs.iter().copied()).collect())
}

/// Fixed probe observations drawn once from the buffer.
fn draw_probe(buffer: &ReplayBuffer, rng: &mut RngStream) -> Result<Matrix> {
    let n = PROBE_BATCH.min(buffer.len());
    let picks: Vec<Transition> = (0..n).map(|_| buffer.get(rng.below(buffer.len())).clone()).collect();
    obs_matrix(&picks)
}

/// Train one agent. Deterministic in `(spec, source, rng)`.
pub fn train(spec: &TrainSpec, source: DataSource<'_>, rng: RngStream) -> Result<TrainOutcome> {
    spec.validate()?;
    let offline = matches!(source, DataSource::Offline(_));
    let cfg = &spec.agent;
    let probe_env = make_env(spec.env, rng.fork(hash_label("shape")));
    let (obs_dim, n_actions) = (probe_env.obs_dim(), probe_env.n_actions());
    drop(probe_env);

    let mut init_rng = rng.fork(hash_label("init"));
    let mut net = Network::build(spec.arch, spec.width, obs_dim, n_actions, cfg.head(), &mut init_rng)?;
    net.set_head_prunable(spec.head_prunable);
    let opt = Adam::new(cfg.adam, &net.params);
    let mut learner = Learner {
        spec,
        support: cfg.support(),
        target: net.clone(),
        net,
        opt,
        schedule: spec.sparsity.schedule(spec.planned_grad_steps(offline))?,
        grad_steps: 0,
        losses: WindowMean::default(),
        target_variance: WindowMean::default(),
        probe: None,
        sample_rng: rng.fork(hash_label("replay")),
        intervention_rng: rng.fork(hash_label("intervention")),
    };
    let mut probe_rng = rng.fork(hash_label("probe"));
    let eval_root = rng.fork(hash_label("eval"));
    let eval = |net: &Network, support: Option<&Support>, step: u64| {
        evaluate(net, support, spec.env, spec.eval_episodes, cfg.eval_epsilon, eval_root.fork(step))
    };

    let mut records = Vec::new();
    match source {
        DataSource::Offline(data) => {
            if data.len() < cfg.batch_size {
                return Err(Error::UnderfilledBuffer {
                    size: data.len(),
                    requested: cfg.batch_size,
                });
            }
            if data.iter().any(|t| t.obs.len() != obs_dim || t.action >= n_actions) {
                return Err(Error::InvalidArgument(format!(
                    "dataset does not match {} (obs dim {obs_dim}, {n_actions} actions)",
                    spec.env
                )));
            }
            let mut buffer = ReplayBuffer::new(ReplayConfig {
                capacity: data.len(),
                prioritized: false,
                ..ReplayConfig::default()
            })?;
            data.iter().for_each(|t| buffer.push(t.clone()));
            learner.probe = Some(draw_probe(&buffer, &mut probe_rng)?);
            for step in 1..=spec.total_steps {
                if let Err(e) = learner.update(&mut buffer) {
                    return fail(learner, records, e, step, 0);
                }
                if step % spec.log_interval == 0 || step == spec.total_steps {
                    let ret = if spec.eval_episodes > 0 {
                        eval(&learner.net, learner.support.as_ref(), step)?
                    } else {
                        f64::NAN
                    };
                    records.push(learner.record(step, ret)?);
                }
            }
            Ok(TrainOutcome {
                records,
                env_steps: 0,
                grad_steps: learner.grad_steps,
                network: learner.net,
                failure: None,
            })
        }
        DataSource::Online => {
            let mut buffer = ReplayBuffer::new(ReplayConfig {
                capacity: cfg.replay_capacity,
                prioritized: cfg.prioritized,
                alpha: cfg.priority_alpha,
                beta: cfg.priority_beta,
                ..ReplayConfig::default()
            })?;
            let mut env = make_env(spec.env, rng.fork(hash_label("env")));
            let mut act_rng = rng.fork(hash_label("act"));
            let decay = cfg.eps_decay_steps.unwrap_or(spec.total_steps / 10);
            let mut window: VecDeque<Transition> = VecDeque::with_capacity(cfg.n_step);
            let mut obs = env.reset();
            let mut ep_return = 0.0;
            let mut finished = WindowMean::default();
            let mut last_return = 0.0;
            let mut credit = 0.0;
            for step in 1..=spec.total_steps {
                let eps = cfg.epsilon_at(step - 1, decay);
                let a = select_action(&learner.net, learner.support.as_ref(), &obs, eps, &mut act_rng)?;
                let s = env.step(a)?;
                ep_return += s.reward;
                let done = s.done();
                window.push_back(Transition::new(obs, a, s.reward, s.obs.clone(), s.terminal));
                if window.len() == cfg.n_step {
                    buffer.push(n_step_assemble(window.make_contiguous(), cfg.n_step, cfg.gamma)?);
                    window.pop_front();
                }
                if done {
                    while !window.is_empty() {
                        buffer.push(n_step_assemble(window.make_contiguous(), cfg.n_step, cfg.gamma)?);
                        window.pop_front();
                    }
                    finished.push(ep_return);
                    ep_return = 0.0;
                    obs = env.reset();
                } else {
                    obs = s.obs;
                }

                if step > cfg.min_replay as u64 && buffer.len() >= cfg.batch_size {
                    if learner.probe.is_none() {
                        learner.probe = Some(draw_probe(&buffer, &mut probe_rng)?);
                    }
                    credit += cfg.replay_ratio;
                    while credit >= 1.0 {
                        credit -= 1.0;
                        if let Err(e) = learner.update(&mut buffer) {
                            return fail(learner, records, e, step, step);
                        }
                    }
                }

                if step % spec.log_interval == 0 || step == spec.total_steps {
                    let ret = if spec.eval_episodes > 0 {
                        eval(&learner.net, learner.support.as_ref(), step)?
                    } else {
                        if finished.count() > 0 {
                            last_return = finished.take();
                        }
                        last_return
                    };
                    records.push(learner.record(step, ret)?);
                }
            }
            Ok(TrainOutcome {
                records,
                env_steps: spec.total_steps,
                grad_steps: learner.grad_steps,
                network: learner.net,
                failure: None,
            })
        }
    }
}

fn fail(learner: Learner<'_>, mut records: Vec<MetricRecord>, e: Error, step: u64, env_steps: u64) -> Result<TrainOutcome> {
    match e {
        Error::NonFinite(msg) => {
            records.push(learner.failure_record(step));
            Ok(TrainOutcome {
                records,
                env_steps,
                grad_steps: learner.grad_steps,
                network: learner.net,
                failure: Some(format!("non-finite {msg}")),
            })
        }
        other => Err(other),
    }
}
