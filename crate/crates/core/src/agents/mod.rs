//! Value-based agents: DQN, a Rainbow-lite variant (n-step returns,
//! prioritized replay, C51 heads) and the conservative offline penalty.
//!
//! Loss functions return the batch loss, a per-item error used for replay
//! priorities, the scalar TD targets (for the target-variance diagnostic)
//! and the parameter gradients.

mod train;

pub use train::{evaluate, train, DataSource, SparsityConfig, TrainOutcome, TrainSpec};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::net::{AdamConfig, Gradients, Head, Network, NetworkOutput};
use crate::replay::Transition;
use crate::rng::RngStream;
use crate::tensor::Matrix;

pub const DEFAULT_ATOMS: usize = 51;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AgentKind {
    Dqn,
    RainbowLite,
    Cql,
    CqlC51,
}

impl AgentKind {
    pub fn name(&self) -> &'static str {
        match self {
            AgentKind::Dqn => "dqn",
            AgentKind::RainbowLite => "rainbow-lite",
            AgentKind::Cql => "cql",
            AgentKind::CqlC51 => "cql-c51",
        }
    }

    pub fn is_distributional(&self) -> bool {
        matches!(self, AgentKind::RainbowLite | AgentKind::CqlC51)
    }

    pub fn is_offline(&self) -> bool {
        matches!(self, AgentKind::Cql | AgentKind::CqlC51)
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dqn" => Ok(Self::Dqn),
            "rainbow-lite" | "rainbow_lite" | "rainbow" => Ok(Self::RainbowLite),
            "cql" => Ok(Self::Cql),
            "cql-c51" | "cql_c51" => Ok(Self::CqlC51),
            other => Err(Error::InvalidArgument(format!("unknown agent '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// `(y − Q)²`.
    Squared,
    /// Huber with threshold 1.
    Huber,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentConfig {
    pub kind: AgentKind,
    pub gamma: f64,
    pub n_step: usize,
    /// Gradient updates per environment step.
    pub replay_ratio: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Environment steps of the linear ε decay; `None` means 10% of the run.
    pub eps_decay_steps: Option<u64>,
    pub eval_epsilon: f64,
    pub target_sync_period: u64,
    pub num_atoms: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub cql_alpha: f64,
    pub batch_size: usize,
    pub min_replay: usize,
    pub replay_capacity: usize,
    pub prioritized: bool,
    pub priority_alpha: f64,
    pub priority_beta: f64,
    pub loss: LossKind,
    pub adam: AdamConfig,
}

impl AgentConfig {
    /// Defaults for `kind`, with the C51 support at `±return_scale`.
    pub fn for_kind(kind: AgentKind, return_scale: f64) -> Self {
        let rainbow = kind == AgentKind::RainbowLite;
        Self {
            kind,
            gamma: 0.99,
            n_step: if rainbow { 3 } else { 1 },
            replay_ratio: 0.25,
            eps_start: 1.0,
            eps_end: 0.01,
            eps_decay_steps: None,
            eval_epsilon: 0.0,
            target_sync_period: 1000,
            num_atoms: DEFAULT_ATOMS,
            v_min: -return_scale,
            v_max: return_scale,
            cql_alpha: if kind.is_offline() { 1.0 } else { 0.0 },
            batch_size: 32,
            min_replay: 1000,
            replay_capacity: 100_000,
            prioritized: rainbow,
            priority_alpha: 0.5,
            priority_beta: 0.5,
            loss: LossKind::Squared,
            adam: AdamConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1)", self.gamma));
        }
        if !(self.replay_ratio > 0.0 && self.replay_ratio.is_finite()) {
            return bad(format!("replay ratio {} must be positive", self.replay_ratio));
        }
        if self.n_step == 0 || self.batch_size == 0 || self.target_sync_period == 0 {
            return bad("n_step, batch size and target sync period must be >= 1".into());
        }
        if self.kind.is_distributional() {
            Support::new(self.v_min, self.v_max, self.num_atoms)?;
        }
        for (name, e) in [("eps_start", self.eps_start), ("eps_end", self.eps_end), ("eval_epsilon", self.eval_epsilon)] {
            if !(0.0..=1.0).contains(&e) {
                return bad(format!("{name} {e} outside [0, 1]"));
            }
        }
        if self.cql_alpha < 0.0 {
            return bad(format!("cql_alpha {} must be >= 0", self.cql_alpha));
        }
        if self.replay_capacity < self.batch_size {
            return bad("replay capacity smaller than the batch".into());
        }
        Ok(())
    }

    pub fn head(&self) -> Head {
        if self.kind.is_distributional() {
            Head::Categorical {
                num_atoms: self.num_atoms,
            }
        } else {
            Head::Scalar
        }
    }

    pub fn support(&self) -> Option<Support> {
        if self.kind.is_distributional() {
            Support::new(self.v_min, self.v_max, self.num_atoms).ok()
        } else {
            None
        }
    }

    /// Linear ε schedule over environment steps.
    pub fn epsilon_at(&self, step: u64, decay_steps: u64) -> f64 {
        if decay_steps == 0 || step >= decay_steps {
            return self.eps_end;
        }
        let frac = step as f64 / decay_steps as f64;
        self.eps_start + frac * (self.eps_end - self.eps_start)
    }
}

/// Evenly spaced atoms `z_i = v_min + i·Δ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Support {
    pub v_min: f64,
    pub v_max: f64,
    pub atoms: usize,
}

impl Support {
    pub fn new(v_min: f64, v_max: f64, atoms: usize) -> Result<Self> {
        if atoms < 2 || !(v_min < v_max) || !v_min.is_finite() || !v_max.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "degenerate support [{v_min}, {v_max}] with {atoms} atoms"
            )));
        }
        Ok(Self { v_min, v_max, atoms })
    }

    pub fn delta(&self) -> f64 {
        (self.v_max - self.v_min) / (self.atoms - 1) as f64
    }

    pub fn atom(&self, i: usize) -> f64 {
        self.v_min + i as f64 * self.delta()
    }

    pub fn expectation(&self, probs: &[f64]) -> f64 {
        probs.iter().enumerate().map(|(i, p)| p * self.atom(i)).sum()
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter_mut().for_each(|v| *v /= s);
    e
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// First index of the maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Action values for batch item `b`: the raw outputs of a scalar head, or
/// the expected value of each action's distribution.
pub fn q_values(out: &NetworkOutput, support: Option<&Support>, b: usize) -> Result<Vec<f64>> {
    if out.atoms == 1 {
        return Ok(out.q_row(b).to_vec());
    }
    let support = support.ok_or_else(|| Error::InvalidArgument("categorical head needs a support".into()))?;
    if support.atoms != out.atoms {
        return Err(Error::InvalidArgument(format!(
            "support has {} atoms, head has {}",
            support.atoms, out.atoms
        )));
    }
    Ok((0..out.n_actions)
        .map(|a| support.expectation(&softmax(out.logits(b, a))))
        .collect())
}

/// Action values for every row of `out`, as a `batch × n_actions` matrix.
pub fn q_matrix(out: &NetworkOutput, support: Option<&Support>) -> Result<Matrix> {
    let mut data = Vec::with_capacity(out.batch() * out.n_actions);
    for b in 0..out.batch() {
        data.extend(q_values(out, support, b)?);
    }
    Matrix::new(out.batch(), out.n_actions, data)
}

/// ε-greedy action. One uniform draw decides exploration so the stream
/// advances identically for every ε.
pub fn select_action(
    net: &Network,
    support: Option<&Support>,
    obs: &[f64],
    epsilon: f64,
    rng: &mut RngStream,
) -> Result<usize> {
    if rng.next_f64() < epsilon {
        return Ok(rng.below(net.n_actions()));
    }
    let out = net.forward_one(obs)?;
    Ok(argmax(&q_values(&out, support, 0)?))
}

/// Categorical projection of `r + γⁿ·Z` onto the support.
pub fn c51_project(next: &[f64], reward: f64, discount: f64, support: &Support) -> Result<Vec<f64>> {
    let support = Support::new(support.v_min, support.v_max, support.atoms)?;
    if next.len() != support.atoms {
        return Err(Error::ShapeMismatch {
            op: "c51_project",
            left: (1, next.len()),
            right: (1, support.atoms),
        });
    }
    let k = support.atoms;
    let dz = support.delta();
    let mut m = vec![0.0; k];
    for (j, &p) in next.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let tz = (reward + discount * support.atom(j)).clamp(support.v_min, support.v_max);
        let b = ((tz - support.v_min) / dz).clamp(0.0, (k - 1) as f64);
        let lo = b.floor() as usize;
        let hi = (b.ceil() as usize).min(k - 1);
        if lo == hi {
            m[lo] += p;
        } else {
            m[lo] += p * (hi as f64 - b);
            m[hi] += p * (b - lo as f64);
        }
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("projected distribution".into()));
    }
    Ok(m)
}

/// Result of a loss evaluation on one batch.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub loss: f64,
    /// Per-item error magnitude (TD error or cross-entropy), for priorities.
    pub per_item: Vec<f64>,
    /// Scalar TD targets (expected value of the projected target for C51).
    pub targets: Vec<f64>,
    pub grads: Gradients,
}

fn batch_matrices(batch: &[Transition]) -> Result<(Matrix, Matrix)> {
    let d = batch.first().map_or(0, |t| t.obs.len());
    let mut obs = Vec::with_capacity(batch.len() * d);
    let mut next = Vec::with_capacity(batch.len() * d);
    for t in batch {
        if t.obs.len() != d || t.next_obs.len() != d {
            return Err(Error::ShapeMismatch {
                op: "batch",
                left: (1, t.obs.len()),
                right: (1, d),
            });
        }
        obs.extend_from_slice(&t.obs);
        next.extend_from_slice(&t.next_obs);
    }
    Ok((Matrix::new(batch.len(), d, obs)?, Matrix::new(batch.len(), d, next)?))
}

fn item_weights(batch: &[Transition], weights: Option<&[f64]>) -> Result<Vec<f64>> {
    match weights {
        None => Ok(vec![1.0; batch.len()]),
        Some(w) if w.len() == batch.len() => Ok(w.to_vec()),
        Some(w) => Err(Error::InvalidArgument(format!(
            "{} importance weights for a batch of {}",
            w.len(),
            batch.len()
        ))),
    }
}

fn check_action(t: &Transition, n_actions: usize) -> Result<()> {
    if t.action >= n_actions {
        return Err(Error::InvalidAction {
            action: t.action,
            n_actions,
        });
    }
    Ok(())
}

/// Squared TD loss with `y = R + γ^h·max_a′ Q̄(x′,a′)`, `h` the stored
/// horizon, no bootstrap on terminal transitions. Mean over the batch,
/// each item scaled by its importance weight.
pub fn dqn_td_loss(
    online: &Network,
    target: &Network,
    batch: &[Transition],
    weights: Option<&[f64]>,
    gamma: f64,
    loss_kind: LossKind,
) -> Result<LossOutput> {
    let (obs, next) = batch_matrices(batch)?;
    let w = item_weights(batch, weights)?;
    let out = online.forward(&obs, true)?;
    let next_q = target.forward(&next, false)?;
    let n = batch.len() as f64;
    let mut d_out = Matrix::zeros(out.raw.rows(), out.raw.cols());
    let mut loss = 0.0;
    let mut per_item = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    for (b, t) in batch.iter().enumerate() {
        check_action(t, online.n_actions())?;
        let bootstrap = if t.done {
            0.0
        } else {
            next_q.q_row(b).iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        };
        let y = t.reward + gamma.powi(t.horizon as i32) * bootstrap;
        if !y.is_finite() {
            return Err(Error::NonFinite(format!("TD target of batch item {b}")));
        }
        let err = out.q_row(b)[t.action] - y;
        let (l, g) = match loss_kind {
            LossKind::Squared => (err * err, 2.0 * err),
            LossKind::Huber if err.abs() <= 1.0 => (0.5 * err * err, err),
            LossKind::Huber => (err.abs() - 0.5, err.signum()),
        };
        loss += w[b] * l / n;
        d_out.set(b, t.action, w[b] * g / n);
        per_item.push(err.abs());
        targets.push(y);
    }
    let grads = online.backward(out.cache.as_ref(), &d_out)?;
    Ok(LossOutput {
        loss,
        per_item,
        targets,
        grads,
    })
}

/// Projected target distribution for each item: the target network's
/// distribution at its own greedy action, shifted by the n-step return.
fn c51_targets(target: &Network, next: &Matrix, batch: &[Transition], gamma: f64, support: &Support) -> Result<Vec<Vec<f64>>> {
    let next_out = target.forward(next, false)?;
    batch
        .iter()
        .enumerate()
        .map(|(b, t)| {
            let dists: Vec<Vec<f64>> = (0..next_out.n_actions).map(|a| softmax(next_out.logits(b, a))).collect();
            let values: Vec<f64> = dists.iter().map(|p| support.expectation(p)).collect();
            let a_star = argmax(&values);
            let discount = if t.done { 0.0 } else { gamma.powi(t.horizon as i32) };
            c51_project(&dists[a_star], t.reward, discount, support)
        })
        .collect()
}

/// Cross-entropy between the projected target distribution and the online
/// distribution at the taken action.
pub fn c51_loss(
    online: &Network,
    target: &Network,
    batch: &[Transition],
    weights: Option<&[f64]>,
    gamma: f64,
    support: &Support,
) -> Result<LossOutput> {
    let (obs, next) = batch_matrices(batch)?;
    let w = item_weights(batch, weights)?;
    let out = online.forward(&obs, true)?;
    if out.atoms != support.atoms {
        return Err(Error::InvalidArgument(format!(
            "support has {} atoms, head has {}",
            support.atoms, out.atoms
        )));
    }
    let projected = c51_targets(target, &next, batch, gamma, support)?;
    let n = batch.len() as f64;
    let k = support.atoms;
    let mut d_out = Matrix::zeros(out.raw.rows(), out.raw.cols());
    let mut loss = 0.0;
    let mut per_item = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    for (b, (t, m)) in batch.iter().zip(&projected).enumerate() {
        check_action(t, online.n_actions())?;
        let logits = out.logits(b, t.action);
        let lse = logsumexp(logits);
        let ce: f64 = m.iter().zip(logits).map(|(mi, l)| -mi * (l - lse)).sum();
        let p = softmax(logits);
        let row = d_out.row_mut(b);
        for i in 0..k {
            row[t.action * k + i] = w[b] * (p[i] - m[i]) / n;
        }
        loss += w[b] * ce / n;
        per_item.push(ce);
        targets.push(support.expectation(m));
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("C51 loss".into()));
    }
    let grads = online.backward(out.cache.as_ref(), &d_out)?;
    Ok(LossOutput {
        loss,
        per_item,
        targets,
        grads,
    })
}

/// Loss underlying the conservative penalty.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BaseLoss {
    Td(LossKind),
    C51(Support),
}

/// Base loss plus `α·mean_b(logsumexp_a Q(x_b,a) − Q(x_b,a_b))`. For
/// categorical heads `Q` is the expected value of each distribution.
pub fn cql_loss(
    online: &Network,
    target: &Network,
    batch: &[Transition],
    weights: Option<&[f64]>,
    gamma: f64,
    cql_alpha: f64,
    base: BaseLoss,
) -> Result<LossOutput> {
    let mut res = match base {
        BaseLoss::Td(kind) => dqn_td_loss(online, target, batch, weights, gamma, kind)?,
        BaseLoss::C51(support) => c51_loss(online, target, batch, weights, gamma, &support)?,
    };
    let (penalty, grads) = cql_penalty(online, batch, base)?;
    res.loss += cql_alpha * penalty;
    if cql_alpha != 0.0 {
        res.grads.add_scaled(&grads, cql_alpha);
    }
    Ok(res)
}

/// `mean_b(logsumexp_a Q − Q(a_b))` and its gradient.
pub fn cql_penalty(online: &Network, batch: &[Transition], base: BaseLoss) -> Result<(f64, Gradients)> {
    let (obs, _) = batch_matrices(batch)?;
    let out = online.forward(&obs, true)?;
    let support = match base {
        BaseLoss::C51(s) => Some(s),
        BaseLoss::Td(_) => None,
    };
    let n = batch.len() as f64;
    let mut d_out = Matrix::zeros(out.raw.rows(), out.raw.cols());
    let mut penalty = 0.0;
    for (b, t) in batch.iter().enumerate() {
        check_action(t, online.n_actions())?;
        let q = q_values(&out, support.as_ref(), b)?;
        penalty += (logsumexp(&q) - q[t.action]) / n;
        let soft = softmax(&q);
        let row = d_out.row_mut(b);
        for a in 0..q.len() {
            let dq = (soft[a] - if a == t.action { 1.0 } else { 0.0 }) / n;
            match &support {
                None => row[a] = dq,
                Some(s) => {
                    let p = softmax(out.logits(b, a));
                    for (i, pi) in p.iter().enumerate() {
                        row[a * s.atoms + i] = dq * pi * (s.atom(i) - q[a]);
                    }
                }
            }
        }
    }
    let grads = online.backward(out.cache.as_ref(), &d_out)?;
    Ok((penalty, grads))
}

/// The loss `cfg.kind` trains on.
pub fn agent_loss(
    cfg: &AgentConfig,
    online: &Network,
    target: &Network,
    batch: &[Transition],
    weights: Option<&[f64]>,
) -> Result<LossOutput> {
    let support = || {
        cfg.support()
            .ok_or_else(|| Error::InvalidArgument("categorical agent without a valid support".into()))
    };
    match cfg.kind {
        AgentKind::Dqn => dqn_td_loss(online, target, batch, weights, cfg.gamma, cfg.loss),
        AgentKind::RainbowLite => c51_loss(online, target, batch, weights, cfg.gamma, &support()?),
        AgentKind::Cql => cql_loss(online, target, batch, weights, cfg.gamma, cfg.cql_alpha, BaseLoss::Td(cfg.loss)),
        AgentKind::CqlC51 => cql_loss(
            online,
            target,
            batch,
            weights,
            cfg.gamma,
            cfg.cql_alpha,
            BaseLoss::C51(support()?),
        ),
    }
}
