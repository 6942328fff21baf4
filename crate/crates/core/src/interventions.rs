//! Plasticity interventions compared against pruning: periodic resets of
//! the last layers, recycling of dormant units, weight decay and unit-norm
//! weight rescaling. At most one is active in a run.

use std::fmt;
use std::str::FromStr;

use crate::diagnostics::{DormantReport, DORMANT_TAU};
use crate::error::{Error, Result};
use crate::net::{glorot_limit, Adam, Gradients, MaskedParams, Network};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InterventionKind {
    None,
    Reset,
    Redo,
    WeightDecay,
    L2Unit,
}

impl InterventionKind {
    pub fn name(&self) -> &'static str {
        match self {
            InterventionKind::None => "none",
            InterventionKind::Reset => "reset",
            InterventionKind::Redo => "redo",
            InterventionKind::WeightDecay => "weight-decay",
            InterventionKind::L2Unit => "l2-unit",
        }
    }
}

impl fmt::Display for InterventionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InterventionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "reset" => Ok(Self::Reset),
            "redo" => Ok(Self::Redo),
            "weight-decay" | "weight_decay" | "wd" => Ok(Self::WeightDecay),
            "l2-unit" | "l2_unit" | "l2" => Ok(Self::L2Unit),
            other => Err(Error::InvalidArgument(format!("unknown intervention '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterventionConfig {
    pub kind: InterventionKind,
    /// Gradient steps between resets / recycling passes.
    pub period: u64,
    pub redo_tau: f64,
    pub weight_decay: f64,
}

impl Default for InterventionConfig {
    fn default() -> Self {
        Self {
            kind: InterventionKind::None,
            period: 1000,
            redo_tau: DORMANT_TAU,
            weight_decay: 1e-5,
        }
    }
}

impl InterventionConfig {
    pub fn validate(&self) -> Result<()> {
        if matches!(self.kind, InterventionKind::Reset | InterventionKind::Redo) && self.period == 0 {
            return Err(Error::InvalidArgument("intervention period must be >= 1".into()));
        }
        if self.redo_tau < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument("redo tau and weight decay must be >= 0".into()));
        }
        Ok(())
    }

    /// Whether a periodic intervention fires after gradient step `t` (1-based count).
    pub fn fires_at(&self, t: u64) -> bool {
        matches!(self.kind, InterventionKind::Reset | InterventionKind::Redo)
            && t > 0
            && t % self.period == 0
    }
}

/// `grad += λ·w` on unmasked weights; biases are not decayed.
pub fn apply_weight_decay(grads: &mut Gradients, params: &MaskedParams, lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    for (g, p) in grads.layers.iter_mut().zip(&params.layers) {
        for ((gw, w), m) in g.weight.data_mut().iter_mut().zip(p.weight.data()).zip(p.mask.data()) {
            if *m != 0.0 {
                *gw += lambda * w;
            }
        }
    }
}

/// Rescale each non-zero weight matrix to unit Frobenius norm.
pub fn apply_l2_unit(params: &mut MaskedParams) {
    for l in &mut params.layers {
        let norm = l.weight.frobenius_norm();
        if norm > 0.0 {
            l.weight.scale(1.0 / norm);
        }
    }
}

/// Reinitialise the last hidden parameter layer and the output head, zero
/// their optimiser moments and restore their masks to all ones.
pub fn reset_last_layers(net: &mut Network, opt: &mut Adam, rng: &mut RngStream) {
    let head = net.head_layer();
    let first = head.saturating_sub(1);
    for idx in first..=head {
        net.reinit_layer(idx, rng);
        opt.reset_layer(idx);
    }
}

/// Recycle units whose dormancy score is at most `tau`: fresh incoming
/// weights, zero bias, zero outgoing weights, and cleared optimiser moments
/// for all of them. Scores are indexed by parameter layer (the head has
/// none). Returns the number of recycled units.
pub fn redo(
    net: &mut Network,
    opt: &mut Adam,
    stats: Option<&DormantReport>,
    tau: f64,
    rng: &mut RngStream,
) -> Result<usize> {
    let stats = stats.ok_or_else(|| Error::InvalidArgument("redo needs activation statistics".into()))?;
    let head = net.head_layer();
    if stats.scores.len() != head {
        return Err(Error::InvalidArgument(format!(
            "expected dormancy scores for {head} hidden layers, got {}",
            stats.scores.len()
        )));
    }
    let dead: Vec<Vec<usize>> = stats
        .scores
        .iter()
        .map(|scores| {
            scores
                .iter()
                .enumerate()
                .filter(|(_, &s)| s <= tau)
                .map(|(u, _)| u)
                .collect()
        })
        .collect();
    // Incoming weights first, then outgoing, so a recycled row in layer l+1
    // cannot reintroduce weight on a recycled unit of layer l.
    for (l, units) in dead.iter().enumerate() {
        let (rows, cols) = net.params.layers[l].weight.shape();
        let limit = glorot_limit(rows, cols);
        for &u in units {
            let layer = &mut net.params.layers[l];
            for w in layer.weight.row_mut(u) {
                *w = rng.uniform(-limit, limit);
            }
            layer.bias[u] = 0.0;
            opt.reset_row(l, u);
        }
    }
    let mut recycled = 0;
    for (l, units) in dead.iter().enumerate() {
        for &u in units {
            let next = &mut net.params.layers[l + 1].weight;
            for r in 0..next.rows() {
                next.set(r, u, 0.0);
            }
            opt.reset_col(l + 1, u);
            recycled += 1;
        }
    }
    net.params.apply_masks();
    Ok(recycled)
}
