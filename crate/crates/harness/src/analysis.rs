//! Post-hoc analysis of a checkpoint: per-example gradient correlations and
//! the representation diagnostics on a fresh rollout.

use prl_core::agents::{agent_loss, q_matrix, AgentConfig};
use prl_core::diagnostics::{
    dormant_fraction, gradient_covariance, params_norm, q_norm, srank, DORMANT_TAU,
    MAX_COVARIANCE_ITEMS, SRANK_DELTA,
};
use prl_core::envs::EnvId;
use prl_core::net::Network;
use prl_core::replay::Transition;
use prl_core::{Matrix, RngStream};

use crate::dataset::record_dataset;
use crate::error::{HarnessError, Result};

#[derive(Clone, Debug)]
pub struct Analysis {
    pub covariance: Matrix,
    pub srank: usize,
    pub dormant_fraction: f64,
    pub q_norm: f64,
    pub params_norm: f64,
    pub sparsity: f64,
}

/// Collect `items` transitions from an ε = 0.01 rollout of `net` (keeping one
/// step in ten to spread them over episodes) and analyse them.
pub fn analyze_checkpoint(
    net: &Network,
    agent: &AgentConfig,
    env: EnvId,
    items: usize,
    rng: RngStream,
) -> Result<Analysis> {
    if items < 2 || items > MAX_COVARIANCE_ITEMS {
        return Err(HarnessError::Invalid(format!(
            "covariance items must be in 2..={MAX_COVARIANCE_ITEMS}, got {items}"
        )));
    }
    let support = agent.support();
    let (data, _) = record_dataset(net, support.as_ref(), env, 20 * items as u64, 0.1, rng)?;
    let probe: Vec<Transition> = data.transitions.into_iter().take(items).collect();
    if probe.len() < 2 {
        return Err(HarnessError::Invalid(
            "rollout produced too few transitions".into(),
        ));
    }
    analyze_transitions(net, agent, &probe)
}

pub fn analyze_transitions(
    net: &Network,
    agent: &AgentConfig,
    probe: &[Transition],
) -> Result<Analysis> {
    let covariance = gradient_covariance(net, probe, |n, t| {
        agent_loss(agent, n, n, std::slice::from_ref(t), None).map(|o| o.grads)
    })?;
    let d = net.in_dim();
    let obs = Matrix::new(
        probe.len(),
        d,
        probe.iter().flat_map(|t| t.obs.iter().copied()).collect(),
    )?;
    let out = net.forward(&obs, true)?;
    let q = q_matrix(&out, agent.support().as_ref())?;
    let cache = out.cache.as_ref().ok_or(prl_core::Error::MissingCache)?;
    Ok(Analysis {
        covariance,
        srank: srank(cache.features(), SRANK_DELTA)?,
        dormant_fraction: dormant_fraction(&cache.hidden_activations(), DORMANT_TAU).fraction,
        q_norm: q_norm(&q),
        params_norm: params_norm(&net.params),
        sparsity: net.params.prunable_sparsity(),
    })
}
