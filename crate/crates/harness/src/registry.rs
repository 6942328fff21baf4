//! Normalisation registry file: one `env = random, reference` line per
//! environment, `#` comments allowed.

use std::fmt::Write as _;
use std::path::Path;

use prl_core::envs::{random_policy_return, EnvId, GridWorld, ScoreRegistry};

use crate::error::{HarnessError, Result};

pub fn parse_registry(text: &str) -> Result<ScoreRegistry> {
    let mut reg = ScoreRegistry::empty();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parsed = line.split_once('=').and_then(|(env, vals)| {
            let (a, b) = vals.split_once(',')?;
            Some((
                env.trim(),
                a.trim().parse::<f64>().ok()?,
                b.trim().parse::<f64>().ok()?,
            ))
        });
        match parsed {
            Some((env, random, reference)) if random != reference => {
                reg.register(env, random, reference)
            }
            _ => {
                return Err(HarnessError::config(
                    i + 1,
                    format!(
                        "expected `env = random, reference` with distinct values, got `{line}`"
                    ),
                ))
            }
        }
    }
    Ok(reg)
}

pub fn format_registry(reg: &ScoreRegistry) -> String {
    let mut s = String::from("# env = random-policy return, reference return\n");
    for (env, (random, reference)) in reg.entries() {
        let _ = writeln!(s, "{env} = {random}, {reference}");
    }
    s
}

pub fn load_registry(path: &Path) -> Result<ScoreRegistry> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_registry(&text)
}

/// Re-measure the random-policy baselines. References are the episode cap
/// for CartPole, a perfect catch, and the value-iteration policy's
/// expected return on GridWorld.
pub fn calibrate(episodes: usize, seed: u64) -> ScoreRegistry {
    let mut reg = ScoreRegistry::empty();
    for env in EnvId::ALL {
        let reference = match env {
            EnvId::CartPole => prl_core::envs::cartpole::MAX_STEPS as f64,
            EnvId::Catch => 1.0,
            EnvId::GridWorld => GridWorld::reference_return(),
        };
        reg.register(
            env.name(),
            random_policy_return(env, episodes, seed),
            reference,
        );
    }
    reg
}
