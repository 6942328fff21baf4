//! Offline datasets: the "PRLD" transition file and the recorder that
//! fills it from a trained policy.
//!
//! Layout (little-endian): magic `PRLD`, version u32, env-id length u32 and
//! UTF-8 bytes, obs-dim u32, n-actions u32, count u64, then `count`
//! records of obs f64×d, action u32, reward f64, next-obs f64×d, done u8.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use prl_core::agents::{select_action, Support};
use prl_core::envs::{make_env, EnvId};
use prl_core::net::Network;
use prl_core::replay::Transition;
use prl_core::rng::hash_label;
use prl_core::RngStream;

use crate::error::{HarnessError, Result};

const MAGIC: &[u8; 4] = b"PRLD";
const VERSION: u32 = 1;
/// Exploration rate of the behaviour policy.
pub const BEHAVIOR_EPSILON: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetFile {
    pub env: EnvId,
    pub obs_dim: usize,
    pub n_actions: usize,
    pub transitions: Vec<Transition>,
}

impl DatasetFile {
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let name = self.env.name().as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(self.obs_dim as u32).to_le_bytes())?;
        w.write_all(&(self.n_actions as u32).to_le_bytes())?;
        w.write_all(&(self.transitions.len() as u64).to_le_bytes())?;
        for t in &self.transitions {
            for v in &t.obs {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&(t.action as u32).to_le_bytes())?;
            w.write_all(&t.reward.to_le_bytes())?;
            for v in &t.next_obs {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&[t.done as u8])?;
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R) -> std::result::Result<Self, String> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| e.to_string())?;
        if &magic != MAGIC {
            return Err(format!("bad magic {magic:?}"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let name_len = read_u32(&mut r)? as usize;
        if name_len > 64 {
            return Err(format!("env-id length {name_len} too long"));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(|e| e.to_string())?;
        let name = String::from_utf8(name).map_err(|e| e.to_string())?;
        let env: EnvId = name.parse().map_err(|e: prl_core::Error| e.to_string())?;
        let obs_dim = read_u32(&mut r)? as usize;
        let n_actions = read_u32(&mut r)? as usize;
        let count = read_u64(&mut r)?;
        let mut transitions = Vec::with_capacity(count.min(1 << 20) as usize);
        for i in 0..count {
            let mut rec = || -> std::result::Result<Transition, String> {
                let obs = read_f64s(&mut r, obs_dim)?;
                let action = read_u32(&mut r)? as usize;
                let reward = read_f64(&mut r)?;
                let next_obs = read_f64s(&mut r, obs_dim)?;
                let mut done = [0u8; 1];
                r.read_exact(&mut done).map_err(|e| e.to_string())?;
                if done[0] > 1 {
                    return Err(format!("done flag {}", done[0]));
                }
                if action >= n_actions {
                    return Err(format!("action {action} out of {n_actions}"));
                }
                Ok(Transition::new(obs, action, reward, next_obs, done[0] == 1))
            };
            transitions.push(rec().map_err(|e| format!("record {i}: {e}"))?);
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing).map_err(|e| e.to_string())? != 0 {
            return Err(format!("trailing bytes after {count} records"));
        }
        Ok(Self {
            env,
            obs_dim,
            n_actions,
            transitions,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| HarnessError::io(path, e))?;
        self.write_to(BufWriter::new(f))
            .map_err(|e| HarnessError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| HarnessError::io(path, e))?;
        Self::read_from(BufReader::new(f)).map_err(|d| HarnessError::format(path, d))
    }
}

fn read_u32<R: Read>(r: &mut R) -> std::result::Result<u32, String> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| e.to_string())?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::result::Result<u64, String> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| e.to_string())?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> std::result::Result<f64, String> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| e.to_string())?;
    Ok(f64::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> std::result::Result<Vec<f64>, String> {
    (0..n).map(|_| read_f64(r)).collect()
}

/// What a recording pass saw.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordSummary {
    pub steps: u64,
    pub written: usize,
    pub episodes: usize,
    /// Mean return of the behaviour policy over completed episodes.
    pub behavior_return: f64,
}

/// Roll out the ε = 0.01 policy of `net` for `steps` environment steps and
/// keep each transition with probability `rate`.
pub fn record_dataset(
    net: &Network,
    support: Option<&Support>,
    env_id: EnvId,
    steps: u64,
    rate: f64,
    rng: RngStream,
) -> Result<(DatasetFile, RecordSummary)> {
    record_dataset_with_epsilon(net, support, env_id, steps, rate, BEHAVIOR_EPSILON, rng)
}

/// As [`record_dataset`] with an explicit behaviour ε, e.g. to mimic the
/// exploration noise of a logged training run.
pub fn record_dataset_with_epsilon(
    net: &Network,
    support: Option<&Support>,
    env_id: EnvId,
    steps: u64,
    rate: f64,
    epsilon: f64,
    rng: RngStream,
) -> Result<(DatasetFile, RecordSummary)> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(HarnessError::Invalid(format!(
            "behaviour epsilon {epsilon} outside [0, 1]"
        )));
    }
    if !(0.0..=1.0).contains(&rate) {
        return Err(HarnessError::Invalid(format!(
            "subsample rate {rate} outside [0, 1]"
        )));
    }
    let mut env = make_env(env_id, rng.fork(hash_label("env")));
    if net.in_dim() != env.obs_dim() || net.n_actions() != env.n_actions() {
        return Err(HarnessError::Invalid(format!(
            "checkpoint ({} inputs, {} actions) does not fit {env_id}",
            net.in_dim(),
            net.n_actions()
        )));
    }
    let mut act = rng.fork(hash_label("act"));
    let mut keep = rng.fork(hash_label("keep"));
    let mut transitions = Vec::new();
    let mut obs = env.reset();
    let (mut ep_return, mut returns) = (0.0, Vec::new());
    for _ in 0..steps {
        let a = select_action(net, support, &obs, epsilon, &mut act)?;
        let s = env.step(a)?;
        ep_return += s.reward;
        if keep.next_f64() < rate {
            transitions.push(Transition::new(
                obs.clone(),
                a,
                s.reward,
                s.obs.clone(),
                s.terminal,
            ));
        }
        if s.done() {
            returns.push(ep_return);
            ep_return = 0.0;
            obs = env.reset();
        } else {
            obs = s.obs;
        }
    }
    let summary = RecordSummary {
        steps,
        written: transitions.len(),
        episodes: returns.len(),
        behavior_return: if returns.is_empty() {
            ep_return
        } else {
            returns.iter().sum::<f64>() / returns.len() as f64
        },
    };
    let file = DatasetFile {
        env: env_id,
        obs_dim: env.obs_dim(),
        n_actions: env.n_actions(),
        transitions,
    };
    Ok((file, summary))
}
