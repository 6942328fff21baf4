//! Transition storage with uniform or proportional-prioritized sampling.

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    /// Reward, or the discounted reward sum for multi-step transitions.
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// Terminal state reached: no bootstrapping from `next_obs`.
    pub done: bool,
    /// Environment steps covered by `reward`; the bootstrap discount is `γ^horizon`.
    pub horizon: u32,
}

impl Transition {
    pub fn new(obs: Vec<f64>, action: usize, reward: f64, next_obs: Vec<f64>, done: bool) -> Self {
        Self {
            obs,
            action,
            reward,
            next_obs,
            done,
            horizon: 1,
        }
    }
}

/// Collapse the leading transitions of a trajectory window into one
/// multi-step transition: `R = Σ_{k<m} γᵏ r_{t+k}` with `m` the smaller of
/// `n` and the steps up to (and including) the first terminal one.
pub fn n_step_assemble(window: &[Transition], n: usize, gamma: f64) -> Result<Transition> {
    if window.is_empty() || n == 0 {
        return Err(Error::InvalidArgument("n-step assembly needs n >= 1 and a non-empty window".into()));
    }
    let mut reward = 0.0;
    let mut discount = 1.0;
    let mut m = 0;
    for t in window.iter().take(n) {
        reward += discount * t.reward;
        discount *= gamma;
        m += 1;
        if t.done {
            break;
        }
    }
    let last = &window[m - 1];
    Ok(Transition {
        obs: window[0].obs.clone(),
        action: window[0].action,
        reward,
        next_obs: last.next_obs.clone(),
        done: last.done,
        horizon: m as u32,
    })
}

/// Binary sum tree over a fixed number of leaves. Internal nodes are always
/// recomputed from their children, never patched with deltas.
#[derive(Clone, Debug)]
pub struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        Self {
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    pub fn set(&mut self, i: usize, value: f64) {
        let mut node = self.leaves + i;
        self.nodes[node] = value;
        while node > 1 {
            node /= 2;
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1];
        }
    }

    /// Leaf whose cumulative-sum interval contains `u ∈ [0, total)`.
    pub fn find(&self, mut u: f64) -> usize {
        let mut node = 1;
        while node < self.leaves {
            let left = 2 * node;
            if u < self.nodes[left] || self.nodes[left + 1] == 0.0 {
                node = left;
            } else {
                u -= self.nodes[left];
                node = left + 1;
            }
        }
        node - self.leaves
    }

    /// Checks every internal node against the sum of its children.
    pub fn audit(&self, tol: f64) -> bool {
        (1..self.leaves).all(|n| (self.nodes[n] - (self.nodes[2 * n] + self.nodes[2 * n + 1])).abs() <= tol)
    }

    pub fn leaf_sum(&self) -> f64 {
        self.nodes[self.leaves..].iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReplayConfig {
    pub capacity: usize,
    pub prioritized: bool,
    pub alpha: f64,
    pub beta: f64,
    pub priority_eps: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            capacity: 100_000,
            prioritized: false,
            alpha: 0.5,
            beta: 0.5,
            priority_eps: 1e-6,
        }
    }
}

/// A sampled slot, stamped with the write it refers to so that priority
/// updates for since-overwritten slots can be dropped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleIndex {
    pub slot: usize,
    stamp: u64,
}

#[derive(Clone, Debug)]
pub struct SampledBatch {
    pub transitions: Vec<Transition>,
    pub indices: Vec<SampleIndex>,
    /// Importance weights, normalised so the largest in the batch is 1.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    config: ReplayConfig,
    storage: Vec<Transition>,
    stamps: Vec<u64>,
    next: usize,
    writes: u64,
    tree: Option<SumTree>,
    priorities: Vec<f64>,
    max_priority: f64,
}

impl ReplayBuffer {
    pub fn new(config: ReplayConfig) -> Result<Self> {
        if config.capacity == 0 {
            return Err(Error::InvalidArgument("replay capacity must be positive".into()));
        }
        if config.alpha < 0.0 || config.beta < 0.0 || config.priority_eps <= 0.0 {
            return Err(Error::InvalidArgument("replay exponents must be >= 0 and eps > 0".into()));
        }
        Ok(Self {
            config,
            storage: Vec::new(),
            stamps: Vec::new(),
            next: 0,
            writes: 0,
            tree: config.prioritized.then(|| SumTree::new(config.capacity)),
            priorities: Vec::new(),
            max_priority: 1.0,
        })
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn get(&self, slot: usize) -> &Transition {
        &self.storage[slot]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.storage.iter()
    }

    pub fn priority(&self, slot: usize) -> Option<f64> {
        self.tree.as_ref().map(|_| self.priorities[slot])
    }

    /// Index referring to the current contents of `slot`.
    pub fn index(&self, slot: usize) -> SampleIndex {
        SampleIndex {
            slot,
            stamp: self.stamps[slot],
        }
    }

    pub fn sum_tree(&self) -> Option<&SumTree> {
        self.tree.as_ref()
    }

    pub fn push(&mut self, t: Transition) {
        let slot = self.next;
        if self.storage.len() < self.config.capacity {
            self.storage.push(t);
            self.stamps.push(self.writes);
            self.priorities.push(self.max_priority);
        } else {
            self.storage[slot] = t;
            self.stamps[slot] = self.writes;
            self.priorities[slot] = self.max_priority;
        }
        if let Some(tree) = &mut self.tree {
            tree.set(slot, self.max_priority.powf(self.config.alpha));
        }
        self.writes += 1;
        self.next = (slot + 1) % self.config.capacity;
    }

    pub fn sample(&self, batch: usize, rng: &mut RngStream) -> Result<SampledBatch> {
        let n = self.storage.len();
        if n < batch || batch == 0 {
            return Err(Error::UnderfilledBuffer {
                size: n,
                requested: batch,
            });
        }
        let mut slots = Vec::with_capacity(batch);
        let mut weights = Vec::with_capacity(batch);
        match &self.tree {
            None => {
                for _ in 0..batch {
                    slots.push(rng.below(n));
                    weights.push(1.0);
                }
            }
            Some(tree) => {
                let total = tree.total();
                for _ in 0..batch {
                    let slot = loop {
                        let s = tree.find(rng.next_f64() * total);
                        if s < n && tree.get(s) > 0.0 {
                            break s;
                        }
                    };
                    let p = tree.get(slot) / total;
                    slots.push(slot);
                    weights.push((n as f64 * p).powf(-self.config.beta));
                }
                let max_w = weights.iter().cloned().fold(0.0, f64::max);
                weights.iter_mut().for_each(|w| *w /= max_w);
            }
        }
        Ok(SampledBatch {
            transitions: slots.iter().map(|&s| self.storage[s].clone()).collect(),
            indices: slots
                .iter()
                .map(|&s| SampleIndex {
                    slot: s,
                    stamp: self.stamps[s],
                })
                .collect(),
            weights,
        })
    }

    /// Sets `pᵢ = |δᵢ| + ε`. Indices whose slot has been overwritten since
    /// sampling are skipped. No-op for uniform buffers.
    pub fn update_priorities(&mut self, indices: &[SampleIndex], td_errors: &[f64]) {
        let Some(tree) = &mut self.tree else {
            return;
        };
        for (idx, delta) in indices.iter().zip(td_errors) {
            if idx.slot >= self.stamps.len() || self.stamps[idx.slot] != idx.stamp {
                continue;
            }
            let p = delta.abs() + self.config.priority_eps;
            self.priorities[idx.slot] = p;
            self.max_priority = self.max_priority.max(p);
            tree.set(idx.slot, p.powf(self.config.alpha));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tr(id: f64) -> Transition {
        Transition::new(vec![id], 0, 0.0, vec![id + 1.0], false)
    }

    fn prioritized(capacity: usize, alpha: f64) -> ReplayBuffer {
        ReplayBuffer::new(ReplayConfig {
            capacity,
            prioritized: true,
            alpha,
            ..ReplayConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn ring_evicts_oldest() {
        let mut b = ReplayBuffer::new(ReplayConfig {
            capacity: 2,
            ..ReplayConfig::default()
        })
        .unwrap();
        for i in 0..3 {
            b.push(tr(i as f64));
        }
        let ids: Vec<f64> = b.iter().map(|t| t.obs[0]).collect();
        assert_eq!(b.len(), 2);
        assert!(!ids.contains(&0.0));
    }

    #[test]
    fn first_priority_is_one() {
        let mut b = prioritized(4, 0.5);
        b.push(tr(0.0));
        assert_eq!(b.priority(0), Some(1.0));
    }

    #[test]
    fn push_after_sample_keeps_tree_consistent() {
        let mut b = prioritized(8, 0.5);
        let mut rng = RngStream::new(0, 0);
        for i in 0..5 {
            b.push(tr(i as f64));
        }
        let s = b.sample(3, &mut rng).unwrap();
        b.update_priorities(&s.indices, &[0.5, 2.0, 0.1]);
        b.push(tr(9.0));
        let tree = b.sum_tree().unwrap();
        assert!(tree.audit(1e-12));
        assert!((tree.total() - tree.leaf_sum()).abs() < 1e-12);
    }

    #[test]
    fn underfilled_sample_errors() {
        let mut b = ReplayBuffer::new(ReplayConfig::default()).unwrap();
        b.push(tr(0.0));
        let mut rng = RngStream::new(0, 0);
        assert!(matches!(b.sample(2, &mut rng), Err(Error::UnderfilledBuffer { .. })));
    }

    fn frequencies(b: &ReplayBuffer, draws: usize, seed: u64) -> Vec<f64> {
        let mut rng = RngStream::new(seed, 0);
        let mut counts = vec![0usize; b.len()];
        let mut left = draws;
        while left > 0 {
            let k = left.min(b.len());
            for i in b.sample(k, &mut rng).unwrap().indices {
                counts[i.slot] += 1;
            }
            left -= k;
        }
        counts.iter().map(|&c| c as f64 / draws as f64).collect()
    }

    #[test]
    fn uniform_frequencies() {
        let mut b = ReplayBuffer::new(ReplayConfig::default()).unwrap();
        b.push(tr(0.0));
        b.push(tr(1.0));
        for f in frequencies(&b, 100_000, 1) {
            assert!((f - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn proportional_frequencies() {
        let mut b = prioritized(2, 1.0);
        b.push(tr(0.0));
        b.push(tr(1.0));
        let eps = b.config().priority_eps;
        b.update_priorities(&[b.index(0), b.index(1)], &[1.0 - eps, 3.0 - eps]);
        let f = frequencies(&b, 100_000, 2);
        assert!((f[0] - 0.25).abs() < 0.01, "{f:?}");
        assert!((f[1] - 0.75).abs() < 0.01, "{f:?}");
    }

    #[test]
    fn alpha_zero_is_uniform() {
        let mut b = prioritized(4, 0.0);
        for i in 0..4 {
            b.push(tr(i as f64));
        }
        let all: Vec<SampleIndex> = (0..4).map(|s| b.index(s)).collect();
        b.update_priorities(&all, &[0.0, 10.0, 100.0, 1000.0]);
        for f in frequencies(&b, 100_000, 3) {
            assert!((f - 0.25).abs() < 0.01);
        }
        let mut rng = RngStream::new(0, 0);
        assert!(b.sample(4, &mut rng).unwrap().weights.iter().all(|&w| (w - 1.0).abs() < 1e-12));
    }

    #[test]
    fn zero_td_error_floors_at_eps() {
        let mut b = prioritized(4, 0.5);
        b.push(tr(0.0));
        let idx = b.index(0);
        b.update_priorities(&[idx], &[0.0]);
        assert_eq!(b.priority(0), Some(1e-6));
    }

    #[test]
    fn stale_indices_are_skipped() {
        let mut b = prioritized(2, 1.0);
        b.push(tr(0.0));
        b.push(tr(1.0));
        let mut rng = RngStream::new(0, 0);
        let s = b.sample(2, &mut rng).unwrap();
        b.push(tr(2.0));
        b.push(tr(3.0));
        b.update_priorities(&s.indices, &[50.0, 50.0]);
        assert_eq!(b.priority(0), Some(1.0));
        assert_eq!(b.priority(1), Some(1.0));
    }

    #[test]
    fn importance_weights_normalised() {
        let mut b = prioritized(3, 1.0);
        for i in 0..3 {
            b.push(tr(i as f64));
        }
        let all: Vec<SampleIndex> = (0..3).map(|s| b.index(s)).collect();
        b.update_priorities(&all, &[1.0, 2.0, 4.0]);
        let mut rng = RngStream::new(7, 0);
        let s = b.sample(3, &mut rng).unwrap();
        let max = s.weights.iter().cloned().fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-12);
        // lower-priority items get larger weights
        let w_of = |slot| s.indices.iter().zip(&s.weights).find(|(i, _)| i.slot == slot).map(|(_, w)| *w);
        if let (Some(a), Some(c)) = (w_of(0), w_of(2)) {
            assert!(a > c);
        }
    }

    #[test]
    fn n_step_examples() {
        let w: Vec<Transition> = (0..3)
            .map(|i| Transition::new(vec![i as f64], i, 1.0, vec![i as f64 + 1.0], false))
            .collect();
        let t = n_step_assemble(&w, 3, 0.9).unwrap();
        assert!((t.reward - 2.71).abs() < 1e-12);
        assert_eq!(t.next_obs, vec![3.0]);
        assert_eq!((t.horizon, t.done, t.action), (3, false, 0));

        let t = n_step_assemble(&w, 1, 0.9).unwrap();
        assert_eq!(t.reward, 1.0);
        assert_eq!(t.horizon, 1);

        let mut w2 = w.clone();
        w2[0].done = true;
        w2[0].reward = 0.7;
        let t = n_step_assemble(&w2, 3, 0.9).unwrap();
        assert_eq!(t.reward, 0.7);
        assert!(t.done);
        assert_eq!(t.horizon, 1);
    }

    proptest! {
        #[test]
        fn n_step_matches_brute_force(seed in 0u64..100_000, n in 1usize..6, len in 1usize..8) {
            let mut rng = RngStream::new(seed, 4);
            let gamma = rng.uniform(0.0, 1.0);
            let window: Vec<Transition> = (0..len)
                .map(|i| Transition::new(vec![i as f64], 0, rng.uniform(-2.0, 2.0), vec![i as f64 + 1.0], rng.bernoulli(0.2)))
                .collect();
            let t = n_step_assemble(&window, n, gamma).unwrap();
            let mut expected = 0.0;
            let mut m = 0;
            for k in 0..n.min(len) {
                expected += gamma.powi(k as i32) * window[k].reward;
                m = k + 1;
                if window[k].done {
                    break;
                }
            }
            prop_assert!((t.reward - expected).abs() <= 1e-12);
            prop_assert_eq!(t.horizon as usize, m);
            prop_assert_eq!(t.done, window[m - 1].done);
        }

        #[test]
        fn sum_tree_root_tracks_leaves(seed in 0u64..1000) {
            let mut rng = RngStream::new(seed, 5);
            let cap = 1 + rng.below(40);
            let mut b = prioritized(cap, rng.uniform(0.0, 1.0));
            for _ in 0..500 {
                if b.is_empty() || rng.bernoulli(0.5) {
                    b.push(tr(rng.next_f64()));
                } else {
                    let k = 1 + rng.below(b.len());
                    let s = b.sample(k, &mut rng).unwrap();
                    let deltas: Vec<f64> = (0..k).map(|_| rng.uniform(-5.0, 5.0)).collect();
                    b.update_priorities(&s.indices, &deltas);
                }
            }
            let tree = b.sum_tree().unwrap();
            prop_assert!(tree.audit(1e-9));
            prop_assert!((tree.total() - tree.leaf_sum()).abs() <= 1e-9);
        }
    }
}
