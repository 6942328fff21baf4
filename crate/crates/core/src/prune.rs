//! Gradual magnitude pruning: a cubic sparsity ramp over a window of
//! gradient steps, with masks recomputed from weight magnitudes.

use crate::error::{Error, Result};
use crate::net::MaskedParams;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PruneScope {
    /// Every prunable weight matrix reaches the target sparsity on its own.
    PerLayer,
    /// One magnitude ranking across all prunable weights.
    Global,
}

pub const DEFAULT_START_FRACTION: f64 = 0.2;
pub const DEFAULT_END_FRACTION: f64 = 0.8;
pub const DEFAULT_UPDATE_INTERVAL: u64 = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PruneSchedule {
    pub final_sparsity: f64,
    pub start: u64,
    pub end: u64,
    pub update_interval: u64,
    pub scope: PruneScope,
}

impl PruneSchedule {
    pub fn new(
        final_sparsity: f64,
        start: u64,
        end: u64,
        update_interval: u64,
        scope: PruneScope,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&final_sparsity) {
            return Err(Error::InvalidArgument(format!(
                "final sparsity {final_sparsity} outside [0, 1]"
            )));
        }
        if start >= end {
            return Err(Error::InvalidArgument(format!(
                "pruning window start {start} must precede end {end}"
            )));
        }
        if update_interval == 0 {
            return Err(Error::InvalidArgument("update interval must be >= 1".into()));
        }
        Ok(Self {
            final_sparsity,
            start,
            end,
            update_interval,
            scope,
        })
    }

    /// Window placed at fractions of a run of `total_steps` gradient steps.
    pub fn from_fractions(
        final_sparsity: f64,
        total_steps: u64,
        start_fraction: f64,
        end_fraction: f64,
        update_interval: u64,
        scope: PruneScope,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&start_fraction)
            || !(0.0..=1.0).contains(&end_fraction)
            || start_fraction >= end_fraction
        {
            return Err(Error::InvalidArgument(format!(
                "window fractions must satisfy 0 <= {start_fraction} < {end_fraction} <= 1"
            )));
        }
        let start = (start_fraction * total_steps as f64).round() as u64;
        let end = ((end_fraction * total_steps as f64).round() as u64).max(start + 1);
        Self::new(final_sparsity, start, end, update_interval, scope)
    }

    /// Prune from 20% to 80% of training.
    pub fn standard(final_sparsity: f64, total_steps: u64) -> Result<Self> {
        Self::from_fractions(
            final_sparsity,
            total_steps,
            DEFAULT_START_FRACTION,
            DEFAULT_END_FRACTION,
            DEFAULT_UPDATE_INTERVAL,
            PruneScope::PerLayer,
        )
    }

    pub fn sparsity_at(&self, t: u64) -> f64 {
        if t < self.start {
            0.0
        } else if t >= self.end {
            self.final_sparsity
        } else {
            let progress = (t - self.start) as f64 / (self.end - self.start) as f64;
            self.final_sparsity * (1.0 - (1.0 - progress).powi(3))
        }
    }

    /// Masks are recomputed on interval multiples inside the window, and
    /// always at the window's last step.
    pub fn is_update_step(&self, t: u64) -> bool {
        (self.start..=self.end).contains(&t) && (t % self.update_interval == 0 || t == self.end)
    }
}

/// Number of weights kept out of `n` at sparsity `s`: `⌈(1−s)·n⌉`, and at
/// least one whenever `s < 1`.
pub fn kept_count(n: usize, s: f64) -> usize {
    if n == 0 {
        return 0;
    }
    // Absorb round-off such as (1 − 0.9)·100 = 10.000000000000002.
    let raw = ((1.0 - s) * n as f64 - 1e-9).ceil().max(0.0) as usize;
    let kept = raw.min(n);
    if s < 1.0 {
        kept.max(1)
    } else {
        kept
    }
}

/// Prune order for a set of (currently-masked, weight) entries: masked
/// entries first, then ascending magnitude, then ascending flat index.
fn prune_order<'a>(entries: impl Iterator<Item = (bool, f64)> + 'a) -> Vec<usize> {
    let keyed: Vec<(bool, f64)> = entries.collect();
    let mut order: Vec<usize> = (0..keyed.len()).collect();
    order.sort_by(|&a, &b| {
        let (ma, wa) = keyed[a];
        let (mb, wb) = keyed[b];
        mb.cmp(&ma)
            .then(wa.abs().total_cmp(&wb.abs()))
            .then(a.cmp(&b))
    });
    order
}

/// Masks keeping the largest-magnitude weights at `target_sparsity`.
///
/// Returns one mask per parameter layer; non-prunable layers get their
/// current mask back unchanged.
pub fn magnitude_masks(params: &MaskedParams, target_sparsity: f64, scope: PruneScope) -> Vec<Matrix> {
    let s = target_sparsity.clamp(0.0, 1.0);
    let mut masks: Vec<Matrix> = params.layers.iter().map(|l| l.mask.clone()).collect();
    let entries = |l: &crate::net::ParamLayer| {
        l.mask
            .data()
            .iter()
            .zip(l.weight.data())
            .map(|(&m, &w)| (m == 0.0, w))
            .collect::<Vec<_>>()
    };
    match scope {
        PruneScope::PerLayer => {
            for (layer, mask) in params.layers.iter().zip(&mut masks) {
                if !layer.prunable {
                    continue;
                }
                let n = layer.weight.len();
                let pruned = n - kept_count(n, s);
                mask.fill(1.0);
                let order = prune_order(entries(layer).into_iter());
                for &i in &order[..pruned] {
                    mask.data_mut()[i] = 0.0;
                }
            }
        }
        PruneScope::Global => {
            let prunable: Vec<usize> = (0..params.layers.len())
                .filter(|&i| params.layers[i].prunable)
                .collect();
            let mut offsets = Vec::with_capacity(prunable.len());
            let mut all = Vec::new();
            for &i in &prunable {
                offsets.push(all.len());
                all.extend(entries(&params.layers[i]));
            }
            let n = all.len();
            let pruned = n - kept_count(n, s);
            let order = prune_order(all.into_iter());
            for &i in &prunable {
                masks[i].fill(1.0);
            }
            for &flat in &order[..pruned] {
                let slot = offsets.partition_point(|&o| o <= flat) - 1;
                masks[prunable[slot]].data_mut()[flat - offsets[slot]] = 0.0;
            }
        }
    }
    masks
}

/// Advance pruning at gradient step `t`. Returns whether masks changed.
///
/// Masks are recomputed only at update steps inside the window; after the
/// window closes the final mask stays frozen.
pub fn prune_step(params: &mut MaskedParams, sched: &PruneSchedule, t: u64) -> bool {
    if sched.final_sparsity == 0.0 || !sched.is_update_step(t) {
        return false;
    }
    let masks = magnitude_masks(params, sched.sparsity_at(t), sched.scope);
    let mut changed = false;
    for (layer, mask) in params.layers.iter_mut().zip(masks) {
        if layer.mask != mask {
            layer.mask = mask;
            changed = true;
        }
        layer.apply_mask();
    }
    changed
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Adam, AdamConfig, Arch, Gradients, Head, Network, ParamLayer};
    use crate::rng::RngStream;
    use proptest::prelude::*;

    fn sched() -> PruneSchedule {
        PruneSchedule::new(0.95, 200, 800, 100, PruneScope::PerLayer).unwrap()
    }

    fn single_layer(weights: &[f64]) -> MaskedParams {
        MaskedParams {
            layers: vec![ParamLayer::new(
                Matrix::new(1, weights.len(), weights.to_vec()).unwrap(),
                vec![0.0],
            )],
        }
    }

    #[test]
    fn schedule_examples() {
        let s = sched();
        assert_eq!(s.sparsity_at(100), 0.0);
        assert_eq!(s.sparsity_at(200), 0.0);
        assert!((s.sparsity_at(800) - 0.95).abs() < 1e-12);
        assert!((s.sparsity_at(500) - 0.83125).abs() < 1e-12);
        assert_eq!(s.sparsity_at(10_000), 0.95);
    }

    #[test]
    fn standard_window_is_twenty_to_eighty_percent() {
        let s = PruneSchedule::standard(0.9, 1000).unwrap();
        assert_eq!((s.start, s.end), (200, 800));
    }

    #[test]
    fn schedule_validation() {
        assert!(PruneSchedule::new(1.1, 0, 10, 1, PruneScope::PerLayer).is_err());
        assert!(PruneSchedule::new(0.5, 10, 10, 1, PruneScope::PerLayer).is_err());
        assert!(PruneSchedule::new(0.5, 0, 10, 0, PruneScope::PerLayer).is_err());
        assert!(PruneSchedule::from_fractions(0.5, 100, 0.8, 0.2, 1, PruneScope::Global).is_err());
    }

    #[test]
    fn magnitude_mask_examples() {
        let p = single_layer(&[0.1, -0.5, 0.3, 0.05]);
        let m = magnitude_masks(&p, 0.5, PruneScope::PerLayer);
        assert_eq!(m[0].data(), &[0.0, 1.0, 1.0, 0.0]);

        let m = magnitude_masks(&p, 0.0, PruneScope::PerLayer);
        assert!(m[0].data().iter().all(|&x| x == 1.0));

        let p = single_layer(&[1.0, 1.0, 1.0, 1.0]);
        let m = magnitude_masks(&p, 0.5, PruneScope::PerLayer);
        assert_eq!(m[0].data(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn kept_count_rules() {
        assert_eq!(kept_count(100, 0.9), 10);
        assert_eq!(kept_count(10, 0.99999), 1);
        assert_eq!(kept_count(10, 1.0), 0);
        assert_eq!(kept_count(7, 0.5), 4);
    }

    #[test]
    fn global_scope_ranks_across_layers() {
        let p = MaskedParams {
            layers: vec![
                ParamLayer::new(Matrix::new(1, 2, vec![0.1, 5.0]).unwrap(), vec![0.0]),
                ParamLayer::new(Matrix::new(1, 2, vec![0.2, 0.3]).unwrap(), vec![0.0]),
            ],
        };
        let m = magnitude_masks(&p, 0.5, PruneScope::Global);
        assert_eq!(m[0].data(), &[0.0, 1.0]);
        assert_eq!(m[1].data(), &[0.0, 1.0]);
        let per = magnitude_masks(&p, 0.5, PruneScope::PerLayer);
        assert_eq!(per[1].data(), &[0.0, 1.0]);
    }

    #[test]
    fn non_prunable_layer_untouched() {
        let mut p = single_layer(&[0.1, 0.2, 0.3, 0.4]);
        p.layers[0].prunable = false;
        let m = magnitude_masks(&p, 0.75, PruneScope::PerLayer);
        assert!(m[0].data().iter().all(|&x| x == 1.0));
        let m = magnitude_masks(&p, 0.75, PruneScope::Global);
        assert!(m[0].data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn prune_step_respects_window_and_is_idempotent() {
        let mut rng = RngStream::new(0, 0);
        let mut net = Network::build(Arch::Mlp, 1, 4, 2, Head::Scalar, &mut rng).unwrap();
        let s = sched();
        assert!(!prune_step(&mut net.params, &s, 100));
        assert_eq!(net.params.sparsity(), 0.0);
        assert!(!prune_step(&mut net.params, &s, 250));
        prune_step(&mut net.params, &s, 300);
        let after_first = net.params.clone();
        prune_step(&mut net.params, &s, 300);
        assert_eq!(net.params, after_first);
        prune_step(&mut net.params, &s, 800);
        for l in &net.params.layers {
            let frac = l.masked_count() as f64 / l.weight.len() as f64;
            assert!((frac - 0.95).abs() <= 1.0 / l.weight.len() as f64);
        }
        let frozen = net.params.clone();
        // after the window nothing moves, even if weights change
        net.params.layers[0].weight.data_mut()[0] += 10.0;
        let expected = net.params.clone();
        assert!(!prune_step(&mut net.params, &s, 900));
        assert_eq!(net.params, expected);
        assert_eq!(net.params.layers[0].mask, frozen.layers[0].mask);
    }

    #[test]
    fn zero_final_sparsity_keeps_dense() {
        let mut rng = RngStream::new(0, 0);
        let mut net = Network::build(Arch::Mlp, 1, 4, 2, Head::Scalar, &mut rng).unwrap();
        let s = PruneSchedule::new(0.0, 0, 100, 1, PruneScope::PerLayer).unwrap();
        for t in 0..200 {
            prune_step(&mut net.params, &s, t);
        }
        assert_eq!(net.params.sparsity(), 0.0);
    }

    #[test]
    fn masked_weights_survive_adam() {
        let mut rng = RngStream::new(3, 0);
        let mut net = Network::build(Arch::Mlp, 1, 4, 2, Head::Scalar, &mut rng).unwrap();
        let s = PruneSchedule::new(0.8, 0, 10, 1, PruneScope::PerLayer).unwrap();
        for t in 0..=10 {
            prune_step(&mut net.params, &s, t);
        }
        let mut opt = Adam::new(AdamConfig::default(), &net.params);
        let mut g = Gradients::zeros_like(&net.params);
        for l in &mut g.layers {
            l.weight.fill(0.3);
        }
        for _ in 0..100 {
            opt.step(&mut net.params, &g).unwrap();
        }
        for l in &net.params.layers {
            for (w, m) in l.weight.data().iter().zip(l.mask.data()) {
                if *m == 0.0 {
                    assert_eq!(*w, 0.0);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn schedule_is_monotone(sf in 0.0f64..=1.0, start in 0u64..500, len in 1u64..1000, a in 0u64..2000, b in 0u64..2000) {
            let s = PruneSchedule::new(sf, start, start + len, 1, PruneScope::PerLayer).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(s.sparsity_at(lo) <= s.sparsity_at(hi));
            prop_assert!(s.sparsity_at(start) == 0.0);
            prop_assert!((s.sparsity_at(start + len) - sf).abs() < 1e-12);
        }

        #[test]
        fn realized_sparsity_and_nested_zero_sets(seed in 0u64..500, global: bool) {
            let mut rng = RngStream::new(seed, 1);
            let mut net = Network::build(Arch::Mlp, 1, 3, 2, Head::Scalar, &mut rng).unwrap();
            let scope = if global { PruneScope::Global } else { PruneScope::PerLayer };
            let s = PruneSchedule::new(0.9, 10, 60, 5, scope).unwrap();
            let mut prev_zero: Vec<Vec<bool>> = Vec::new();
            for t in 0..=70 {
                // perturb surviving weights between updates
                for l in &mut net.params.layers {
                    for w in l.weight.data_mut() {
                        *w += 0.01 * rng.uniform(-1.0, 1.0);
                    }
                    l.apply_mask();
                }
                if prune_step(&mut net.params, &s, t) || s.is_update_step(t) {
                    let target = s.sparsity_at(t);
                    if global {
                        let n = net.params.weight_count();
                        prop_assert!((net.params.prunable_sparsity() - target).abs() <= 1.0 / n as f64);
                    } else {
                        for l in &net.params.layers {
                            let n = l.weight.len();
                            let frac = l.masked_count() as f64 / n as f64;
                            prop_assert!((frac - target).abs() <= 1.0 / n as f64);
                        }
                    }
                    let zero: Vec<Vec<bool>> = net.params.layers.iter()
                        .map(|l| l.mask.data().iter().map(|&m| m == 0.0).collect())
                        .collect();
                    for (p, z) in prev_zero.iter().zip(&zero) {
                        for (a, b) in p.iter().zip(z) {
                            prop_assert!(!*a || *b, "a pruned weight was revived");
                        }
                    }
                    prev_zero = zero;
                }
            }
        }
    }
}
