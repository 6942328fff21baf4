//! Read-only measurements of a network's state: target variance, norms,
//! effective rank, dormant units and the correlation structure of
//! per-example gradients.

use crate::error::{Error, Result};
use crate::net::{Gradients, MaskedParams, Network};
use crate::tensor::{dot, svd_values, Matrix};

pub const SRANK_DELTA: f64 = 0.01;
pub const DORMANT_TAU: f64 = 0.025;
pub const PROBE_BATCH: usize = 512;

/// One logging row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    pub step: u64,
    pub episode_return: f64,
    pub normalized_return: f64,
    pub sparsity: f64,
    pub q_variance: f64,
    pub params_norm: f64,
    pub q_norm: f64,
    pub srank: usize,
    pub dormant_fraction: f64,
    pub loss: f64,
}

/// Unbiased sample variance of a batch of TD targets.
pub fn q_variance(targets: &[f64]) -> Result<f64> {
    let n = targets.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "variance needs at least 2 targets, got {n}"
        )));
    }
    let mean = targets.iter().sum::<f64>() / n as f64;
    Ok(targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1) as f64)
}

/// Running mean of per-batch statistics over a logging window.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WindowMean {
    sum: f64,
    count: usize,
}

impl WindowMean {
    pub fn push(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Mean so far (0 for an empty window), then reset.
    pub fn take(&mut self) -> f64 {
        let m = if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        };
        *self = Self::default();
        m
    }
}

/// ℓ2 norm over unmasked weights and all biases.
pub fn params_norm(params: &MaskedParams) -> f64 {
    params
        .layers
        .iter()
        .map(|l| {
            let w: f64 = l
                .weight
                .data()
                .iter()
                .zip(l.mask.data())
                .map(|(w, m)| if *m == 0.0 { 0.0 } else { w * w })
                .sum();
            w + l.bias.iter().map(|b| b * b).sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

/// Mean ℓ2 norm of the rows of a batch of Q-vectors.
pub fn q_norm(q: &Matrix) -> f64 {
    if q.rows() == 0 {
        return 0.0;
    }
    (0..q.rows()).map(|r| dot(q.row(r), q.row(r)).sqrt()).sum::<f64>() / q.rows() as f64
}

/// Smallest k with `Σ_{i≤k} σᵢ / Σ σᵢ ≥ 1 − δ`; 0 for an all-zero matrix.
pub fn srank(features: &Matrix, delta: f64) -> Result<usize> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("srank delta {delta} outside (0, 1)")));
    }
    srank_from_singular_values(&svd_values(features)?, delta)
}

pub fn srank_from_singular_values(sv: &[f64], delta: f64) -> Result<usize> {
    let total: f64 = sv.iter().sum();
    if total == 0.0 {
        return Ok(0);
    }
    let mut acc = 0.0;
    for (k, s) in sv.iter().enumerate() {
        acc += s;
        if acc / total >= 1.0 - delta {
            return Ok(k + 1);
        }
    }
    Ok(sv.len())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DormantReport {
    pub fraction: f64,
    /// Per layer, per unit: mean |activation| relative to the layer average.
    pub scores: Vec<Vec<f64>>,
}

impl DormantReport {
    pub fn dormant_units(&self, tau: f64) -> Vec<(usize, usize)> {
        self.scores
            .iter()
            .enumerate()
            .flat_map(|(l, s)| {
                s.iter()
                    .enumerate()
                    .filter(move |(_, &v)| v <= tau)
                    .map(move |(u, _)| (l, u))
            })
            .collect()
    }
}

/// Dormancy scores over a probe batch (`batch × units` per layer). A unit is
/// dormant when its score is at most `tau`; a silent layer is all dormant.
pub fn dormant_fraction(activations: &[&Matrix], tau: f64) -> DormantReport {
    let mut scores = Vec::with_capacity(activations.len());
    let mut dormant = 0usize;
    let mut total = 0usize;
    for acts in activations {
        let (rows, units) = acts.shape();
        let mut mean_abs = vec![0.0; units];
        for r in 0..rows {
            for (m, a) in mean_abs.iter_mut().zip(acts.row(r)) {
                *m += a.abs();
            }
        }
        mean_abs.iter_mut().for_each(|m| *m /= rows.max(1) as f64);
        let layer_mean = mean_abs.iter().sum::<f64>() / units.max(1) as f64;
        let layer_scores: Vec<f64> = if layer_mean == 0.0 {
            vec![0.0; units]
        } else {
            mean_abs.iter().map(|m| m / layer_mean).collect()
        };
        dormant += layer_scores.iter().filter(|&&s| s <= tau).count();
        total += units;
        scores.push(layer_scores);
    }
    DormantReport {
        fraction: if total == 0 {
            0.0
        } else {
            dormant as f64 / total as f64
        },
        scores,
    }
}

/// Cosine-similarity matrix of flattened per-example gradients. Zero
/// gradients give a zero row and column.
pub fn gradient_correlation(grads: &[Vec<f64>]) -> Matrix {
    let m = grads.len();
    let norms: Vec<f64> = grads.iter().map(|g| dot(g, g).sqrt()).collect();
    let mut c = Matrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else if i == j {
                1.0
            } else {
                (dot(&grads[i], &grads[j]) / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            c.set(i, j, v);
            c.set(j, i, v);
        }
    }
    c
}

/// Gradient with masked weight positions dropped.
pub fn flatten_unmasked(params: &MaskedParams, grads: &Gradients) -> Vec<f64> {
    let mut v = Vec::new();
    for (l, g) in params.layers.iter().zip(&grads.layers) {
        v.extend(
            g.weight
                .data()
                .iter()
                .zip(l.mask.data())
                .filter(|(_, m)| **m != 0.0)
                .map(|(x, _)| *x),
        );
        v.extend_from_slice(&g.bias);
    }
    v
}

pub const MAX_COVARIANCE_ITEMS: usize = 64;

/// Correlation matrix of per-example loss gradients over `items`.
pub fn gradient_covariance<T, F>(net: &Network, items: &[T], per_example_grad: F) -> Result<Matrix>
where
    F: Fn(&Network, &T) -> Result<Gradients>,
{
    if items.len() > MAX_COVARIANCE_ITEMS {
        return Err(Error::InvalidArgument(format!(
            "gradient covariance limited to {MAX_COVARIANCE_ITEMS} items, got {}",
            items.len()
        )));
    }
    let grads = items
        .iter()
        .map(|it| per_example_grad(net, it).map(|g| flatten_unmasked(&net.params, &g)))
        .collect::<Result<Vec<_>>>()?;
    Ok(gradient_correlation(&grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Arch, Head, ParamLayer};
    use crate::rng::RngStream;
    use proptest::prelude::*;

    #[test]
    fn q_variance_examples() {
        assert_eq!(q_variance(&[3.0, 3.0, 3.0]).unwrap(), 0.0);
        assert_eq!(q_variance(&[0.0, 2.0]).unwrap(), 2.0);
        assert!(q_variance(&[1.0]).is_err());
        // window mean of three batch variances: 2, 0, 1
        let mut w = WindowMean::default();
        w.push(q_variance(&[0.0, 2.0]).unwrap());
        w.push(q_variance(&[5.0, 5.0]).unwrap());
        w.push(q_variance(&[1.0, 2.0, 3.0]).unwrap());
        assert!((w.take() - 1.0).abs() < 1e-15);
        assert_eq!(w.count(), 0);
    }

    #[test]
    fn params_norm_examples() {
        let zero = MaskedParams {
            layers: vec![ParamLayer::new(Matrix::zeros(2, 2), vec![0.0; 2])],
        };
        assert_eq!(params_norm(&zero), 0.0);
        let p = MaskedParams {
            layers: vec![ParamLayer::new(Matrix::new(1, 2, vec![3.0, 4.0]).unwrap(), vec![0.0])],
        };
        assert_eq!(params_norm(&p), 5.0);
        let mut big = ParamLayer::new(Matrix::filled(10, 10, 7.0), vec![0.0; 10]);
        big.mask.fill(0.0);
        big.mask.set(3, 3, 1.0);
        big.weight.set(3, 3, 2.0);
        big.apply_mask();
        assert_eq!(params_norm(&MaskedParams { layers: vec![big] }), 2.0);
    }

    #[test]
    fn q_norm_mean_of_row_norms() {
        let q = Matrix::from_rows(&[vec![3.0, 4.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(q_norm(&q), 3.0);
    }

    #[test]
    fn srank_examples() {
        assert_eq!(srank(&Matrix::identity(5), 0.01).unwrap(), 5);
        let mut rank_one = Matrix::zeros(4, 3);
        for i in 0..4 {
            for j in 0..3 {
                rank_one.set(i, j, (i + 1) as f64 * (j as f64 - 0.5));
            }
        }
        assert_eq!(srank(&rank_one, 0.01).unwrap(), 1);
        assert_eq!(srank_from_singular_values(&[10.0, 0.001, 0.001], 0.01).unwrap(), 1);
        assert_eq!(srank(&Matrix::zeros(3, 3), 0.01).unwrap(), 0);
        assert!(srank(&Matrix::identity(2), 0.0).is_err());
    }

    #[test]
    fn dormant_examples() {
        // one silent unit among four active ones
        let mut a = Matrix::zeros(6, 5);
        for r in 0..6 {
            for u in 1..5 {
                a.set(r, u, 0.5 + r as f64);
            }
        }
        let rep = dormant_fraction(&[&a], DORMANT_TAU);
        assert_eq!(rep.dormant_units(DORMANT_TAU), vec![(0, 0)]);
        assert_eq!(rep.fraction, 0.2);

        let same = Matrix::filled(4, 6, 1.3);
        let rep = dormant_fraction(&[&same], 0.99);
        assert_eq!(rep.fraction, 0.0);
        assert!(rep.scores[0].iter().all(|&s| (s - 1.0).abs() < 1e-15));

        let silent = Matrix::zeros(3, 4);
        assert_eq!(dormant_fraction(&[&silent], DORMANT_TAU).fraction, 1.0);
    }

    #[test]
    fn crafted_dead_units_give_exact_fraction() {
        let mut rng = RngStream::new(4, 4);
        for (h, d) in [(10, 3), (64, 17), (7, 0), (5, 5)] {
            let mut a = Matrix::zeros(32, h);
            for r in 0..32 {
                for u in d..h {
                    a.set(r, u, rng.uniform(0.5, 1.5));
                }
            }
            let rep = dormant_fraction(&[&a], DORMANT_TAU);
            assert_eq!(rep.fraction, d as f64 / h as f64);
        }
    }

    #[test]
    fn correlation_examples() {
        let g = vec![vec![1.0, 2.0, 0.0], vec![1.0, 2.0, 0.0], vec![0.0, 0.0, 3.0], vec![0.0; 3]];
        let c = gradient_correlation(&g);
        assert!((c.get(0, 1) - 1.0).abs() < 1e-12);
        assert_eq!(c.get(0, 2), 0.0);
        assert!((c.get(2, 2) - 1.0).abs() < 1e-12);
        assert_eq!(c.get(3, 3), 0.0);
        assert_eq!(c.get(3, 0), 0.0);
    }

    #[test]
    fn diagnostics_do_not_touch_params() {
        let mut rng = RngStream::new(1, 1);
        let net = Network::build(Arch::Mlp, 1, 4, 2, Head::Scalar, &mut rng).unwrap();
        let before = net.clone();
        let x = Matrix::new(8, 4, (0..32).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        let out = net.forward(&x, true).unwrap();
        let cache = out.cache.as_ref().unwrap();
        let _ = params_norm(&net.params);
        let _ = q_norm(&out.raw);
        let _ = srank(cache.features(), SRANK_DELTA).unwrap();
        let _ = dormant_fraction(&cache.hidden_activations(), DORMANT_TAU);
        let items: Vec<usize> = (0..8).collect();
        let _ = gradient_covariance(&net, &items, |n, &i| {
            let xi = Matrix::new(1, 4, x.row(i).to_vec()).unwrap();
            let o = n.forward(&xi, true).unwrap();
            n.backward(o.cache.as_ref(), &o.raw)
        })
        .unwrap();
        assert_eq!(net, before);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn correlation_is_symmetric_unit_diagonal_psd(seed in 0u64..1000, m in 2usize..12, d in 1usize..20) {
            let mut rng = RngStream::new(seed, 6);
            let g: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| rng.normal()).collect()).collect();
            let c = gradient_correlation(&g);
            for i in 0..m {
                prop_assert!((c.get(i, i) - 1.0).abs() < 1e-12);
                for j in 0..m {
                    prop_assert!((c.get(i, j) - c.get(j, i)).abs() < 1e-12);
                }
            }
            // PSD: xᵀCx ≥ 0 for random probes
            for _ in 0..20 {
                let x: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
                let mut q = 0.0;
                for i in 0..m {
                    for j in 0..m {
                        q += x[i] * c.get(i, j) * x[j];
                    }
                }
                prop_assert!(q >= -1e-9);
            }
        }
    }
}
