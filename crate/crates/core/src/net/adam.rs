use super::{Gradients, LayerGrad, MaskedParams};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1.5e-4,
        }
    }
}

/// Adam with bias correction. Masked weights are re-zeroed after every step.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &MaskedParams) -> Self {
        Self {
            config,
            step: 0,
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &Gradients {
        &self.m
    }

    pub fn second_moment(&self) -> &Gradients {
        &self.v
    }

    pub fn step(&mut self, params: &mut MaskedParams, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != params.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "{} gradient layers for {} parameter layers",
                grads.layers.len(),
                params.layers.len()
            )));
        }
        for (i, (g, p)) in grads.layers.iter().zip(&params.layers).enumerate() {
            if g.weight.shape() != p.weight.shape() || g.bias.len() != p.bias.len() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    left: g.weight.shape(),
                    right: p.weight.shape(),
                });
            }
            if !g.weight.is_finite() || g.bias.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of layer {i}")));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let update = |w: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for (((w, g), m), v) in w.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        };
        for (((p, g), m), v) in params
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.m.layers)
            .zip(&mut self.v.layers)
        {
            update(p.weight.data_mut(), g.weight.data(), m.weight.data_mut(), v.weight.data_mut());
            update(&mut p.bias, &g.bias, &mut m.bias, &mut v.bias);
            p.apply_mask();
        }
        Ok(())
    }

    /// Zero both moments for a whole parameter layer.
    pub fn reset_layer(&mut self, idx: usize) {
        for state in [&mut self.m, &mut self.v] {
            let LayerGrad { weight, bias } = &mut state.layers[idx];
            weight.fill(0.0);
            bias.iter_mut().for_each(|b| *b = 0.0);
        }
    }

    /// Zero moments of one unit: its incoming row (and bias) in layer `idx`.
    pub fn reset_row(&mut self, idx: usize, row: usize) {
        for state in [&mut self.m, &mut self.v] {
            let l = &mut state.layers[idx];
            l.weight.row_mut(row).fill(0.0);
            l.bias[row] = 0.0;
        }
    }

    /// Zero moments of column `col` of layer `idx` (a unit's outgoing weights).
    pub fn reset_col(&mut self, idx: usize, col: usize) {
        for state in [&mut self.m, &mut self.v] {
            let w = &mut state.layers[idx].weight;
            for r in 0..w.rows() {
                w.set(r, col, 0.0);
            }
        }
    }
}
