//! Width-scalable Q-networks with masked weights and hand-written backprop.
//!
//! Two architectures are provided: a plain MLP (two hidden layers) and a
//! residual MLP (input projection followed by two residual blocks). Hidden
//! widths are `BASE_WIDTH × width_multiplier`.

mod adam;
mod checkpoint;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{axpy, gemm_nt, gemm_tn, Matrix};

pub const BASE_WIDTH: usize = 64;
pub const MAX_WIDTH_MULTIPLIER: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    Mlp,
    Residual,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Scalar,
    Categorical { num_atoms: usize },
}

impl Head {
    pub fn atoms(&self) -> usize {
        match self {
            Head::Scalar => 1,
            Head::Categorical { num_atoms } => *num_atoms,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    /// `act(x + W₂·relu(W₁·x + b₁) + b₂)`; owns two parameter layers.
    ResidualBlock,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn dense(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Dense,
            in_dim,
            out_dim,
            activation,
        }
    }

    pub fn residual(dim: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::ResidualBlock,
            in_dim: dim,
            out_dim: dim,
            activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::InvalidArgument("layer with zero dimension".into()));
        }
        if self.kind == LayerKind::ResidualBlock && self.in_dim != self.out_dim {
            return Err(Error::InvalidArgument(format!(
                "residual block needs in_dim = out_dim, got {} -> {}",
                self.in_dim, self.out_dim
            )));
        }
        Ok(())
    }

    pub fn param_layers(&self) -> usize {
        match self.kind {
            LayerKind::Dense => 1,
            LayerKind::ResidualBlock => 2,
        }
    }

    pub fn param_count(&self) -> usize {
        match self.kind {
            LayerKind::Dense => self.in_dim * self.out_dim + self.out_dim,
            LayerKind::ResidualBlock => 2 * (self.in_dim * self.in_dim + self.in_dim),
        }
    }
}

/// One weight matrix (`out × in`), its bias and its binary mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub mask: Matrix,
    /// Whether magnitude pruning may touch this layer's weights.
    pub prunable: bool,
}

impl ParamLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Self {
        let mask = Matrix::filled(weight.rows(), weight.cols(), 1.0);
        Self {
            weight,
            bias,
            mask,
            prunable: true,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.rows()
    }

    /// Zero every masked weight.
    pub fn apply_mask(&mut self) {
        for (w, m) in self.weight.data_mut().iter_mut().zip(self.mask.data()) {
            if *m == 0.0 {
                *w = 0.0;
            }
        }
    }

    pub fn masked_count(&self) -> usize {
        self.mask.data().iter().filter(|&&m| m == 0.0).count()
    }

    /// Weights times mask; borrows when every masked weight is already zero.
    fn effective_weight(&self) -> Cow<'_, Matrix> {
        let clean = self
            .weight
            .data()
            .iter()
            .zip(self.mask.data())
            .all(|(w, m)| *m != 0.0 || *w == 0.0);
        if clean {
            return Cow::Borrowed(&self.weight);
        }
        let mut w = self.weight.clone();
        for (x, m) in w.data_mut().iter_mut().zip(self.mask.data()) {
            *x *= m;
        }
        Cow::Owned(w)
    }
}

pub fn glorot_limit(fan_out: usize, fan_in: usize) -> f64 {
    (6.0 / (fan_out + fan_in) as f64).sqrt()
}

/// Glorot-uniform weights in `±√(6/(fan_in+fan_out))`.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix {
    let limit = glorot_limit(rows, cols);
    let data = (0..rows * cols).map(|_| rng.uniform(-limit, limit)).collect();
    Matrix::new(rows, cols, data).expect("finite initialisation")
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskedParams {
    pub layers: Vec<ParamLayer>,
}

impl MaskedParams {
    pub fn apply_masks(&mut self) {
        self.layers.iter_mut().for_each(ParamLayer::apply_mask);
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len()).sum()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Fraction of weights (prunable or not) that are masked.
    pub fn sparsity(&self) -> f64 {
        let masked: usize = self.layers.iter().map(ParamLayer::masked_count).sum();
        masked as f64 / self.weight_count().max(1) as f64
    }

    /// Fraction of prunable weights that are masked.
    pub fn prunable_sparsity(&self) -> f64 {
        let (masked, total) = self
            .layers
            .iter()
            .filter(|l| l.prunable)
            .fold((0, 0), |(m, t), l| (m + l.masked_count(), t + l.weight.len()));
        masked as f64 / total.max(1) as f64
    }

    /// All weights then all biases, layer by layer.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            v.extend_from_slice(l.weight.data());
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn assign_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        for l in &mut self.layers {
            let n = l.weight.len();
            l.weight.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(params: &MaskedParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, s: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            axpy(s, b.weight.data(), a.weight.data_mut());
            axpy(s, &b.bias, &mut a.bias);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for l in &self.layers {
            v.extend_from_slice(l.weight.data());
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| {
                l.weight.data().iter().map(|x| x * x).sum::<f64>()
                    + l.bias.iter().map(|x| x * x).sum::<f64>()
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Post-activation outputs cached during a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct ActivationCache {
    input: Matrix,
    /// Output of each layer spec.
    outputs: Vec<Matrix>,
    /// Inner ReLU activations of residual blocks (`None` for dense layers).
    inner: Vec<Option<Matrix>>,
}

impl ActivationCache {
    /// Activations produced by every parameter layer except the head, in
    /// parameter-layer order. A residual block contributes its inner
    /// activation and then its output.
    pub fn hidden_activations(&self) -> Vec<&Matrix> {
        let n = self.outputs.len();
        let mut acts = Vec::new();
        for i in 0..n.saturating_sub(1) {
            if let Some(h) = &self.inner[i] {
                acts.push(h);
            }
            acts.push(&self.outputs[i]);
        }
        acts
    }

    /// Input to the final layer (the penultimate representation).
    pub fn features(&self) -> &Matrix {
        let n = self.outputs.len();
        if n >= 2 {
            &self.outputs[n - 2]
        } else {
            &self.input
        }
    }
}

#[derive(Clone, Debug)]
pub struct NetworkOutput {
    /// `batch × (n_actions · atoms)`; action-major within a row.
    pub raw: Matrix,
    pub n_actions: usize,
    pub atoms: usize,
    pub cache: Option<ActivationCache>,
}

impl NetworkOutput {
    pub fn batch(&self) -> usize {
        self.raw.rows()
    }

    /// Row `b` of a scalar head.
    pub fn q_row(&self, b: usize) -> &[f64] {
        self.raw.row(b)
    }

    /// Logits of action `a` for batch item `b` (categorical head).
    pub fn logits(&self, b: usize, a: usize) -> &[f64] {
        &self.raw.row(b)[a * self.atoms..(a + 1) * self.atoms]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    specs: Vec<LayerSpec>,
    pub params: MaskedParams,
    head: Head,
    n_actions: usize,
}

impl Network {
    /// Builds a freshly initialised network with all-ones masks.
    pub fn build(
        arch: Arch,
        width_multiplier: usize,
        in_dim: usize,
        n_actions: usize,
        head: Head,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if !(1..=MAX_WIDTH_MULTIPLIER).contains(&width_multiplier) {
            return Err(Error::InvalidArgument(format!(
                "width multiplier must be in 1..={MAX_WIDTH_MULTIPLIER}, got {width_multiplier}"
            )));
        }
        if in_dim == 0 || n_actions == 0 || head.atoms() == 0 {
            return Err(Error::InvalidArgument("zero network dimension".into()));
        }
        let hidden = BASE_WIDTH * width_multiplier;
        let out = n_actions * head.atoms();
        let specs = match arch {
            Arch::Mlp => vec![
                LayerSpec::dense(in_dim, hidden, Activation::Relu),
                LayerSpec::dense(hidden, hidden, Activation::Relu),
                LayerSpec::dense(hidden, out, Activation::Identity),
            ],
            Arch::Residual => vec![
                LayerSpec::dense(in_dim, hidden, Activation::Relu),
                LayerSpec::residual(hidden, Activation::Relu),
                LayerSpec::residual(hidden, Activation::Relu),
                LayerSpec::dense(hidden, out, Activation::Identity),
            ],
        };
        Self::from_specs(specs, head, n_actions, rng)
    }

    pub fn from_specs(
        specs: Vec<LayerSpec>,
        head: Head,
        n_actions: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let layers = init_layers(&specs, rng)?;
        Self::from_parts(specs, MaskedParams { layers }, head, n_actions)
    }

    pub fn from_parts(
        specs: Vec<LayerSpec>,
        params: MaskedParams,
        head: Head,
        n_actions: usize,
    ) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for s in &specs {
            s.validate()?;
        }
        for w in specs.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::InvalidArgument(format!(
                    "layer output {} does not feed next input {}",
                    w[0].out_dim, w[1].in_dim
                )));
            }
        }
        let expected_out = n_actions * head.atoms();
        if specs.last().map(|s| s.out_dim) != Some(expected_out) {
            return Err(Error::InvalidArgument(format!(
                "final layer must emit {expected_out} values"
            )));
        }
        let shapes = param_shapes(&specs);
        if shapes.len() != params.layers.len()
            || shapes
                .iter()
                .zip(&params.layers)
                .any(|(&(r, c), l)| l.weight.shape() != (r, c) || l.mask.shape() != (r, c) || l.bias.len() != r)
        {
            return Err(Error::InvalidArgument("parameters do not match layer specs".into()));
        }
        Ok(Self {
            specs,
            params,
            head,
            n_actions,
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn in_dim(&self) -> usize {
        self.specs[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.specs.last().map_or(0, |s| s.out_dim)
    }

    /// Parameter count derived from the layer specs alone.
    pub fn spec_param_count(&self) -> usize {
        self.specs.iter().map(LayerSpec::param_count).sum()
    }

    /// Index of the output head's parameter layer.
    pub fn head_layer(&self) -> usize {
        self.params.layers.len() - 1
    }

    pub fn set_head_prunable(&mut self, prunable: bool) {
        let h = self.head_layer();
        self.params.layers[h].prunable = prunable;
    }

    /// Reinitialise weights of parameter layer `idx` from the initialiser,
    /// zero its biases and restore its mask to all ones.
    pub fn reinit_layer(&mut self, idx: usize, rng: &mut RngStream) {
        let l = &mut self.params.layers[idx];
        l.weight = glorot_uniform(l.weight.rows(), l.weight.cols(), rng);
        l.bias.iter_mut().for_each(|b| *b = 0.0);
        l.mask.fill(1.0);
    }

    pub fn forward(&self, x: &Matrix, training: bool) -> Result<NetworkOutput> {
        if x.cols() != self.in_dim() {
            return Err(Error::ShapeMismatch {
                op: "forward",
                left: x.shape(),
                right: (x.rows(), self.in_dim()),
            });
        }
        let mut outputs = Vec::with_capacity(self.specs.len());
        let mut inner = Vec::with_capacity(self.specs.len());
        let mut li = 0;
        let mut h = x.clone();
        for spec in &self.specs {
            match spec.kind {
                LayerKind::Dense => {
                    let mut z = affine(&h, &self.params.layers[li]);
                    activate(&mut z, spec.activation);
                    li += 1;
                    inner.push(None);
                    h = z;
                }
                LayerKind::ResidualBlock => {
                    let mut u = affine(&h, &self.params.layers[li]);
                    activate(&mut u, Activation::Relu);
                    let mut y = affine(&u, &self.params.layers[li + 1]);
                    axpy(1.0, h.data(), y.data_mut());
                    activate(&mut y, spec.activation);
                    li += 2;
                    inner.push(training.then_some(u));
                    h = y;
                }
            }
            if training {
                outputs.push(h.clone());
            }
        }
        if !h.is_finite() {
            return Err(Error::NonFinite("network output".into()));
        }
        let cache = training.then(|| ActivationCache {
            input: x.clone(),
            outputs,
            inner,
        });
        Ok(NetworkOutput {
            raw: h,
            n_actions: self.n_actions,
            atoms: self.head.atoms(),
            cache,
        })
    }

    /// Forward pass on a single observation.
    pub fn forward_one(&self, x: &[f64]) -> Result<NetworkOutput> {
        let m = Matrix::new(1, x.len(), x.to_vec())?;
        self.forward(&m, false)
    }

    /// Backpropagate `d_out` (gradient of the loss w.r.t. the raw output).
    /// Gradients at masked weight positions are exactly zero.
    pub fn backward(&self, cache: Option<&ActivationCache>, d_out: &Matrix) -> Result<Gradients> {
        let cache = cache.ok_or(Error::MissingCache)?;
        let batch = cache.input.rows();
        if d_out.shape() != (batch, self.out_dim()) {
            return Err(Error::ShapeMismatch {
                op: "backward",
                left: d_out.shape(),
                right: (batch, self.out_dim()),
            });
        }
        let mut grads = Gradients::zeros_like(&self.params);
        let mut delta = d_out.clone();
        let mut li = self.params.layers.len();
        for (si, spec) in self.specs.iter().enumerate().rev() {
            let input = if si == 0 { &cache.input } else { &cache.outputs[si - 1] };
            let output = &cache.outputs[si];
            gate(&mut delta, output, spec.activation);
            match spec.kind {
                LayerKind::Dense => {
                    li -= 1;
                    let layer = &self.params.layers[li];
                    grads.layers[li] = layer_grad(&delta, input, layer);
                    if si > 0 {
                        delta = back_input(&delta, layer);
                    }
                }
                LayerKind::ResidualBlock => {
                    li -= 2;
                    let (fc1, fc2) = (&self.params.layers[li], &self.params.layers[li + 1]);
                    let hidden = cache.inner[si].as_ref().ok_or(Error::MissingCache)?;
                    grads.layers[li + 1] = layer_grad(&delta, hidden, fc2);
                    let mut d_hidden = back_input(&delta, fc2);
                    gate(&mut d_hidden, hidden, Activation::Relu);
                    grads.layers[li] = layer_grad(&d_hidden, input, fc1);
                    if si > 0 {
                        let d_in = back_input(&d_hidden, fc1);
                        axpy(1.0, d_in.data(), delta.data_mut());
                    }
                }
            }
        }
        Ok(grads)
    }
}

fn param_shapes(specs: &[LayerSpec]) -> Vec<(usize, usize)> {
    specs
        .iter()
        .flat_map(|s| match s.kind {
            LayerKind::Dense => vec![(s.out_dim, s.in_dim)],
            LayerKind::ResidualBlock => vec![(s.in_dim, s.in_dim), (s.out_dim, s.in_dim)],
        })
        .collect()
}

fn init_layers(specs: &[LayerSpec], rng: &mut RngStream) -> Result<Vec<ParamLayer>> {
    for s in specs {
        s.validate()?;
    }
    Ok(param_shapes(specs)
        .into_iter()
        .map(|(r, c)| ParamLayer::new(glorot_uniform(r, c, rng), vec![0.0; r]))
        .collect())
}

fn affine(x: &Matrix, layer: &ParamLayer) -> Matrix {
    let mut z = gemm_nt(x, &layer.effective_weight());
    for r in 0..z.rows() {
        axpy(1.0, &layer.bias, z.row_mut(r));
    }
    z
}

fn activate(z: &mut Matrix, act: Activation) {
    if act == Activation::Relu {
        z.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    }
}

/// Multiply `delta` by the activation derivative, read off the post-activation output.
fn gate(delta: &mut Matrix, output: &Matrix, act: Activation) {
    if act == Activation::Relu {
        for (d, o) in delta.data_mut().iter_mut().zip(output.data()) {
            if *o <= 0.0 {
                *d = 0.0;
            }
        }
    }
}

fn layer_grad(delta: &Matrix, input: &Matrix, layer: &ParamLayer) -> LayerGrad {
    let mut weight = gemm_tn(delta, input);
    for (g, m) in weight.data_mut().iter_mut().zip(layer.mask.data()) {
        if *m == 0.0 {
            *g = 0.0;
        }
    }
    let mut bias = vec![0.0; layer.bias.len()];
    for r in 0..delta.rows() {
        axpy(1.0, delta.row(r), &mut bias);
    }
    LayerGrad { weight, bias }
}

fn back_input(delta: &Matrix, layer: &ParamLayer) -> Matrix {
    crate::tensor::gemm_nn(delta, &layer.effective_weight())
}
