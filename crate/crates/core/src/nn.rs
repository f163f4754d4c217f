//! A small dense-network toolkit with hand-written backpropagation.
//!
//! Everything is `f64`. A [`DenseNet`] is a stack of fully connected layers with an
//! optional inverted-dropout mask after the first layer. [`DenseNet::forward`]
//! returns a [`ForwardCache`] that [`DenseNet::backward`] consumes to produce exact
//! parameter gradients plus the gradient with respect to the input, which lets
//! several nets be chained (shared trunk feeding action heads).

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
            Activation::Linear => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// Fully connected layer; `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    /// He-uniform for rectifiers, Xavier-uniform for linear layers; zero bias.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = match activation {
            Activation::Relu | Activation::LeakyRelu => (6.0 / inputs as f64).sqrt(),
            Activation::Linear => (6.0 / (inputs + outputs) as f64).sqrt(),
        };
        let weights = (0..inputs * outputs).map(|_| rng.random_range(-limit..limit)).collect();
        Dense { inputs, outputs, activation, weights, bias: vec![0.0; outputs] }
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for (o, zo) in z.iter_mut().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            *zo += row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
        }
        z
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<Dense>,
    dropout_after_first: f64,
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    mask: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Per-parameter gradients, shaped like the owning net.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGrad>,
}

impl GradientSet {
    pub fn zeros_like(net: &DenseNet) -> Self {
        GradientSet {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad { weights: vec![0.0; l.weights.len()], bias: vec![0.0; l.bias.len()] })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|x| *x *= k);
            l.bias.iter_mut().for_each(|x| *x *= k);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied())
    }

    fn congruent(&self, net: &DenseNet) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weights.len() == l.weights.len() && g.bias.len() == l.bias.len())
    }
}

impl DenseNet {
    pub fn new<R: Rng + ?Sized>(spec: &[LayerSpec], dropout_after_first: f64, rng: &mut R) -> Self {
        assert!(!spec.is_empty(), "a net needs at least one layer");
        assert!((0.0..1.0).contains(&dropout_after_first), "dropout must be in [0, 1)");
        for pair in spec.windows(2) {
            assert_eq!(pair[0].outputs, pair[1].inputs, "layer dimensions must compose");
        }
        let layers = spec.iter().map(|s| Dense::init(s.inputs, s.outputs, s.activation, rng)).collect();
        DenseNet { layers, dropout_after_first }
    }

    /// `dims = [in, h1, ..., out]`; hidden layers use `hidden`, the output layer is linear.
    pub fn mlp<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, dropout_after_first: f64, rng: &mut R) -> Self {
        let n = dims.len() - 1;
        let spec: Vec<LayerSpec> = (0..n)
            .map(|i| LayerSpec {
                inputs: dims[i],
                outputs: dims[i + 1],
                activation: if i + 1 == n { Activation::Linear } else { hidden },
            })
            .collect();
        DenseNet::new(&spec, dropout_after_first, rng)
    }

    pub fn from_layers(layers: Vec<Dense>, dropout_after_first: f64) -> Result<Self, NnError> {
        let net = DenseNet { layers, dropout_after_first };
        net.check()?;
        Ok(net)
    }

    fn check(&self) -> Result<(), NnError> {
        if self.layers.is_empty() {
            return Err(NnError::Checkpoint("no layers".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_after_first) {
            return Err(NnError::Checkpoint("dropout outside [0, 1)".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(NnError::Checkpoint(format!("layer {i}: parameter count does not match shape")));
            }
            if let Some(next) = self.layers.get(i + 1) {
                if next.inputs != l.outputs {
                    return Err(NnError::Checkpoint(format!("layer {i}: output {} feeds input {}", l.outputs, next.inputs)));
                }
            }
            if !l.weights.iter().chain(&l.bias).all(|v| v.is_finite()) {
                return Err(NnError::NonFinite(format!("layer {i}")));
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.outputs));
        d
    }

    pub fn dropout(&self) -> f64 {
        self.dropout_after_first
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Flat view of all parameters in layer order (weights then bias).
    pub fn parameters(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied()).collect()
    }

    pub fn parameter_mut(&mut self, mut index: usize) -> &mut f64 {
        for l in &mut self.layers {
            if index < l.weights.len() {
                return &mut l.weights[index];
            }
            index -= l.weights.len();
            if index < l.bias.len() {
                return &mut l.bias[index];
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Forward pass. Dropout is active only when `train` is set.
    pub fn forward<R: Rng + ?Sized>(&self, input: &[f64], train: bool, rng: &mut R) -> Result<(Vec<f64>, ForwardCache), NnError> {
        if input.len() != self.input_dim() {
            return Err(NnError::DimensionMismatch { expected: self.input_dim(), got: input.len() });
        }
        let mut x = input.to_vec();
        let mut cache = ForwardCache { inputs: Vec::with_capacity(self.layers.len()), pre: Vec::with_capacity(self.layers.len()), mask: None };
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&x);
            let mut a: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            if i == 0 && train && self.dropout_after_first > 0.0 && self.layers.len() > 1 {
                let keep = 1.0 - self.dropout_after_first;
                let mask: Vec<f64> =
                    (0..a.len()).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
                a.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                cache.mask = Some(mask);
            }
            cache.inputs.push(std::mem::replace(&mut x, a));
            cache.pre.push(z);
        }
        Ok((x, cache))
    }

    /// Deterministic evaluation-mode forward pass.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        let mut x = input.to_vec();
        if x.len() != self.input_dim() {
            return Err(NnError::DimensionMismatch { expected: self.input_dim(), got: x.len() });
        }
        for layer in &self.layers {
            x = layer.affine(&x).into_iter().map(|v| layer.activation.apply(v)).collect();
        }
        Ok(x)
    }

    /// Returns parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<(GradientSet, Vec<f64>), NnError> {
        if cache.pre.len() != self.layers.len() {
            return Err(NnError::DimensionMismatch { expected: self.layers.len(), got: cache.pre.len() });
        }
        if output_grad.len() != self.output_dim() {
            return Err(NnError::DimensionMismatch { expected: self.output_dim(), got: output_grad.len() });
        }
        let mut grads = GradientSet::zeros_like(self);
        let mut g = output_grad.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let (x, z) = (&cache.inputs[i], &cache.pre[i]);
            if x.len() != layer.inputs || z.len() != layer.outputs {
                return Err(NnError::DimensionMismatch { expected: layer.inputs, got: x.len() });
            }
            if i == 0 {
                if let Some(mask) = &cache.mask {
                    g.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
                }
            }
            let gz: Vec<f64> = g.iter().zip(z).map(|(gi, &zi)| gi * layer.activation.derivative(zi)).collect();
            let lg = &mut grads.layers[i];
            let mut gx = vec![0.0; layer.inputs];
            for (o, &go) in gz.iter().enumerate() {
                lg.bias[o] = go;
                if go == 0.0 {
                    continue;
                }
                let row = o * layer.inputs;
                for (k, &xk) in x.iter().enumerate() {
                    lg.weights[row + k] = go * xk;
                    gx[k] += layer.weights[row + k] * go;
                }
            }
            g = gx;
        }
        Ok((grads, g))
    }

    pub fn to_checkpoint(&self) -> NetCheckpoint {
        NetCheckpoint { version: CHECKPOINT_VERSION, net: self.clone() }
    }

    /// Loads a checkpoint, validating version, shapes and, if given, the layer dims.
    pub fn from_checkpoint(ck: NetCheckpoint, expected_dims: Option<&[usize]>) -> Result<Self, NnError> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        ck.net.check()?;
        if let Some(dims) = expected_dims {
            if ck.net.dims() != dims {
                return Err(NnError::Checkpoint(format!("expected layer dims {dims:?}, found {:?}", ck.net.dims())));
            }
        }
        Ok(ck.net)
    }
}

/// Versioned on-disk form of a [`DenseNet`]: layer shapes plus row-major parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetCheckpoint {
    pub version: u32,
    pub net: DenseNet,
}

/// Softmax with max subtraction. `-inf` logits get probability zero.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| if x == f64::NEG_INFINITY { 0.0 } else { (x - max).exp() }).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax restricted to `mask[i] == true` entries.
pub fn masked_softmax(v: &[f64], mask: &[bool]) -> Vec<f64> {
    let masked: Vec<f64> = v.iter().zip(mask).map(|(&x, &ok)| if ok { x } else { f64::NEG_INFINITY }).collect();
    softmax(&masked)
}

/// Log of the masked softmax, computed as `x - logsumexp`; masked entries are `-inf`.
pub fn masked_log_softmax(v: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = v.iter().zip(mask).filter(|(_, &ok)| ok).map(|(&x, _)| x).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = v.iter().zip(mask).filter(|(_, &ok)| ok).map(|(&x, _)| (x - max).exp()).sum();
    let lse = max + sum.ln();
    v.iter().zip(mask).map(|(&x, &ok)| if ok { x - lse } else { f64::NEG_INFINITY }).collect()
}

pub fn cross_entropy(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(f64::MIN_POSITIVE).ln()
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Shannon entropy in nats.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Per-net optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    base_lr: f64,
    step: u64,
    m: Vec<LayerGrad>,
    v: Vec<LayerGrad>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, base_lr: f64, net: &DenseNet) -> Self {
        assert!(base_lr > 0.0, "learning rate must be positive");
        let zeros = GradientSet::zeros_like(net).layers;
        Optimizer { kind, base_lr, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn sgd(base_lr: f64, net: &DenseNet) -> Self {
        Optimizer::new(OptimizerKind::Sgd, base_lr, net)
    }

    pub fn adam(base_lr: f64, net: &DenseNet) -> Self {
        Optimizer::new(OptimizerKind::Adam, base_lr, net)
    }

    pub fn base_lr(&self) -> f64 {
        self.base_lr
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Applies one update; returns the learning rate used.
    pub fn apply(&mut self, net: &mut DenseNet, grads: &GradientSet, lr_override: Option<f64>) -> Result<f64, NnError> {
        if !grads.congruent(net) {
            return Err(NnError::DimensionMismatch { expected: net.parameter_count(), got: grads.values().count() });
        }
        if !grads.is_finite() {
            return Err(NnError::NonFinite("gradients".into()));
        }
        let lr = lr_override.unwrap_or(self.base_lr);
        match self.kind {
            OptimizerKind::Sgd => {
                for (layer, g) in net.layers.iter_mut().zip(&grads.layers) {
                    layer.weights.iter_mut().zip(&g.weights).for_each(|(p, g)| *p -= lr * g);
                    layer.bias.iter_mut().zip(&g.bias).for_each(|(p, g)| *p -= lr * g);
                }
            }
            OptimizerKind::Adam => {
                self.step += 1;
                let t = self.step as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                    for i in 0..p.len() {
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                        let mhat = m[i] / c1;
                        let vhat = v[i] / c2;
                        p[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
                    }
                };
                for (i, layer) in net.layers.iter_mut().enumerate() {
                    let g = &grads.layers[i];
                    update(&mut layer.weights, &g.weights, &mut self.m[i].weights, &mut self.v[i].weights);
                    update(&mut layer.bias, &g.bias, &mut self.m[i].bias, &mut self.v[i].bias);
                }
            }
        }
        Ok(lr)
    }
}
