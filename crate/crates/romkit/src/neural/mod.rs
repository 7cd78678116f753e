//! Fully connected networks evaluated layerwise as
//! `x_i = f(A_i x_{i-1} + b_i)` with a configurable output map on the last
//! layer, plus exact reverse-mode gradients for training.

mod pinn;
mod train;

pub use pinn::{
    pinn_fit, CollocationCounts, DomainPredicate, MuSampler, NetProbe, PinnLoss, PinnProblem,
    ResidualFn, SpaceSampler,
};
pub use train::{
    ddnn_fit, mse_gradient, mse_loss, OptimizerKind, TrainConfig, WeightInit,
};

use crate::error::{Result, RomError};
use crate::numerics::Matrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Hidden-layer activation applied elementwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn eval(&self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the activation output `a = f(z)`.
    fn deriv_from_output(&self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
        }
    }

    pub fn tag(&self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Activation> {
        match tag {
            0 => Ok(Activation::Tanh),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Sigmoid),
            _ => Err(RomError::Format(format!("unknown activation tag {tag}"))),
        }
    }
}

/// Map applied at the output layer instead of the hidden activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputMap {
    Identity,
    Softmax,
}

impl OutputMap {
    fn apply(&self, z: &mut [f64]) {
        match self {
            OutputMap::Identity => {}
            OutputMap::Softmax => {
                let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in z.iter_mut() {
                    *v = (*v - m).exp();
                    sum += *v;
                }
                for v in z.iter_mut() {
                    *v /= sum;
                }
            }
        }
    }

    /// Pull the loss gradient back through the output map:
    /// `dL/dz = Jᵀ dL/dy` given the map output `y`.
    fn backward(&self, grad_y: &[f64], y: &[f64]) -> Vec<f64> {
        match self {
            OutputMap::Identity => grad_y.to_vec(),
            OutputMap::Softmax => {
                let dot: f64 = grad_y.iter().zip(y).map(|(g, s)| g * s).sum();
                grad_y.iter().zip(y).map(|(g, s)| s * (g - dot)).collect()
            }
        }
    }

    pub fn tag(&self) -> u8 {
        match self {
            OutputMap::Identity => 0,
            OutputMap::Softmax => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<OutputMap> {
        match tag {
            0 => Ok(OutputMap::Identity),
            1 => Ok(OutputMap::Softmax),
            _ => Err(RomError::Format(format!("unknown output-map tag {tag}"))),
        }
    }
}

/// Fully connected network. `weights[i]` has shape `sizes[i+1] x sizes[i]`;
/// the hidden activation is applied after every layer except the last, which
/// gets the output map.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    pub activation: Activation,
    pub output: OutputMap,
}

/// Per-layer activations cached by [`Mlp::forward_cached`] for the backward
/// pass: `post[0]` is the input, `post[k+1]` the output of layer `k`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub post: Vec<Vec<f64>>,
}

impl Mlp {
    /// Zero-initialized network (useful as a canvas for hand-set weights).
    pub fn new(sizes: &[usize], activation: Activation, output: OutputMap) -> Result<Mlp> {
        if sizes.len() < 2 {
            return Err(RomError::Invalid(format!(
                "mlp: need an input and an output layer, got {} sizes",
                sizes.len()
            )));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(RomError::Invalid("mlp: zero-width layer".into()));
        }
        let weights = (0..sizes.len() - 1)
            .map(|i| Matrix::zeros(sizes[i + 1], sizes[i]))
            .collect();
        let biases = (0..sizes.len() - 1).map(|i| vec![0.0; sizes[i + 1]]).collect();
        Ok(Mlp { sizes: sizes.to_vec(), weights, biases, activation, output })
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.weights.len()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.rows() * w.cols()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Glorot-style init: weights and biases uniform in
    /// `±sqrt(6/(fan_in+fan_out))`. Randomized biases break the symmetry
    /// between units that share an input — with zero biases and a narrow
    /// input, same-layer units start as near-copies and gradient descent on
    /// small problems stalls in poor minima. Fill order is fixed (layer by
    /// layer, weights row-major, then biases) so a seeded generator
    /// reproduces the same network.
    pub fn init_glorot(&mut self, rng: &mut ChaCha8Rng) {
        for k in 0..self.weights.len() {
            let (fan_out, fan_in) = (self.weights[k].rows(), self.weights[k].cols());
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for r in 0..fan_out {
                for c in 0..fan_in {
                    self.weights[k][(r, c)] = rng.gen_range(-bound..bound);
                }
            }
            for b in self.biases[k].iter_mut() {
                *b = rng.gen_range(-bound..bound);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
            && self.biases.iter().flatten().all(|b| b.is_finite())
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.input_dim(), "mlp forward: input dimension mismatch");
        let mut cur = x.to_vec();
        let last = self.weights.len() - 1;
        for k in 0..self.weights.len() {
            let mut z = self.weights[k].matvec(&cur);
            for (zi, bi) in z.iter_mut().zip(&self.biases[k]) {
                *zi += bi;
            }
            if k == last {
                self.output.apply(&mut z);
            } else {
                for zi in z.iter_mut() {
                    *zi = self.activation.eval(*zi);
                }
            }
            cur = z;
        }
        cur
    }

    pub fn forward_cached(&self, x: &[f64]) -> ForwardCache {
        assert_eq!(x.len(), self.input_dim(), "mlp forward: input dimension mismatch");
        let mut post = Vec::with_capacity(self.weights.len() + 1);
        post.push(x.to_vec());
        let last = self.weights.len() - 1;
        for k in 0..self.weights.len() {
            let mut z = self.weights[k].matvec(&post[k]);
            for (zi, bi) in z.iter_mut().zip(&self.biases[k]) {
                *zi += bi;
            }
            if k == last {
                self.output.apply(&mut z);
            } else {
                for zi in z.iter_mut() {
                    *zi = self.activation.eval(*zi);
                }
            }
            post.push(z);
        }
        ForwardCache { post }
    }
}

/// Parameter gradients, one entry per layer matching the network shapes.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Gradients {
        Gradients {
            weights: net.weights.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// `self += scale * other`, elementwise across all layers.
    pub fn axpy(&mut self, scale: f64, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *x += scale * y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in self.weights.iter_mut() {
            for x in w.as_mut_slice() {
                *x *= s;
            }
        }
        for b in self.biases.iter_mut() {
            for x in b.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        let w = self.weights.iter().map(|m| m.max_abs()).fold(0.0f64, f64::max);
        let b = self
            .biases
            .iter()
            .flatten()
            .map(|x| x.abs())
            .fold(0.0f64, f64::max);
        w.max(b)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
            && self.biases.iter().flatten().all(|b| b.is_finite())
    }
}

/// Exact reverse-mode gradients of a scalar loss with respect to every weight
/// and bias, given the loss gradient at the network output and the forward
/// cache produced for the same input.
pub fn mlp_backward(net: &Mlp, cache: &ForwardCache, grad_output: &[f64]) -> Gradients {
    assert_eq!(grad_output.len(), net.output_dim(), "mlp backward: output dimension mismatch");
    assert_eq!(cache.post.len(), net.weights.len() + 1, "mlp backward: stale cache");
    let mut grads = Gradients::zeros_like(net);
    let last = net.weights.len() - 1;
    let mut delta = net.output.backward(grad_output, &cache.post[last + 1]);
    for k in (0..net.weights.len()).rev() {
        let input = &cache.post[k];
        let gw = &mut grads.weights[k];
        for (c, &xin) in input.iter().enumerate() {
            if xin == 0.0 {
                continue;
            }
            for (r, &d) in delta.iter().enumerate() {
                gw[(r, c)] += d * xin;
            }
        }
        for (gb, &d) in grads.biases[k].iter_mut().zip(&delta) {
            *gb += d;
        }
        if k > 0 {
            let back = net.weights[k].transpose_matvec(&delta);
            delta = back
                .iter()
                .zip(&cache.post[k])
                .map(|(&g, &a)| net.activation.deriv_from_output(a) * g)
                .collect();
        }
    }
    grads
}

const MLP_MAGIC: &[u8; 4] = b"ROMN";
const MLP_VERSION: u32 = 1;

/// Persist a network: magic, version, layer sizes, activation/output tags,
/// then per layer the row-major weights and the bias vector as little-endian
/// f64.
pub fn save_mlp(path: impl AsRef<std::path::Path>, net: &Mlp) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    buf.extend_from_slice(MLP_MAGIC);
    buf.extend_from_slice(&MLP_VERSION.to_le_bytes());
    buf.extend_from_slice(&(net.sizes.len() as u32).to_le_bytes());
    for &s in &net.sizes {
        buf.extend_from_slice(&(s as u64).to_le_bytes());
    }
    buf.push(net.activation.tag());
    buf.push(net.output.tag());
    for k in 0..net.weights.len() {
        let w = &net.weights[k];
        for r in 0..w.rows() {
            for c in 0..w.cols() {
                buf.extend_from_slice(&w[(r, c)].to_le_bytes());
            }
        }
        for &b in &net.biases[k] {
            buf.extend_from_slice(&b.to_le_bytes());
        }
    }
    std::fs::write(path, &buf).map_err(|e| RomError::io(path, e))
}

pub fn load_mlp(path: impl AsRef<std::path::Path>) -> Result<Mlp> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| RomError::io(path, e))?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(RomError::Format(format!(
                "network file truncated at byte {} of {}",
                *pos,
                bytes.len()
            )));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4)? != MLP_MAGIC {
        return Err(RomError::Format("not a network file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != MLP_VERSION {
        return Err(RomError::Format(format!("unsupported network version {version}")));
    }
    let n_sizes = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    if !(2..=1024).contains(&n_sizes) {
        return Err(RomError::Format(format!("implausible layer count {n_sizes}")));
    }
    let mut sizes = Vec::with_capacity(n_sizes);
    for _ in 0..n_sizes {
        let s = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
        if s == 0 || s > (1 << 32) {
            return Err(RomError::Format(format!("implausible layer width {s}")));
        }
        sizes.push(s);
    }
    let activation = Activation::from_tag(take(&mut pos, 1)?[0])?;
    let output = OutputMap::from_tag(take(&mut pos, 1)?[0])?;
    let mut net = Mlp::new(&sizes, activation, output)?;
    for k in 0..net.weights.len() {
        let (rows, cols) = (net.weights[k].rows(), net.weights[k].cols());
        for r in 0..rows {
            for c in 0..cols {
                let v = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
                net.weights[k][(r, c)] = v;
            }
        }
        for b in net.biases[k].iter_mut() {
            *b = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        }
    }
    if pos != bytes.len() {
        return Err(RomError::Format(format!(
            "network file has {} trailing bytes",
            bytes.len() - pos
        )));
    }
    if !net.is_finite() {
        return Err(RomError::NonFinite("network file holds non-finite parameters".into()));
    }
    Ok(net)
}
