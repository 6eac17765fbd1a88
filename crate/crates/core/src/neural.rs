//! Minimal multilayer perceptron: forward pass, input Jacobian (for Newton
//! tangents), and parameter VJP (for adjoint gradients), with deterministic
//! seeded initialization and a JSON checkpoint format.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("input width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("checkpoint format version {got} unsupported (expected {expected})")]
    VersionMismatch { expected: u32, got: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Softplus,
    Sigmoid,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Relu => {
                if z > S::zero() {
                    z
                } else {
                    S::zero()
                }
            }
            // overflow-safe softplus: max(z, 0) + ln(1 + exp(-|z|))
            Activation::Softplus => z.max(S::zero()) + (-z.abs()).exp().ln_1p(),
            Activation::Sigmoid => sigmoid(z),
            Activation::Linear => z,
        }
    }

    /// Derivative; the ReLU subgradient at exactly 0 is defined as 0.
    #[inline]
    pub fn derivative<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Relu => {
                if z > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::Softplus => sigmoid(z),
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (S::one() - s)
            }
            Activation::Linear => S::one(),
        }
    }
}

#[inline]
fn sigmoid<S: Scalar>(z: S) -> S {
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}

/// Layer widths plus one activation per affine layer (the last entry is the
/// output activation).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpConfig {
    pub layer_widths: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl MlpConfig {
    pub fn new(layer_widths: Vec<usize>, activations: Vec<Activation>) -> Result<Self, MlpError> {
        if layer_widths.len() < 2 {
            return Err(MlpError::InvalidConfig("need at least input and output widths".into()));
        }
        if layer_widths.iter().any(|&w| w == 0) {
            return Err(MlpError::InvalidConfig(format!("zero width in {layer_widths:?}")));
        }
        if activations.len() != layer_widths.len() - 1 {
            return Err(MlpError::InvalidConfig(format!(
                "expected {} activations, got {}",
                layer_widths.len() - 1,
                activations.len()
            )));
        }
        Ok(Self { layer_widths, activations })
    }

    /// ReLU hidden layers with the given output activation.
    pub fn relu_hidden(input: usize, hidden: &[usize], output: usize, out_act: Activation) -> Result<Self, MlpError> {
        if hidden.is_empty() {
            return Err(MlpError::InvalidConfig("need at least one hidden layer".into()));
        }
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input);
        widths.extend_from_slice(hidden);
        widths.push(output);
        let mut acts = vec![Activation::Relu; hidden.len()];
        acts.push(out_act);
        Self::new(widths, acts)
    }

    pub fn n_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        (0..self.n_layers())
            .map(|l| self.layer_widths[l] * self.layer_widths[l + 1] + self.layer_widths[l + 1])
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct Layer<S> {
    /// Row-major (out x in).
    pub weights: Vec<S>,
    pub bias: Vec<S>,
}

/// Weights and biases of an MLP.
#[derive(Debug, Clone)]
pub struct MlpParams<S> {
    pub config: MlpConfig,
    pub layers: Vec<Layer<S>>,
}

impl<S: Scalar> MlpParams<S> {
    pub fn zeroed(config: MlpConfig) -> Self {
        let layers = (0..config.n_layers())
            .map(|l| Layer {
                weights: vec![S::zero(); config.layer_widths[l] * config.layer_widths[l + 1]],
                bias: vec![S::zero(); config.layer_widths[l + 1]],
            })
            .collect();
        Self { config, layers }
    }

    /// Deterministic initialization: He scaling for ReLU layers, Glorot
    /// otherwise, zero biases.
    pub fn init(config: MlpConfig, seed: u64) -> Self {
        Self::init_scaled(config, seed, 1.0)
    }

    /// Initialization with all weight magnitudes damped by `weight_scale`
    /// (used to start embedded constitutive nets near a constant law).
    pub fn init_scaled(config: MlpConfig, seed: u64, weight_scale: f64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut params = Self::zeroed(config);
        for (l, layer) in params.layers.iter_mut().enumerate() {
            let fan_in = params.config.layer_widths[l] as f64;
            let fan_out = params.config.layer_widths[l + 1] as f64;
            let std = if params.config.activations[l] == Activation::Relu {
                (2.0 / fan_in).sqrt()
            } else {
                (2.0 / (fan_in + fan_out)).sqrt()
            };
            for w in layer.weights.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *w = S::of(z * std * weight_scale);
            }
        }
        params
    }

    /// Damps only the output layer's weights; hidden layers keep their full
    /// initialization so gradients still flow.
    pub fn scale_output_weights(&mut self, factor: f64) {
        for w in self.layers.last_mut().unwrap().weights.iter_mut() {
            *w = *w * S::of(factor);
        }
    }

    /// Sets the output-layer bias so a (near-)zero-weight net produces `y0`
    /// through the output activation (softplus or sigmoid inverses).
    pub fn set_output_level(&mut self, y0: f64) {
        let act = *self.config.activations.last().unwrap();
        let z = match act {
            Activation::Softplus => (y0.exp() - 1.0).max(1e-12).ln(),
            Activation::Sigmoid => {
                let y = y0.clamp(1e-9, 1.0 - 1e-9);
                (y / (1.0 - y)).ln()
            }
            _ => y0,
        };
        for b in self.layers.last_mut().unwrap().bias.iter_mut() {
            *b = S::of(z);
        }
    }

    pub fn param_count(&self) -> usize {
        self.config.param_count()
    }

    fn check_input(&self, x: &[S]) -> Result<(), MlpError> {
        if x.len() != self.config.input_width() {
            return Err(MlpError::WidthMismatch { expected: self.config.input_width(), got: x.len() });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[S]) -> Result<Vec<S>, MlpError> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let n_in = self.config.layer_widths[l];
            let n_out = self.config.layer_widths[l + 1];
            let act = self.config.activations[l];
            let mut next = vec![S::zero(); n_out];
            for o in 0..n_out {
                let mut z = layer.bias[o];
                let row = &layer.weights[o * n_in..(o + 1) * n_in];
                for (w, ai) in row.iter().zip(&a) {
                    z += *w * *ai;
                }
                next[o] = act.apply(z);
            }
            a = next;
        }
        Ok(a)
    }

    /// Forward pass plus the Jacobian of the output with respect to the input
    /// (row-major out x in), propagated in forward mode.
    pub fn forward_with_input_jacobian(&self, x: &[S]) -> Result<(Vec<S>, Vec<S>), MlpError> {
        self.check_input(x)?;
        let n_in0 = self.config.input_width();
        let mut a = x.to_vec();
        // jac[o * n_in0 + i] = d a_o / d x_i
        let mut jac: Vec<S> = (0..n_in0 * n_in0)
            .map(|k| if k % n_in0 == k / n_in0 { S::one() } else { S::zero() })
            .collect();
        for (l, layer) in self.layers.iter().enumerate() {
            let n_in = self.config.layer_widths[l];
            let n_out = self.config.layer_widths[l + 1];
            let act = self.config.activations[l];
            let mut next = vec![S::zero(); n_out];
            let mut next_jac = vec![S::zero(); n_out * n_in0];
            for o in 0..n_out {
                let row = &layer.weights[o * n_in..(o + 1) * n_in];
                let mut z = layer.bias[o];
                for (w, ai) in row.iter().zip(&a) {
                    z += *w * *ai;
                }
                let d = act.derivative(z);
                next[o] = act.apply(z);
                for i in 0..n_in0 {
                    let mut acc = S::zero();
                    for (k, w) in row.iter().enumerate() {
                        acc += *w * jac[k * n_in0 + i];
                    }
                    next_jac[o * n_in0 + i] = d * acc;
                }
            }
            a = next;
            jac = next_jac;
        }
        Ok((a, jac))
    }

    pub fn input_jacobian(&self, x: &[S]) -> Result<Vec<S>, MlpError> {
        Ok(self.forward_with_input_jacobian(x)?.1)
    }

    /// Reverse-mode gradient of `cotangent . output` with respect to every
    /// parameter (flat, see [`flatten`]) plus the input cotangent.
    pub fn param_vjp(&self, x: &[S], cotangent: &[S]) -> Result<(Vec<S>, Vec<S>), MlpError> {
        let mut grads = vec![S::zero(); self.param_count()];
        let input_cot = self.param_vjp_accum(x, cotangent, S::one(), &mut grads)?;
        Ok((grads, input_cot))
    }

    /// Accumulates `scale * d(cotangent . output)/d(params)` into `acc`
    /// (layout matching [`flatten`]); returns the input cotangent (also scaled).
    pub fn param_vjp_accum(&self, x: &[S], cotangent: &[S], scale: S, acc: &mut [S]) -> Result<Vec<S>, MlpError> {
        self.check_input(x)?;
        if cotangent.len() != self.config.output_width() {
            return Err(MlpError::WidthMismatch {
                expected: self.config.output_width(),
                got: cotangent.len(),
            });
        }
        if acc.len() != self.param_count() {
            return Err(MlpError::WidthMismatch { expected: self.param_count(), got: acc.len() });
        }
        let nl = self.config.n_layers();
        // forward, storing pre-activations and activations
        let mut activations: Vec<Vec<S>> = Vec::with_capacity(nl + 1);
        let mut pre: Vec<Vec<S>> = Vec::with_capacity(nl);
        activations.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let n_in = self.config.layer_widths[l];
            let n_out = self.config.layer_widths[l + 1];
            let act = self.config.activations[l];
            let mut z = vec![S::zero(); n_out];
            for o in 0..n_out {
                let mut zi = layer.bias[o];
                let row = &layer.weights[o * n_in..(o + 1) * n_in];
                for (w, ai) in row.iter().zip(&activations[l]) {
                    zi += *w * *ai;
                }
                z[o] = zi;
            }
            let a = z.iter().map(|&zi| act.apply(zi)).collect();
            pre.push(z);
            activations.push(a);
        }
        // backward
        let mut delta: Vec<S> = cotangent
            .iter()
            .zip(&pre[nl - 1])
            .map(|(&c, &z)| c * self.config.activations[nl - 1].derivative(z) * scale)
            .collect();
        let mut offset = self.param_count();
        for l in (0..nl).rev() {
            let n_in = self.config.layer_widths[l];
            let n_out = self.config.layer_widths[l + 1];
            offset -= n_in * n_out + n_out;
            let (w_acc, b_acc) = acc[offset..offset + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for o in 0..n_out {
                b_acc[o] += delta[o];
                for i in 0..n_in {
                    w_acc[o * n_in + i] += delta[o] * activations[l][i];
                }
            }
            // propagate
            let mut prev = vec![S::zero(); n_in];
            let layer = &self.layers[l];
            for o in 0..n_out {
                let row = &layer.weights[o * n_in..(o + 1) * n_in];
                for (i, w) in row.iter().enumerate() {
                    prev[i] += *w * delta[o];
                }
            }
            if l > 0 {
                let act = self.config.activations[l - 1];
                for (p, z) in prev.iter_mut().zip(&pre[l - 1]) {
                    *p *= act.derivative(*z);
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    /// Flat parameter vector: per layer, row-major weights then biases.
    pub fn flatten(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_from_flat(&mut self, flat: &[S]) -> Result<(), MlpError> {
        if flat.len() != self.param_count() {
            return Err(MlpError::WidthMismatch { expected: self.param_count(), got: flat.len() });
        }
        let mut k = 0usize;
        for layer in &mut self.layers {
            let nw = layer.weights.len();
            layer.weights.copy_from_slice(&flat[k..k + nw]);
            k += nw;
            let nb = layer.bias.len();
            layer.bias.copy_from_slice(&flat[k..k + nb]);
            k += nb;
        }
        Ok(())
    }

    pub fn to_checkpoint(&self, seed: u64) -> MlpCheckpoint {
        MlpCheckpoint {
            format_version: CHECKPOINT_VERSION,
            layer_widths: self.config.layer_widths.clone(),
            activations: self.config.activations.clone(),
            seed,
            layers: self
                .layers
                .iter()
                .map(|l| LayerCheckpoint {
                    weights: l.weights.iter().map(|v| v.as_f64()).collect(),
                    bias: l.bias.iter().map(|v| v.as_f64()).collect(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &MlpCheckpoint) -> Result<Self, MlpError> {
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(MlpError::VersionMismatch { expected: CHECKPOINT_VERSION, got: ck.format_version });
        }
        let config = MlpConfig::new(ck.layer_widths.clone(), ck.activations.clone())?;
        if ck.layers.len() != config.n_layers() {
            return Err(MlpError::CorruptFile(format!(
                "expected {} layers, found {}",
                config.n_layers(),
                ck.layers.len()
            )));
        }
        let mut params = Self::zeroed(config);
        for (l, (layer, stored)) in params.layers.iter_mut().zip(&ck.layers).enumerate() {
            if stored.weights.len() != layer.weights.len() || stored.bias.len() != layer.bias.len() {
                return Err(MlpError::CorruptFile(format!("layer {l} has wrong shape")));
            }
            for (w, v) in layer.weights.iter_mut().zip(&stored.weights) {
                *w = S::of(*v);
            }
            for (b, v) in layer.bias.iter_mut().zip(&stored.bias) {
                *b = S::of(*v);
            }
        }
        Ok(params)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerCheckpoint {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// JSON checkpoint: config, seed, and flat per-layer parameter arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub format_version: u32,
    pub layer_widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub seed: u64,
    pub layers: Vec<LayerCheckpoint>,
}

impl MlpCheckpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<(), MlpError> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("serialize checkpoint"))?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, MlpError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| MlpError::CorruptFile(e.to_string()))
    }
}
