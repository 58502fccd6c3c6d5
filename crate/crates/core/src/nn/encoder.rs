use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::matrix::{axpy, dot, Matrix};
use crate::featurize::FeatureVector;
use crate::{rng, Error, Result};

/// Pre-normalization norms below this are rejected instead of divided by.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation. ReLU uses 0 at 0.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("encoder dimensions must be >= 1".into()));
        }
        if self.embed_dim < 2 {
            return Err(Error::Config(format!("embed_dim must be >= 2, got {}", self.embed_dim)));
        }
        Ok(())
    }

    /// (fan_in, fan_out) of every layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.embed_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Fully connected layer. `weights` is `in_dim x out_dim`, row-major, so the
/// row for input `i` is contiguous; sparse inputs touch only their rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Kaiming-uniform: weights drawn from U(-b, b) with b = sqrt(6 / fan_in);
    /// biases start at zero.
    pub fn kaiming_uniform(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim).map(|_| rng.gen_range(-bound..bound)).collect();
        Dense {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn weight_row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.out_dim..(i + 1) * self.out_dim]
    }

    fn forward_dense(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.bias.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                axpy(xi, self.weight_row(i), &mut y);
            }
        }
        y
    }

    fn forward_sparse(&self, x: &FeatureVector) -> Vec<f64> {
        let mut y = self.bias.clone();
        for (i, xi) in x.iter() {
            axpy(xi, self.weight_row(i), &mut y);
        }
        y
    }
}

/// Gradients with the same layout as the encoder's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(encoder: &Encoder) -> Self {
        Gradients {
            layers: encoder.layers.iter().map(|l| Dense::zeros(l.in_dim, l.out_dim)).collect(),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|g| *g *= factor);
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            axpy(1.0, &b.weights, &mut a.weights);
            axpy(1.0, &b.bias, &mut a.bias);
        }
    }

    /// Max over parameters of |a - b| / max(|a|, |b|, floor).
    pub fn max_relative_diff(&self, other: &Gradients, floor: f64) -> f64 {
        self.slices()
            .iter()
            .zip(other.slices())
            .flat_map(|(a, b)| a.iter().zip(b.iter()))
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
            .fold(0.0, f64::max)
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<FeatureVector>,
    /// `pre[l][b]`: pre-activation of layer `l` for batch item `b`.
    pre: Vec<Vec<Vec<f64>>>,
    norms: Vec<f64>,
    embeddings: Matrix,
}

impl ForwardCache {
    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn batch_size(&self) -> usize {
        self.inputs.len()
    }

    pub fn inputs(&self) -> &[FeatureVector] {
        &self.inputs
    }

    /// Sign pattern of the hidden pre-activations, used to detect ReLU kink
    /// crossings during finite differencing.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let hidden = self.pre.len().saturating_sub(1);
        self.pre[..hidden]
            .iter()
            .flat_map(|layer| layer.iter().flat_map(|row| row.iter().map(|&v| v > 0.0)))
            .collect()
    }
}

/// Feature-to-unit-embedding map: dense layers with an activation between
/// them, no activation on the last layer, then L2 normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    config: EncoderConfig,
    layers: Vec<Dense>,
}

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::seeded(config.seed);
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| Dense::kaiming_uniform(i, o, &mut rng))
            .collect();
        Ok(Encoder { config, layers })
    }

    /// Builds an encoder from explicit layers, checking that their shapes
    /// chain through the config and all parameters are finite.
    pub fn from_layers(config: EncoderConfig, layers: Vec<Dense>) -> Result<Self> {
        config.validate()?;
        let shapes = config.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::Shape(format!(
                "config implies {} layers, got {}",
                shapes.len(),
                layers.len()
            )));
        }
        for (k, ((i, o), l)) in shapes.iter().zip(&layers).enumerate() {
            if l.in_dim != *i || l.out_dim != *o || l.weights.len() != i * o || l.bias.len() != *o {
                return Err(Error::Shape(format!("layer {k} does not match {i}x{o}")));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("layer{k} parameters")));
            }
        }
        Ok(Encoder { config, layers })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn param_count(&self) -> usize {
        self.config.param_count()
    }

    /// Parameter names in optimizer order: weight then bias per layer.
    pub fn param_names(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|k| [format!("layer{k}.weight"), format!("layer{k}.bias")])
            .collect()
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    /// SHA-256 over the bit patterns of every parameter.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for slice in self.param_slices() {
            for v in slice {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    fn check_inputs(&self, inputs: &[FeatureVector]) -> Result<()> {
        if let Some(bad) = inputs.iter().find(|x| x.dim() != self.config.input_dim) {
            return Err(Error::Shape(format!(
                "feature dim {} does not match encoder input dim {}",
                bad.dim(),
                self.config.input_dim
            )));
        }
        Ok(())
    }

    fn forward_one(&self, x: &FeatureVector) -> Vec<Vec<f64>> {
        let act = self.config.activation;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut y = self.layers[0].forward_sparse(x);
        for layer in &self.layers[1..] {
            let h: Vec<f64> = y.iter().map(|&v| act.apply(v)).collect();
            pre.push(y);
            y = layer.forward_dense(&h);
        }
        pre.push(y);
        pre
    }

    /// Forward pass keeping everything the backward pass needs.
    pub fn forward(&self, inputs: &[FeatureVector]) -> Result<ForwardCache> {
        self.check_inputs(inputs)?;
        let per_item: Vec<Vec<Vec<f64>>> = inputs.par_iter().map(|x| self.forward_one(x)).collect();
        let e = self.config.embed_dim;
        let mut embeddings = Matrix::zeros(inputs.len(), e);
        let mut norms = Vec::with_capacity(inputs.len());
        for (b, item) in per_item.iter().enumerate() {
            let z = item.last().expect("at least one layer");
            let norm = dot(z, z).sqrt();
            if !(norm >= DEGENERATE_NORM) {
                return Err(Error::DegenerateEmbedding { norm });
            }
            for (out, v) in embeddings.row_mut(b).iter_mut().zip(z) {
                *out = v / norm;
            }
            norms.push(norm);
        }
        let mut pre = vec![Vec::with_capacity(inputs.len()); self.layers.len()];
        for item in per_item {
            for (l, v) in item.into_iter().enumerate() {
                pre[l].push(v);
            }
        }
        Ok(ForwardCache {
            inputs: inputs.to_vec(),
            pre,
            norms,
            embeddings,
        })
    }

    /// Unit-norm embeddings, one row per input.
    pub fn encode(&self, inputs: &[FeatureVector]) -> Result<Matrix> {
        self.check_inputs(inputs)?;
        let rows: Vec<Result<Vec<f64>>> = inputs
            .par_iter()
            .map(|x| {
                let z = self.forward_one(x).pop().expect("at least one layer");
                let norm = dot(&z, &z).sqrt();
                if !(norm >= DEGENERATE_NORM) {
                    return Err(Error::DegenerateEmbedding { norm });
                }
                Ok(z.into_iter().map(|v| v / norm).collect())
            })
            .collect();
        let mut out = Matrix::zeros(inputs.len(), self.config.embed_dim);
        for (b, row) in rows.into_iter().enumerate() {
            out.row_mut(b).copy_from_slice(&row?);
        }
        Ok(out)
    }

    /// Deltas on every layer's pre-activation for one batch item, from the
    /// gradient on its unit embedding.
    fn item_deltas(&self, cache: &ForwardCache, b: usize, upstream: &[f64]) -> Vec<Vec<f64>> {
        let act = self.config.activation;
        let e = cache.embeddings.row(b);
        let norm = cache.norms[b];
        // Jacobian of z / |z|: (I - e e^T) / |z|
        let proj = dot(e, upstream);
        let mut delta: Vec<f64> = upstream.iter().zip(e).map(|(g, ei)| (g - ei * proj) / norm).collect();
        let mut deltas = vec![Vec::new(); self.layers.len()];
        for l in (0..self.layers.len()).rev() {
            if l > 0 {
                let layer = &self.layers[l];
                let prev_pre = &cache.pre[l - 1][b];
                let prev: Vec<f64> = (0..layer.in_dim)
                    .map(|i| dot(layer.weight_row(i), &delta) * act.derivative(prev_pre[i]))
                    .collect();
                deltas[l] = std::mem::replace(&mut delta, prev);
            } else {
                deltas[0] = std::mem::take(&mut delta);
            }
        }
        deltas
    }

    fn check_upstream(&self, cache: &ForwardCache, upstream: &Matrix) -> Result<()> {
        if upstream.shape() != cache.embeddings.shape() {
            return Err(Error::Shape(format!(
                "upstream gradient is {:?}, embeddings are {:?}",
                upstream.shape(),
                cache.embeddings.shape()
            )));
        }
        Ok(())
    }

    /// Accumulates parameter gradients of a loss whose gradient with respect
    /// to the cached embeddings is `upstream`.
    pub fn backward_into(&self, cache: &ForwardCache, upstream: &Matrix, grads: &mut Gradients) -> Result<()> {
        self.check_upstream(cache, upstream)?;
        let act = self.config.activation;
        let deltas: Vec<Vec<Vec<f64>>> = (0..cache.batch_size())
            .into_par_iter()
            .map(|b| self.item_deltas(cache, b, upstream.row(b)))
            .collect();
        // accumulation stays sequential in batch order
        for (b, item) in deltas.iter().enumerate() {
            for (l, delta) in item.iter().enumerate() {
                let g = &mut grads.layers[l];
                axpy(1.0, delta, &mut g.bias);
                let out = g.out_dim;
                if l == 0 {
                    for (i, xi) in cache.inputs[b].iter() {
                        axpy(xi, delta, &mut g.weights[i * out..(i + 1) * out]);
                    }
                } else {
                    for (i, &p) in cache.pre[l - 1][b].iter().enumerate() {
                        let h = act.apply(p);
                        if h != 0.0 {
                            axpy(h, delta, &mut g.weights[i * out..(i + 1) * out]);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn backward(&self, cache: &ForwardCache, upstream: &Matrix) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_into(cache, upstream, &mut grads)?;
        Ok(grads)
    }

    /// Parameter gradients plus dense gradients on the inputs. The input
    /// gradient costs `input_dim x hidden` per item, so training paths use
    /// [`Encoder::backward`] instead.
    pub fn backward_full(&self, cache: &ForwardCache, upstream: &Matrix) -> Result<(Gradients, Matrix)> {
        let grads = self.backward(cache, upstream)?;
        let first = &self.layers[0];
        let mut input_grads = Matrix::zeros(cache.batch_size(), self.config.input_dim);
        for b in 0..cache.batch_size() {
            let delta0 = &self.item_deltas(cache, b, upstream.row(b))[0];
            for (i, g) in input_grads.row_mut(b).iter_mut().enumerate() {
                *g = dot(first.weight_row(i), delta0);
            }
        }
        Ok((grads, input_grads))
    }
}
