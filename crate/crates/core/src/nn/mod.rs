//! Dense feed-forward networks with exact backpropagation.
//!
//! One network type covers every learned component: the noise predictor of
//! the diffusion prior, the coarse regressor, the physics-penalized regressor
//! and the tabular classifier.
//!
//! The network input is the concatenation `[x, embed(t), c]`. Hidden layers
//! apply SiLU (`z * sigmoid(z)`); the output layer is affine. With
//! `skip_connections` enabled, hidden layer `l` of `L` receives the output of
//! its mirror `L + 1 - l` additively whenever the widths match, which gives the
//! encoder/decoder layout used for the noise predictor.

mod io;
mod normalize;
mod train;

pub use io::{ModelFile, MODEL_FORMAT, MODEL_FORMAT_VERSION};
pub use normalize::Normalizer;
pub use train::{
    batch_gradient, train, Example, ExampleSource, LossKind, LrSchedule, PhysicsPenalty,
    StaticExamples, TrainConfig, TrainReport,
};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::numerics::{axpy, dot, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Silu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Silu => z / (1.0 + (-z).exp()),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    /// Width of the sinusoidal step embedding; 0 for networks without a step input.
    #[serde(default)]
    pub time_embed_dim: usize,
    /// Width of the condition vector; 0 for unconditional networks.
    #[serde(default)]
    pub cond_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    #[serde(default)]
    pub skip_connections: bool,
}

impl Architecture {
    pub fn mlp(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Self {
        Self {
            input_dim,
            time_embed_dim: 0,
            cond_dim: 0,
            hidden,
            output_dim,
            activation: Activation::Silu,
            skip_connections: false,
        }
    }

    pub fn total_input(&self) -> usize {
        self.input_dim + self.time_embed_dim + self.cond_dim
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.total_input());
        w.extend_from_slice(&self.hidden);
        w.push(self.output_dim);
        w
    }

    pub fn parameter_count(&self) -> usize {
        self.widths().windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    /// For each hidden layer (1-based), the hidden layer it receives a skip from.
    fn skip_sources(&self) -> Vec<Option<usize>> {
        let depth = self.hidden.len();
        let mut src = vec![None; depth + 1];
        if self.skip_connections {
            for l in 1..=depth {
                let m = depth + 1 - l;
                if m < l && self.hidden[m - 1] == self.hidden[l - 1] {
                    src[l] = Some(m);
                }
            }
        }
        src
    }

    fn validate(&self) -> Result<()> {
        if self.total_input() == 0 || self.output_dim == 0 {
            return Err(Error::InvalidConfig("network needs input and output".into()));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidConfig("zero-width hidden layer".into()));
        }
        if self.time_embed_dim % 2 != 0 {
            return Err(Error::InvalidConfig("time embedding width must be even".into()));
        }
        Ok(())
    }
}

/// Sinusoidal step embedding: `[sin(t w_k), cos(t w_k)]` with
/// `w_k = 10000^(-k / (dim/2))`, `k = 0 .. dim/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeEmbedding {
    freqs: Vec<f64>,
}

impl TimeEmbedding {
    pub fn new(dim: usize) -> Self {
        let half = dim / 2;
        let freqs = (0..half)
            .map(|k| (-(10000f64.ln()) * k as f64 / half as f64).exp())
            .collect();
        Self { freqs }
    }

    pub fn dim(&self) -> usize {
        2 * self.freqs.len()
    }

    pub fn embed(&self, t: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        self.embed_into(t, &mut out);
        out
    }

    fn embed_into(&self, t: usize, out: &mut Vec<f64>) {
        let t = t as f64;
        out.extend(self.freqs.iter().map(|w| (t * w).sin()));
        out.extend(self.freqs.iter().map(|w| (t * w).cos()));
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerSlot {
    weights: usize,
    bias: usize,
    fan_in: usize,
    fan_out: usize,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<f64>>,
    /// Layer outputs; `post[0]` is the assembled input.
    post: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardNet {
    arch: Architecture,
    params: Vec<f64>,
    slots: Vec<LayerSlot>,
    skips: Vec<Option<usize>>,
    embedding: TimeEmbedding,
}

impl FeedForwardNet {
    /// Seeded initialization: weights `N(0, 1/fan_in)`, biases zero.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        let mut rng = Rng::new(seed).fork("init");
        for slot in net.slots.clone() {
            let std = (1.0 / slot.fan_in as f64).sqrt();
            for w in &mut net.params[slot.weights..slot.weights + slot.fan_in * slot.fan_out] {
                *w = std * rng.normal();
            }
        }
        Ok(net)
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let widths = arch.widths();
        let mut slots = Vec::with_capacity(widths.len() - 1);
        let mut offset = 0;
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            slots.push(LayerSlot {
                weights: offset,
                bias: offset + fan_in * fan_out,
                fan_in,
                fan_out,
            });
            offset += fan_in * fan_out + fan_out;
        }
        let skips = arch.skip_sources();
        let embedding = TimeEmbedding::new(arch.time_embed_dim);
        Ok(Self {
            params: vec![0.0; offset],
            arch,
            slots,
            skips,
            embedding,
        })
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        ensure_dim("network parameters", net.params.len(), params.len())?;
        net.params = params;
        Ok(net)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    /// Bias vector of the output layer.
    pub fn output_bias(&self) -> &[f64] {
        let s = self.slots.last().expect("at least one layer");
        &self.params[s.bias..s.bias + s.fan_out]
    }

    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let s = *self.slots.last().expect("at least one layer");
        &mut self.params[s.bias..s.bias + s.fan_out]
    }

    /// Concatenates `[x, embed(t), c]`, checking every dimension.
    pub fn assemble_input(&self, x: &[f64], t: Option<usize>, c: Option<&[f64]>) -> Result<Vec<f64>> {
        ensure_dim("network input", self.arch.input_dim, x.len())?;
        let mut input = Vec::with_capacity(self.arch.total_input());
        input.extend_from_slice(x);
        match (self.arch.time_embed_dim, t) {
            (0, _) => {}
            (_, Some(t)) => self.embedding.embed_into(t, &mut input),
            (_, None) => {
                return Err(Error::InvalidConfig("time-conditioned network needs a step".into()))
            }
        }
        match (self.arch.cond_dim, c) {
            (0, _) => {}
            (n, Some(c)) => {
                ensure_dim("network condition", n, c.len())?;
                input.extend_from_slice(c);
            }
            (n, None) => {
                return Err(Error::DimensionMismatch {
                    what: "network condition",
                    expected: n,
                    got: 0,
                })
            }
        }
        Ok(input)
    }

    pub fn forward(&self, x: &[f64], t: Option<usize>, c: Option<&[f64]>) -> Result<Vec<f64>> {
        let input = self.assemble_input(x, t, c)?;
        Ok(self.forward_cached(input).output)
    }

    pub fn forward_cached(&self, input: Vec<f64>) -> ForwardCache {
        debug_assert_eq!(input.len(), self.arch.total_input());
        let depth = self.arch.hidden.len();
        let mut pre = Vec::with_capacity(depth);
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(depth + 1);
        post.push(input);
        for l in 1..=depth {
            let z = self.affine(l - 1, &post[l - 1]);
            let mut h: Vec<f64> = z.iter().map(|&v| self.arch.activation.apply(v)).collect();
            if let Some(m) = self.skips[l] {
                for (hi, si) in h.iter_mut().zip(&post[m]) {
                    *hi += si;
                }
            }
            pre.push(z);
            post.push(h);
        }
        let output = self.affine(depth, &post[depth]);
        ForwardCache { pre, post, output }
    }

    fn affine(&self, layer: usize, h: &[f64]) -> Vec<f64> {
        let s = self.slots[layer];
        let w = &self.params[s.weights..s.weights + s.fan_in * s.fan_out];
        let b = &self.params[s.bias..s.bias + s.fan_out];
        w.chunks_exact(s.fan_in)
            .zip(b)
            .map(|(row, bias)| bias + dot(row, h))
            .collect()
    }

    /// Backpropagates `d_output` through a cached pass. Parameter gradients are
    /// accumulated into `grad` when given; the gradient with respect to the
    /// assembled input is returned.
    pub fn backward(&self, cache: &ForwardCache, d_output: &[f64], mut grad: Option<&mut [f64]>) -> Vec<f64> {
        let depth = self.arch.hidden.len();
        let mut d_post: Vec<Vec<f64>> = cache.post.iter().map(|h| vec![0.0; h.len()]).collect();
        let mut d_pre = d_output.to_vec();
        for layer in (0..=depth).rev() {
            // `layer` maps post[layer] -> pre-activation of layer + 1.
            let s = self.slots[layer];
            let h_in = &cache.post[layer];
            if let Some(g) = grad.as_deref_mut() {
                let (gw, gb) = g.split_at_mut(s.bias);
                let gw = &mut gw[s.weights..s.weights + s.fan_in * s.fan_out];
                for (r, &d) in d_pre.iter().enumerate() {
                    if d != 0.0 {
                        axpy(d, h_in, &mut gw[r * s.fan_in..(r + 1) * s.fan_in]);
                    }
                    gb[r] += d;
                }
            }
            let w = &self.params[s.weights..s.weights + s.fan_in * s.fan_out];
            {
                let dh = &mut d_post[layer];
                for (r, &d) in d_pre.iter().enumerate() {
                    if d != 0.0 {
                        axpy(d, &w[r * s.fan_in..(r + 1) * s.fan_in], dh);
                    }
                }
            }
            if layer == 0 {
                break;
            }
            if let Some(m) = self.skips[layer] {
                let (lo, hi) = d_post.split_at_mut(layer);
                for (a, b) in lo[m].iter_mut().zip(&hi[0]) {
                    *a += b;
                }
            }
            let z = &cache.pre[layer - 1];
            d_pre = d_post[layer]
                .iter()
                .zip(z)
                .map(|(&dh, &zv)| dh * self.arch.activation.derivative(zv))
                .collect();
        }
        std::mem::take(&mut d_post[0])
    }

    /// Gradient of `<d_output, f(x)>` with respect to the main input `x` only.
    pub fn input_gradient(
        &self,
        x: &[f64],
        t: Option<usize>,
        c: Option<&[f64]>,
        d_output: &[f64],
    ) -> Result<Vec<f64>> {
        let input = self.assemble_input(x, t, c)?;
        ensure_dim("output gradient", self.arch.output_dim, d_output.len())?;
        let cache = self.forward_cached(input);
        let mut d_in = self.backward(&cache, d_output, None);
        d_in.truncate(self.arch.input_dim);
        Ok(d_in)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_grad;

    fn arch_with_skips() -> Architecture {
        Architecture {
            input_dim: 3,
            time_embed_dim: 8,
            cond_dim: 2,
            hidden: vec![6, 5, 5, 6],
            output_dim: 3,
            activation: Activation::Silu,
            skip_connections: true,
        }
    }

    #[test]
    fn zero_weights_output_final_bias() {
        let mut net = FeedForwardNet::zeros(Architecture::mlp(4, vec![7, 7], 2)).unwrap();
        net.output_bias_mut().copy_from_slice(&[0.25, -3.0]);
        for x in [[0.0; 4], [1.0, -2.0, 3.0, 9.0]] {
            assert_eq!(net.forward(&x, None, None).unwrap(), vec![0.25, -3.0]);
        }
    }

    #[test]
    fn single_identity_layer_is_identity_map() {
        let mut arch = Architecture::mlp(3, vec![], 3);
        arch.activation = Activation::Identity;
        let mut params = vec![0.0; 12];
        params[0] = 1.0;
        params[4] = 1.0;
        params[8] = 1.0;
        let net = FeedForwardNet::from_params(arch, params).unwrap();
        assert_eq!(net.forward(&[1.5, -2.0, 7.0], None, None).unwrap(), vec![1.5, -2.0, 7.0]);
    }

    #[test]
    fn seeded_forward_is_bitwise_reproducible() {
        let a = FeedForwardNet::new(Architecture::mlp(3, vec![16], 2), 17).unwrap();
        let b = FeedForwardNet::new(Architecture::mlp(3, vec![16], 2), 17).unwrap();
        let x = [0.3, -0.7, 1.1];
        let ya = a.forward(&x, None, None).unwrap();
        let yb = b.forward(&x, None, None).unwrap();
        assert!(ya.iter().zip(&yb).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn parameter_count_matches_architecture() {
        let arch = arch_with_skips();
        let net = FeedForwardNet::zeros(arch.clone()).unwrap();
        // 13*6+6 + 6*5+5 + 5*5+5 + 5*6+6 + 6*3+3
        assert_eq!(arch.parameter_count(), 84 + 35 + 30 + 36 + 21);
        assert_eq!(net.parameter_count(), arch.parameter_count());
    }

    #[test]
    fn mirrored_skips_connect_equal_widths_only() {
        let arch = arch_with_skips();
        assert_eq!(arch.skip_sources(), vec![None, None, None, Some(2), Some(1)]);
        let mut narrow = arch.clone();
        narrow.hidden = vec![6, 5, 4, 7];
        assert!(narrow.skip_sources().iter().all(Option::is_none));
    }

    #[test]
    fn dimension_errors() {
        let net = FeedForwardNet::zeros(arch_with_skips()).unwrap();
        assert!(matches!(
            net.forward(&[0.0; 2], Some(1), Some(&[0.0, 0.0])),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(net.forward(&[0.0; 3], Some(1), None).is_err());
        assert!(net.forward(&[0.0; 3], None, Some(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn time_embedding_bounded_and_injective() {
        let emb = TimeEmbedding::new(8);
        let rows: Vec<Vec<f64>> = (1..=1000).map(|t| emb.embed(t)).collect();
        assert!(rows.iter().flatten().all(|v| v.abs() <= 1.0));
        for i in 0..rows.len() {
            for j in (i + 1)..rows.len() {
                let d: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b).abs()).sum();
                assert!(d > 1e-9, "steps {} and {} collide", i + 1, j + 1);
            }
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let net = FeedForwardNet::new(arch_with_skips(), 5).unwrap();
        let x = [0.2, -0.4, 0.9];
        let c = [0.5, -1.0];
        let w = [1.0, -2.0, 0.5];
        let analytic = net.input_gradient(&x, Some(7), Some(&c), &w).unwrap();
        let numeric = finite_diff_grad(
            |x| dot(&net.forward(x, Some(7), Some(&c)).unwrap(), &w),
            &x,
            Some(1e-5),
        )
        .unwrap();
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!((a - n).abs() <= 1e-6 * a.abs().max(1.0), "{a} vs {n}");
        }
    }
}
