//! Dense feed-forward networks.
//!
//! Each layer computes `y = F(W x - b)`: the bias is *subtracted*. A network
//! written with the more common additive convention `F(W x + b')` maps onto
//! this one with `b = -b'`; gradients with respect to `b` carry the opposite
//! sign of the additive form.
//!
//! Weights are stored row-major with shape `(n_out, n_in)`. All arithmetic is
//! `f64`.

mod file;
pub(crate) mod train;

pub use train::{mse_loss, sgd_step, BatchTrainer, ForwardCache, Gradients, LayerGradients, TrainConfig};

use std::ops::Range;

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `y = F(z)`.
    #[inline]
    pub fn slope_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Tanh => 1,
            Activation::Identity => 0,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Tanh),
            t => Err(Error::Format(format!("unknown activation tag {t}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    n_in: usize,
    n_out: usize,
    activation: Activation,
    pub(crate) weights: Vec<f64>,
    pub(crate) biases: Vec<f64>,
}

impl DenseLayer {
    pub fn new(
        n_in: usize,
        n_out: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if n_in == 0 || n_out == 0 {
            return Err(invalid("layer dimensions must be > 0"));
        }
        if weights.len() != n_in * n_out {
            return Err(invalid(format!(
                "weights have {} entries, expected {n_out}x{n_in}",
                weights.len()
            )));
        }
        if biases.len() != n_out {
            return Err(invalid(format!(
                "biases have {} entries, expected {n_out}",
                biases.len()
            )));
        }
        if weights.iter().chain(&biases).any(|v| !v.is_finite()) {
            return Err(invalid("layer parameters must be finite"));
        }
        Ok(Self {
            n_in,
            n_out,
            activation,
            weights,
            biases,
        })
    }

    /// Uniform weights on `±gain * sqrt(6 / (n_in + n_out))`, zero biases.
    pub fn glorot<R: Rng + ?Sized>(
        n_in: usize,
        n_out: usize,
        activation: Activation,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if n_in == 0 || n_out == 0 {
            return Err(invalid("layer dimensions must be > 0"));
        }
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(invalid(format!("init gain must be > 0, got {gain}")));
        }
        let limit = gain * (6.0 / (n_in + n_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        let weights = (0..n_in * n_out).map(|_| dist.sample(rng)).collect();
        Self::new(n_in, n_out, weights, vec![0.0; n_out], activation)
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    /// `pre = W x - b`, `out = F(pre)`.
    pub(crate) fn forward_into(&self, x: &[f64], pre: &mut [f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_in);
        for (j, row) in self.weights.chunks_exact(self.n_in).enumerate() {
            let z = dot(row, x) - self.biases[j];
            pre[j] = z;
            out[j] = self.activation.apply(z);
        }
    }
}

/// Four-lane dot product; fixed summation order.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// FLOPs of a forward pass. The headline figure counts one multiply and one
/// add per weight; bias subtraction and activation evaluations are tallied
/// separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FlopCount {
    pub matmul: u64,
    pub bias: u64,
    pub activation: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNetwork {
    pub(crate) input_dim: usize,
    pub(crate) layers: Vec<DenseLayer>,
}

impl DenseNetwork {
    pub fn new(input_dim: usize, layers: Vec<DenseLayer>) -> Result<Self> {
        if input_dim == 0 {
            return Err(invalid("input_dim must be > 0"));
        }
        let mut width = input_dim;
        for (i, l) in layers.iter().enumerate() {
            if l.n_in != width {
                return Err(invalid(format!(
                    "layer {i} expects {} inputs but receives {width}",
                    l.n_in
                )));
            }
            width = l.n_out;
        }
        Ok(Self { input_dim, layers })
    }

    /// Glorot-initialised network through `widths` (input width first).
    /// `gains[i]` scales the init range of layer `i` (default 1).
    pub fn glorot<R: Rng + ?Sized>(
        widths: &[usize],
        activation: Activation,
        gains: &[f64],
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(invalid("need at least an input and an output width"));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| DenseLayer::glorot(w[0], w[1], activation, *gains.get(i).unwrap_or(&1.0), rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(widths[0], layers)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.n_out)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Neuron counts of every layer, input layer included.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim)
            .chain(self.layers.iter().map(|l| l.n_out))
            .collect()
    }

    /// Drops every layer from index `n` on.
    pub fn truncate(&mut self, n: usize) {
        self.layers.truncate(n);
    }

    /// Input width expected by layer `first` of a layer range.
    pub fn range_input_dim(&self, layers: &Range<usize>) -> usize {
        if layers.start == 0 {
            self.input_dim
        } else {
            self.layers[layers.start - 1].n_out
        }
    }

    pub(crate) fn check_range(&self, layers: &Range<usize>) -> Result<()> {
        if layers.start >= layers.end || layers.end > self.layers.len() {
            return Err(invalid(format!(
                "layer range {layers:?} invalid for {} layers",
                self.layers.len()
            )));
        }
        Ok(())
    }

    /// Runs layers `layers` on `input` without caching.
    pub fn forward_range(&self, layers: Range<usize>, input: &[f64]) -> Result<Vec<f64>> {
        self.check_range(&layers)?;
        let want = self.range_input_dim(&layers);
        if input.len() != want {
            return Err(invalid(format!(
                "input has {} values, expected {want}",
                input.len()
            )));
        }
        let mut cur = input.to_vec();
        for layer in &self.layers[layers] {
            let mut pre = vec![0.0; layer.n_out];
            let mut out = vec![0.0; layer.n_out];
            layer.forward_into(&cur, &mut pre, &mut out);
            cur = out;
        }
        Ok(cur)
    }

    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        if self.layers.is_empty() {
            return Err(Error::InvalidState("network has no layers".into()));
        }
        self.forward_range(0..self.layers.len(), input)
    }

    /// FLOPs of layers `0..up_to_layer` (all layers when `None`).
    pub fn flop_count(&self, up_to_layer: Option<usize>) -> u64 {
        self.flops(up_to_layer).matmul
    }

    pub fn flops(&self, up_to_layer: Option<usize>) -> FlopCount {
        let end = up_to_layer.unwrap_or(self.layers.len()).min(self.layers.len());
        self.flops_range(0..end)
    }

    pub fn flops_range(&self, layers: Range<usize>) -> FlopCount {
        let mut c = FlopCount::default();
        for l in &self.layers[layers] {
            c.matmul += 2 * (l.n_in * l.n_out) as u64;
            c.bias += l.n_out as u64;
            if l.activation == Activation::Tanh {
                c.activation += l.n_out as u64;
            }
        }
        c
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::rng_stream;

    fn scalar_layer(w: f64, b: f64, act: Activation) -> DenseLayer {
        DenseLayer::new(1, 1, vec![w], vec![b], act).unwrap()
    }

    #[test]
    fn tanh_single_neuron() {
        let net = DenseNetwork::new(1, vec![scalar_layer(1.0, 0.0, Activation::Tanh)]).unwrap();
        assert_eq!(net.predict(&[0.0]).unwrap(), vec![0.0]);
        assert!((net.predict(&[1.0]).unwrap()[0] - 0.7615942).abs() < 1e-7);
    }

    #[test]
    fn bias_is_subtracted() {
        let net = DenseNetwork::new(
            1,
            vec![
                scalar_layer(2.0, 1.0, Activation::Identity),
                scalar_layer(3.0, 0.0, Activation::Identity),
            ],
        )
        .unwrap();
        assert_eq!(net.predict(&[1.0]).unwrap(), vec![3.0]);
    }

    #[test]
    fn dimension_checks() {
        let l = DenseLayer::new(2, 3, vec![0.0; 6], vec![0.0; 3], Activation::Tanh).unwrap();
        assert!(DenseNetwork::new(3, vec![l.clone()]).is_err());
        let net = DenseNetwork::new(2, vec![l]).unwrap();
        assert!(matches!(net.predict(&[1.0]), Err(Error::InvalidArgument(_))));
        assert!(DenseLayer::new(2, 3, vec![0.0; 5], vec![0.0; 3], Activation::Tanh).is_err());
        assert!(DenseLayer::new(1, 1, vec![f64::NAN], vec![0.0], Activation::Tanh).is_err());
    }

    #[test]
    fn flop_counts() {
        let mut rng = rng_stream(0, 0);
        let enc = DenseNetwork::glorot(&[1000, 50, 1], Activation::Tanh, &[], &mut rng).unwrap();
        assert_eq!(enc.flop_count(None), 100_100);
        let enc3 = DenseNetwork::glorot(&[1000, 50, 10, 3], Activation::Tanh, &[], &mut rng).unwrap();
        assert_eq!(enc3.flop_count(None), 101_060);
        let tiny = DenseNetwork::glorot(&[2, 1], Activation::Identity, &[], &mut rng).unwrap();
        assert_eq!(tiny.flop_count(None), 4);
        let f = enc3.flops(None);
        assert_eq!(f.bias, 63);
        assert_eq!(f.activation, 63);
        assert_eq!(tiny.flops(None).activation, 0);
    }

    #[test]
    fn flops_are_additive() {
        let mut rng = rng_stream(1, 0);
        let net =
            DenseNetwork::glorot(&[1000, 50, 10, 3, 10, 50, 1000], Activation::Tanh, &[], &mut rng).unwrap();
        for split in 0..=net.num_layers() {
            let head = net.flop_count(Some(split));
            let tail = net.flops_range(split..net.num_layers()).matmul;
            assert_eq!(head + tail, net.flop_count(None));
        }
    }

    #[test]
    fn glorot_range_and_zero_bias() {
        let mut rng = rng_stream(2, 0);
        let l = DenseLayer::glorot(1000, 50, Activation::Tanh, 1.0, &mut rng).unwrap();
        let limit = (6.0f64 / 1050.0).sqrt();
        assert!(l.weights().iter().all(|w| w.abs() <= limit));
        assert!(l.weights().iter().any(|w| w.abs() > 0.9 * limit));
        assert!(l.biases().iter().all(|&b| b == 0.0));
        let small = DenseLayer::glorot(1000, 50, Activation::Tanh, 0.1, &mut rng).unwrap();
        assert!(small.weights().iter().all(|w| w.abs() <= 0.1 * limit));
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..1003).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = (0..1003).map(|i| (i as f64 * 0.3).cos()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-10);
    }
}
