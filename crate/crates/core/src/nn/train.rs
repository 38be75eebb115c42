//! Mean-squared-error loss, backpropagation and plain SGD.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Activation, DenseNetwork};
use crate::error::{invalid, Error, Result};
use crate::signals::rng_stream;

/// Mean over components of the squared differences.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(invalid(format!(
            "mse_loss length mismatch: {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(invalid("mse_loss of empty vectors"));
    }
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Gradients of a contiguous run of layers starting at `first_layer`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub first_layer: usize,
    pub layers: Vec<LayerGradients>,
}

impl Gradients {
    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases))
            .fold(0.0f64, |m, g| m.max(g.abs()))
    }
}

/// Activations retained by [`DenseNetwork::forward`] for a later backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layers: Range<usize>,
    fingerprint: u64,
    /// `acts[0]` is the input, `acts[i + 1]` the output of the i-th layer run.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.pre
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

fn fingerprint(net: &DenseNetwork) -> u64 {
    // FNV-1a over parameter bit patterns and shapes.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |v: u64| {
        h ^= v;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    };
    eat(net.input_dim as u64);
    for l in &net.layers {
        eat(l.n_in as u64);
        eat(l.n_out as u64);
        eat(l.activation.tag() as u64);
        for v in l.weights.iter().chain(&l.biases) {
            eat(v.to_bits());
        }
    }
    h
}

impl DenseNetwork {
    /// Full forward pass keeping every activation for [`DenseNetwork::backward`].
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        if self.layers.is_empty() {
            return Err(Error::InvalidState("network has no layers".into()));
        }
        self.forward_cached(0..self.layers.len(), input)
    }

    pub fn forward_cached(&self, layers: Range<usize>, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_range(&layers)?;
        let want = self.range_input_dim(&layers);
        if input.len() != want {
            return Err(invalid(format!(
                "input has {} values, expected {want}",
                input.len()
            )));
        }
        let mut acts = vec![input.to_vec()];
        let mut pre = Vec::with_capacity(layers.len());
        for layer in &self.layers[layers.clone()] {
            let mut z = vec![0.0; layer.n_out];
            let mut y = vec![0.0; layer.n_out];
            layer.forward_into(acts.last().unwrap(), &mut z, &mut y);
            pre.push(z);
            acts.push(y);
        }
        let out = acts.last().unwrap().clone();
        Ok((
            out,
            ForwardCache {
                layers,
                fingerprint: fingerprint(self),
                acts,
                pre,
            },
        ))
    }

    /// Exact gradients of `mse_loss(output, target)` with respect to the
    /// weights and biases of the layers covered by `cache`.
    pub fn backward(&self, cache: &ForwardCache, target: &[f64]) -> Result<Gradients> {
        if cache.fingerprint != fingerprint(self)
            || cache.layers.end > self.layers.len()
            || cache.acts.len() != cache.layers.len() + 1
        {
            return Err(Error::InvalidState(
                "forward cache does not belong to this network state".into(),
            ));
        }
        let out = cache.output();
        if target.len() != out.len() {
            return Err(invalid(format!(
                "target has {} values, expected {}",
                target.len(),
                out.len()
            )));
        }
        let flat_acts: Vec<&[f64]> = cache.acts.iter().map(Vec::as_slice).collect();
        Ok(backprop(self, cache.layers.clone(), &flat_acts, target, 1).1)
    }

    /// Applies an SGD update; returns whether every parameter is still finite.
    fn apply(&mut self, grads: &Gradients, lr: f64) -> Result<bool> {
        let end = grads.first_layer + grads.layers.len();
        if end > self.layers.len() {
            return Err(invalid("gradients cover layers the network does not have"));
        }
        for (layer, g) in self.layers[grads.first_layer..end].iter().zip(&grads.layers) {
            if g.weights.len() != layer.weights.len() || g.biases.len() != layer.biases.len() {
                return Err(invalid("gradient shape does not match layer"));
            }
        }
        let mut finite = true;
        for (layer, g) in self.layers[grads.first_layer..end].iter_mut().zip(&grads.layers) {
            for (w, d) in layer.weights.iter_mut().zip(&g.weights) {
                *w -= lr * d;
                finite &= w.is_finite();
            }
            for (b, d) in layer.biases.iter_mut().zip(&g.biases) {
                *b -= lr * d;
                finite &= b.is_finite();
            }
        }
        Ok(finite)
    }
}

/// `theta <- theta - lr * grad` for every weight and bias. No momentum.
pub fn sgd_step(net: &mut DenseNetwork, grads: &Gradients, learning_rate: f64) -> Result<()> {
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(invalid(format!("learning rate must be > 0, got {learning_rate}")));
    }
    net.apply(grads, learning_rate).map(|_| ())
}

/// `c = a * b (+ c if accumulate)` with arbitrary strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(m == 0 || n == 0 || (m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Forward pass of a row-major batch through `layers`. Returns the batch
/// input followed by every layer's output.
pub(crate) fn batch_forward(
    net: &DenseNetwork,
    layers: Range<usize>,
    inputs: &[f64],
    batch: usize,
) -> Vec<Vec<f64>> {
    let mut acts = vec![inputs.to_vec()];
    for layer in &net.layers[layers] {
        let x = acts.last().unwrap();
        let (n_in, n_out) = (layer.n_in, layer.n_out);
        let mut z = vec![0.0; batch * n_out];
        // z (B x out) = x (B x in) * W^T
        gemm(batch, n_in, n_out, x, n_in, 1, &layer.weights, 1, n_in, &mut z, n_out, 1);
        for row in z.chunks_exact_mut(n_out) {
            for (v, b) in row.iter_mut().zip(&layer.biases) {
                *v = layer.activation.apply(*v - b);
            }
        }
        acts.push(z);
    }
    acts
}

/// Backpropagates the batch MSE (mean over batch and output components).
/// Returns the loss and the gradients.
pub(crate) fn backprop(
    net: &DenseNetwork,
    layers: Range<usize>,
    acts: &[&[f64]],
    targets: &[f64],
    batch: usize,
) -> (f64, Gradients) {
    let run = &net.layers[layers.clone()];
    let out = acts[run.len()];
    let n_out = run.last().unwrap().n_out;
    let scale = 2.0 / (n_out * batch) as f64;
    let mut loss = 0.0;
    let mut delta: Vec<f64> = out
        .iter()
        .zip(targets)
        .map(|(y, t)| {
            let d = y - t;
            loss += d * d;
            scale * d
        })
        .collect();
    loss /= (n_out * batch) as f64;

    let mut grads: Vec<LayerGradients> = Vec::with_capacity(run.len());
    for (i, layer) in run.iter().enumerate().rev() {
        let (n_in, n_out) = (layer.n_in, layer.n_out);
        let y = acts[i + 1];
        if layer.activation != Activation::Identity {
            for (d, &yv) in delta.iter_mut().zip(y) {
                *d *= layer.activation.slope_from_output(yv);
            }
        }
        let x = acts[i];
        let mut gw = vec![0.0; n_out * n_in];
        // dW (out x in) = delta^T (out x B) * x (B x in)
        gemm(n_out, batch, n_in, &delta, 1, n_out, x, n_in, 1, &mut gw, n_in, 1);
        // The bias enters as W x - b.
        let mut gb = vec![0.0; n_out];
        for row in delta.chunks_exact(n_out) {
            for (g, d) in gb.iter_mut().zip(row) {
                *g -= d;
            }
        }
        if i > 0 {
            let mut dx = vec![0.0; batch * n_in];
            // dx (B x in) = delta (B x out) * W (out x in)
            gemm(batch, n_out, n_in, &delta, n_out, 1, &layer.weights, n_in, 1, &mut dx, n_in, 1);
            delta = dx;
        }
        grads.push(LayerGradients {
            weights: gw,
            biases: gb,
        });
    }
    grads.reverse();
    (
        loss,
        Gradients {
            first_layer: layers.start,
            layers: grads,
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 32,
            epochs: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be > 0"));
        }
        if self.epochs == 0 {
            return Err(invalid("epochs must be > 0"));
        }
        Ok(())
    }
}

/// Mini-batch SGD over a layer range with per-epoch reshuffling.
pub struct BatchTrainer {
    learning_rate: f64,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl BatchTrainer {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            learning_rate: config.learning_rate,
            batch_size: config.batch_size,
            rng: rng_stream(config.seed, u64::MAX),
        })
    }

    /// One pass over all samples. Returns the sample-weighted mean of the
    /// batch losses seen during the pass, or NaN as soon as a loss or a
    /// parameter stops being finite.
    pub fn epoch(
        &mut self,
        net: &mut DenseNetwork,
        layers: Range<usize>,
        inputs: &[&[f64]],
        targets: &[&[f64]],
    ) -> Result<f64> {
        net.check_range(&layers)?;
        let n = inputs.len();
        if n == 0 || targets.len() != n {
            return Err(invalid("need equally many (non-zero) inputs and targets"));
        }
        if self.batch_size > n {
            return Err(invalid(format!(
                "batch_size {} exceeds {n} training samples",
                self.batch_size
            )));
        }
        let n_in = net.range_input_dim(&layers);
        let n_out = net.layers[layers.end - 1].n_out;
        if inputs.iter().any(|x| x.len() != n_in) || targets.iter().any(|t| t.len() != n_out) {
            return Err(invalid("sample dimensions do not match the layer range"));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for chunk in order.chunks(self.batch_size) {
            let b = chunk.len();
            let mut xb = Vec::with_capacity(b * n_in);
            let mut tb = Vec::with_capacity(b * n_out);
            for &i in chunk {
                xb.extend_from_slice(inputs[i]);
                tb.extend_from_slice(targets[i]);
            }
            let acts = batch_forward(net, layers.clone(), &xb, b);
            let refs: Vec<&[f64]> = acts.iter().map(Vec::as_slice).collect();
            let (loss, grads) = backprop(net, layers.clone(), &refs, &tb, b);
            total += loss * b as f64;
            if !net.apply(&grads, self.learning_rate)? || !loss.is_finite() {
                return Ok(f64::NAN);
            }
        }
        Ok(total / n as f64)
    }
}

/// Mean MSE of `layers` over a set of samples, evaluated in batches.
pub(crate) fn evaluate(
    net: &DenseNetwork,
    layers: Range<usize>,
    inputs: &[&[f64]],
    targets: &[&[f64]],
) -> f64 {
    let n_in = net.range_input_dim(&layers);
    let n_out = net.layers[layers.end - 1].n_out;
    let mut total = 0.0;
    for (xs, ts) in inputs.chunks(256).zip(targets.chunks(256)) {
        let b = xs.len();
        let mut xb = Vec::with_capacity(b * n_in);
        for x in xs {
            xb.extend_from_slice(x);
        }
        let acts = batch_forward(net, layers.clone(), &xb, b);
        let out = acts.last().unwrap();
        for (row, t) in out.chunks_exact(n_out).zip(ts) {
            total += row.iter().zip(t.iter()).map(|(y, t)| (y - t) * (y - t)).sum::<f64>();
        }
    }
    total / (inputs.len() * n_out) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::DenseLayer;

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.5);
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mse_matches_summation_oracle() {
        let mut rng = rng_stream(11, 0);
        use rand::Rng;
        let a: Vec<f64> = (0..1000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..1000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // Kahan-compensated reference.
        let (mut s, mut c) = (0.0f64, 0.0f64);
        for i in 0..1000 {
            let y = (a[i] - b[i]).powi(2) - c;
            let t = s + y;
            c = (t - s) - y;
            s = t;
        }
        let oracle = s / 1000.0;
        let got = mse_loss(&a, &b).unwrap();
        assert!(((got - oracle) / oracle).abs() < 1e-12);
    }

    #[test]
    fn scalar_linear_gradient_closed_form() {
        let (w, b, x, t) = (0.7, 0.2, 1.3, -0.4);
        let net = DenseNetwork::new(
            1,
            vec![DenseLayer::new(1, 1, vec![w], vec![b], Activation::Identity).unwrap()],
        )
        .unwrap();
        let (_, cache) = net.forward(&[x]).unwrap();
        let g = net.backward(&cache, &[t]).unwrap();
        let r = w * x - b - t;
        assert_eq!(g.layers[0].weights[0], 2.0 * r * x);
        assert_eq!(g.layers[0].biases[0], -2.0 * r);
    }

    #[test]
    fn zero_gradient_at_exact_fit() {
        let mut rng = rng_stream(3, 0);
        let net = DenseNetwork::glorot(&[4, 3, 2], Activation::Tanh, &[], &mut rng).unwrap();
        let x = [0.1, -0.2, 0.3, 0.4];
        let (y, cache) = net.forward(&x).unwrap();
        let g = net.backward(&cache, &y).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn stale_cache_rejected() {
        let mut rng = rng_stream(3, 1);
        let mut net = DenseNetwork::glorot(&[3, 2], Activation::Tanh, &[], &mut rng).unwrap();
        let (_, cache) = net.forward(&[1.0, 2.0, 3.0]).unwrap();
        let g = net.backward(&cache, &[0.5, 0.5]).unwrap();
        sgd_step(&mut net, &g, 0.1).unwrap();
        assert!(matches!(
            net.backward(&cache, &[0.5, 0.5]),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn sgd_update_rule() {
        let mut net = DenseNetwork::new(
            1,
            vec![DenseLayer::new(1, 1, vec![1.0], vec![0.0], Activation::Identity).unwrap()],
        )
        .unwrap();
        let g = Gradients {
            first_layer: 0,
            layers: vec![LayerGradients {
                weights: vec![0.5],
                biases: vec![0.0],
            }],
        };
        sgd_step(&mut net, &g, 0.1).unwrap();
        assert_eq!(net.layers()[0].weights()[0], 0.95);

        let before = net.clone();
        let zero = Gradients {
            first_layer: 0,
            layers: vec![LayerGradients {
                weights: vec![0.0],
                biases: vec![0.0],
            }],
        };
        sgd_step(&mut net, &zero, 0.1).unwrap();
        assert_eq!(net, before);

        let bad = Gradients {
            first_layer: 0,
            layers: vec![LayerGradients {
                weights: vec![0.0, 1.0],
                biases: vec![0.0],
            }],
        };
        assert!(matches!(sgd_step(&mut net, &bad, 0.1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn sgd_step_reduces_quadratic_loss() {
        let mut net = DenseNetwork::new(
            1,
            vec![DenseLayer::new(1, 1, vec![0.3], vec![0.1], Activation::Identity).unwrap()],
        )
        .unwrap();
        let (x, t) = ([2.0], [1.5]);
        let (y0, cache) = net.forward(&x).unwrap();
        let before = mse_loss(&y0, &t).unwrap();
        let g = net.backward(&cache, &t).unwrap();
        sgd_step(&mut net, &g, 0.05).unwrap();
        let after = mse_loss(&net.predict(&x).unwrap(), &t).unwrap();
        assert!(after < before);
    }

    #[test]
    fn batch_gradient_is_mean_of_sample_gradients() {
        let mut rng = rng_stream(5, 0);
        let net = DenseNetwork::glorot(&[6, 4, 3], Activation::Tanh, &[], &mut rng).unwrap();
        let xs = [[0.1, 0.2, -0.3, 0.4, 0.0, 0.5], [-0.5, 0.1, 0.3, 0.2, 0.9, -0.1]];
        let ts = [[0.1, -0.1, 0.2], [0.3, 0.0, -0.2]];
        let mut flat_x = Vec::new();
        let mut flat_t = Vec::new();
        for (x, t) in xs.iter().zip(&ts) {
            flat_x.extend_from_slice(x);
            flat_t.extend_from_slice(t);
        }
        let acts = batch_forward(&net, 0..2, &flat_x, 2);
        let refs: Vec<&[f64]> = acts.iter().map(Vec::as_slice).collect();
        let (_, g) = backprop(&net, 0..2, &refs, &flat_t, 2);
        for l in 0..2 {
            for k in 0..g.layers[l].weights.len() {
                let mut mean = 0.0;
                for (x, t) in xs.iter().zip(&ts) {
                    let (_, c) = net.forward(x).unwrap();
                    mean += net.backward(&c, t).unwrap().layers[l].weights[k] / 2.0;
                }
                assert!((g.layers[l].weights[k] - mean).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn trainer_rejects_oversized_batch() {
        let mut rng = rng_stream(6, 0);
        let mut net = DenseNetwork::glorot(&[2, 1], Activation::Tanh, &[], &mut rng).unwrap();
        let mut tr = BatchTrainer::new(&TrainConfig {
            batch_size: 4,
            ..Default::default()
        })
        .unwrap();
        let x = [0.0, 1.0];
        let t = [0.5];
        let xs: Vec<&[f64]> = vec![&x; 3];
        let ts: Vec<&[f64]> = vec![&t; 3];
        assert!(tr.epoch(&mut net, 0..1, &xs, &ts).is_err());
    }
}
