//! Hourglass autoencoders whose latent neurons carry physical parameters.
//!
//! The latent value of a parameter `x` drawn from `N(mean, spread)` is
//! `(x - mean) / (3 spread)`, so the bulk of the training distribution lands
//! inside the `(-1, 1)` range of a tanh neuron. Encoding a signal runs only
//! the layers up to the latent one and maps the latent vector back to
//! physical units.

mod file;
mod train;

pub use train::{train_three_stage, train_three_stage_with, Progress, Stages, ThreeStageConfig, TrainReport, ValidationRecord};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::{Activation, DenseNetwork};
use crate::signals::{
    rng_stream, sample_params, Dataset, ParamDistribution, SamplingGrid, Signal, SignalKind,
    SignalParams,
};

/// One latent axis: parameter name with the mean and spread of its training
/// distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentAxis {
    pub name: String,
    pub mean: f64,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentMapping {
    kind: SignalKind,
    axes: Vec<LatentAxis>,
}

impl LatentMapping {
    pub fn new(kind: SignalKind, axes: Vec<LatentAxis>) -> Result<Self> {
        let names = kind.free_params();
        if axes.len() != names.len() {
            return Err(invalid(format!(
                "{kind} mapping needs {} axes, got {}",
                names.len(),
                axes.len()
            )));
        }
        for (a, want) in axes.iter().zip(names) {
            if a.name != *want {
                return Err(invalid(format!("axis '{}' where '{want}' was expected", a.name)));
            }
            if !(a.spread > 0.0 && a.spread.is_finite() && a.mean.is_finite()) {
                return Err(invalid(format!("axis '{}' needs a finite mean and spread > 0", a.name)));
            }
        }
        Ok(Self { kind, axes })
    }

    /// Mapping matching the training distribution of `kind`.
    pub fn from_distribution(kind: SignalKind, dist: &ParamDistribution) -> Result<Self> {
        let axes = dist
            .spreads(kind)
            .into_iter()
            .map(|(name, s)| LatentAxis {
                name: name.to_string(),
                mean: s.mean,
                spread: s.std,
            })
            .collect();
        Self::new(kind, axes)
    }

    pub fn kind(&self) -> SignalKind {
        self.kind
    }

    pub fn axes(&self) -> &[LatentAxis] {
        &self.axes
    }

    pub fn len(&self) -> usize {
        self.axes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axes.is_empty()
    }

    /// `(x - mean) / (3 spread)` per free parameter. Values outside `[-1, 1]`
    /// are returned as is.
    pub fn to_latent(&self, params: &SignalParams) -> Result<Vec<f64>> {
        if params.kind() != self.kind {
            return Err(invalid(format!(
                "mapping is for {} parameters, got {}",
                self.kind,
                params.kind()
            )));
        }
        Ok(params
            .free_values()
            .iter()
            .zip(&self.axes)
            .map(|(x, a)| (x - a.mean) / (3.0 * a.spread))
            .collect())
    }

    /// Inverse of [`LatentMapping::to_latent`]: `3 spread * latent + mean`.
    pub fn from_latent(&self, latent: &[f64]) -> Result<SignalParams> {
        if latent.len() != self.axes.len() {
            return Err(invalid(format!(
                "latent vector has {} entries, mapping has {}",
                latent.len(),
                self.axes.len()
            )));
        }
        let values: Vec<f64> = latent
            .iter()
            .zip(&self.axes)
            .map(|(l, a)| 3.0 * a.spread * l + a.mean)
            .collect();
        SignalParams::from_free(self.kind, &values)
    }
}

/// Layer widths of the autoencoder for `kind`, input layer included.
pub fn topology(kind: SignalKind, n_samples: usize) -> Vec<usize> {
    match kind {
        SignalKind::ExpDecay => vec![n_samples, 50, 1, 50, n_samples],
        SignalKind::DampedOsc => vec![n_samples, 50, 10, 3, 10, 50, n_samples],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub seed: u64,
    /// Scale of the Glorot range of the first (input-facing) layer.
    pub input_init_gain: f64,
    pub grid: SamplingGrid,
    pub dist: ParamDistribution,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            input_init_gain: 0.1,
            grid: SamplingGrid::default(),
            dist: ParamDistribution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    pub(crate) kind: SignalKind,
    pub(crate) network: DenseNetwork,
    /// Index (into the network's layer list) of the layer producing the latent vector.
    pub(crate) latent_layer: usize,
    pub(crate) mapping: LatentMapping,
    pub(crate) grid: SamplingGrid,
    pub(crate) trained: bool,
}

impl AutoencoderModel {
    /// Fresh, untrained model with the standard topology of `kind`.
    ///
    /// Weights are Glorot-uniform with zero biases; the input layer's range is
    /// scaled by `input_init_gain`. Plain SGD never touches weight components
    /// orthogonal to the span of the training signals, so whatever the input
    /// layer starts with there is carried into inference as extra noise gain.
    pub fn build(kind: SignalKind, opts: &BuildOptions) -> Result<Self> {
        let widths = topology(kind, opts.grid.n_samples());
        let mut rng = rng_stream(opts.seed, 0);
        let network = DenseNetwork::glorot(&widths, Activation::Tanh, &[opts.input_init_gain], &mut rng)?;
        let mapping = LatentMapping::from_distribution(kind, &opts.dist)?;
        let latent_layer = widths.len() / 2 - 1;
        Self::from_parts(kind, network, latent_layer, mapping, opts.grid, false)
    }

    pub fn from_parts(
        kind: SignalKind,
        network: DenseNetwork,
        latent_layer: usize,
        mapping: LatentMapping,
        grid: SamplingGrid,
        trained: bool,
    ) -> Result<Self> {
        if mapping.kind() != kind {
            return Err(invalid("mapping kind differs from model kind"));
        }
        if latent_layer >= network.num_layers() {
            return Err(invalid(format!(
                "latent layer {latent_layer} beyond {} layers",
                network.num_layers()
            )));
        }
        let latent_width = network.layers()[latent_layer].n_out();
        if latent_width != mapping.len() || latent_width != kind.free_params().len() {
            return Err(invalid(format!(
                "latent width {latent_width} must equal mapping length {} and the {} free parameters of {kind}",
                mapping.len(),
                kind.free_params().len()
            )));
        }
        if network.input_dim() != grid.n_samples() {
            return Err(invalid(format!(
                "network input {} differs from grid length {}",
                network.input_dim(),
                grid.n_samples()
            )));
        }
        Ok(Self {
            kind,
            network,
            latent_layer,
            mapping,
            grid,
            trained,
        })
    }

    pub fn kind(&self) -> SignalKind {
        self.kind
    }

    pub fn network(&self) -> &DenseNetwork {
        &self.network
    }

    pub fn mapping(&self) -> &LatentMapping {
        &self.mapping
    }

    pub fn grid(&self) -> &SamplingGrid {
        &self.grid
    }

    pub fn latent_layer(&self) -> usize {
        self.latent_layer
    }

    pub fn latent_dim(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Marks the model as usable for inference (e.g. after external training).
    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    /// Layer indices of the encoder (input up to and including the latent layer).
    pub fn encoder_layers(&self) -> std::ops::Range<usize> {
        0..self.latent_layer + 1
    }

    pub fn decoder_layers(&self) -> std::ops::Range<usize> {
        self.latent_layer + 1..self.network.num_layers()
    }

    /// Drops the decoder. Encoding is unaffected.
    pub fn strip_decoder(&mut self) {
        self.network.truncate(self.latent_layer + 1);
    }

    pub fn encoder_flops(&self) -> u64 {
        self.network.flop_count(Some(self.latent_layer + 1))
    }

    fn check_ready(&self, samples: &[f64]) -> Result<()> {
        if !self.trained {
            return Err(Error::InvalidState("model has not been trained".into()));
        }
        if samples.len() != self.network.input_dim() {
            return Err(invalid(format!(
                "signal has {} samples, model expects {}",
                samples.len(),
                self.network.input_dim()
            )));
        }
        Ok(())
    }

    /// Latent vector of a signal; runs the encoder only.
    pub fn encode_latent(&self, samples: &[f64]) -> Result<Vec<f64>> {
        self.check_ready(samples)?;
        self.network.forward_range(self.encoder_layers(), samples)
    }

    pub fn encode(&self, signal: &Signal) -> Result<SignalParams> {
        let latent = self.encode_latent(signal.samples())?;
        self.mapping.from_latent(&latent)
    }

    /// Allocation-free encode for hot loops.
    pub fn encode_with(&self, samples: &[f64], scratch: &mut EncodeScratch) -> Result<SignalParams> {
        self.check_ready(samples)?;
        let latent = scratch.run(&self.network, self.latent_layer + 1, samples);
        self.mapping.from_latent(latent)
    }

    /// Encodes many signals; results keep input order.
    pub fn encode_batch(&self, signals: &[Signal]) -> Result<Vec<SignalParams>> {
        signals.par_iter().map(|s| self.encode(s)).collect()
    }

    pub fn reconstruct(&self, signal: &Signal) -> Result<Signal> {
        self.check_ready(signal.samples())?;
        if self.network.num_layers() <= self.latent_layer + 1 {
            return Err(Error::InvalidState("model has no decoder".into()));
        }
        let out = self.network.predict(signal.samples())?;
        Signal::new(out, *signal.grid())
    }

    /// Decoder output for a given latent vector.
    pub fn decode(&self, latent: &[f64]) -> Result<Vec<f64>> {
        if self.network.num_layers() <= self.latent_layer + 1 {
            return Err(Error::InvalidState("model has no decoder".into()));
        }
        self.network.forward_range(self.decoder_layers(), latent)
    }

    /// Mean latent MSE of the encoder against the ground truth of `data`.
    pub fn latent_mse(&self, data: &Dataset) -> Result<f64> {
        let targets = data
            .truths
            .iter()
            .map(|t| self.mapping.to_latent(t))
            .collect::<Result<Vec<_>>>()?;
        let inputs: Vec<&[f64]> = data.signals.iter().map(|s| s.samples()).collect();
        let targets: Vec<&[f64]> = targets.iter().map(Vec::as_slice).collect();
        Ok(crate::nn::train::evaluate(&self.network, self.encoder_layers(), &inputs, &targets))
    }

    /// Mean per-neuron reconstruction MSE of the full network on `data`.
    pub fn reconstruction_mse(&self, data: &Dataset) -> Result<f64> {
        if self.network.num_layers() <= self.latent_layer + 1 {
            return Err(Error::InvalidState("model has no decoder".into()));
        }
        let inputs: Vec<&[f64]> = data.signals.iter().map(|s| s.samples()).collect();
        Ok(crate::nn::train::evaluate(
            &self.network,
            0..self.network.num_layers(),
            &inputs,
            &inputs,
        ))
    }
}

/// Reusable activation buffers for [`AutoencoderModel::encode_with`].
#[derive(Debug, Default, Clone)]
pub struct EncodeScratch {
    a: Vec<f64>,
    b: Vec<f64>,
    pre: Vec<f64>,
}

impl EncodeScratch {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn run<'a>(&'a mut self, net: &DenseNetwork, n_layers: usize, input: &[f64]) -> &'a [f64] {
        let mut src_is_input = true;
        let mut len = 0;
        for layer in &net.layers()[..n_layers] {
            let n = layer.n_out();
            if self.b.len() < n {
                self.b.resize(n, 0.0);
            }
            if self.pre.len() < n {
                self.pre.resize(n, 0.0);
            }
            {
                let x: &[f64] = if src_is_input { input } else { &self.a[..len] };
                layer.forward_into(x, &mut self.pre[..n], &mut self.b[..n]);
            }
            std::mem::swap(&mut self.a, &mut self.b);
            src_is_input = false;
            len = n;
        }
        &self.a[..len]
    }
}

/// Fraction of parameter draws from `dist` whose latent representation falls
/// outside `(-1, 1)` on some axis.
pub fn latent_overflow_fraction(kind: SignalKind, dist: &ParamDistribution, n: usize, seed: u64) -> Result<f64> {
    if n == 0 {
        return Err(invalid("need at least one draw"));
    }
    let mapping = LatentMapping::from_distribution(kind, dist)?;
    let mut rng = rng_stream(seed, 0);
    let mut outside = 0usize;
    for _ in 0..n {
        let p = sample_params(kind, dist, &mut rng)?;
        if mapping.to_latent(&p)?.iter().any(|l| l.abs() >= 1.0) {
            outside += 1;
        }
    }
    Ok(outside as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::{clean_signal, ExpDecayParams};

    #[test]
    fn topologies() {
        let exp = AutoencoderModel::build(SignalKind::ExpDecay, &BuildOptions::default()).unwrap();
        assert_eq!(exp.network().widths(), vec![1000, 50, 1, 50, 1000]);
        assert_eq!(exp.latent_dim(), 1);
        assert_eq!(exp.network().layers()[exp.latent_layer()].n_out(), 1);
        let osc = AutoencoderModel::build(SignalKind::DampedOsc, &BuildOptions::default()).unwrap();
        assert_eq!(osc.network().widths(), vec![1000, 50, 10, 3, 10, 50, 1000]);
        assert_eq!(osc.latent_dim(), 3);
        assert!(osc.network().layers().iter().all(|l| l.activation() == Activation::Tanh));
        assert_eq!(osc.encoder_flops(), 101_060);
        assert_eq!(exp.encoder_flops(), 100_100);
    }

    #[test]
    fn latent_mapping_values() {
        let m = LatentMapping::from_distribution(SignalKind::ExpDecay, &ParamDistribution::default()).unwrap();
        let l = m.to_latent(&SignalParams::ExpDecay(ExpDecayParams::new(1.81e-6))).unwrap();
        assert!((l[0] - 0.54).abs() < 1e-12);
        assert!((m.from_latent(&[0.54]).unwrap().tau() - 1.81e-6).abs() < 1e-18);
        assert!((m.from_latent(&[1.0]).unwrap().tau() - 2.5e-6).abs() < 1e-18);

        let osc = LatentMapping::from_distribution(SignalKind::DampedOsc, &ParamDistribution::default()).unwrap();
        assert_eq!(osc.from_latent(&[0.0, 0.0, 0.0]).unwrap().free_values(), vec![1e-6, 3e6, 0.0]);
        let at_mean = SignalParams::from_free(SignalKind::DampedOsc, &[1e-6, 3e6, 0.0]).unwrap();
        assert_eq!(osc.to_latent(&at_mean).unwrap(), vec![0.0, 0.0, 0.0]);
        assert!(osc.from_latent(&[0.0]).is_err());
        assert!(osc.to_latent(&SignalParams::ExpDecay(ExpDecayParams::new(1e-6))).is_err());
    }

    #[test]
    fn untrained_model_refuses_to_encode() {
        let m = AutoencoderModel::build(SignalKind::ExpDecay, &BuildOptions::default()).unwrap();
        let s = clean_signal(&SignalParams::ExpDecay(ExpDecayParams::new(1e-6)), m.grid()).unwrap();
        assert!(matches!(m.encode(&s), Err(Error::InvalidState(_))));
        assert!(matches!(m.reconstruct(&s), Err(Error::InvalidState(_))));
    }

    #[test]
    fn encode_ignores_decoder() {
        let mut m = AutoencoderModel::build(SignalKind::DampedOsc, &BuildOptions::default()).unwrap();
        m.mark_trained();
        let p = SignalParams::from_free(SignalKind::DampedOsc, &[1.2e-6, 3.05e6, 0.05]).unwrap();
        let s = clean_signal(&p, m.grid()).unwrap();
        let full = m.encode(&s).unwrap();
        let mut scratch = EncodeScratch::new();
        for _ in 0..3 {
            assert_eq!(m.encode_with(s.samples(), &mut scratch).unwrap(), full);
        }
        let mut enc_only = m.clone();
        enc_only.strip_decoder();
        assert_eq!(enc_only.encode(&s).unwrap(), full);
        assert_eq!(m.reconstruct(&s).unwrap().len(), 1000);
        assert!(enc_only.reconstruct(&s).is_err());
    }

    #[test]
    fn mismatched_parts_rejected() {
        let m = AutoencoderModel::build(SignalKind::ExpDecay, &BuildOptions::default()).unwrap();
        let osc_map = LatentMapping::from_distribution(SignalKind::DampedOsc, &ParamDistribution::default()).unwrap();
        assert!(AutoencoderModel::from_parts(SignalKind::DampedOsc, m.network.clone(), 1, osc_map, m.grid, true).is_err());
        assert!(AutoencoderModel::from_parts(SignalKind::ExpDecay, m.network.clone(), 0, m.mapping.clone(), m.grid, true).is_err());
    }

    #[test]
    fn overflow_fraction_is_small() {
        let f = latent_overflow_fraction(SignalKind::DampedOsc, &ParamDistribution::default(), 200_000, 1).unwrap();
        // Three axes at 3 sigma (the tau axis is folded) lose well under 1%.
        assert!(f < 0.01, "{f}");
        assert!(f > 0.0);
    }
}
