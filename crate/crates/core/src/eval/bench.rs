//! Encoder latency against floating point operation count.

use std::hint::black_box;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fmt_f64;
use crate::autoencoder::{AutoencoderModel, EncodeScratch, LatentMapping};
use crate::error::{invalid, Result};
use crate::nn::{Activation, DenseNetwork};
use crate::signals::{make_dataset, DatasetSpec, ParamDistribution, SamplingGrid, Signal, SignalKind};

/// Encoder widths spanning 10 to 500 neurons per hidden layer.
pub const STANDARD_SIZES: &[&[usize]] = &[
    &[1000, 10, 1],
    &[1000, 20, 1],
    &[1000, 50, 1],
    &[1000, 100, 3],
    &[1000, 200, 50, 3],
    &[1000, 500, 200, 100, 3],
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Signals per repetition (at least 1000).
    pub batch_size: usize,
    pub repetitions: usize,
    /// Untimed passes over the batch before measuring.
    pub warmup: usize,
    pub seed: u64,
    /// Also measure multi-threaded batch throughput.
    pub parallel: bool,
    #[serde(default)]
    pub precision: Precision,
}

/// Arithmetic of the timed encoder pass. Training is always 64-bit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    /// Weights and activations rounded to 32-bit floats.
    F32,
}

/// Single-precision copy of an encoder, for latency measurements only.
struct EncoderF32 {
    layers: Vec<(usize, Vec<f32>, Vec<f32>, Activation)>,
    a: Vec<f32>,
    b: Vec<f32>,
}

impl EncoderF32 {
    fn new(model: &AutoencoderModel) -> Self {
        let layers = model.network().layers()[..=model.latent_layer()]
            .iter()
            .map(|l| {
                (
                    l.n_in(),
                    l.weights().iter().map(|&w| w as f32).collect(),
                    l.biases().iter().map(|&b| b as f32).collect(),
                    l.activation(),
                )
            })
            .collect();
        Self { layers, a: Vec::new(), b: Vec::new() }
    }

    fn latent(&mut self, samples: &[f64]) -> Vec<f64> {
        self.a.clear();
        self.a.extend(samples.iter().map(|&x| x as f32));
        for (n_in, w, bias, act) in &self.layers {
            self.b.clear();
            for (row, &bj) in w.chunks_exact(*n_in).zip(bias) {
                let z = row.iter().zip(&self.a).map(|(w, x)| w * x).sum::<f32>() - bj;
                self.b.push(match act {
                    Activation::Tanh => z.tanh(),
                    Activation::Identity => z,
                });
            }
            std::mem::swap(&mut self.a, &mut self.b);
        }
        self.a.iter().map(|&v| v as f64).collect()
    }
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            batch_size: 1000,
            repetitions: 10,
            warmup: 1,
            seed: 0,
            parallel: false,
            precision: Precision::F64,
        }
    }
}

pub enum BenchTarget<'a> {
    Model(&'a AutoencoderModel),
    /// Randomly initialised tanh encoder with these widths (input first); the
    /// last width must be 1 or 3.
    Widths(Vec<usize>),
    /// Harness only: a constant latent vector converted to parameters.
    Noop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub description: String,
    pub flops: u64,
    pub batch_size: usize,
    pub repetitions: usize,
    pub median_latency_s: f64,
    pub p95_latency_s: f64,
    pub mean_latency_s: f64,
    /// `1 / median_latency_s`, single thread.
    pub rate_hz: f64,
    /// Signals per second over the batch with all worker threads.
    pub parallel_rate_hz: Option<f64>,
}

fn encoder_for_widths(widths: &[usize], grid: SamplingGrid, seed: u64) -> Result<AutoencoderModel> {
    if widths.len() < 2 || widths[0] != grid.n_samples() {
        return Err(invalid("encoder widths must start with the signal length"));
    }
    let kind = match widths[widths.len() - 1] {
        1 => SignalKind::ExpDecay,
        3 => SignalKind::DampedOsc,
        w => return Err(invalid(format!("latent width must be 1 or 3, got {w}"))),
    };
    let mut rng = crate::signals::rng_stream(seed, 0);
    let net = DenseNetwork::glorot(widths, Activation::Tanh, &[], &mut rng)?;
    let mapping = LatentMapping::from_distribution(kind, &ParamDistribution::default())?;
    AutoencoderModel::from_parts(kind, net, widths.len() - 2, mapping, grid, true)
}

fn describe(widths: &[usize]) -> String {
    widths.iter().map(usize::to_string).collect::<Vec<_>>().join("-")
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Times the encoder pass plus latent-to-parameter conversion per signal.
/// Signals are generated before timing starts; nothing is read from disk.
pub fn bench_encoder(target: &BenchTarget, cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.batch_size < 1000 {
        return Err(invalid(format!("batch_size must be >= 1000, got {}", cfg.batch_size)));
    }
    if cfg.repetitions == 0 {
        return Err(invalid("need at least one repetition"));
    }
    let owned;
    let (model, mut description) = match target {
        BenchTarget::Model(m) => {
            let widths: Vec<usize> = m.network().widths()[..m.latent_layer() + 2].to_vec();
            (Some(*m), format!("{} encoder {}", m.kind(), describe(&widths)))
        }
        BenchTarget::Widths(w) => {
            owned = encoder_for_widths(w, SamplingGrid::default(), cfg.seed)?;
            (Some(&owned), describe(w))
        }
        BenchTarget::Noop => (None, "no-op".to_string()),
    };
    if cfg.precision == Precision::F32 && model.is_some() {
        description.push_str(" f32");
    }
    let grid = model.map(|m| *m.grid()).unwrap_or_default();
    let kind = model.map(|m| m.kind()).unwrap_or(SignalKind::ExpDecay);
    let data = make_dataset(&DatasetSpec {
        n: cfg.batch_size,
        grid,
        seed: cfg.seed,
        ..DatasetSpec::training(kind, cfg.seed)
    })?;
    let signals: Vec<&Signal> = data.signals.iter().collect();
    let noop_mapping = LatentMapping::from_distribution(kind, &ParamDistribution::default())?;
    let noop_latent = vec![0.0; kind.free_params().len()];

    let mut scratch = EncodeScratch::new();
    let mut single = match (cfg.precision, model) {
        (Precision::F32, Some(m)) => Some(EncoderF32::new(m)),
        _ => None,
    };
    let mut one = |s: &Signal| -> Result<()> {
        match model {
            Some(m) => match &mut single {
                Some(enc) => {
                    black_box(m.mapping().from_latent(&enc.latent(black_box(s.samples())))?);
                }
                None => {
                    black_box(m.encode_with(black_box(s.samples()), &mut scratch)?);
                }
            },
            None => {
                black_box(s.samples());
                black_box(noop_mapping.from_latent(black_box(&noop_latent))?);
            }
        }
        Ok(())
    };
    for _ in 0..cfg.warmup {
        for s in &signals {
            one(s)?;
        }
    }
    let mut lat = Vec::with_capacity(cfg.batch_size * cfg.repetitions);
    for _ in 0..cfg.repetitions {
        for s in &signals {
            let t0 = Instant::now();
            one(s)?;
            lat.push(t0.elapsed().as_secs_f64());
        }
    }
    lat.sort_by(f64::total_cmp);
    let median = percentile(&lat, 0.5).max(f64::MIN_POSITIVE);

    let parallel_rate_hz = match (cfg.parallel, model) {
        (true, Some(m)) => {
            let t0 = Instant::now();
            signals
                .par_iter()
                .map_init(EncodeScratch::new, |sc, s| m.encode_with(s.samples(), sc).map(|p| black_box(p)))
                .collect::<Result<Vec<_>>>()?;
            Some(cfg.batch_size as f64 / t0.elapsed().as_secs_f64())
        }
        _ => None,
    };
    Ok(BenchReport {
        description,
        flops: model.map(|m| m.encoder_flops()).unwrap_or(0),
        batch_size: cfg.batch_size,
        repetitions: cfg.repetitions,
        median_latency_s: median,
        p95_latency_s: percentile(&lat, 0.95),
        mean_latency_s: lat.iter().sum::<f64>() / lat.len() as f64,
        rate_hz: 1.0 / median,
        parallel_rate_hz,
    })
}

/// Benchmarks a random encoder for each entry of `sizes`.
pub fn bench_sizes(sizes: &[&[usize]], cfg: &BenchConfig) -> Result<Vec<BenchReport>> {
    sizes
        .iter()
        .map(|w| bench_encoder(&BenchTarget::Widths(w.to_vec()), cfg))
        .collect()
}

pub fn bench_csv(reports: &[BenchReport]) -> String {
    let mut out = String::from(
        "network,flops,batch_size,repetitions,median_latency_s,p95_latency_s,mean_latency_s,rate_hz,parallel_rate_hz\n",
    );
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.description,
            r.flops,
            r.batch_size,
            r.repetitions,
            fmt_f64(r.median_latency_s),
            fmt_f64(r.p95_latency_s),
            fmt_f64(r.mean_latency_s),
            fmt_f64(r.rate_hz),
            r.parallel_rate_hz.map(fmt_f64).unwrap_or_default()
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_sizes_have_increasing_flops() {
        let mut prev = 0;
        for w in STANDARD_SIZES {
            let m = encoder_for_widths(w, SamplingGrid::default(), 0).unwrap();
            let f = m.encoder_flops();
            let want: usize = w.windows(2).map(|p| 2 * p[0] * p[1]).sum();
            assert_eq!(f, want as u64);
            assert!(f > prev);
            prev = f;
        }
    }

    #[test]
    fn rejects_small_batches_and_bad_widths() {
        let cfg = BenchConfig { batch_size: 10, ..Default::default() };
        assert!(bench_encoder(&BenchTarget::Noop, &cfg).is_err());
        assert!(encoder_for_widths(&[1000, 10, 2], SamplingGrid::default(), 0).is_err());
        assert!(encoder_for_widths(&[999, 10, 1], SamplingGrid::default(), 0).is_err());
    }

    #[test]
    fn noop_and_small_net_report() {
        let cfg = BenchConfig { repetitions: 2, ..Default::default() };
        let noop = bench_encoder(&BenchTarget::Noop, &cfg).unwrap();
        assert_eq!(noop.flops, 0);
        let net = bench_encoder(&BenchTarget::Widths(vec![1000, 10, 1]), &cfg).unwrap();
        assert_eq!(net.flops, 20_020);
        assert!(net.median_latency_s > 0.0 && (net.rate_hz * net.median_latency_s - 1.0).abs() < 1e-12);
        assert!(bench_csv(&[noop, net]).lines().count() == 3);
    }

    #[test]
    fn single_precision_encoder_agrees() {
        let m = encoder_for_widths(&[1000, 50, 10, 3], SamplingGrid::default(), 4).unwrap();
        let data = make_dataset(&DatasetSpec::training(SignalKind::DampedOsc, 4)).unwrap();
        let mut enc = EncoderF32::new(&m);
        for s in data.signals.iter().take(20) {
            let want = m.encode_latent(s.samples()).unwrap();
            for (a, b) in enc.latent(s.samples()).iter().zip(&want) {
                assert!((a - b).abs() < 1e-5, "{a} vs {b}");
            }
        }
        let cfg = BenchConfig { repetitions: 1, precision: Precision::F32, ..Default::default() };
        let r = bench_encoder(&BenchTarget::Model(&m), &cfg).unwrap();
        assert!(r.description.ends_with("f32") && r.rate_hz > 0.0);
    }
}
