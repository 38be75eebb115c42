//! Three-stage training.
//!
//! For every dataset, and for every repetition on that dataset:
//!
//! 1. the full network learns to reproduce its input,
//! 2. the encoder learns to emit the latent representation of the ground truth,
//! 3. the decoder learns to rebuild the signal from that latent representation.
//!
//! Every dataset is freshly generated, so the network never sees the same noise
//! twice across datasets.

use std::time::Instant;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::AutoencoderModel;
use crate::error::{invalid, Error, Result};
use crate::nn::{BatchTrainer, TrainConfig};
use crate::signals::{make_dataset, rng_stream, Dataset, DatasetSpec, ParamDistribution, TRAINING_SNR};

/// Which of the three stages run in each repetition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stages {
    pub full: bool,
    pub encoder: bool,
    pub decoder: bool,
}

impl Stages {
    pub const ALL: Stages = Stages {
        full: true,
        encoder: true,
        decoder: true,
    };
    /// Conventional autoencoder training (reconstruction only).
    pub const RECONSTRUCTION_ONLY: Stages = Stages {
        full: true,
        encoder: false,
        decoder: false,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreeStageConfig {
    pub n_datasets: usize,
    pub reps_per_dataset: usize,
    /// Epochs of stages 1, 2 and 3 per repetition.
    pub stage_epochs: [usize; 3],
    pub train: TrainConfig,
    /// Signals per dataset; `None` uses 200 (exp) or 1000 (osc).
    pub signals_per_dataset: Option<usize>,
    #[serde(with = "crate::codec::extended_f64")]
    pub snr: f64,
    pub dist: ParamDistribution,
    /// Training draws with a latent target beyond this magnitude are redrawn.
    pub latent_bound: f64,
    /// Fraction of every dataset held out for validation losses.
    pub validation_fraction: f64,
    pub stages: Stages,
}

impl Default for ThreeStageConfig {
    fn default() -> Self {
        Self {
            n_datasets: 10,
            reps_per_dataset: 10,
            stage_epochs: [100, 100, 100],
            train: TrainConfig::default(),
            signals_per_dataset: None,
            snr: TRAINING_SNR,
            dist: ParamDistribution::default(),
            latent_bound: 0.995,
            validation_fraction: 0.1,
            stages: Stages::ALL,
        }
    }
}

impl ThreeStageConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.n_datasets == 0 || self.reps_per_dataset == 0 {
            return Err(invalid("need at least one dataset and one repetition"));
        }
        if self.stage_epochs.iter().any(|&e| e == 0) {
            return Err(invalid("stage epochs must be > 0"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(invalid("validation_fraction must lie in [0, 1)"));
        }
        if !(self.latent_bound > 0.0 && self.latent_bound < 1.0) {
            return Err(invalid("latent_bound must lie in (0, 1)"));
        }
        if !(self.stages.full || self.stages.encoder || self.stages.decoder) {
            return Err(invalid("no training stage enabled"));
        }
        self.dist.validate()
    }

    /// Dataset `index` of a training run (deterministic in the training seed).
    pub fn dataset_spec(&self, model: &AutoencoderModel, index: usize) -> DatasetSpec {
        let mut base = DatasetSpec::training(model.kind(), 0);
        let mut seeder = rng_stream(self.train.seed, 1 + index as u64);
        base.seed = seeder.next_u64();
        if let Some(n) = self.signals_per_dataset {
            base.n = n;
        }
        base.snr = self.snr;
        base.dist = self.dist;
        base.grid = *model.grid();
        base.latent_bound = Some(self.latent_bound);
        base
    }
}

/// Validation losses after one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub dataset: usize,
    pub rep: usize,
    /// Per-neuron reconstruction MSE of the full network.
    pub reconstruction: f64,
    /// Latent MSE of the encoder against the ground truth.
    pub latent: f64,
    /// Per-neuron MSE of the decoder fed with latent ground truth.
    pub decoder: f64,
}

/// Loss history of a training run. Each series has one entry per epoch of its
/// stage (empty if the stage was disabled); losses are per-neuron MSE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub full_loss: Vec<f64>,
    pub encoder_loss: Vec<f64>,
    pub decoder_loss: Vec<f64>,
    /// Dataset index of each entry of `full_loss`.
    pub full_dataset: Vec<usize>,
    pub encoder_dataset: Vec<usize>,
    pub decoder_dataset: Vec<usize>,
    pub validation: Vec<ValidationRecord>,
    pub datasets: Vec<DatasetSpec>,
    /// Excluded from equality checks on reports in tests; wall time varies.
    pub wall_time_s: f64,
}

impl TrainReport {
    /// The report without timing, for determinism comparisons.
    pub fn without_timing(&self) -> TrainReport {
        TrainReport {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }
}

/// Progress event emitted after each stage of each repetition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Progress {
    pub dataset: usize,
    pub rep: usize,
    pub stage: u8,
    pub epochs_done: usize,
    pub loss: f64,
}

pub fn train_three_stage(model: &mut AutoencoderModel, cfg: &ThreeStageConfig) -> Result<TrainReport> {
    train_three_stage_with(model, cfg, |_| {})
}

pub fn train_three_stage_with(
    model: &mut AutoencoderModel,
    cfg: &ThreeStageConfig,
    mut on_progress: impl FnMut(Progress),
) -> Result<TrainReport> {
    cfg.validate()?;
    let started = Instant::now();
    let mut trainer = BatchTrainer::new(&cfg.train)?;
    let mut report = TrainReport {
        full_loss: Vec::new(),
        encoder_loss: Vec::new(),
        decoder_loss: Vec::new(),
        full_dataset: Vec::new(),
        encoder_dataset: Vec::new(),
        decoder_dataset: Vec::new(),
        validation: Vec::new(),
        datasets: Vec::new(),
        wall_time_s: 0.0,
    };
    let all = 0..model.network.num_layers();
    let enc = model.encoder_layers();
    let dec = model.decoder_layers();

    for d in 0..cfg.n_datasets {
        let spec = cfg.dataset_spec(model, d);
        let data = make_dataset(&spec)?;
        report.datasets.push(spec);
        let (train, val) = split(&data, cfg.validation_fraction)?;
        let latents = data
            .truths
            .iter()
            .map(|t| model.mapping.to_latent(t))
            .collect::<Result<Vec<_>>>()?;
        let signals: Vec<&[f64]> = data.signals.iter().map(|s| s.samples()).collect();
        let lat: Vec<&[f64]> = latents.iter().map(Vec::as_slice).collect();
        let (tr_sig, va_sig) = (&signals[train.clone()], &signals[val.clone()]);
        let (tr_lat, va_lat) = (&lat[train], &lat[val]);

        for rep in 0..cfg.reps_per_dataset {
            if cfg.stages.full {
                let loss = run_stage(&mut trainer, model, all.clone(), tr_sig, tr_sig, cfg.stage_epochs[0], 1, &mut report.full_loss)?;
                report.full_dataset.extend(std::iter::repeat(d).take(cfg.stage_epochs[0]));
                on_progress(Progress { dataset: d, rep, stage: 1, epochs_done: report.full_loss.len(), loss });
            }
            if cfg.stages.encoder {
                let loss = run_stage(&mut trainer, model, enc.clone(), tr_sig, tr_lat, cfg.stage_epochs[1], 2, &mut report.encoder_loss)?;
                report.encoder_dataset.extend(std::iter::repeat(d).take(cfg.stage_epochs[1]));
                on_progress(Progress { dataset: d, rep, stage: 2, epochs_done: report.encoder_loss.len(), loss });
            }
            if cfg.stages.decoder {
                let loss = run_stage(&mut trainer, model, dec.clone(), tr_lat, tr_sig, cfg.stage_epochs[2], 3, &mut report.decoder_loss)?;
                report.decoder_dataset.extend(std::iter::repeat(d).take(cfg.stage_epochs[2]));
                on_progress(Progress { dataset: d, rep, stage: 3, epochs_done: report.decoder_loss.len(), loss });
            }
            if !va_sig.is_empty() {
                use crate::nn::train::evaluate;
                report.validation.push(ValidationRecord {
                    dataset: d,
                    rep,
                    reconstruction: evaluate(&model.network, all.clone(), va_sig, va_sig),
                    latent: evaluate(&model.network, enc.clone(), va_sig, va_lat),
                    decoder: evaluate(&model.network, dec.clone(), va_lat, va_sig),
                });
            }
        }
    }
    model.trained = true;
    report.wall_time_s = started.elapsed().as_secs_f64();
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    trainer: &mut BatchTrainer,
    model: &mut AutoencoderModel,
    layers: std::ops::Range<usize>,
    inputs: &[&[f64]],
    targets: &[&[f64]],
    epochs: usize,
    stage: u8,
    series: &mut Vec<f64>,
) -> Result<f64> {
    let mut last = f64::NAN;
    for _ in 0..epochs {
        last = trainer.epoch(&mut model.network, layers.clone(), inputs, targets)?;
        if !last.is_finite() {
            return Err(Error::TrainingDiverged {
                stage,
                epoch: series.len(),
            });
        }
        series.push(last);
    }
    Ok(last)
}

/// Train and validation index ranges; the validation part is the tail.
fn split(data: &Dataset, fraction: f64) -> Result<(std::ops::Range<usize>, std::ops::Range<usize>)> {
    let n = data.len();
    let n_val = if fraction > 0.0 { ((n as f64 * fraction).round() as usize).max(1) } else { 0 };
    if n_val >= n {
        return Err(invalid(format!("dataset of {n} signals too small for validation split")));
    }
    Ok((0..n - n_val, n - n_val..n))
}
