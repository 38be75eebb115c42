//! Estimator spread against SNR, next to the Cramér-Rao bound.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{estimate_pair, fmt_f64, require_trained, summarize, unit_suffix, FitFn, Method, ParamStats};
use crate::autoencoder::AutoencoderModel;
use crate::baselines::{fisher_bound, Unknowns};
use crate::error::{invalid, Result};
use crate::signals::{gen_signal, rng_stream, SignalParams};

/// Rows whose failure fraction exceeds this are flagged.
pub const FLAG_FAILURE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// True parameters of every generated signal.
    pub truth: SignalParams,
    pub snrs: Vec<f64>,
    pub n_per_point: usize,
    pub seed: u64,
}

impl SweepConfig {
    /// Odd powers of two from 2^1 to 2^19 at the reference parameters.
    pub fn standard_grid(truth: SignalParams, n_per_point: usize, seed: u64) -> Self {
        Self {
            truth,
            snrs: (0..10).map(|k| 2f64.powi(2 * k + 1)).collect(),
            n_per_point,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub snr: f64,
    pub method: Method,
    pub n_ok: usize,
    pub failures: usize,
    /// More than 10% of the estimates failed.
    pub flagged: bool,
    /// Per free parameter, in `SignalKind::free_params` order.
    pub stats: Vec<ParamStats>,
    /// Bound for the least-squares problem (amplitude and offset unknown).
    pub crlb: Vec<f64>,
    /// Bound with amplitude and offset known, the autoencoder's setting.
    pub crlb_shape: Vec<f64>,
}

/// For each SNR, draws `n_per_point` noisy copies of `truth` and estimates
/// them with the autoencoder and with `fit`; the same signals feed both.
pub fn snr_sweep(model: &AutoencoderModel, fit: &FitFn, cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    require_trained(model)?;
    if cfg.snrs.is_empty() {
        return Err(invalid("snr list is empty"));
    }
    if cfg.n_per_point < 2 {
        return Err(invalid("need at least 2 signals per point"));
    }
    if cfg.truth.kind() != model.kind() {
        return Err(invalid(format!(
            "truth is {} but the model is {}",
            cfg.truth.kind(),
            model.kind()
        )));
    }
    cfg.truth.validate()?;
    let kind = model.kind();
    let names = kind.free_params();
    let mut rows = Vec::with_capacity(2 * cfg.snrs.len());
    for (j, &snr) in cfg.snrs.iter().enumerate() {
        if !(snr > 0.0 && snr.is_finite()) {
            return Err(invalid(format!("snr must be finite and > 0, got {snr}")));
        }
        let pairs: Vec<_> = (0..cfg.n_per_point)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng_stream(cfg.seed, ((j as u64) << 32) | i as u64);
                let s = gen_signal(&cfg.truth, model.grid(), snr, &mut rng)?;
                Ok(estimate_pair(model, fit, &s))
            })
            .collect::<Result<_>>()?;
        let all = fisher_bound(&cfg.truth, model.grid(), snr, Unknowns::All)?;
        let shape = fisher_bound(&cfg.truth, model.grid(), snr, Unknowns::ShapeOnly)?;
        let crlb: Vec<f64> = names.iter().map(|n| all.get(n).expect("bound for free param")).collect();
        let crlb_shape: Vec<f64> = names.iter().map(|n| shape.get(n).expect("bound for free param")).collect();
        let (ae, ls): (Vec<_>, Vec<_>) = pairs.into_iter().map(|p| (p.ae, p.ls)).unzip();
        for (method, est) in [(Method::Autoencoder, ae), (Method::LeastSquares, ls)] {
            let (stats, failures) = summarize(&est, names.len());
            rows.push(SweepRow {
                snr,
                method,
                n_ok: est.len() - failures,
                failures,
                flagged: failures as f64 > FLAG_FAILURE_FRACTION * est.len() as f64,
                stats,
                crlb: crlb.clone(),
                crlb_shape: crlb_shape.clone(),
            });
        }
    }
    Ok(rows)
}

/// CSV with one line per (SNR, method); parameter columns carry their SI unit.
pub fn sweep_csv(rows: &[SweepRow], kind: crate::signals::SignalKind) -> String {
    let mut header = vec!["snr".to_string(), "method".into(), "n_ok".into(), "failures".into(), "flagged".into()];
    for (name, unit) in kind.free_params().iter().zip(kind.free_param_units()) {
        let u = unit_suffix(unit);
        for col in ["mean", "std", "crlb", "crlb_shape"] {
            header.push(format!("{name}_{col}_{u}"));
        }
    }
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        let mut line = vec![
            fmt_f64(r.snr),
            r.method.name().to_string(),
            r.n_ok.to_string(),
            r.failures.to_string(),
            r.flagged.to_string(),
        ];
        for k in 0..r.stats.len() {
            line.extend([r.stats[k].mean, r.stats[k].std, r.crlb[k], r.crlb_shape[k]].map(fmt_f64));
        }
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}
