//! Evaluation protocols: estimate histograms, SNR sweeps against the
//! Cramér-Rao bound, spectral-scan tracking and encoder throughput.

mod bench;
mod hist;
mod scan;
mod sweep;

use serde::{Deserialize, Serialize};

pub use bench::{bench_csv, bench_encoder, bench_sizes, BenchConfig, BenchReport, BenchTarget, Precision, STANDARD_SIZES};
pub use hist::{estimate_distribution, DistributionSummary, GaussianFit, Histogram};
pub use scan::{run_scan, scan_csv, Feature, ScanRow, ScanScenario};
pub use sweep::{snr_sweep, sweep_csv, SweepConfig, SweepRow};

use crate::autoencoder::AutoencoderModel;
use crate::baselines::{fit_signal, FitResult};
use crate::error::{Error, Result};
use crate::signals::{DampedOscParams, ExpDecayParams, Signal, SignalKind, SignalParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Autoencoder,
    LeastSquares,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Autoencoder => "autoencoder",
            Method::LeastSquares => "least-squares",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A least-squares estimator: signal in, fit out.
pub type FitFn = dyn Fn(&Signal) -> Result<FitResult> + Sync;

/// The default least-squares fit for `kind` (automatic initial guess).
pub fn default_fit(kind: SignalKind) -> impl Fn(&Signal) -> Result<FitResult> + Sync {
    move |s| fit_signal(kind, s, None)
}

/// Parameters of the reference examples: tau = 1.81 us for the decay,
/// (1.28 us, 2.972 MHz, -0.243 rad) for the oscillation.
pub fn reference_params(kind: SignalKind) -> SignalParams {
    match kind {
        SignalKind::ExpDecay => SignalParams::ExpDecay(ExpDecayParams::new(1.81e-6)),
        SignalKind::DampedOsc => SignalParams::DampedOsc(DampedOscParams::new(1.28e-6, 2.972e6, -0.243)),
    }
}

/// Mean and sample standard deviation of one parameter over a Monte-Carlo point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamStats {
    pub mean: f64,
    pub std: f64,
}

/// Sample mean and standard deviation (`n - 1` normalisation). Zero std for
/// fewer than two values, NaN mean for none.
pub fn mean_std(values: &[f64]) -> ParamStats {
    let n = values.len();
    if n == 0 {
        return ParamStats { mean: f64::NAN, std: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    ParamStats { mean, std }
}

/// Outcome of estimating one signal with both methods; `None` marks a failure.
pub(crate) struct PairedEstimate {
    pub ae: Option<Vec<f64>>,
    pub ls: Option<Vec<f64>>,
}

pub(crate) fn estimate_pair(model: &AutoencoderModel, fit: &FitFn, signal: &Signal) -> PairedEstimate {
    let ae = model.encode(signal).ok().map(|p| p.free_values());
    let ls = match fit(signal) {
        Ok(r) if r.converged => Some(r.params.free_values()),
        _ => None,
    };
    PairedEstimate { ae, ls }
}

/// Per-parameter statistics of the successful estimates and the failure count.
pub(crate) fn summarize(estimates: &[Option<Vec<f64>>], n_params: usize) -> (Vec<ParamStats>, usize) {
    let ok: Vec<&Vec<f64>> = estimates.iter().flatten().collect();
    let stats = (0..n_params)
        .map(|j| mean_std(&ok.iter().map(|v| v[j]).collect::<Vec<_>>()))
        .collect();
    (stats, estimates.len() - ok.len())
}

/// Column-name suffix for an SI unit.
pub(crate) fn unit_suffix(unit: &str) -> String {
    unit.to_ascii_lowercase()
}

pub(crate) fn require_trained(model: &AutoencoderModel) -> Result<()> {
    if model.is_trained() {
        Ok(())
    } else {
        Err(Error::InvalidState("model has not been trained".into()))
    }
}

/// Formats a float for CSV output (shortest round-trip representation).
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_matches_two_pass() {
        let v = [1.0, 2.0, 4.0, 7.0];
        let s = mean_std(&v);
        assert_eq!(s.mean, 3.5);
        assert!((s.std - 7f64.sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[5.0]).std, 0.0);
        assert!(mean_std(&[]).mean.is_nan());
    }

    #[test]
    fn csv_floats_round_trip() {
        for v in [1.81e-6, -0.243, 2.972e6, 0.0, 1e-300] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }
}
