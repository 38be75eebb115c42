//! Simulated spectral scans: the decay constant (and frequency) follow a line
//! shape across a detuning axis.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{estimate_pair, fmt_f64, require_trained, summarize, unit_suffix, FitFn, ParamStats};
use crate::autoencoder::AutoencoderModel;
use crate::error::{invalid, Result};
use crate::signals::{gen_signal, rng_stream, SignalKind, SignalParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Feature {
    /// `1/tau = 1/tau0 + a w^2 / (d^2 + w^2)`.
    LorentzianAbsorption,
    /// Absorption plus `f = f0 + b d w / (d^2 + w^2)`.
    CottonEffect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanScenario {
    pub feature: Feature,
    /// Parameters far from the line.
    pub baseline: SignalParams,
    /// Detuning axis in arbitrary units.
    pub detuning: Vec<f64>,
    /// Half width of the line, same units as `detuning`.
    pub width: f64,
    /// Fractional drop of tau at line centre.
    pub tau_drop: f64,
    /// Dispersion amplitude `b` in Hz (Cotton effect only).
    pub freq_shift: f64,
    pub snr: f64,
}

impl ScanScenario {
    /// 21 detunings on [-5, 5], unit width, 30% tau drop, SNR 2^5.
    pub fn lorentzian(baseline: SignalParams) -> Self {
        Self {
            feature: Feature::LorentzianAbsorption,
            baseline,
            detuning: (0..21).map(|i| -5.0 + 0.5 * i as f64).collect(),
            width: 1.0,
            tau_drop: 0.3,
            freq_shift: 0.0,
            snr: 32.0,
        }
    }

    /// As [`ScanScenario::lorentzian`] with a 0.1 MHz dispersion amplitude.
    pub fn cotton(baseline: SignalParams) -> Self {
        Self {
            feature: Feature::CottonEffect,
            freq_shift: 0.1e6,
            ..Self::lorentzian(baseline)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.baseline.validate()?;
        if self.detuning.is_empty() || self.detuning.iter().any(|d| !d.is_finite()) {
            return Err(invalid("detuning grid must be non-empty and finite"));
        }
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(invalid("line width must be > 0"));
        }
        if !(0.0..1.0).contains(&self.tau_drop) {
            return Err(invalid("tau_drop must lie in [0, 1)"));
        }
        if !self.freq_shift.is_finite() {
            return Err(invalid("freq_shift must be finite"));
        }
        if self.feature == Feature::CottonEffect && self.baseline.kind() != SignalKind::DampedOsc {
            return Err(invalid("the Cotton-effect scan needs an oscillating baseline"));
        }
        if !(self.snr > 0.0 && self.snr.is_finite()) {
            return Err(invalid("snr must be finite and > 0"));
        }
        Ok(())
    }

    /// True parameters at detuning `d`.
    pub fn truth_at(&self, d: f64) -> SignalParams {
        let w2 = self.width * self.width;
        let lorentz = w2 / (d * d + w2);
        let tau0 = self.baseline.tau();
        let a = (1.0 / (1.0 - self.tau_drop) - 1.0) / tau0;
        let tau = 1.0 / (1.0 / tau0 + a * lorentz);
        match self.baseline {
            SignalParams::ExpDecay(mut p) => {
                p.tau = tau;
                SignalParams::ExpDecay(p)
            }
            SignalParams::DampedOsc(mut p) => {
                p.tau = tau;
                if self.feature == Feature::CottonEffect {
                    p.freq += self.freq_shift * d * self.width / (d * d + w2);
                }
                SignalParams::DampedOsc(p)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub detuning: f64,
    pub truth: SignalParams,
    pub ae: Vec<ParamStats>,
    pub ls: Vec<ParamStats>,
    pub ae_failures: usize,
    pub ls_failures: usize,
}

/// Estimates `n_per_point` noisy signals at every detuning with both methods.
pub fn run_scan(
    model: &AutoencoderModel,
    fit: &FitFn,
    scenario: &ScanScenario,
    n_per_point: usize,
    seed: u64,
) -> Result<Vec<ScanRow>> {
    require_trained(model)?;
    scenario.validate()?;
    if scenario.baseline.kind() != model.kind() {
        return Err(invalid("scan baseline and model are of different kinds"));
    }
    if n_per_point < 2 {
        return Err(invalid("need at least 2 signals per point"));
    }
    let n_params = model.kind().free_params().len();
    scenario
        .detuning
        .iter()
        .enumerate()
        .map(|(j, &d)| {
            let truth = scenario.truth_at(d);
            let pairs: Vec<_> = (0..n_per_point)
                .into_par_iter()
                .map(|i| {
                    let mut rng = rng_stream(seed, ((j as u64) << 32) | i as u64);
                    let s = gen_signal(&truth, model.grid(), scenario.snr, &mut rng)?;
                    Ok(estimate_pair(model, fit, &s))
                })
                .collect::<Result<_>>()?;
            let (ae, ls): (Vec<_>, Vec<_>) = pairs.into_iter().map(|p| (p.ae, p.ls)).unzip();
            let (ae, ae_failures) = summarize(&ae, n_params);
            let (ls, ls_failures) = summarize(&ls, n_params);
            Ok(ScanRow {
                detuning: d,
                truth,
                ae,
                ls,
                ae_failures,
                ls_failures,
            })
        })
        .collect()
}

/// CSV with true values and per-method mean and stddev per parameter.
pub fn scan_csv(rows: &[ScanRow], kind: SignalKind) -> String {
    let mut header = vec!["detuning".to_string()];
    let cols: Vec<(&str, String)> = kind
        .free_params()
        .iter()
        .zip(kind.free_param_units())
        .map(|(n, u)| (*n, unit_suffix(u)))
        .collect();
    for (n, u) in &cols {
        header.push(format!("true_{n}_{u}"));
    }
    for m in ["ae", "ls"] {
        for (n, u) in &cols {
            header.push(format!("{m}_{n}_mean_{u}"));
            header.push(format!("{m}_{n}_std_{u}"));
        }
    }
    header.push("ae_failures".into());
    header.push("ls_failures".into());
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        let mut line = vec![fmt_f64(r.detuning)];
        line.extend(r.truth.free_values().into_iter().map(fmt_f64));
        for stats in [&r.ae, &r.ls] {
            for s in stats.iter() {
                line.push(fmt_f64(s.mean));
                line.push(fmt_f64(s.std));
            }
        }
        line.push(r.ae_failures.to_string());
        line.push(r.ls_failures.to_string());
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}
