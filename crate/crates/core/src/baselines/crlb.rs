//! Cramér-Rao bounds: the closed form for the frequency of a damped
//! oscillation and a numerical Fisher-information bound for any model.

use serde::{Deserialize, Serialize};

use super::lm::{linearize, scaled_inverse, CurveModel};
use super::param_names;
use crate::error::{invalid, Error, Result};
use crate::signals::{noise_sigma, SamplingGrid, SignalParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrlbInputs {
    /// `A0 / sigma^2`.
    pub snr: f64,
    /// Sampling-rate-limited bandwidth in Hz.
    pub f_bw: f64,
    /// Measurement time in seconds.
    #[serde(rename = "t_m")]
    pub t_m: f64,
    /// Decay constant in seconds.
    pub tau: f64,
}

impl CrlbInputs {
    /// Bound inputs for a signal sampled on `grid`.
    pub fn for_grid(snr: f64, grid: &SamplingGrid, tau: f64) -> Self {
        Self {
            snr,
            f_bw: grid.sample_rate(),
            t_m: grid.duration(),
            tau,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("snr", self.snr), ("f_bw", self.f_bw), ("t_m", self.t_m), ("tau", self.tau)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Decay penalty `xi(r)`, `r = tau / T_m`.
pub fn xi(r: f64) -> f64 {
    let x = 2.0 / r;
    if x < 0.1 {
        // Series of the denominator; the closed form cancels badly here.
        let x2 = x * x;
        return x.exp_m1() / (x * (1.0 + x2 / 30.0 + x2 * x2 / 1680.0 + x2 * x2 * x2 / 151_200.0));
    }
    // Numerator and denominator divided by e^x, safe for small r.
    let em = (-x).exp();
    let num = -(-x).exp_m1();
    let den = 1.5 * r.powi(3) * (1.0 + em * em) - 3.0 * r * (r * r + 2.0) * em;
    num / den
}

/// Closed-form frequency bound in Hz.
///
/// The formula is written for an amplitude ratio; with `SNR = A0 / sigma^2`
/// and unit amplitude that ratio is `sqrt(SNR) / 2`, which reproduces the
/// Fisher bound of a sampled damped cosine.
pub fn crlb_sigma_f(inputs: &CrlbInputs) -> Result<f64> {
    inputs.validate()?;
    let amp_snr = inputs.snr.sqrt() / 2.0;
    let two_pi = 2.0 * std::f64::consts::PI;
    let var = 6.0 * xi(inputs.tau / inputs.t_m)
        / (two_pi * two_pi * amp_snr * amp_snr * inputs.f_bw * inputs.t_m.powi(3));
    Ok(var.sqrt())
}

/// `sqrt(2 pi) * sigma_f`, a purely numeric relation.
pub fn crlb_sigma_tau(inputs: &CrlbInputs) -> Result<f64> {
    Ok((2.0 * std::f64::consts::PI).sqrt() * crlb_sigma_f(inputs)?)
}

/// Which parameters are estimated jointly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Unknowns {
    /// Amplitude, offset and the shape parameters, as in the least-squares fits.
    All,
    /// Shape parameters only; amplitude and offset known.
    ShapeOnly,
}

/// Fisher-information lower bounds on the standard deviation of each
/// estimated parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherBound {
    pub names: Vec<&'static str>,
    pub sigma: Vec<f64>,
}

impl FisherBound {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| *n == name).map(|i| self.sigma[i])
    }
}

/// Inverse Fisher information of white Gaussian noise with
/// `sigma = sqrt(A0 / snr)` on `grid`, evaluated at `params`.
pub fn fisher_bound(params: &SignalParams, grid: &SamplingGrid, snr: f64, unknowns: Unknowns) -> Result<FisherBound> {
    params.validate()?;
    if !(snr > 0.0 && snr.is_finite()) {
        return Err(invalid(format!("snr must be finite and > 0, got {snr}")));
    }
    let kind = params.kind();
    let p = super::to_vector(params);
    let t: Vec<f64> = grid.times().collect();
    let y = vec![0.0; t.len()];
    let (_, jtj, _) = linearize(&kind, &p, &t, &y);
    let all = param_names(kind);
    let keep: Vec<usize> = match unknowns {
        Unknowns::All => (0..kind.n_params()).collect(),
        Unknowns::ShapeOnly => (1..kind.n_params() - 1).collect(),
    };
    let sub = jtj.select_rows(&keep).select_columns(&keep);
    let cov = scaled_inverse(&sub)
        .ok_or_else(|| Error::FitDegenerate("Fisher information is singular".into()))?;
    let s = noise_sigma(snr, params.amplitude());
    Ok(FisherBound {
        names: keep.iter().map(|&i| all[i]).collect(),
        sigma: (0..keep.len()).map(|i| s * cov[(i, i)].sqrt()).collect(),
    })
}
