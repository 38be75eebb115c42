//! Reference estimators: Levenberg-Marquardt least-squares fits of the signal
//! models, a coarse FFT estimator and Cramér-Rao bounds.

mod crlb;
mod fft;
pub(crate) mod lm;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

pub use crlb::{crlb_sigma_f, crlb_sigma_tau, fisher_bound, xi, CrlbInputs, FisherBound, Unknowns};
pub use fft::{fft_coarse_estimate, FftEstimate};

use crate::error::{invalid, Error, Result};
use crate::signals::{DampedOscParams, ExpDecayParams, Signal, SignalKind, SignalParams};

/// Fitted parameters in the order of [`FitResult::sigma`].
pub fn param_names(kind: SignalKind) -> &'static [&'static str] {
    match kind {
        SignalKind::ExpDecay => &["amplitude", "tau", "offset"],
        SignalKind::DampedOsc => &["amplitude", "tau", "freq", "phase", "offset"],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: SignalParams,
    /// 1σ uncertainties, ordered as [`param_names`].
    pub sigma: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub residual_rms: f64,
}

impl FitResult {
    pub fn sigma_of(&self, name: &str) -> Option<f64> {
        param_names(self.params.kind())
            .iter()
            .position(|n| *n == name)
            .map(|i| self.sigma[i])
    }
}

pub(crate) fn to_vector(p: &SignalParams) -> Vec<f64> {
    match p {
        SignalParams::ExpDecay(p) => vec![p.amplitude, p.tau, p.offset],
        SignalParams::DampedOsc(p) => vec![p.amplitude, p.tau, p.freq, p.phase, p.offset],
    }
}

fn from_vector(kind: SignalKind, v: &[f64]) -> SignalParams {
    match kind {
        SignalKind::ExpDecay => SignalParams::ExpDecay(ExpDecayParams {
            amplitude: v[0],
            tau: v[1],
            offset: v[2],
        }),
        SignalKind::DampedOsc => {
            // Fold sign flips of amplitude and frequency into the phase.
            let (mut a, mut f, mut phi) = (v[0], v[2], v[3]);
            if f < 0.0 {
                f = -f;
                phi = -phi;
            }
            if a < 0.0 {
                a = -a;
                phi += std::f64::consts::PI;
            }
            SignalParams::DampedOsc(DampedOscParams {
                amplitude: a,
                tau: v[1],
                freq: f,
                phase: wrap_phase(phi),
                offset: v[4],
            })
        }
    }
}

/// Wraps into `(-pi, pi]`.
pub fn wrap_phase(phi: f64) -> f64 {
    use std::f64::consts::PI;
    let w = phi.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

fn check_signal(signal: &Signal, min_len: usize) -> Result<()> {
    if signal.len() < min_len {
        return Err(invalid(format!("fit needs >= {min_len} samples, got {}", signal.len())));
    }
    let y = signal.samples();
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let scale = lo.abs().max(hi.abs());
    if hi - lo <= f64::EPSILON * scale {
        return Err(Error::FitDegenerate("signal is constant".into()));
    }
    Ok(())
}

fn check_guess(kind: SignalKind, guess: &SignalParams) -> Result<()> {
    if guess.kind() != kind {
        return Err(invalid(format!("initial guess is {}, fit is {kind}", guess.kind())));
    }
    if let SignalParams::DampedOsc(p) = guess {
        if p.freq == 0.0 {
            return Err(Error::FitDegenerate(
                "zero frequency leaves phase and amplitude unidentifiable".into(),
            ));
        }
    }
    guess.validate()
}

fn run_fit(kind: SignalKind, signal: &Signal, p0: &[f64]) -> Result<FitResult> {
    let t: Vec<f64> = signal.grid().times().collect();
    let y = signal.samples();
    let out = lm::minimize(&kind, p0, &t, y, lm::MAX_ITERATIONS);
    let scale = out.chi2 / (y.len() - p0.len()) as f64;
    let sigma = match lm::scaled_inverse(&out.jtj) {
        Some(cov) => (0..p0.len()).map(|i| (cov[(i, i)] * scale).sqrt()).collect(),
        None if !out.converged => vec![f64::INFINITY; p0.len()],
        None => return Err(Error::FitDegenerate("normal matrix is singular at the solution".into())),
    };
    Ok(FitResult {
        params: from_vector(kind, &out.params),
        sigma,
        converged: out.converged,
        iterations: out.iterations,
        residual_rms: (out.chi2 / y.len() as f64).sqrt(),
    })
}

/// Mean of the last tenth of the trace.
fn tail_mean(y: &[f64]) -> f64 {
    let m = (y.len() / 10).max(1);
    y[y.len() - m..].iter().sum::<f64>() / m as f64
}

/// Slope and intercept of the least-squares line through `(x, y)`.
fn line_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Log-linear fit over the early samples that stay clearly above the tail.
fn exp_initial_guess(signal: &Signal) -> Vec<f64> {
    let y = signal.samples();
    let dt = 1.0 / signal.grid().sample_rate();
    let y0 = tail_mean(y);
    let w = (y.len() / 50).max(1);
    let head = y[..w].iter().sum::<f64>() / w as f64 - y0;
    let sign = if head < 0.0 { -1.0 } else { 1.0 };
    let a0 = head.abs();
    let (mut xs, mut ls) = (Vec::new(), Vec::new());
    let mut smooth = a0;
    for (k, v) in y.iter().enumerate() {
        let d = sign * (v - y0);
        smooth += (d - smooth) / w as f64;
        if smooth < 0.2 * a0 {
            break;
        }
        if d > 0.0 {
            xs.push(signal.grid().time(k));
            ls.push(d.ln());
        }
    }
    let fallback = signal.grid().duration() / 5.0;
    match line_fit(&xs, &ls) {
        Some((slope, icpt)) if slope < 0.0 && (-1.0 / slope) > dt => {
            vec![sign * icpt.exp(), -1.0 / slope, y0]
        }
        _ => vec![sign * a0.max(f64::MIN_POSITIVE), fallback, y0],
    }
}

/// `tau` from a log-linear fit of per-period envelope maxima, then amplitude,
/// phase and offset by linear least squares given `tau` and `f`.
fn osc_initial_guess(signal: &Signal, freq: f64, tau_fft: f64) -> Vec<f64> {
    let y = signal.samples();
    let grid = signal.grid();
    let y0 = tail_mean(y);
    let period = ((grid.sample_rate() / freq).round() as usize).max(2);
    let (mut xs, mut ls) = (Vec::new(), Vec::new());
    let mut first = None;
    for (j, chunk) in y.chunks(period).enumerate() {
        let (k, v) = chunk
            .iter()
            .enumerate()
            .map(|(k, v)| (k, (v - y0).abs()))
            .fold((0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        let e0 = *first.get_or_insert(v);
        if v < 0.3 * e0 || v <= 0.0 {
            break;
        }
        xs.push(grid.time(j * period + k));
        ls.push(v.ln());
    }
    let plausible = |tau: f64| tau.is_finite() && tau > 1.0 / grid.sample_rate();
    let tau = match line_fit(&xs, &ls) {
        Some((slope, _)) if plausible(-1.0 / slope) => -1.0 / slope,
        _ if plausible(tau_fft) => tau_fft,
        _ => grid.duration() / 5.0,
    };

    let w = 2.0 * std::f64::consts::PI * freq;
    let mut ata = Matrix3::zeros();
    let mut aty = Vector3::zeros();
    for (k, &v) in y.iter().enumerate() {
        let t = grid.time(k);
        let e = (-t / tau).exp();
        let (s, c) = (w * t).sin_cos();
        let row = Vector3::new(e * c, e * s, 1.0);
        ata += row * row.transpose();
        aty += row * v;
    }
    match ata.cholesky() {
        Some(ch) => {
            let x = ch.solve(&aty);
            let amp = x[0].hypot(x[1]).max(f64::MIN_POSITIVE);
            vec![amp, tau, freq, (-x[1]).atan2(x[0]), x[2]]
        }
        None => vec![1.0, tau, freq, 0.0, y0],
    }
}

/// Least-squares fit of `A0 exp(-t/tau) + y0` with all three parameters free.
pub fn fit_exp_decay(signal: &Signal, initial_guess: Option<&SignalParams>) -> Result<FitResult> {
    check_signal(signal, 4)?;
    let p0 = match initial_guess {
        Some(g) => {
            check_guess(SignalKind::ExpDecay, g)?;
            to_vector(g)
        }
        None => exp_initial_guess(signal),
    };
    run_fit(SignalKind::ExpDecay, signal, &p0)
}

/// Least-squares fit of the damped cosine with amplitude, decay, frequency,
/// phase and offset free.
pub fn fit_damped_osc(signal: &Signal, initial_guess: Option<&SignalParams>) -> Result<FitResult> {
    check_signal(signal, 8)?;
    let p0 = match initial_guess {
        Some(g) => {
            check_guess(SignalKind::DampedOsc, g)?;
            to_vector(g)
        }
        None => {
            let est = fft_coarse_estimate(signal).map_err(|e| match e {
                Error::EstimateUnavailable(m) => {
                    Error::FitDegenerate(format!("no oscillation to seed the fit: {m}"))
                }
                other => other,
            })?;
            osc_initial_guess(signal, est.freq, est.tau)
        }
    };
    run_fit(SignalKind::DampedOsc, signal, &p0)
}

/// Dispatches on `kind`.
pub fn fit_signal(kind: SignalKind, signal: &Signal, initial_guess: Option<&SignalParams>) -> Result<FitResult> {
    match kind {
        SignalKind::ExpDecay => fit_exp_decay(signal, initial_guess),
        SignalKind::DampedOsc => fit_damped_osc(signal, initial_guess),
    }
}
