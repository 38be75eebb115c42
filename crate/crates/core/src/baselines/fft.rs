//! Coarse frequency and decay estimate from the magnitude spectrum.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{invalid, Error, Result};
use crate::signals::Signal;

/// Zero padding factor; refines the spectral grid for the peak and width
/// interpolation.
const PAD: usize = 8;

/// A peak must rise this far above the valley that ends the DC lobe.
const PEAK_OVER_FLOOR: f64 = 2.0;

/// Frequency (Hz) and decay constant (s) estimated from the spectral peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FftEstimate {
    pub freq: f64,
    pub tau: f64,
}

/// Parabolic interpolation of the magnitude peak (DC excluded) for the
/// frequency; `tau = 1 / (pi * FWHM)` from the half-maximum crossings of the
/// power spectrum.
pub fn fft_coarse_estimate(signal: &Signal) -> Result<FftEstimate> {
    let y = signal.samples();
    let n = y.len();
    if n < 16 {
        return Err(invalid(format!("fft estimate needs >= 16 samples, got {n}")));
    }
    let len = n * PAD;
    let mut buf: Vec<Complex<f64>> = y
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(len)
        .collect();
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    let half = len / 2;
    let mag: Vec<f64> = buf[..=half].iter().map(|c| c.norm()).collect();

    // Walk down the DC lobe to its first valley.
    let mut start = 1;
    while start < half && mag[start + 1] <= mag[start] {
        start += 1;
    }
    if start >= half {
        return Err(Error::EstimateUnavailable("spectrum has no peak away from DC".into()));
    }
    let floor = mag[start];
    let k = (start..half)
        .max_by(|&a, &b| mag[a].total_cmp(&mag[b]))
        .expect("non-empty range");
    if !(mag[k] > PEAK_OVER_FLOOR * floor) || k <= 1 {
        return Err(Error::EstimateUnavailable("no spectral peak above the DC floor".into()));
    }

    let df = signal.grid().sample_rate() / len as f64;
    let (a, b, c) = (mag[k - 1], mag[k], mag[k + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom < 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
    let freq = (k as f64 + shift) * df;

    let power = |i: usize| mag[i] * mag[i];
    let half_max = 0.5 * power(k);
    let mut lo = k;
    while lo > 0 && power(lo) > half_max {
        lo -= 1;
    }
    let mut hi = k;
    while hi < half && power(hi) > half_max {
        hi += 1;
    }
    if power(lo) > half_max || power(hi) > half_max {
        return Err(Error::EstimateUnavailable("peak has no half-maximum crossings".into()));
    }
    let cross = |i: usize, j: usize| {
        let (pi, pj) = (power(i), power(j));
        i as f64 + (half_max - pi) / (pj - pi) * (j as f64 - i as f64)
    };
    let fwhm = (cross(hi - 1, hi) - cross(lo, lo + 1)) * df;
    if !(fwhm > 0.0) {
        return Err(Error::EstimateUnavailable("peak width is zero".into()));
    }
    Ok(FftEstimate {
        freq,
        tau: 1.0 / (std::f64::consts::PI * fwhm),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::{clean_signal, DampedOscParams, ExpDecayParams, SamplingGrid, SignalParams};

    #[test]
    fn recovers_noiseless_frequency() {
        let grid = SamplingGrid::default();
        for (tau, f) in [(1e-6, 3e6), (2e-6, 3e6), (1e-6, 2.9e6), (1.28e-6, 2.972e6)] {
            let p = SignalParams::DampedOsc(DampedOscParams::new(tau, f, 0.3));
            let est = fft_coarse_estimate(&clean_signal(&p, &grid).unwrap()).unwrap();
            assert!((est.freq - f).abs() < 0.02e6, "f={f}: {}", est.freq);
            assert!(est.tau > 0.2 * tau && est.tau < 5.0 * tau, "tau={tau}: {}", est.tau);
        }
    }

    #[test]
    fn pure_exponential_has_no_peak() {
        let grid = SamplingGrid::default();
        let p = SignalParams::ExpDecay(ExpDecayParams::new(1e-6));
        let r = fft_coarse_estimate(&clean_signal(&p, &grid).unwrap());
        assert!(matches!(r, Err(Error::EstimateUnavailable(_))), "{r:?}");
    }

    #[test]
    fn short_signal_rejected() {
        let grid = SamplingGrid::new(8, 200e6).unwrap();
        let s = Signal::new(vec![1.0; 8], grid).unwrap();
        assert!(matches!(fft_coarse_estimate(&s), Err(Error::InvalidArgument(_))));
    }
}
