//! Histogram of estimate deviations with a least-squares Gaussian fit.

use serde::{Deserialize, Serialize};

use crate::baselines::lm::{minimize, scaled_inverse, CurveModel, MAX_ITERATIONS};
use crate::error::{invalid, Result};

/// Fewer estimates than this are summarised without a Gaussian fit.
const MIN_FIT: usize = 50;
const MAX_BINS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Left edge of the first bin.
    pub start: f64,
    pub bin_width: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.counts.len()).map(|i| self.start + (i as f64 + 0.5) * self.bin_width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub center: f64,
    pub center_err: f64,
    pub sigma: f64,
    pub sigma_err: f64,
    pub fwhm: f64,
    pub fwhm_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub n: usize,
    /// Mean of `estimate - reference`.
    pub mean: f64,
    pub stddev: f64,
    pub histogram: Option<Histogram>,
    pub fit: Option<GaussianFit>,
    /// `center / center_err` of the fit.
    pub center_significance: Option<f64>,
}

/// `2 sqrt(2 ln 2)`.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_4;

struct Gaussian;

impl CurveModel for Gaussian {
    fn n_params(&self) -> usize {
        3
    }

    fn admissible(&self, p: &[f64]) -> bool {
        p.iter().all(|v| v.is_finite()) && p[0] > 0.0 && p[2] > 0.0
    }

    fn eval(&self, p: &[f64], x: f64, grad: Option<&mut [f64]>) -> f64 {
        let u = (x - p[1]) / p[2];
        let e = (-0.5 * u * u).exp();
        if let Some(g) = grad {
            g[0] = e;
            g[1] = p[0] * e * u / p[2];
            g[2] = p[0] * e * u * u / p[2];
        }
        p[0] * e
    }
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn histogram(sorted: &[f64], std: f64) -> Option<Histogram> {
    let n = sorted.len() as f64;
    let iqr = quantile(sorted, 0.75) - quantile(sorted, 0.25);
    let mut width = 2.0 * iqr / n.cbrt();
    if !(width > 0.0) {
        width = 3.49 * std / n.cbrt();
    }
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if !(width > 0.0) || hi <= lo {
        return None;
    }
    let bins = (((hi - lo) / width).ceil() as usize).clamp(1, MAX_BINS);
    let width = width.max((hi - lo) / bins as f64);
    let mut counts = vec![0u64; bins];
    for v in sorted {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    Some(Histogram {
        start: lo,
        bin_width: width,
        counts,
    })
}

fn fit_gaussian(h: &Histogram, mean: f64, std: f64) -> Option<GaussianFit> {
    let x: Vec<f64> = h.centers().collect();
    let y: Vec<f64> = h.counts.iter().map(|&c| c as f64).collect();
    let peak = y.iter().cloned().fold(0.0, f64::max);
    let out = minimize(&Gaussian, &[peak, mean, std], &x, &y, MAX_ITERATIONS);
    if !out.converged || x.len() <= 3 {
        return None;
    }
    let cov = scaled_inverse(&out.jtj)?;
    let scale = out.chi2 / (x.len() - 3) as f64;
    let err = |i: usize| (cov[(i, i)] * scale).sqrt();
    let p = out.params;
    Some(GaussianFit {
        amplitude: p[0],
        center: p[1],
        center_err: err(1),
        sigma: p[2],
        sigma_err: err(2),
        fwhm: FWHM_PER_SIGMA * p[2],
        fwhm_err: FWHM_PER_SIGMA * err(2),
    })
}

/// Summary of `estimates - reference`: moments, a Freedman-Diaconis histogram
/// and a Gaussian fit to the bin counts (for at least 50 non-identical values).
pub fn estimate_distribution(estimates: &[f64], reference: f64) -> Result<DistributionSummary> {
    if estimates.len() < 2 {
        return Err(invalid(format!("need at least 2 estimates, got {}", estimates.len())));
    }
    if !reference.is_finite() || estimates.iter().any(|v| !v.is_finite()) {
        return Err(invalid("estimates and reference must be finite"));
    }
    let mut dev: Vec<f64> = estimates.iter().map(|v| v - reference).collect();
    let stats = super::mean_std(&dev);
    dev.sort_by(f64::total_cmp);
    let histogram = if stats.std > 0.0 { histogram(&dev, stats.std) } else { None };
    let fit = match &histogram {
        Some(h) if dev.len() >= MIN_FIT => fit_gaussian(h, stats.mean, stats.std),
        _ => None,
    };
    Ok(DistributionSummary {
        n: dev.len(),
        mean: stats.mean,
        stddev: stats.std,
        center_significance: fit.map(|f| f.center / f.center_err),
        histogram,
        fit,
    })
}

impl DistributionSummary {
    /// Two-column CSV of the histogram: bin centre and count.
    pub fn histogram_csv(&self, unit: &str) -> String {
        let mut out = format!("bin_center_{},count\n", super::unit_suffix(unit));
        if let Some(h) = &self.histogram {
            for (c, n) in h.centers().zip(&h.counts) {
                out.push_str(&format!("{},{n}\n", super::fmt_f64(c)));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn known_normal_is_recovered() {
        let mut rng = crate::signals::rng_stream(5, 0);
        let v: Vec<f64> = (0..10_000)
            .map(|_| 0.3 + 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let s = estimate_distribution(&v, 0.0).unwrap();
        let fit = s.fit.unwrap();
        assert!((fit.center - 0.3).abs() < 0.005, "{fit:?}");
        assert!((fit.sigma / 0.1 - 1.0).abs() < 0.05, "{fit:?}");
        assert!((fit.fwhm - FWHM_PER_SIGMA * fit.sigma).abs() < 1e-15);
        assert!(fit.center_err > 0.0 && fit.center_err < 0.005);
        let h = s.histogram.unwrap();
        assert_eq!(h.counts.iter().sum::<u64>(), 10_000);
    }

    #[test]
    fn constant_estimates_have_no_fit() {
        let s = estimate_distribution(&[1.5; 100], 1.5).unwrap();
        assert_eq!((s.mean, s.stddev), (0.0, 0.0));
        assert!(s.fit.is_none() && s.histogram.is_none() && s.center_significance.is_none());
    }

    #[test]
    fn small_samples_skip_the_fit() {
        let s = estimate_distribution(&[1.0, 2.0, 3.0], 0.0).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!(s.fit.is_none());
        assert!(estimate_distribution(&[1.0], 0.0).is_err());
        assert!(estimate_distribution(&[1.0, f64::NAN], 0.0).is_err());
    }

    #[test]
    fn fwhm_constant() {
        assert!((FWHM_PER_SIGMA - 2.0 * (2.0 * 2f64.ln()).sqrt()).abs() < 1e-15);
    }
}
