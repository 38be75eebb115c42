//! Model signals, calibrated Gaussian noise and parameter distributions.
//!
//! Two signal models are supported:
//!
//! - exponential decay: `y(t) = A0 exp(-t/tau) + y0(t)`
//! - damped oscillation: `y(t) = A0 exp(-t/tau) cos(2 pi f t + phi) + y0(t)`
//!
//! The offset `y0(t)` carries white Gaussian noise with variance `A0 / SNR`
//! (the SNR is a ratio of amplitude to noise *variance*). Times are seconds,
//! frequencies Hz and phases radians everywhere inside the library.
//!
//! Randomness comes from [`ChaCha8Rng`], which is portable and reproducible
//! across platforms. Gaussian variates use the ziggurat transform of
//! [`rand_distr::StandardNormal`]. Independent streams are derived from one
//! seed with [`rng_stream`], so dataset generation can fan out across threads
//! without changing results.

mod dataset;

pub use dataset::{make_dataset, Dataset, DatasetSpec};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Number of samples in the default acquisition window.
pub const DEFAULT_SAMPLES: usize = 1000;
/// Default digitizer rate (Hz).
pub const DEFAULT_SAMPLE_RATE: f64 = 200e6;
/// SNR of training data.
pub const TRAINING_SNR: f64 = 1_048_576.0;

/// Seeded generator for stream `stream` of `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingGrid {
    n_samples: usize,
    sample_rate: f64,
    t0: f64,
}

impl SamplingGrid {
    pub fn new(n_samples: usize, sample_rate: f64) -> Result<Self> {
        Self::with_start(n_samples, sample_rate, 0.0)
    }

    pub fn with_start(n_samples: usize, sample_rate: f64, t0: f64) -> Result<Self> {
        if n_samples < 2 {
            return Err(invalid(format!("grid needs n_samples >= 2, got {n_samples}")));
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(invalid(format!("sample_rate must be > 0, got {sample_rate}")));
        }
        if !t0.is_finite() {
            return Err(invalid("t0 must be finite"));
        }
        Ok(Self {
            n_samples,
            sample_rate,
            t0,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// Window length `n_samples / sample_rate` (s).
    pub fn duration(&self) -> f64 {
        self.n_samples as f64 / self.sample_rate
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 / self.sample_rate
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_samples).map(move |k| self.time(k))
    }
}

impl Default for SamplingGrid {
    /// 1000 samples at 200 MHz, a 5 µs window.
    fn default() -> Self {
        Self {
            n_samples: DEFAULT_SAMPLES,
            sample_rate: DEFAULT_SAMPLE_RATE,
            t0: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SignalKind {
    #[serde(rename = "exp")]
    ExpDecay,
    #[serde(rename = "osc")]
    DampedOsc,
}

impl SignalKind {
    /// Names of the free parameters carried in the latent space, in order.
    pub fn free_params(self) -> &'static [&'static str] {
        match self {
            SignalKind::ExpDecay => &["tau"],
            SignalKind::DampedOsc => &["tau", "freq", "phase"],
        }
    }

    pub fn free_param_units(self) -> &'static [&'static str] {
        match self {
            SignalKind::ExpDecay => &["s"],
            SignalKind::DampedOsc => &["s", "Hz", "rad"],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SignalKind::ExpDecay => "exp",
            SignalKind::DampedOsc => "osc",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            SignalKind::ExpDecay => 1,
            SignalKind::DampedOsc => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(SignalKind::ExpDecay),
            2 => Ok(SignalKind::DampedOsc),
            t => Err(Error::Format(format!("unknown signal kind tag {t}"))),
        }
    }
}

impl std::str::FromStr for SignalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp" | "exp-decay" => Ok(SignalKind::ExpDecay),
            "osc" | "damped-osc" => Ok(SignalKind::DampedOsc),
            other => Err(invalid(format!("unknown signal kind '{other}' (expected exp|osc)"))),
        }
    }
}

impl std::fmt::Display for SignalKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpDecayParams {
    pub amplitude: f64,
    pub tau: f64,
    pub offset: f64,
}

impl ExpDecayParams {
    pub fn new(tau: f64) -> Self {
        Self {
            amplitude: 1.0,
            tau,
            offset: 0.0,
        }
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * (-t / self.tau).exp() + self.offset
    }

    fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(invalid(format!("tau must be > 0, got {}", self.tau)));
        }
        if !self.amplitude.is_finite() || !self.offset.is_finite() {
            return Err(invalid("amplitude and offset must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DampedOscParams {
    pub amplitude: f64,
    pub tau: f64,
    pub freq: f64,
    pub phase: f64,
    pub offset: f64,
}

impl DampedOscParams {
    pub fn new(tau: f64, freq: f64, phase: f64) -> Self {
        Self {
            amplitude: 1.0,
            tau,
            freq,
            phase,
            offset: 0.0,
        }
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude
            * (-t / self.tau).exp()
            * (2.0 * std::f64::consts::PI * self.freq * t + self.phase).cos()
            + self.offset
    }

    fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(invalid(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.freq > 0.0 && self.freq.is_finite()) {
            return Err(invalid(format!("freq must be > 0, got {}", self.freq)));
        }
        if !self.amplitude.is_finite() || !self.offset.is_finite() || !self.phase.is_finite() {
            return Err(invalid("amplitude, phase and offset must be finite"));
        }
        Ok(())
    }
}

/// Ground-truth or estimated parameters of one signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum SignalParams {
    #[serde(rename = "exp")]
    ExpDecay(ExpDecayParams),
    #[serde(rename = "osc")]
    DampedOsc(DampedOscParams),
}

impl SignalParams {
    pub fn kind(&self) -> SignalKind {
        match self {
            SignalParams::ExpDecay(_) => SignalKind::ExpDecay,
            SignalParams::DampedOsc(_) => SignalKind::DampedOsc,
        }
    }

    pub fn tau(&self) -> f64 {
        match self {
            SignalParams::ExpDecay(p) => p.tau,
            SignalParams::DampedOsc(p) => p.tau,
        }
    }

    /// The free (latent) parameters in [`SignalKind::free_params`] order.
    pub fn free_values(&self) -> Vec<f64> {
        match self {
            SignalParams::ExpDecay(p) => vec![p.tau],
            SignalParams::DampedOsc(p) => vec![p.tau, p.freq, p.phase],
        }
    }

    /// Builds parameters from free values with `A0 = 1` and `y0 = 0`.
    pub fn from_free(kind: SignalKind, values: &[f64]) -> Result<Self> {
        let want = kind.free_params().len();
        if values.len() != want {
            return Err(invalid(format!(
                "{kind} needs {want} free values, got {}",
                values.len()
            )));
        }
        Ok(match kind {
            SignalKind::ExpDecay => SignalParams::ExpDecay(ExpDecayParams::new(values[0])),
            SignalKind::DampedOsc => {
                SignalParams::DampedOsc(DampedOscParams::new(values[0], values[1], values[2]))
            }
        })
    }

    pub fn amplitude(&self) -> f64 {
        match self {
            SignalParams::ExpDecay(p) => p.amplitude,
            SignalParams::DampedOsc(p) => p.amplitude,
        }
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            SignalParams::ExpDecay(p) => p.eval(t),
            SignalParams::DampedOsc(p) => p.eval(t),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SignalParams::ExpDecay(p) => p.validate(),
            SignalParams::DampedOsc(p) => p.validate(),
        }
    }
}

/// Noise level and seed. `snr = inf` gives a noiseless signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(with = "crate::codec::extended_f64")]
    pub snr: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(snr: f64, seed: u64) -> Self {
        Self { snr, seed }
    }

    pub fn noiseless() -> Self {
        Self {
            snr: f64::INFINITY,
            seed: 0,
        }
    }

    /// Per-sample noise standard deviation for initial amplitude `amplitude`.
    pub fn sigma(&self, amplitude: f64) -> f64 {
        noise_sigma(self.snr, amplitude)
    }
}

/// `sqrt(A0 / SNR)`; zero for infinite SNR.
pub fn noise_sigma(snr: f64, amplitude: f64) -> f64 {
    if snr.is_infinite() {
        0.0
    } else {
        (amplitude.abs() / snr).sqrt()
    }
}

fn validate_snr(snr: f64) -> Result<()> {
    if snr > 0.0 && !snr.is_nan() {
        Ok(())
    } else {
        Err(invalid(format!("snr must be > 0, got {snr}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    samples: Vec<f64>,
    grid: SamplingGrid,
}

impl Signal {
    pub fn new(samples: Vec<f64>, grid: SamplingGrid) -> Result<Self> {
        if samples.len() != grid.n_samples() {
            return Err(invalid(format!(
                "signal has {} samples but grid expects {}",
                samples.len(),
                grid.n_samples()
            )));
        }
        if let Some(k) = samples.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("sample {k} is not finite")));
        }
        Ok(Self { samples, grid })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn grid(&self) -> &SamplingGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Evaluates the model for `params` on `grid` and adds noise drawn from `rng`.
pub fn gen_signal<R: Rng + ?Sized>(
    params: &SignalParams,
    grid: &SamplingGrid,
    snr: f64,
    rng: &mut R,
) -> Result<Signal> {
    params.validate()?;
    validate_snr(snr)?;
    let sigma = noise_sigma(snr, params.amplitude());
    let samples = grid
        .times()
        .map(|t| {
            let clean = params.eval(t);
            if sigma > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                clean + sigma * z
            } else {
                clean
            }
        })
        .collect();
    Signal::new(samples, *grid)
}

/// Noise-free model trace.
pub fn clean_signal(params: &SignalParams, grid: &SamplingGrid) -> Result<Signal> {
    params.validate()?;
    Signal::new(grid.times().map(|t| params.eval(t)).collect(), *grid)
}

pub fn gen_exp_decay(params: &ExpDecayParams, grid: &SamplingGrid, noise: &NoiseSpec) -> Result<Signal> {
    let mut rng = rng_stream(noise.seed, 0);
    gen_signal(&SignalParams::ExpDecay(*params), grid, noise.snr, &mut rng)
}

pub fn gen_damped_osc(
    params: &DampedOscParams,
    grid: &SamplingGrid,
    noise: &NoiseSpec,
) -> Result<Signal> {
    let mut rng = rng_stream(noise.seed, 0);
    gen_signal(&SignalParams::DampedOsc(*params), grid, noise.snr, &mut rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    Identity,
    AbsoluteValue,
}

/// Normal spread `N(mean, std)` of one parameter, optionally folded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSpread {
    pub mean: f64,
    pub std: f64,
    pub transform: Transform,
}

impl ParamSpread {
    pub fn normal(mean: f64, std: f64) -> Self {
        Self {
            mean,
            std,
            transform: Transform::Identity,
        }
    }

    pub fn folded(mean: f64, std: f64) -> Self {
        Self {
            mean,
            std,
            transform: Transform::AbsoluteValue,
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.std > 0.0 && self.std.is_finite() && self.mean.is_finite()) {
            return Err(invalid(format!(
                "{name}: need finite mean and std > 0 (got mean {}, std {})",
                self.mean, self.std
            )));
        }
        Ok(())
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        let x = self.mean + self.std * z;
        match self.transform {
            Transform::Identity => x,
            Transform::AbsoluteValue => x.abs(),
        }
    }
}

/// Distributions of the free parameters used for training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamDistribution {
    pub tau: ParamSpread,
    pub freq: ParamSpread,
    pub phase: ParamSpread,
}

impl Default for ParamDistribution {
    fn default() -> Self {
        Self {
            tau: ParamSpread::folded(1e-6, 0.5e-6),
            freq: ParamSpread::normal(3e6, 0.1e6),
            phase: ParamSpread::normal(0.0, 0.1),
        }
    }
}

impl ParamDistribution {
    pub fn validate(&self) -> Result<()> {
        self.tau.validate("tau")?;
        self.freq.validate("freq")?;
        self.phase.validate("phase")
    }

    /// Spreads of the free parameters of `kind`, in latent order.
    pub fn spreads(&self, kind: SignalKind) -> Vec<(&'static str, ParamSpread)> {
        match kind {
            SignalKind::ExpDecay => vec![("tau", self.tau)],
            SignalKind::DampedOsc => {
                vec![("tau", self.tau), ("freq", self.freq), ("phase", self.phase)]
            }
        }
    }
}

/// Draws one parameter set. A tau of exactly zero after folding is redrawn.
pub fn sample_params<R: Rng + ?Sized>(
    kind: SignalKind,
    dist: &ParamDistribution,
    rng: &mut R,
) -> Result<SignalParams> {
    dist.validate()?;
    Ok(draw_params(kind, dist, rng))
}

fn draw_params<R: Rng + ?Sized>(kind: SignalKind, dist: &ParamDistribution, rng: &mut R) -> SignalParams {
    let tau = loop {
        let tau = dist.tau.draw(rng);
        if tau > 0.0 {
            break tau;
        }
    };
    match kind {
        SignalKind::ExpDecay => SignalParams::ExpDecay(ExpDecayParams::new(tau)),
        SignalKind::DampedOsc => {
            let freq = dist.freq.draw(rng);
            let phase = dist.phase.draw(rng);
            SignalParams::DampedOsc(DampedOscParams::new(tau, freq, phase))
        }
    }
}

/// Like [`sample_params`], but redraws until every free parameter lies within
/// `bound` of its mean in units of `3 std`, and the frequency is positive.
pub fn sample_params_within<R: Rng + ?Sized>(
    kind: SignalKind,
    dist: &ParamDistribution,
    bound: f64,
    rng: &mut R,
) -> Result<SignalParams> {
    dist.validate()?;
    if !(bound > 0.0) {
        return Err(invalid(format!("latent bound must be > 0, got {bound}")));
    }
    let spreads = dist.spreads(kind);
    for _ in 0..1_000_000 {
        let p = draw_params(kind, dist, rng);
        let inside = p
            .free_values()
            .iter()
            .zip(&spreads)
            .all(|(x, (_, s))| ((x - s.mean) / (3.0 * s.std)).abs() <= bound);
        if inside && p.validate().is_ok() {
            return Ok(p);
        }
    }
    Err(invalid("latent bound rejects (almost) every draw"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> SamplingGrid {
        SamplingGrid::default()
    }

    #[test]
    fn grid_spacing_and_duration() {
        let g = grid();
        assert_eq!(g.duration(), 5e-6);
        assert_eq!(g.time(0), 0.0);
        assert_eq!(g.time(200), 200.0 / 200e6);
        assert!(SamplingGrid::new(1, 1.0).is_err());
        assert!(SamplingGrid::new(10, 0.0).is_err());
        let shifted = SamplingGrid::with_start(4, 2.0, 1.0).unwrap();
        assert_eq!(shifted.times().collect::<Vec<_>>(), vec![1.0, 1.5, 2.0, 2.5]);
    }

    #[test]
    fn exp_decay_analytic_values() {
        let s = gen_exp_decay(&ExpDecayParams::new(1.81e-6), &grid(), &NoiseSpec::noiseless()).unwrap();
        assert_eq!(s.samples()[0], 1.0);
        assert_eq!(s.len(), 1000);

        // t = 1 µs is sample 200 on the default grid.
        let s = gen_exp_decay(&ExpDecayParams::new(1e-6), &grid(), &NoiseSpec::noiseless()).unwrap();
        assert!((s.samples()[200] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((s.samples()[200] - 0.3678794).abs() < 1e-7);
    }

    #[test]
    fn damped_osc_analytic_values() {
        let p = DampedOscParams::new(1.28e-6, 2.972e6, -0.243);
        let s = gen_damped_osc(&p, &grid(), &NoiseSpec::noiseless()).unwrap();
        assert!((s.samples()[0] - 0.97063).abs() < 1e-5);

        // Half a period of 3 MHz on a grid that hits t = 1/(2f) exactly.
        let g = SamplingGrid::new(10, 6e6).unwrap();
        let s = gen_damped_osc(&DampedOscParams::new(1e-6, 3e6, 0.0), &g, &NoiseSpec::noiseless())
            .unwrap();
        let expected = -(-1.0f64 / 6.0).exp();
        assert!((s.samples()[1] - expected).abs() < 1e-12);
        assert!((s.samples()[1] + 0.84648).abs() < 1e-5);
    }

    #[test]
    fn generators_reject_bad_params() {
        let g = grid();
        let n = NoiseSpec::noiseless();
        assert!(gen_exp_decay(&ExpDecayParams::new(0.0), &g, &n).is_err());
        assert!(gen_exp_decay(&ExpDecayParams::new(-1e-6), &g, &n).is_err());
        assert!(gen_damped_osc(&DampedOscParams::new(1e-6, 0.0, 0.0), &g, &n).is_err());
        assert!(gen_damped_osc(&DampedOscParams::new(1e-6, -3e6, 0.0), &g, &n).is_err());
        assert!(gen_exp_decay(&ExpDecayParams::new(1e-6), &g, &NoiseSpec::new(0.0, 1)).is_err());
    }

    #[test]
    fn same_seed_same_noise() {
        let p = DampedOscParams::new(1.28e-6, 2.972e6, -0.243);
        let a = gen_damped_osc(&p, &grid(), &NoiseSpec::new(32.0, 9)).unwrap();
        let b = gen_damped_osc(&p, &grid(), &NoiseSpec::new(32.0, 9)).unwrap();
        let c = gen_damped_osc(&p, &grid(), &NoiseSpec::new(32.0, 10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn noise_stddev_matches_snr() {
        // stddev of (noisy - clean) over 1e5 realizations of a 1000-sample trace.
        let snr = 32.0;
        let p = SignalParams::ExpDecay(ExpDecayParams::new(1e-6));
        let g = grid();
        let clean = clean_signal(&p, &g).unwrap();
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        let mut count = 0.0;
        for seed in 0..100u64 {
            let mut rng = rng_stream(seed, 3);
            let noisy = gen_signal(&p, &g, snr, &mut rng).unwrap();
            for (a, b) in noisy.samples().iter().zip(clean.samples()) {
                let d = a - b;
                sum += d;
                sum2 += d * d;
                count += 1.0;
            }
        }
        let mean = sum / count;
        let sd = (sum2 / count - mean * mean).sqrt();
        let expected = 2f64.powf(-2.5);
        assert!((sd / expected - 1.0).abs() < 0.01, "sd {sd} vs {expected}");
    }

    #[test]
    fn degenerate_phase_spread() {
        let dist = ParamDistribution {
            phase: ParamSpread::normal(0.0, 1e-300),
            ..Default::default()
        };
        let mut rng = rng_stream(1, 0);
        for _ in 0..1000 {
            let p = sample_params(SignalKind::DampedOsc, &dist, &mut rng).unwrap();
            assert!(p.free_values()[2].abs() < 1e-290);
        }
    }

    #[test]
    fn spreads_must_be_positive() {
        let dist = ParamDistribution {
            freq: ParamSpread::normal(3e6, 0.0),
            ..Default::default()
        };
        let mut rng = rng_stream(1, 0);
        assert!(sample_params(SignalKind::DampedOsc, &dist, &mut rng).is_err());
    }

    #[test]
    fn bounded_draws_stay_inside() {
        let dist = ParamDistribution::default();
        let mut rng = rng_stream(4, 0);
        for _ in 0..5000 {
            let p = sample_params_within(SignalKind::DampedOsc, &dist, 0.995, &mut rng).unwrap();
            for (x, (_, s)) in p.free_values().iter().zip(dist.spreads(SignalKind::DampedOsc)) {
                assert!(((x - s.mean) / (3.0 * s.std)).abs() <= 0.995);
            }
        }
    }

    #[test]
    fn free_value_round_trip() {
        let p = SignalParams::from_free(SignalKind::DampedOsc, &[1e-6, 3e6, 0.1]).unwrap();
        assert_eq!(p.free_values(), vec![1e-6, 3e6, 0.1]);
        assert!(SignalParams::from_free(SignalKind::ExpDecay, &[1.0, 2.0]).is_err());
    }
}
