use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use latentfit::autoencoder::LatentMapping;
use latentfit::baselines::fit_signal;
use latentfit::eval::{mean_std, reference_params};
use latentfit::nn::{Activation, DenseNetwork};
use latentfit::signals::{
    clean_signal, gen_signal, make_dataset, noise_sigma, rng_stream, DampedOscParams, DatasetSpec, ExpDecayParams,
    ParamDistribution, ParamSpread, SamplingGrid, SignalKind, SignalParams,
};

fn phi(x: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().cdf(x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn noise_has_the_requested_variance(log2_snr in 1.0f64..20.0, amp in 0.2f64..5.0, seed in any::<u64>()) {
        let snr = 2f64.powf(log2_snr);
        let grid = SamplingGrid::new(4000, 200e6).unwrap();
        let p = SignalParams::ExpDecay(ExpDecayParams { amplitude: amp, tau: 1e-6, offset: 0.1 });
        let clean = clean_signal(&p, &grid).unwrap();
        let noisy = gen_signal(&p, &grid, snr, &mut rng_stream(seed, 0)).unwrap();
        let resid: Vec<f64> = noisy.samples().iter().zip(clean.samples()).map(|(a, b)| a - b).collect();
        let s = mean_std(&resid);
        let want = (amp / snr).sqrt();
        prop_assert!((noise_sigma(snr, amp) / want - 1.0).abs() < 1e-12);
        // 4000 samples: the sample std is within ~5 standard errors of sigma.
        prop_assert!((s.std / want - 1.0).abs() < 5.0 / (2.0 * 4000f64).sqrt(), "{} vs {}", s.std, want);
    }

    #[test]
    fn latent_mapping_inverts(tau in 1e-8f64..3e-6, freq in 2.5e6f64..3.5e6, phase in -0.5f64..0.5) {
        let dist = ParamDistribution::default();
        for p in [
            SignalParams::ExpDecay(ExpDecayParams::new(tau)),
            SignalParams::DampedOsc(DampedOscParams::new(tau, freq, phase)),
        ] {
            let m = LatentMapping::from_distribution(p.kind(), &dist).unwrap();
            let z = m.to_latent(&p).unwrap();
            // Oracle: (x - mean) / (3 std) per axis.
            let spreads = dist.spreads(p.kind());
            for ((zi, x), (_, s)) in z.iter().zip(p.free_values()).zip(&spreads) {
                prop_assert!((zi - (x - s.mean) / (3.0 * s.std)).abs() < 1e-12);
            }
            let back = m.from_latent(&z).unwrap().free_values();
            for (a, b) in back.iter().zip(p.free_values()) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-9), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn tanh_networks_stay_in_range(seed in any::<u64>(), scale in 0.0f64..1e3) {
        let mut rng = rng_stream(seed, 0);
        let net = DenseNetwork::glorot(&[20, 7, 3], Activation::Tanh, &[], &mut rng).unwrap();
        let x: Vec<f64> = (0..20).map(|i| scale * ((i as f64) - 9.5)).collect();
        let y = net.predict(&x).unwrap();
        prop_assert!(y.iter().all(|v| v.abs() <= 1.0));
    }
}

#[test]
fn fold_fraction_and_folded_mean() {
    let n = 400_000;
    let mut rng = rng_stream(21, 0);
    let raw = ParamSpread::normal(1e-6, 0.5e-6);
    let negative = (0..n).filter(|_| raw.draw(&mut rng) < 0.0).count() as f64 / n as f64;
    let want = phi(-2.0);
    assert!((want - 0.0228).abs() < 1e-4);
    let se = (want * (1.0 - want) / n as f64).sqrt();
    assert!((negative - want).abs() < 4.0 * se, "{negative} vs {want}");

    let folded = ParamSpread::folded(1e-6, 0.5e-6);
    let draws: Vec<f64> = (0..n).map(|_| folded.draw(&mut rng)).collect();
    let (mu, s) = (1e-6f64, 0.5e-6f64);
    let mean = mu * (1.0 - 2.0 * phi(-mu / s)) + s * (2.0 / std::f64::consts::PI).sqrt() * (-mu * mu / (2.0 * s * s)).exp();
    assert!((mean - 1.0085e-6).abs() < 1e-10);
    let m = mean_std(&draws);
    assert!((m.mean - mean).abs() < 4.0 * m.std / (n as f64).sqrt(), "{} vs {mean}", m.mean);
    assert!(draws.iter().all(|&t| t >= 0.0));
}

#[test]
fn training_parameters_follow_the_distribution() {
    let spec = DatasetSpec { n: 4000, ..DatasetSpec::training(SignalKind::DampedOsc, 22) };
    let data = make_dataset(&spec).unwrap();
    let f: Vec<f64> = data.truths.iter().map(|t| t.free_values()[1]).collect();
    let s = mean_std(&f);
    assert!((s.mean - 3e6).abs() < 4.0 * 0.1e6 / 4000f64.sqrt());
    assert!((s.std / 0.1e6 - 1.0).abs() < 0.05);
}

fn median(mut v: Vec<usize>) -> f64 {
    v.sort_unstable();
    let n = v.len();
    (v[(n - 1) / 2] + v[n / 2]) as f64 / 2.0
}

#[test]
fn spectral_seeding_speeds_up_oscillation_fits() {
    let grid = SamplingGrid::default();
    let dist = ParamDistribution::default();
    let generic = SignalParams::DampedOsc(DampedOscParams::new(dist.tau.mean, dist.freq.mean, dist.phase.mean));
    let (mut seeded, mut unseeded) = (Vec::new(), Vec::new());
    for i in 0..100 {
        let mut rng = rng_stream(23, i);
        let truth = latentfit::signals::sample_params_within(SignalKind::DampedOsc, &dist, 0.995, &mut rng).unwrap();
        let s = gen_signal(&truth, &grid, 2f64.powi(9), &mut rng).unwrap();
        seeded.push(fit_signal(SignalKind::DampedOsc, &s, None).unwrap().iterations);
        unseeded.push(match fit_signal(SignalKind::DampedOsc, &s, Some(&generic)) {
            Ok(r) if r.converged => r.iterations,
            _ => 200,
        });
    }
    let (a, b) = (median(seeded), median(unseeded));
    println!("median LM iterations: seeded {a}, generic start {b}");
    assert!(a < b, "seeded {a} vs generic {b}");
}

#[test]
fn least_squares_is_unbiased_at_moderate_snr() {
    let grid = SamplingGrid::default();
    for kind in [SignalKind::ExpDecay, SignalKind::DampedOsc] {
        let truth = reference_params(kind);
        let est: Vec<f64> = (0..300)
            .map(|i| {
                let s = gen_signal(&truth, &grid, 2f64.powi(9), &mut rng_stream(24, i)).unwrap();
                fit_signal(kind, &s, None).unwrap().params.tau()
            })
            .collect();
        let m = mean_std(&est);
        let se = m.std / (est.len() as f64).sqrt();
        assert!((m.mean - truth.tau()).abs() < 4.0 * se, "{kind}: {} vs {}", m.mean, truth.tau());
    }
}
