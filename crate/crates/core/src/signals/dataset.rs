use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    gen_signal, rng_stream, sample_params, sample_params_within, DampedOscParams, ExpDecayParams,
    ParamDistribution, ParamSpread, SamplingGrid, Signal, SignalKind, SignalParams, Transform,
    TRAINING_SNR,
};
use crate::codec::{Reader, Writer};
use crate::error::{invalid, Error, Result};

const MAGIC: &[u8; 8] = b"LFDATA\0\0";
const VERSION: u32 = 1;

/// Everything that determines a dataset. Generation is a pure function of it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: SignalKind,
    pub n: usize,
    pub dist: ParamDistribution,
    pub grid: SamplingGrid,
    #[serde(with = "crate::codec::extended_f64")]
    pub snr: f64,
    pub seed: u64,
    /// Redraw parameters whose latent value `(x - mean) / (3 std)` exceeds this.
    #[serde(default)]
    pub latent_bound: Option<f64>,
}

impl DatasetSpec {
    /// Training defaults: 200 exp-decay or 1000 damped-osc signals at SNR 2^20.
    pub fn training(kind: SignalKind, seed: u64) -> Self {
        Self {
            kind,
            n: match kind {
                SignalKind::ExpDecay => 200,
                SignalKind::DampedOsc => 1000,
            },
            dist: ParamDistribution::default(),
            grid: SamplingGrid::default(),
            snr: TRAINING_SNR,
            seed,
            latent_bound: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub signals: Vec<Signal>,
    pub truths: Vec<SignalParams>,
}

/// Signal `i` uses RNG stream `i` of `spec.seed`: parameters first, then noise.
pub fn make_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    if spec.n == 0 {
        return Err(invalid("dataset needs n >= 1"));
    }
    spec.dist.validate()?;
    let pairs: Result<Vec<(Signal, SignalParams)>> = (0..spec.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_stream(spec.seed, i as u64);
            let params = match spec.latent_bound {
                Some(b) => sample_params_within(spec.kind, &spec.dist, b, &mut rng)?,
                None => sample_params(spec.kind, &spec.dist, &mut rng)?,
            };
            let signal = gen_signal(&params, &spec.grid, spec.snr, &mut rng)?;
            Ok((signal, params))
        })
        .collect();
    let (signals, truths) = pairs?.into_iter().unzip();
    Ok(Dataset {
        spec: *spec,
        signals,
        truths,
    })
}

impl Dataset {
    pub fn make(spec: &DatasetSpec) -> Result<Self> {
        make_dataset(spec)
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }

    pub fn kind(&self) -> SignalKind {
        self.spec.kind
    }

    pub fn grid(&self) -> &SamplingGrid {
        &self.spec.grid
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ds: Dataset = serde_json::from_str(s)?;
        ds.check()?;
        Ok(ds)
    }

    fn check(&self) -> Result<()> {
        if self.signals.len() != self.truths.len() {
            return Err(Error::Format("signal/truth count mismatch".into()));
        }
        if self.signals.len() != self.spec.n {
            return Err(Error::Format("record count disagrees with header".into()));
        }
        for (s, t) in self.signals.iter().zip(&self.truths) {
            if s.grid() != &self.spec.grid || s.len() != self.spec.grid.n_samples() {
                return Err(Error::Format("signal grid differs from dataset grid".into()));
            }
            if t.kind() != self.spec.kind {
                return Err(Error::Format("ground truth kind differs from dataset kind".into()));
            }
        }
        Ok(())
    }

    /// Layout: magic, version, kind, n, grid, distribution, snr, seed,
    /// latent bound (NaN for none), `n` sample blocks, `n` truth records.
    /// All numbers little-endian.
    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        self.check()?;
        let mut w = Writer::new(out);
        let s = &self.spec;
        w.bytes(MAGIC)?;
        w.u32(VERSION)?;
        w.u8(s.kind.tag())?;
        w.u64(s.n as u64)?;
        w.u64(s.grid.n_samples() as u64)?;
        w.f64(s.grid.sample_rate())?;
        w.f64(s.grid.t0())?;
        for spread in [s.dist.tau, s.dist.freq, s.dist.phase] {
            w.f64(spread.mean)?;
            w.f64(spread.std)?;
            w.u8(match spread.transform {
                Transform::Identity => 0,
                Transform::AbsoluteValue => 1,
            })?;
        }
        w.f64(s.snr)?;
        w.u64(s.seed)?;
        w.f64(s.latent_bound.unwrap_or(f64::NAN))?;
        for sig in &self.signals {
            w.f64_slice(sig.samples())?;
        }
        for t in &self.truths {
            match t {
                SignalParams::ExpDecay(p) => w.f64_slice(&[p.amplitude, p.tau, p.offset])?,
                SignalParams::DampedOsc(p) => {
                    w.f64_slice(&[p.amplitude, p.tau, p.freq, p.phase, p.offset])?
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut r = Reader::new(input);
        r.magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported dataset version {version} (expected {VERSION})"
            )));
        }
        let kind = SignalKind::from_tag(r.u8()?)?;
        let n = r.u64()? as usize;
        let n_samples = r.u64()? as usize;
        let grid = SamplingGrid::with_start(n_samples, r.f64()?, r.f64()?)
            .map_err(|e| Error::Format(e.to_string()))?;
        let mut spreads = [ParamSpread::normal(0.0, 1.0); 3];
        for s in spreads.iter_mut() {
            s.mean = r.f64()?;
            s.std = r.f64()?;
            s.transform = match r.u8()? {
                0 => Transform::Identity,
                1 => Transform::AbsoluteValue,
                t => return Err(Error::Format(format!("unknown transform tag {t}"))),
            };
        }
        let dist = ParamDistribution {
            tau: spreads[0],
            freq: spreads[1],
            phase: spreads[2],
        };
        let snr = r.f64()?;
        let seed = r.u64()?;
        let bound = r.f64()?;
        let spec = DatasetSpec {
            kind,
            n,
            dist,
            grid,
            snr,
            seed,
            latent_bound: (!bound.is_nan()).then_some(bound),
        };
        if n_samples > 1 << 28 || n > 1 << 32 {
            return Err(Error::Format("header sizes out of range".into()));
        }
        let mut signals = Vec::with_capacity(n);
        for _ in 0..n {
            let samples = r.f64_vec(n_samples)?;
            signals.push(Signal::new(samples, grid).map_err(|e| Error::Format(e.to_string()))?);
        }
        let mut truths = Vec::with_capacity(n);
        for _ in 0..n {
            truths.push(match kind {
                SignalKind::ExpDecay => {
                    let v = r.f64_vec(3)?;
                    SignalParams::ExpDecay(ExpDecayParams {
                        amplitude: v[0],
                        tau: v[1],
                        offset: v[2],
                    })
                }
                SignalKind::DampedOsc => {
                    let v = r.f64_vec(5)?;
                    SignalParams::DampedOsc(DampedOscParams {
                        amplitude: v[0],
                        tau: v[1],
                        freq: v[2],
                        phase: v[3],
                        offset: v[4],
                    })
                }
            });
        }
        r.expect_eof()?;
        let ds = Dataset {
            spec,
            signals,
            truths,
        };
        ds.check()?;
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn training_defaults() {
        let exp = make_dataset(&DatasetSpec::training(SignalKind::ExpDecay, 1)).unwrap();
        assert_eq!(exp.len(), 200);
        assert!(exp.signals.iter().all(|s| s.len() == 1000));
        let osc = make_dataset(&DatasetSpec::training(SignalKind::DampedOsc, 1)).unwrap();
        assert_eq!(osc.len(), 1000);
        assert_eq!(osc.spec.snr, 2f64.powi(20));
    }

    #[test]
    fn zero_signals_rejected() {
        let mut spec = DatasetSpec::training(SignalKind::ExpDecay, 1);
        spec.n = 0;
        assert!(matches!(make_dataset(&spec), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn deterministic_generation() {
        let spec = DatasetSpec {
            n: 25,
            ..DatasetSpec::training(SignalKind::DampedOsc, 77)
        };
        let a = make_dataset(&spec).unwrap();
        let b = make_dataset(&spec).unwrap();
        assert_eq!(a, b);
        let c = make_dataset(&DatasetSpec { seed: 78, ..spec }).unwrap();
        assert_ne!(a.truths, c.truths);
    }

    #[test]
    fn binary_round_trip_and_corruption() {
        let spec = DatasetSpec {
            n: 5,
            latent_bound: Some(0.995),
            ..DatasetSpec::training(SignalKind::DampedOsc, 3)
        };
        let ds = make_dataset(&spec).unwrap();
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        assert_eq!(Dataset::read_from(&buf[..]).unwrap(), ds);

        let mut bad = buf.clone();
        bad[0] ^= 0xff;
        assert!(matches!(Dataset::read_from(&bad[..]), Err(Error::Format(_))));

        let mut bad = buf.clone();
        bad[8] = 9;
        assert!(matches!(Dataset::read_from(&bad[..]), Err(Error::Format(_))));

        assert!(matches!(
            Dataset::read_from(&buf[..buf.len() - 3]),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let spec = DatasetSpec {
            n: 3,
            ..DatasetSpec::training(SignalKind::ExpDecay, 5)
        };
        let ds = make_dataset(&spec).unwrap();
        let back = Dataset::from_json(&ds.to_json().unwrap()).unwrap();
        assert_eq!(back, ds);
    }
}
