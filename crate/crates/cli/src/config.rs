//! JSON run configuration. Every key is optional; command-line flags override
//! values from the file, and the file overrides built-in defaults.

use std::path::Path;

use serde::Deserialize;

use crate::units::Quantity;
use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub kind: Option<String>,

    // Sampling grid.
    pub n_samples: Option<usize>,
    pub sample_rate: Option<Quantity>,

    // Data generation.
    pub n: Option<usize>,
    pub snr: Option<Quantity>,
    pub tau_mean: Option<Quantity>,
    pub tau_std: Option<Quantity>,
    pub freq_mean: Option<Quantity>,
    pub freq_std: Option<Quantity>,
    pub phase_mean: Option<Quantity>,
    pub phase_std: Option<Quantity>,

    // Training.
    pub datasets: Option<usize>,
    pub reps: Option<usize>,
    pub stage_epochs: Option<[usize; 3]>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub signals_per_dataset: Option<usize>,
    pub validation_fraction: Option<f64>,
    pub latent_bound: Option<f64>,
    pub input_init_gain: Option<f64>,
    pub stages: Option<String>,

    // Evaluation.
    pub n_per_point: Option<usize>,
    pub snrs: Option<Vec<Quantity>>,
    pub tau: Option<Quantity>,
    pub freq: Option<Quantity>,
    pub phase: Option<Quantity>,
    pub feature: Option<String>,
    pub repetitions: Option<usize>,
    pub warmup: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

/// Flag value, else config value, else default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// As [`pick`] for quantities read from the config file.
pub fn pick_q(flag: Option<f64>, file: Option<Quantity>, default: f64) -> f64 {
    flag.or(file.map(|q| q.0)).unwrap_or(default)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_all_defaults() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert!(c.seed.is_none() && c.snr.is_none() && c.stage_epochs.is_none());
    }

    #[test]
    fn unknown_key_is_named() {
        let e = serde_json::from_str::<RunConfig>(r#"{"sed": 3}"#).unwrap_err();
        assert!(e.to_string().contains("sed"), "{e}");
    }

    #[test]
    fn quantities_accept_units() {
        let c: RunConfig = serde_json::from_str(r#"{"tau_mean": "1us", "tau_std": 0.5e-6, "snrs": ["2^5", 64]}"#).unwrap();
        assert_eq!(c.tau_mean, Some(Quantity(1e-6)));
        assert_eq!(c.tau_std, Some(Quantity(0.5e-6)));
        assert_eq!(c.snrs.unwrap(), vec![Quantity(32.0), Quantity(64.0)]);
        assert_eq!(pick(None, Some(3), 1), 3);
        assert_eq!(pick(Some(2), Some(3), 1), 2);
    }
}
