//! Parameter estimation of sampled decaying signals from the latent space of
//! dense autoencoder networks, together with the reference estimators
//! (least squares, FFT, Cramér-Rao bound) used to judge it.

mod codec;
pub mod error;
pub mod autoencoder;
pub mod baselines;
pub mod eval;
pub mod nn;
pub mod signals;

pub use error::{Error, Result};
