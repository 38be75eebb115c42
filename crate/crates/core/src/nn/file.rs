//! Versioned binary container for [`DenseNetwork`].
//!
//! ```text
//! magic "LFNET\0\0\0" | version u32 | input_dim u64 | layer count u32
//! per layer: n_in u64 | n_out u64 | activation u8 | weights (row-major f64) | biases f64
//! ```
//! Everything little-endian.

use std::io::{Read, Write};

use super::{Activation, DenseLayer, DenseNetwork};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"LFNET\0\0\0";
const VERSION: u32 = 1;
const MAX_WIDTH: u64 = 1 << 24;

impl DenseNetwork {
    pub fn write_to<W: Write>(&self, out: W) -> Result<W> {
        let mut w = Writer::new(out);
        w.bytes(MAGIC)?;
        w.u32(VERSION)?;
        w.u64(self.input_dim as u64)?;
        w.u32(self.layers.len() as u32)?;
        for l in &self.layers {
            w.u64(l.n_in as u64)?;
            w.u64(l.n_out as u64)?;
            w.u8(l.activation.tag())?;
            w.f64_slice(&l.weights)?;
            w.f64_slice(&l.biases)?;
        }
        Ok(w.into_inner())
    }

    pub fn read_from<R: Read>(input: R) -> Result<(Self, R)> {
        let mut r = Reader::new(input);
        r.magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported network version {version} (expected {VERSION})"
            )));
        }
        let input_dim = r.u64()?;
        let count = r.u32()?;
        if input_dim == 0 || input_dim > MAX_WIDTH || count > 4096 {
            return Err(Error::Format("network header out of range".into()));
        }
        let mut layers = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let n_in = r.u64()?;
            let n_out = r.u64()?;
            if n_in == 0 || n_out == 0 || n_in > MAX_WIDTH || n_out > MAX_WIDTH {
                return Err(Error::Format("layer dimensions out of range".into()));
            }
            let act = Activation::from_tag(r.u8()?)?;
            let (n_in, n_out) = (n_in as usize, n_out as usize);
            let weights = r.f64_vec(n_in * n_out)?;
            let biases = r.f64_vec(n_out)?;
            layers.push(
                DenseLayer::new(n_in, n_out, weights, biases, act)
                    .map_err(|e| Error::Format(e.to_string()))?,
            );
        }
        let net = DenseNetwork::new(input_dim as usize, layers).map_err(|e| Error::Format(e.to_string()))?;
        Ok((net, r.into_inner()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses and re-validates a JSON export.
    pub fn from_json(s: &str) -> Result<Self> {
        let raw: DenseNetwork = serde_json::from_str(s)?;
        let layers = raw
            .layers
            .into_iter()
            .map(|l| DenseLayer::new(l.n_in, l.n_out, l.weights, l.biases, l.activation))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Format(e.to_string()))?;
        DenseNetwork::new(raw.input_dim, layers).map_err(|e| Error::Format(e.to_string()))
    }
}
