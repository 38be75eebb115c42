//! Model file: an autoencoder header followed by the network container.
//!
//! ```text
//! magic "LFMODEL\0" | version u32 | kind u8 | trained u8 | latent layer u32
//! grid: n_samples u64 | sample_rate f64 | t0 f64
//! mapping: count u32, then per axis: name (u32 length + utf-8) | mean f64 | spread f64
//! network container (see `nn`)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AutoencoderModel, LatentAxis, LatentMapping};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::nn::DenseNetwork;
use crate::signals::{SamplingGrid, SignalKind};

const MAGIC: &[u8; 8] = b"LFMODEL\0";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelJson {
    kind: SignalKind,
    trained: bool,
    latent_layer: usize,
    grid: SamplingGrid,
    mapping: LatentMapping,
    network: DenseNetwork,
}

impl AutoencoderModel {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = Writer::new(out);
        w.bytes(MAGIC)?;
        w.u32(VERSION)?;
        w.u8(self.kind.tag())?;
        w.u8(self.trained as u8)?;
        w.u32(self.latent_layer as u32)?;
        w.u64(self.grid.n_samples() as u64)?;
        w.f64(self.grid.sample_rate())?;
        w.f64(self.grid.t0())?;
        w.u32(self.mapping.len() as u32)?;
        for a in self.mapping.axes() {
            w.str(&a.name)?;
            w.f64(a.mean)?;
            w.f64(a.spread)?;
        }
        self.network.write_to(w.into_inner())?;
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut r = Reader::new(input);
        r.magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported model version {version} (expected {VERSION})"
            )));
        }
        let kind = SignalKind::from_tag(r.u8()?)?;
        let trained = match r.u8()? {
            0 => false,
            1 => true,
            t => return Err(Error::Format(format!("bad trained flag {t}"))),
        };
        let latent_layer = r.u32()? as usize;
        let n_samples = r.u64()? as usize;
        let grid = SamplingGrid::with_start(n_samples, r.f64()?, r.f64()?)
            .map_err(|e| Error::Format(e.to_string()))?;
        let count = r.u32()?;
        if count > 64 {
            return Err(Error::Format("mapping too long".into()));
        }
        let mut axes = Vec::with_capacity(count as usize);
        for _ in 0..count {
            axes.push(LatentAxis {
                name: r.str()?,
                mean: r.f64()?,
                spread: r.f64()?,
            });
        }
        let mapping = LatentMapping::new(kind, axes).map_err(|e| Error::Format(e.to_string()))?;
        let (network, rest) = DenseNetwork::read_from(r.into_inner())?;
        Reader::new(rest).expect_eof()?;
        AutoencoderModel::from_parts(kind, network, latent_layer, mapping, grid, trained)
            .map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        let j = ModelJson {
            kind: self.kind,
            trained: self.trained,
            latent_layer: self.latent_layer,
            grid: self.grid,
            mapping: self.mapping.clone(),
            network: self.network.clone(),
        };
        Ok(serde_json::to_string(&j)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: ModelJson = serde_json::from_str(s)?;
        let network = DenseNetwork::from_json(&serde_json::to_string(&j.network)?)?;
        let mapping = LatentMapping::new(j.kind, j.mapping.axes).map_err(|e| Error::Format(e.to_string()))?;
        AutoencoderModel::from_parts(j.kind, network, j.latent_layer, mapping, j.grid, j.trained)
            .map_err(|e| Error::Format(e.to_string()))
    }
}
