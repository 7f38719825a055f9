//! Binary checkpoint container, all integers and floats little-endian:
//!
//! ```text
//! "CSTGNNCK"  u32 version
//! u32 len, TOML training config
//! u64 seed
//! u32 count, then per region: u32 len, UTF-8 id
//! u8 scope (0 global, 1 per region), u32 regions, u32 slots, slots × f64 min, slots × f64 max
//! u32 q (0 when absent), q·q × f64 fixed graph
//! u32 count, then per parameter: u32 len, UTF-8 name, 3 × u32 shape, f64 values
//! ```

use std::path::Path;

use super::config::TrainConfig;
use crate::dataio::{EpidemicDataset, NormScope, NormStats};
use crate::diffcore::Tensor3;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::mobility::StaticGraph;
use crate::model::ModelState;

const MAGIC: &[u8; 8] = b"CSTGNNCK";
const VERSION: u32 = 1;

/// A trained model with everything needed to apply it to new windows.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub seed: u64,
    pub regions: Vec<String>,
    pub stats: NormStats,
    /// `[1, Q, Q]` neighbour graph of the static-graph variant.
    pub static_graph: Option<Tensor3>,
    pub model: ModelState,
}

impl Checkpoint {
    pub fn graph(&self) -> Option<StaticGraph> {
        self.static_graph.clone().map(|matrix| StaticGraph {
            matrix,
            warnings: vec![],
        })
    }

    /// Fails unless the dataset has the same regions in the same order.
    pub fn check_dataset(&self, ds: &EpidemicDataset) -> Result<()> {
        if ds.regions != self.regions {
            return Err(Error::Data(format!(
                "checkpoint regions {:?} differ from dataset regions {:?}",
                self.regions, ds.regions
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_str(&mut out, &self.config.to_toml());
        out.extend_from_slice(&self.seed.to_le_bytes());
        put_u32(&mut out, self.regions.len() as u32);
        for r in &self.regions {
            put_str(&mut out, r);
        }
        out.push(match self.stats.scope {
            NormScope::Global => 0,
            NormScope::PerRegion => 1,
        });
        put_u32(&mut out, self.stats.regions as u32);
        put_u32(&mut out, self.stats.min.len() as u32);
        put_f64s(&mut out, &self.stats.min);
        put_f64s(&mut out, &self.stats.max);
        match &self.static_graph {
            Some(g) => {
                put_u32(&mut out, g.shape()[1] as u32);
                put_f64s(&mut out, g.data());
            }
            None => put_u32(&mut out, 0),
        }
        put_u32(&mut out, self.model.params.len() as u32);
        for (name, value) in &self.model.params {
            put_str(&mut out, name);
            for d in value.shape() {
                put_u32(&mut out, d as u32);
            }
            put_f64s(&mut out, value.data());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(8)? != MAGIC {
            return Err(Error::format(path, "not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
        }
        let config = TrainConfig::from_toml(&r.string()?).map_err(|e| Error::format(path, e.to_string()))?;
        let seed = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let regions = (0..r.u32()?).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
        let scope = match r.take(1)?[0] {
            0 => NormScope::Global,
            1 => NormScope::PerRegion,
            s => return Err(Error::format(path, format!("unknown normalization scope {s}"))),
        };
        let stat_regions = r.u32()? as usize;
        let slots = r.u32()? as usize;
        let stats = NormStats {
            scope,
            regions: stat_regions,
            min: r.f64s(slots)?,
            max: r.f64s(slots)?,
        };
        let q = r.u32()? as usize;
        let static_graph = if q == 0 {
            None
        } else {
            Some(Tensor3::new([1, q, q], r.f64s(q * q)?)?)
        };
        let count = r.u32()?;
        let mut params = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name = r.string()?;
            let shape = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
            let values = r.f64s(shape.iter().product())?;
            params.push((name, Tensor3::new(shape, values)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::format(path, "trailing bytes after parameters"));
        }
        let model = ModelState::from_parts(config.model(regions.len()), params)
            .map_err(|e| Error::format(path, e.to_string()))?;
        Ok(Self {
            config,
            seed,
            regions,
            stats,
            static_graph,
            model,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::format(self.path, "checkpoint is truncated"));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format(self.path, "invalid UTF-8"))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).unwrap_or(usize::MAX))?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
