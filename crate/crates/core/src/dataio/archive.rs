//! Single-file dataset container.
//!
//! Layout (little-endian): the 8-byte magic, a `u32` version, a `u32`
//! header length, a UTF-8 JSON header with the region ids, start date,
//! populations and day count, then the `T·Q·3` compartment counts as `f64`.

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::EpidemicDataset;
use crate::diffcore::Tensor3;
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const ARCHIVE_MAGIC: &[u8; 8] = b"CSTGNNDS";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    regions: Vec<String>,
    start: NaiveDate,
    days: usize,
    population: Vec<f64>,
    summary: DatasetSummary,
}

/// Size and value statistics over every count in the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub shape: [usize; 3],
    pub first_date: NaiveDate,
    pub last_date: NaiveDate,
    pub max: f64,
    pub min: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl EpidemicDataset {
    pub fn summary(&self) -> DatasetSummary {
        let data = self.sir.data();
        let n = data.len() as f64;
        let mean = data.iter().sum::<f64>() / n;
        let var = data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        DatasetSummary {
            shape: self.sir.shape(),
            first_date: self.start,
            last_date: self.date(self.days() - 1),
            max: data.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            min: data.iter().copied().fold(f64::INFINITY, f64::min),
            mean,
            std: var.sqrt(),
        }
    }

    pub fn to_archive_bytes(&self) -> Vec<u8> {
        let header = Header {
            regions: self.regions.clone(),
            start: self.start,
            days: self.days(),
            population: self.population.clone(),
            summary: self.summary(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + self.sir.len() * 8);
        out.extend_from_slice(ARCHIVE_MAGIC);
        out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in self.sir.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_archive_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::format(path, msg);
        if bytes.len() < 16 || &bytes[..8] != ARCHIVE_MAGIC {
            return Err(bad("not a dataset archive"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != ARCHIVE_VERSION {
            return Err(bad(&format!("unsupported archive version {version}")));
        }
        let len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(16..16 + len).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(&format!("header: {e}")))?;
        let q = header.regions.len();
        let payload = &bytes[16 + len..];
        if payload.len() != header.days * q * 3 * 8 {
            return Err(bad("payload length does not match header"));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        EpidemicDataset::new(
            header.regions,
            header.start,
            Tensor3::new([header.days, q, 3], data)?,
            header.population,
        )
    }
}

pub fn save_archive(ds: &EpidemicDataset, path: &Path) -> Result<()> {
    write_atomic(path, &ds.to_archive_bytes())
}

pub fn load_archive(path: &Path) -> Result<EpidemicDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    EpidemicDataset::from_archive_bytes(&bytes, path)
}
