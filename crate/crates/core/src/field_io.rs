//! On-disk field format: a JSON header plus a sibling file of raw
//! little-endian `f64` values, node-major, component-minor, axis 0 fastest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, VectorField};

pub const DTYPE: &str = "f64le";
pub const ORDER: &str = "node-major, component-minor, axis-0 fastest";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub d: usize,
    pub n: usize,
    pub k: usize,
    pub extent: f64,
    pub dtype: String,
    pub order: String,
    /// File name of the binary payload, relative to the header.
    pub data: String,
}

impl FieldHeader {
    pub fn for_field(field: &VectorField, data: &str) -> Self {
        let g = field.grid();
        Self {
            d: g.dim(),
            n: g.n(),
            k: field.k(),
            extent: g.extent(),
            dtype: DTYPE.into(),
            order: ORDER.into(),
            data: data.into(),
        }
    }
}

/// Path of the binary payload belonging to a header path (`x.json` -> `x.bin`).
pub fn payload_path(header: &Path) -> PathBuf {
    header.with_extension("bin")
}

pub fn encode_values(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_values(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Format(format!(
            "payload length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Writes `field` as `header` (JSON) plus its sibling `.bin` payload.
pub fn write_field(field: &VectorField, header: &Path) -> Result<()> {
    let payload = payload_path(header);
    let name = payload
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Format(format!("bad header path {}", header.display())))?;
    let meta = FieldHeader::for_field(field, name);
    let mut json = serde_json::to_string_pretty(&meta)?;
    json.push('\n');
    fs::write(header, json)?;
    fs::write(&payload, encode_values(field.values()))?;
    Ok(())
}

pub fn read_field(header: &Path) -> Result<VectorField> {
    let meta: FieldHeader = serde_json::from_str(&fs::read_to_string(header)?)?;
    if meta.dtype != DTYPE {
        return Err(Error::Format(format!("unsupported dtype {}", meta.dtype)));
    }
    if meta.order != ORDER {
        return Err(Error::Format(format!("unsupported order {}", meta.order)));
    }
    let grid = GridSpec::new(meta.d, meta.n, meta.extent)?;
    let dir = header.parent().unwrap_or_else(|| Path::new("."));
    let values = decode_values(&fs::read(dir.join(&meta.data))?)?;
    VectorField::from_values(grid, meta.k, values)
}
