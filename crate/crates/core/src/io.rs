//! Raw little-endian `f64` arrays with JSON sidecars.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Serialize};

use crate::error::{Error, Result};

pub fn f64_to_le_bytes(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn f64_from_le_bytes(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::Metadata(format!(
            "array file length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn write_f64_le(path: &Path, values: &[f64]) -> Result<()> {
    fs::write(path, f64_to_le_bytes(values))?;
    Ok(())
}

/// Reads an array and checks its length.
pub fn read_f64_le(path: &Path, expected_len: usize) -> Result<Vec<f64>> {
    let values = f64_from_le_bytes(&fs::read(path)?)?;
    if values.len() != expected_len {
        return Err(Error::Metadata(format!(
            "{}: expected {expected_len} values, found {}",
            path.display(),
            values.len()
        )));
    }
    Ok(values)
}

/// `<path>.json` next to an array file `<path>` (extension replaced).
pub fn sidecar_path(array_path: &Path) -> PathBuf {
    array_path.with_extension("json")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Metadata(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Metadata(format!("{}: {e}", path.display())))
}
