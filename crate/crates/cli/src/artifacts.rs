//! Run directories: array files with sidecars, JSON reports and a checksummed manifest.

use std::fs;
use std::path::{Path, PathBuf};

use hmc_smoother::io::{f64_to_le_bytes, read_f64_le, sidecar_path};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};
use crate::experiment::StageTiming;

pub const MANIFEST: &str = "manifest.json";
pub const ARRAY_LAYOUT: &str = "f64 little-endian, row-major";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayMeta {
    pub rows: usize,
    pub cols: usize,
    pub layout: String,
    pub description: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub mode: Option<String>,
    pub config_hash: String,
    pub seed: u64,
    pub timings: Vec<StageTiming>,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> CliResult<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }

    pub fn timing(&self, stage: &str) -> Option<f64> {
        self.timings.iter().find(|t| t.stage == stage).map(|t| t.seconds)
    }

    pub fn total_seconds(&self) -> f64 {
        self.timings.iter().map(|t| t.seconds).sum()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects the files written into one output directory.
pub struct RunDir {
    dir: PathBuf,
    files: Vec<String>,
}

impl RunDir {
    pub fn create(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    /// Registers a file written by someone else.
    pub fn register(&mut self, name: &str) {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.register(name);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Rows of equal length as a row-major array plus a JSON sidecar.
    pub fn write_rows(&mut self, name: &str, rows: &[DVector<f64>], description: &str, seed: u64) -> CliResult<()> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(CliError::Input(format!("{name}: rows of unequal length")));
        }
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        self.write_bytes(name, &f64_to_le_bytes(&flat))?;
        let meta = ArrayMeta {
            rows: rows.len(),
            cols,
            layout: ARRAY_LAYOUT.into(),
            description: description.into(),
            seed,
        };
        let side = sidecar_path(Path::new(name));
        self.write_json(&side.to_string_lossy(), &meta)
    }

    pub fn write_vector(&mut self, name: &str, v: &DVector<f64>, description: &str, seed: u64) -> CliResult<()> {
        self.write_rows(name, std::slice::from_ref(v), description, seed)
    }

    /// Writes `manifest.json` listing every registered file with its checksum.
    pub fn finish(self, command: &str, mode: Option<&str>, config_hash: &str, seed: u64, timings: Vec<StageTiming>) -> CliResult<RunManifest> {
        let mut names = self.files.clone();
        names.sort();
        let mut files = Vec::with_capacity(names.len());
        for name in names {
            let bytes = fs::read(self.dir.join(&name))?;
            files.push(FileEntry {
                sha256: sha256_hex(&bytes),
                bytes: bytes.len() as u64,
                path: name,
            });
        }
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            mode: mode.map(str::to_string),
            config_hash: config_hash.into(),
            seed,
            timings,
            files,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Input(e.to_string()))?;
        text.push('\n');
        fs::write(self.dir.join(MANIFEST), text)?;
        Ok(manifest)
    }
}

pub fn read_rows(path: &Path) -> CliResult<Vec<DVector<f64>>> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| CliError::Input(format!("{}: {e}", side.display())))?;
    let meta: ArrayMeta = serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", side.display())))?;
    if meta.layout != ARRAY_LAYOUT {
        return Err(CliError::Input(format!("{}: unsupported layout '{}'", side.display(), meta.layout)));
    }
    let flat = read_f64_le(path, meta.rows * meta.cols)?;
    Ok(flat.chunks(meta.cols.max(1)).take(meta.rows).map(DVector::from_column_slice).collect())
}

pub fn read_vector(path: &Path) -> CliResult<DVector<f64>> {
    let mut rows = read_rows(path)?;
    if rows.len() != 1 {
        return Err(CliError::Input(format!("{}: expected one row, found {}", path.display(), rows.len())));
    }
    Ok(rows.remove(0))
}
