//! Deterministic run-directory artifacts: binary grids with JSON sidecars,
//! CSV slices, JSON reports, and the digest-complete manifest.
//!
//! Binary grid format: row-major (last axis fastest) 64-bit IEEE-754
//! little-endian floats, no header; the `<name>.json` sidecar carries the
//! axis metadata needed to reinterpret the flat buffer.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// One axis of a binary grid. Uniform cell-centered sampling: coordinate of
/// index i is origin + (i + 1/2) step for spacetime axes, or the bare index
/// for discrete axes (step 1, origin 0, unit "index").
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct AxisMeta {
    pub name: String,
    pub unit: String,
    pub origin: f64,
    pub step: f64,
    pub count: usize,
}

impl AxisMeta {
    pub fn spacetime(name: &str, origin: f64, step: f64, count: usize) -> Self {
        AxisMeta {
            name: name.to_string(),
            unit: "natural (mass = 1)".to_string(),
            origin,
            step,
            count,
        }
    }

    pub fn index(name: &str, count: usize) -> Self {
        AxisMeta { name: name.to_string(), unit: "index".to_string(), origin: 0.0, step: 1.0, count }
    }

    /// Cell-center coordinate of index i (equals i for index axes).
    pub fn coord(&self, i: usize) -> f64 {
        if self.unit == "index" {
            i as f64
        } else {
            self.origin + (i as f64 + 0.5) * self.step
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridSidecar {
    pub dtype: String,
    pub endianness: String,
    pub layout: String,
    pub axes: Vec<AxisMeta>,
    /// Name and unit of the stored quantity.
    pub quantity: String,
    pub unit: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub millis: u128,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub scenario_hash: String,
    pub versions: Versions,
    pub threads: usize,
    pub tolerance_scale: f64,
    pub stages: Vec<StageRecord>,
    pub files: Vec<FileEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Versions {
    pub qtp_cli: String,
    pub qtp_core: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

/// Writes artifacts into one run directory and records their digests.
pub struct RunWriter {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl RunWriter {
    pub fn new(dir: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(RunWriter { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        let path = self.dir.join(name);
        let mut f = fs::File::create(&path)?;
        f.write_all(bytes)?;
        self.files.push(FileEntry {
            path: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Binary grid (`<name>.f64`) plus its JSON sidecar (`<name>.json`).
    pub fn write_grid(
        &mut self,
        name: &str,
        axes: &[AxisMeta],
        quantity: &str,
        unit: &str,
        values: &[f64],
    ) -> std::io::Result<()> {
        let expected: usize = axes.iter().map(|a| a.count).product();
        assert_eq!(values.len(), expected, "grid length must match axis metadata");
        let mut bytes = Vec::with_capacity(values.len() * 8);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        self.write_bytes(&format!("{name}.f64"), &bytes)?;
        let sidecar = GridSidecar {
            dtype: "f64".to_string(),
            endianness: "little".to_string(),
            layout: "row-major".to_string(),
            axes: axes.to_vec(),
            quantity: quantity.to_string(),
            unit: unit.to_string(),
        };
        self.write_json(&format!("{name}.json"), &sidecar)
    }

    /// CSV slice of a 1D/2D (or higher) grid: one row per cell, header row
    /// with axis names and units, full-precision values.
    pub fn write_csv(
        &mut self,
        name: &str,
        axes: &[AxisMeta],
        quantity: &str,
        unit: &str,
        values: &[f64],
    ) -> std::io::Result<()> {
        let expected: usize = axes.iter().map(|a| a.count).product();
        assert_eq!(values.len(), expected, "grid length must match axis metadata");
        let mut text = String::new();
        let header: Vec<String> = axes
            .iter()
            .map(|a| format!("{} [{}]", a.name, a.unit))
            .chain(std::iter::once(format!("{quantity} [{unit}]")))
            .collect();
        text.push_str(&header.join(","));
        text.push('\n');
        let mut idx = vec![0usize; axes.len()];
        for &v in values {
            let row: Vec<String> = idx
                .iter()
                .zip(axes)
                .map(|(&i, a)| format!("{:.17e}", a.coord(i)))
                .chain(std::iter::once(format!("{v:.17e}")))
                .collect();
            text.push_str(&row.join(","));
            text.push('\n');
            for d in (0..axes.len()).rev() {
                idx[d] += 1;
                if idx[d] < axes[d].count {
                    break;
                }
                idx[d] = 0;
            }
        }
        self.write_bytes(&format!("{name}.csv"), text.as_bytes())
    }
}

/// Read a binary grid and its sidecar back from a run directory.
pub fn read_grid(dir: &Path, name: &str) -> std::io::Result<(GridSidecar, Vec<f64>)> {
    let sidecar: GridSidecar =
        serde_json::from_str(&fs::read_to_string(dir.join(format!("{name}.json")))?)?;
    let bytes = fs::read(dir.join(format!("{name}.f64")))?;
    if bytes.len() % 8 != 0 {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "binary grid length is not a multiple of 8 bytes",
        ));
    }
    let values: Vec<f64> =
        bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((sidecar, values))
}
