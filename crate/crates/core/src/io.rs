//! Binary tensor files and dataset manifests.
//!
//! Tensor layout, all little-endian:
//!
//! | bytes      | content                         |
//! |------------|---------------------------------|
//! | 4          | magic `MSST`                    |
//! | 4          | version, `u32` = 1              |
//! | 4          | d, `u32`                        |
//! | 4          | R, `u32`                        |
//! | 8·d        | cells per axis, `u64`           |
//! | 8·∏ cells  | `f64` payload, last axis fastest |

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{MssError, Result};
use crate::field::{Provenance, TensorField};
use crate::geometry::Geometry;

pub const MAGIC: [u8; 4] = *b"MSST";
pub const VERSION: u32 = 1;

fn format_err(path: &Path, reason: impl Into<String>) -> MssError {
    MssError::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Serializes a field to the byte layout above.
pub fn encode_tensor(field: &TensorField<f64>) -> Vec<u8> {
    let shape = field.values.shape();
    let mut out = Vec::with_capacity(16 + 8 * shape.len() + 8 * field.values.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    out.extend_from_slice(&field.geometry.resolution.to_le_bytes());
    for &n in shape {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for v in field.values.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<TensorField<f64>> {
    if bytes.len() < 16 {
        return Err(format_err(path, format!("header truncated at {} bytes", bytes.len())));
    }
    if bytes[0..4] != MAGIC {
        return Err(format_err(path, format!("bad magic {:?}", &bytes[0..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        // a byte-swapped header shows up here as 0x01000000
        return Err(format_err(
            path,
            format!("version mismatch: expected {VERSION}, found {version} (big-endian files are not supported)"),
        ));
    }
    let d = word(8) as usize;
    let resolution = word(12);
    if d == 0 || d > 8 {
        return Err(format_err(path, format!("unsupported dimension d = {d}")));
    }
    let header = 16 + 8 * d;
    if bytes.len() < header {
        return Err(format_err(path, "header truncated in cell counts"));
    }
    let mut shape = Vec::with_capacity(d);
    for j in 0..d {
        let at = 16 + 8 * j;
        let n = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let n = usize::try_from(n).map_err(|_| format_err(path, "geometry overflow"))?;
        if n == 0 || n % 2 != 0 {
            return Err(format_err(path, format!("cell count {n} on axis {j} must be even and positive")));
        }
        shape.push(n);
    }
    if shape.iter().any(|&n| n != shape[0]) {
        return Err(format_err(path, format!("anisotropic cell counts {shape:?} are not supported")));
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .and_then(|c| c.checked_mul(8).map(|_| c))
        .ok_or_else(|| format_err(path, "geometry overflow"))?;
    let payload = &bytes[header..];
    if payload.len() < count * 8 {
        return Err(format_err(
            path,
            format!("truncated payload: {} of {} bytes", payload.len(), count * 8),
        ));
    }
    if payload.len() > count * 8 {
        return Err(format_err(path, "trailing bytes after payload"));
    }
    if resolution == 0 {
        return Err(format_err(path, "resolution must be positive"));
    }
    let half_width = shape[0] as f64 / (2.0 * resolution as f64);
    let geometry = Geometry {
        d,
        half_width,
        resolution,
    };
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let values = ArrayD::from_shape_vec(IxDyn(&shape), values).expect("shape checked");
    // L = 2LR/(2R) may be ≤ 1 for pattern tables, so skip Geometry::validate here.
    if values.iter().any(|v| !v.is_finite()) {
        return Err(format_err(path, "payload contains non-finite values"));
    }
    Ok(TensorField {
        geometry,
        values,
        provenance: Provenance::External,
    })
}

pub fn read_tensor(path: &Path) -> Result<TensorField<f64>> {
    let bytes = fs::read(path).map_err(|source| MssError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_tensor(&bytes, path)
}

pub fn write_tensor(field: &TensorField<f64>, path: &Path) -> Result<()> {
    fs::write(path, encode_tensor(field)).map_err(|source| MssError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<crate::simulate::GroundTruth>,
}

/// A dataset: tensor files sharing one geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub geometry: Geometry,
    pub entries: Vec<ManifestEntry>,
    /// Seeds used to generate the data, outermost first.
    #[serde(default)]
    pub seed_lineage: Vec<u64>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|source| MssError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| MssError::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text).map_err(|source| MssError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads every referenced tensor (paths relative to `base_dir`), checking geometry.
    pub fn load_tensors(&self, base_dir: &Path) -> Result<Vec<TensorField<f64>>> {
        self.geometry.validate()?;
        self.entries
            .iter()
            .map(|e| {
                let path = base_dir.join(&e.path);
                if !path.exists() {
                    return Err(MssError::invalid(format!(
                        "manifest references missing file {}",
                        path.display()
                    )));
                }
                let mut field = read_tensor(&path)?;
                if !field.geometry.matches(&self.geometry) {
                    return Err(MssError::geometry(format!(
                        "{} has geometry {:?}, manifest says {:?}",
                        path.display(),
                        field.geometry,
                        self.geometry
                    )));
                }
                field.provenance = e.provenance.clone();
                Ok(field)
            })
            .collect()
    }
}
