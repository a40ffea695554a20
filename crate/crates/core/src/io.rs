//! File formats.
//!
//! Tensor files (`.sint`) are laid out as
//!
//! ```text
//! b"SINT1\n" | u32 LE header length | UTF-8 JSON header | LE payload
//! ```
//!
//! with the header `{"dtype":"f32"|"f64","shape":[...],"order":"row-major"}`.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::DatasetKind;
use crate::tensor::DType;

pub const MAGIC: &[u8; 6] = b"SINT1\n";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dtype: DType,
    shape: Vec<usize>,
    order: String,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorFile {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl TensorFile {
    pub fn encode(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            dtype: self.data.dtype(),
            shape: self.shape.clone(),
            order: "row-major".into(),
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(10 + header.len() + self.data.len() * self.data.dtype().size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let rest = bytes.strip_prefix(MAGIC.as_slice()).ok_or("missing SINT1 magic")?;
        if rest.len() < 4 {
            return Err("truncated header length".into());
        }
        let hlen = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
        let rest = &rest[4..];
        if rest.len() < hlen {
            return Err("truncated header".into());
        }
        let header: Header = serde_json::from_slice(&rest[..hlen]).map_err(|e| format!("header: {e}"))?;
        if header.order != "row-major" {
            return Err(format!("unsupported order {:?}", header.order));
        }
        let payload = &rest[hlen..];
        let n: usize = header.shape.iter().product();
        let width = header.dtype.size();
        if payload.len() != n * width {
            return Err(format!("payload holds {} bytes, shape {:?} needs {}", payload.len(), header.shape, n * width));
        }
        let data = match header.dtype {
            DType::F32 => {
                TensorData::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
            }
            DType::F64 => {
                TensorData::F64(payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
            }
        };
        Ok(TensorFile { shape: header.shape, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|msg| Error::Format { path: path.to_path_buf(), msg })
    }
}

pub fn write_tensor_f64(path: &Path, shape: &[usize], data: &[f64]) -> Result<()> {
    TensorFile { shape: shape.to_vec(), data: TensorData::F64(data.to_vec()) }.write(path)
}

/// Reads any tensor file, widening f32 payloads.
pub fn read_tensor_f64(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let f = TensorFile::read(path)?;
    Ok((f.shape, f.data.to_f64()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Parses JSON; schema violations come back as [`Error::Config`] naming the field.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub kind: DatasetKind,
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    pub n_angles: Option<usize>,
    pub images: Vec<String>,
    pub sinograms: Vec<String>,
}

impl DatasetManifest {
    /// Directory containing the manifest's files, given the manifest path.
    pub fn base_dir(path: &Path) -> PathBuf {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgmNormalization {
    pub min: f64,
    pub max: f64,
}

/// 8-bit binary PGM (P5), min-max normalized; writes the normalization to
/// `<path>.json`.
pub fn write_pgm(path: &Path, rows: usize, cols: usize, values: &[f64]) -> Result<PgmNormalization> {
    if values.len() != rows * cols {
        return Err(Error::contract("write_pgm", format!("{} values for {rows}x{cols}", values.len())));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if max > min { max - min } else { 1.0 };
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| (((v - min) / span) * 255.0).round().clamp(0.0, 255.0) as u8));
    std::fs::write(path, out).map_err(|e| Error::io(path, e))?;
    let norm = PgmNormalization { min, max };
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".json");
    write_json(Path::new(&sidecar), &norm)?;
    Ok(norm)
}
