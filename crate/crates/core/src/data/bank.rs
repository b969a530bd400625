//! Binary feature-bank container.
//!
//! Layout (all little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "DOVEFB01"
//! 8       4     u32 n_samples
//! 12      4     u32 rows per sample
//! 16      4     u32 cols
//! 20      4*N   f32 payload, sample-major then row-major, N = n*rows*cols
//! ```

use std::path::Path;

use crate::autograd::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DOVEFB01";
const MAGIC_FAMILY: &[u8; 6] = b"DOVEFB";
const HEADER_LEN: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBank {
    n_samples: usize,
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

impl FeatureBank {
    pub fn new(n_samples: usize, rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != n_samples * rows * cols {
            return Err(Error::dim(
                "feature_bank",
                format!("{n_samples}x{rows}x{cols} needs {} values, got {}", n_samples * rows * cols, values.len()),
            ));
        }
        if let Some(offset) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { offset });
        }
        Ok(Self { n_samples, rows, cols, values })
    }

    /// Narrows `f64` values to the on-disk `f32` precision.
    pub fn from_f64(n_samples: usize, rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        Self::new(n_samples, rows, cols, values.iter().map(|v| *v as f32).collect())
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Sample `i` as a `rows x cols` tensor, upcast to `f64`.
    pub fn sample(&self, i: usize) -> Result<Tensor> {
        if i >= self.n_samples {
            return Err(Error::dim("feature_bank", format!("sample {i} out of {}", self.n_samples)));
        }
        let len = self.rows * self.cols;
        let vals = self.values[i * len..(i + 1) * len].iter().map(|v| f64::from(*v)).collect();
        Tensor::new(&[self.rows, self.cols], vals)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.values.len());
        out.extend_from_slice(MAGIC);
        for n in [self.n_samples, self.rows, self.cols] {
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..6] != MAGIC_FAMILY {
            return Err(Error::BadMagic { path: path.to_path_buf(), expected: "DOVEFB01" });
        }
        if &bytes[..8] != MAGIC {
            let found = std::str::from_utf8(&bytes[6..8]).ok().and_then(|s| s.parse().ok()).unwrap_or(u32::MAX);
            return Err(Error::Version { path: path.to_path_buf(), found });
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated { path: path.to_path_buf(), expected: HEADER_LEN, found: bytes.len() });
        }
        let read_u32 = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let (n, rows, cols) = (read_u32(8), read_u32(12), read_u32(16));
        let count = n * rows * cols;
        let expected = HEADER_LEN + 4 * count;
        if bytes.len() < expected {
            return Err(Error::Truncated { path: path.to_path_buf(), expected, found: bytes.len() });
        }
        if bytes.len() > expected {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: format!("{} trailing bytes after payload", bytes.len() - expected),
            });
        }
        let mut values = Vec::with_capacity(count);
        for (k, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::NonFiniteInFile { path: path.to_path_buf(), offset: k });
            }
            values.push(v);
        }
        Ok(Self { n_samples: n, rows, cols, values })
    }
}

pub fn write_feature_bank(path: &Path, bank: &FeatureBank) -> Result<()> {
    std::fs::write(path, bank.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_feature_bank(path: &Path) -> Result<FeatureBank> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureBank::from_bytes(&bytes, path)
}

/// Header fields only, for `inspect`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BankHeader {
    pub n_samples: usize,
    pub rows: usize,
    pub cols: usize,
}

pub fn read_header(path: &Path) -> Result<BankHeader> {
    let bank = load_feature_bank(path)?;
    Ok(BankHeader { n_samples: bank.n_samples, rows: bank.rows, cols: bank.cols })
}
