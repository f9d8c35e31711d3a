//! The `HRE1` split dump: a little-endian binary file holding an `n × K`
//! matrix of `f32` values and `n` signed 32-bit labels.
//!
//! ```text
//! offset  size     field
//! 0       4        magic "HRE1"
//! 4       4        n   (u32)
//! 8       4        K   (u32)
//! 12      4·n·K    values, f32, row-major
//! 12+4nK  4·n      labels, i32 (-1 = unlabeled)
//! ```
//!
//! Logit dumps store class logits (`K` = class count). Feature dumps use the
//! same layout with raw input features (`K` = input width).

use std::fmt;
use std::fs;
use std::path::Path;

use reliascore_core::sampling::sample_indices;
use reliascore_core::Matrix;

use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"HRE1";
pub const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeError {
    /// Magic or length is wrong.
    Format(String),
    /// Layout is fine but a value breaks an invariant.
    Value(String),
}

impl fmt::Display for DecodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecodeError::Format(m) | DecodeError::Value(m) => f.write_str(m),
        }
    }
}

/// In-memory contents of one dump file.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDump {
    cols: usize,
    values: Vec<f32>,
    labels: Vec<i32>,
}

impl SplitDump {
    /// Validates shape, finiteness and `label >= -1`. The upper label bound
    /// depends on the class count and is checked by [`check_label_bound`].
    ///
    /// [`check_label_bound`]: SplitDump::check_label_bound
    pub fn new(cols: usize, values: Vec<f32>, labels: Vec<i32>) -> Result<Self> {
        if values.len() != labels.len() * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} rows of {} columns",
                values.len(),
                labels.len(),
                cols
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Value(format!("non-finite value at row {}", i / cols.max(1))));
        }
        if let Some(&l) = labels.iter().find(|&&l| l < -1) {
            return Err(Error::Value(format!("label {l} below -1")));
        }
        if cols == 0 && !labels.is_empty() {
            return Err(Error::ShapeMismatch("rows with zero columns".into()));
        }
        Ok(Self { cols, values, labels })
    }

    /// Converts a `f64` matrix; values that do not fit in `f32` are rejected.
    pub fn from_matrix(matrix: &Matrix, labels: &[i32]) -> Result<Self> {
        if matrix.rows() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} rows but {} labels",
                matrix.rows(),
                labels.len()
            )));
        }
        let values = matrix.as_slice().iter().map(|&v| v as f32).collect();
        Self::new(matrix.cols(), values, labels.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    /// Values widened to `f64`.
    pub fn to_matrix(&self) -> Matrix {
        let data = self.values.iter().map(|&v| f64::from(v)).collect();
        Matrix::new(self.rows(), self.cols, data).expect("shape checked on construction")
    }

    /// True when every label is the `-1` sentinel (and there is at least one row).
    pub fn is_unlabeled(&self) -> bool {
        !self.labels.is_empty() && self.labels.iter().all(|&l| l == -1)
    }

    pub fn has_unlabeled(&self) -> bool {
        self.labels.contains(&-1)
    }

    pub fn check_label_bound(&self, num_classes: usize) -> Result<()> {
        match self.labels.iter().find(|&&l| l >= 0 && l as usize >= num_classes) {
            Some(l) => Err(Error::Value(format!("label {l} outside [-1, {}]", num_classes as i64 - 1))),
            None => Ok(()),
        }
    }

    /// Rows at `indices`, in order.
    pub fn select(&self, indices: &[usize]) -> SplitDump {
        let mut values = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        SplitDump {
            cols: self.cols,
            values,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Seeded uniform subset of at most `cap` rows, preserving row pairing.
    /// Returns an unchanged copy when `n <= cap`.
    pub fn subsample(&self, cap: usize, seed: u64) -> Result<SplitDump> {
        if cap == 0 {
            return Err(Error::Value("subsample cap must be at least 1".into()));
        }
        if self.rows() <= cap {
            return Ok(self.clone());
        }
        Ok(self.select(&sample_indices(self.rows(), cap, seed)))
    }

    pub fn concat(parts: &[&SplitDump]) -> Result<SplitDump> {
        let cols = parts.first().map_or(0, |p| p.cols);
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.cols != cols {
                return Err(Error::ShapeMismatch(format!("cannot concatenate {} and {} columns", cols, p.cols)));
            }
            values.extend_from_slice(&p.values);
            labels.extend_from_slice(&p.labels);
        }
        Ok(SplitDump { cols, values, labels })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.values.len() + 4 * self.labels.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&(self.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        out
    }

    /// Parses a dump, separating layout violations from bad values.
    pub fn decode(bytes: &[u8]) -> std::result::Result<SplitDump, DecodeError> {
        if bytes.len() < HEADER_LEN {
            return Err(DecodeError::Format(format!("file is {} bytes, shorter than the 12-byte header", bytes.len())));
        }
        if bytes[..4] != MAGIC {
            return Err(DecodeError::Format(format!("bad magic {:?}", &bytes[..4])));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let (n, k) = (word(4) as u64, word(8) as u64);
        let expected = HEADER_LEN as u64 + 4 * n * k + 4 * n;
        if bytes.len() as u64 != expected {
            return Err(DecodeError::Format(format!(
                "length {} != 12 + 4nK + 4n = {expected} (n={n}, K={k})",
                bytes.len()
            )));
        }
        let (n, k) = (n as usize, k as usize);
        let body = &bytes[HEADER_LEN..];
        let (value_bytes, label_bytes) = body.split_at(4 * n * k);
        let values: Vec<f32> = value_bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let labels: Vec<i32> = label_bytes
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        SplitDump::new(k, values, labels).map_err(|e| match e {
            Error::Value(msg) => DecodeError::Value(msg),
            other => DecodeError::Format(other.to_string()),
        })
    }

    /// Reads a dump without checking the upper label bound.
    pub fn read(path: &Path) -> Result<SplitDump> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        SplitDump::decode(&bytes).map_err(|e| match e {
            DecodeError::Format(reason) => Error::Format {
                path: path.to_path_buf(),
                reason,
            },
            DecodeError::Value(msg) => Error::Value(format!("{}: {msg}", path.display())),
        })
    }

    /// Reads a logit dump: labels must lie in `[-1, K-1]`.
    pub fn read_logits(path: &Path) -> Result<SplitDump> {
        let dump = SplitDump::read(path)?;
        if let Err(Error::Value(msg)) = dump.check_label_bound(dump.cols) {
            return Err(Error::Value(format!("{}: {msg}", path.display())));
        }
        Ok(dump)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::write(path, e))
    }
}

/// Writes logits and labels as a dump file.
pub fn write_split(path: &Path, logits: &Matrix, labels: &[i32]) -> Result<()> {
    SplitDump::from_matrix(logits, labels)?.write(path)
}
