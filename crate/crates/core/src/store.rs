//! Embedding tables and the EMBT on-disk format.
//!
//! An EMBT file is a little-endian header followed by a dense row-major
//! `f32` matrix:
//!
//! | bytes | field                        |
//! |-------|------------------------------|
//! | 4     | magic `"EMBT"`               |
//! | 4     | version `u32` = 1            |
//! | 8     | row count `u64`              |
//! | 4     | dim `u32`                    |
//! | 1     | dtype `u8` = 0 (`f32` LE)    |
//! | 3     | reserved, zero               |
//!
//! Row metadata lives in a JSONL sidecar, one object per row, in row order.
//! Every row is L2-normalized when a table is constructed, so cosine
//! similarity downstream is a plain dot product.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector;

pub const MAGIC: &[u8; 4] = b"EMBT";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowMeta {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<u32>,
}

impl RowMeta {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            labels: None,
            fold: None,
        }
    }

    pub fn with_labels<I, S>(mut self, labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.labels = Some(labels.into_iter().map(Into::into).collect());
        self
    }

    pub fn with_fold(mut self, fold: u32) -> Self {
        self.fold = Some(fold);
        self
    }

    pub fn has_label(&self, label: &str) -> bool {
        self.labels
            .as_deref()
            .is_some_and(|ls| ls.iter().any(|l| l == label))
    }

    /// The single ground-truth label, if the row carries exactly one.
    pub fn single_label(&self) -> Option<&str> {
        match self.labels.as_deref() {
            Some([only]) => Some(only.as_str()),
            _ => None,
        }
    }
}

/// An immutable matrix of unit-norm rows with aligned metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    data: Vec<f32>,
    meta: Vec<RowMeta>,
}

impl EmbeddingTable {
    /// Builds a table from raw row-major values, normalizing every row.
    pub fn new(dim: usize, mut data: Vec<f32>, meta: Vec<RowMeta>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Format("dim must be positive".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::Format(format!(
                "{} values do not form rows of dim {dim}",
                data.len()
            )));
        }
        let rows = data.len() / dim;
        if rows != meta.len() {
            return Err(Error::Consistency(format!(
                "matrix has {rows} rows but metadata has {} entries",
                meta.len()
            )));
        }
        let mut seen = HashSet::with_capacity(meta.len());
        for m in &meta {
            if m.id.is_empty() {
                return Err(Error::Consistency("empty row id".into()));
            }
            if !seen.insert(m.id.as_str()) {
                return Err(Error::Consistency(format!("duplicate id {:?}", m.id)));
            }
        }
        for (row, m) in data.chunks_exact_mut(dim).zip(&meta) {
            if let Some(x) = row.iter().find(|x| !x.is_finite()) {
                return Err(Error::Format(format!(
                    "non-finite component {x} in row {:?}",
                    m.id
                )));
            }
            if !vector::normalize_in_place(row) {
                return Err(Error::DegenerateVector { id: m.id.clone() });
            }
        }
        Ok(Self { dim, data, meta })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R], meta: Vec<RowMeta>) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(dim * rows.len());
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(dim, data, meta)
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(dim, Vec::new(), Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn meta(&self) -> &[RowMeta] {
        &self.meta
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.meta.iter().map(|m| m.id.as_str())
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.meta.iter().position(|m| m.id == id)
    }

    /// Copies the given rows (in the given order) into a new table.
    ///
    /// Rows are already unit-norm, so no re-normalization happens.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        let mut meta = Vec::with_capacity(indices.len());
        let mut seen = HashSet::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Bounds(format!(
                    "row {i} out of range for table of {} rows",
                    self.len()
                )));
            }
            if !seen.insert(i) {
                return Err(Error::Consistency(format!("row {i} selected twice")));
            }
            data.extend_from_slice(self.row(i));
            meta.push(self.meta[i].clone());
        }
        Ok(Self {
            dim: self.dim,
            data,
            meta,
        })
    }

    pub fn check_dim(&self, other: &EmbeddingTable) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        Ok(())
    }

    /// Largest deviation of any row norm from 1.
    pub fn max_norm_error(&self) -> f64 {
        self.rows()
            .map(|r| (vector::norm(r) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// A decoded EMBT payload.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMatrix {
    pub dim: usize,
    pub count: usize,
    pub data: Vec<f32>,
}

pub fn encode_embt(dim: usize, data: &[f32]) -> Result<Vec<u8>> {
    if dim == 0 || !data.len().is_multiple_of(dim) {
        return Err(Error::Format(format!(
            "cannot encode {} values with dim {dim}",
            data.len()
        )));
    }
    let dim32 = u32::try_from(dim).map_err(|_| Error::Format(format!("dim {dim} exceeds u32")))?;
    let count = (data.len() / dim) as u64;
    let mut out = Vec::with_capacity(HEADER_LEN + data.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&dim32.to_le_bytes());
    out.push(DTYPE_F32);
    out.extend_from_slice(&[0u8; 3]);
    for x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_embt(bytes: &[u8]) -> Result<RawMatrix> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let dim = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let dtype = bytes[20];
    if dtype != DTYPE_F32 {
        return Err(Error::Format(format!("unsupported dtype {dtype}")));
    }
    if bytes[21..24] != [0, 0, 0] {
        return Err(Error::Format("reserved header bytes are not zero".into()));
    }
    if dim == 0 {
        return Err(Error::Format("dim must be positive".into()));
    }
    let expected = usize::try_from(count)
        .ok()
        .and_then(|c| c.checked_mul(dim))
        .and_then(|v| v.checked_mul(4))
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Format(format!("header declares {count}x{dim}, too large")))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "payload length {} does not match header ({count} rows x {dim} dims needs {expected})",
            bytes.len()
        )));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(RawMatrix {
        dim,
        count: count as usize,
        data,
    })
}

pub fn read_embt(path: impl AsRef<Path>) -> Result<RawMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embt(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_embt(path: impl AsRef<Path>, dim: usize, data: &[f32]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_embt(dim, data)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| {
            Error::Format(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        out.push(item);
    }
    Ok(out)
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_table(matrix_path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let raw = read_embt(matrix_path)?;
    let meta: Vec<RowMeta> = read_jsonl(meta_path.as_ref())?;
    EmbeddingTable::new(raw.dim, raw.data, meta)
}

pub fn write_table(
    table: &EmbeddingTable,
    matrix_path: impl AsRef<Path>,
    meta_path: impl AsRef<Path>,
) -> Result<()> {
    write_embt(matrix_path, table.dim, &table.data)?;
    write_jsonl(meta_path.as_ref(), &table.meta)
}

/// The metadata path paired with a matrix path: same stem, `.jsonl` extension.
pub fn sidecar_path(matrix_path: &Path) -> std::path::PathBuf {
    matrix_path.with_extension("jsonl")
}
