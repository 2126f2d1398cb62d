//! In-memory row-major datasets and contiguous row partitioning.

use std::ops::Range;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected {expected} fields, found {found}")]
    Ragged {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: column '{column}' has non-numeric value '{value}'")]
    NonNumeric {
        line: usize,
        column: String,
        value: String,
    },
    #[error("response column '{0}' not found in header")]
    MissingResponse(String),
    #[error("column '{0}' not found in header")]
    MissingColumn(String),
    #[error("file has no header row")]
    NoHeader,
    #[error("dataset has no rows")]
    Empty,
    #[error("dimension mismatch: expected {expected} columns, found {found}")]
    Dimension { expected: usize, found: usize },
}

/// Predictor matrix (row-major) with a response vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(names: Vec<String>, x: Vec<f64>, y: Vec<f64>) -> Result<Self, DataError> {
        let d = names.len();
        if d == 0 || x.len() != d * y.len() {
            return Err(DataError::Dimension {
                expected: d * y.len(),
                found: x.len(),
            });
        }
        Ok(Self { names, x, y })
    }

    /// Dataset with generated names `x1..xd`.
    pub fn from_rows(d: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self, DataError> {
        Self::new(default_names(d), x, y)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.d();
        &self.x[i * d..(i + 1) * d]
    }

    /// Copy of rows in `range`.
    pub fn slice(&self, range: Range<usize>) -> Dataset {
        let d = self.d();
        Dataset {
            names: self.names.clone(),
            x: self.x[range.start * d..range.end * d].to_vec(),
            y: self.y[range].to_vec(),
        }
    }
}

pub fn default_names(d: usize) -> Vec<String> {
    (1..=d).map(|k| format!("x{k}")).collect()
}

/// Splits `0..n` into `parts` contiguous ranges whose sizes differ by at most
/// one, larger ranges first.
pub fn partition(n: usize, parts: usize) -> Vec<Range<usize>> {
    assert!(parts >= 1);
    let base = n / parts;
    let extra = n % parts;
    let mut start = 0;
    (0..parts)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// The global reduction blocks that fall inside `shard`, re-based to the
/// shard's first row. `None` when a block straddles the shard boundary or
/// there are more blocks than rows.
pub fn local_blocks(
    n_total: usize,
    blocks: usize,
    shard: &Range<usize>,
) -> Option<Vec<Range<usize>>> {
    if blocks == 0 || blocks > n_total {
        return None;
    }
    let mut out = Vec::new();
    for b in partition(n_total, blocks) {
        let inside = b.start >= shard.start && b.end <= shard.end;
        let outside = b.end <= shard.start || b.start >= shard.end;
        if inside {
            out.push(b.start - shard.start..b.end - shard.start);
        } else if !outside {
            return None;
        }
    }
    Some(out)
}
