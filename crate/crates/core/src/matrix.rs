//! Dense row-major f64 matrix used for embedding tables and network weights.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major dense matrix. Rows are entity vectors throughout the crate.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let n = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let mut data = Vec::with_capacity(n * cols);
        for r in &rows {
            data.extend_from_slice(r);
        }
        Matrix { rows: n, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Write as text: header line `rows cols`, then one line per row of
    /// `index v_0 v_1 ...` with round-trip precision decimal floats.
    pub fn write_text(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "{} {}", self.rows, self.cols)?;
        let mut line = String::new();
        for i in 0..self.rows {
            line.clear();
            line.push_str(&i.to_string());
            for v in self.row(i) {
                line.push(' ');
                line.push_str(&format!("{v}"));
            }
            writeln!(out, "{line}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_text(path: &Path) -> Result<Self> {
        let malformed = |message: String| Error::MalformedFile {
            what: "vector table",
            message,
        };
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| malformed("empty file".into()))??;
        let mut it = header.split_whitespace();
        let rows: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| malformed("bad header".into()))?;
        let cols: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| malformed("bad header".into()))?;
        let mut m = Matrix::zeros(rows, cols);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if i >= rows {
                return Err(malformed(format!("more than {rows} rows")));
            }
            let mut fields = line.split_whitespace();
            let index: usize = fields
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| malformed(format!("row {i}: bad index")))?;
            if index != i {
                return Err(malformed(format!("row {i}: index {index} out of order")));
            }
            let row = m.row_mut(i);
            for (j, slot) in row.iter_mut().enumerate() {
                *slot = fields
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| malformed(format!("row {i}: missing value {j}")))?;
            }
            if fields.next().is_some() {
                return Err(malformed(format!("row {i}: too many values")));
            }
        }
        Ok(m)
    }
}

/// Dot product, written so LLVM can vectorize the reduction.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = k * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// y += s * x
#[inline]
pub fn axpy(s: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}
