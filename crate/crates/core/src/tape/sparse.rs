// SPDX-License-Identifier: MIT OR Apache-2.0

use crate::error::{Error, Result};

/// Compressed sparse row matrix used as a constant operand (graph adjacency).
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f32>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicate coordinates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f32)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|(r, c, _)| *r >= rows || *c >= cols) {
            return Err(Error::invalid(
                "csr",
                format!("entry ({r}, {c}) outside {rows}x{cols}"),
            ));
        }
        triplets.sort_by_key(|a| (a.0, a.1));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f32> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indptr[r + 1] += 1;
            indices.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f32)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.row_entries(r)
            .find(|(col, _)| *col == c)
            .map(|(_, v)| v)
            .unwrap_or(0.0)
    }

    /// `self · x` where `x` is `[cols, width]` row-major.
    pub fn matmul_dense(&self, x: &[f32], width: usize) -> Vec<f32> {
        let mut out = vec![0.0f32; self.rows * width];
        for r in 0..self.rows {
            let dst = &mut out[r * width..(r + 1) * width];
            for (c, v) in self.row_entries(r) {
                let src = &x[c * width..(c + 1) * width];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
        out
    }

    /// `selfᵀ · g` where `g` is `[rows, width]`.
    pub fn transpose_matmul_dense(&self, g: &[f32], width: usize) -> Vec<f32> {
        let mut out = vec![0.0f32; self.cols * width];
        for r in 0..self.rows {
            let src = &g[r * width..(r + 1) * width];
            for (c, v) in self.row_entries(r) {
                let dst = &mut out[c * width..(c + 1) * width];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
        out
    }
}
