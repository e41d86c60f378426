// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense matrix kernels. Each output row is computed by exactly one thread in
//! a fixed summation order, so results do not depend on the thread count.

use rayon::prelude::*;

const PAR_THRESHOLD: usize = 1 << 16;

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let x = &a[c * 8..c * 8 + 8];
        let y = &b[c * 8..c * 8 + 8];
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0f32;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
pub fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn rows_mut<F>(out: &mut [f32], width: usize, work: usize, f: F)
where
    F: Fn(usize, &mut [f32]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    if work >= PAR_THRESHOLD {
        out.par_chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    } else {
        out.chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
}

/// `a[m,n] · b[n,p]`. Zero entries of `a` are skipped.
pub fn gemm_nn(a: &[f32], b: &[f32], m: usize, n: usize, p: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * p];
    rows_mut(&mut out, p, m * n * p, |i, row| {
        let ai = &a[i * n..(i + 1) * n];
        for (k, &aik) in ai.iter().enumerate() {
            if aik != 0.0 {
                axpy(aik, &b[k * p..(k + 1) * p], row);
            }
        }
    });
    out
}

/// `a[m,n] · b[p,n]ᵀ`. Rows of `a` that are mostly zero are handled through
/// their nonzero entries only.
pub fn gemm_nt(a: &[f32], b: &[f32], m: usize, n: usize, p: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * p];
    rows_mut(&mut out, p, m * n * p, |i, row| {
        let ai = &a[i * n..(i + 1) * n];
        let nz: Vec<usize> = (0..n).filter(|&k| ai[k] != 0.0).collect();
        if nz.is_empty() {
            return;
        }
        if nz.len() * 4 < n {
            for (j, o) in row.iter_mut().enumerate() {
                let bj = &b[j * n..(j + 1) * n];
                *o = nz.iter().map(|&k| ai[k] * bj[k]).sum();
            }
        } else {
            for (j, o) in row.iter_mut().enumerate() {
                *o = dot(ai, &b[j * n..(j + 1) * n]);
            }
        }
    });
    out
}

/// `a[m,n]ᵀ · b[m,p]`, producing `[n,p]`. Zero entries of `a` are skipped,
/// and a mostly-zero `b` is traversed through its nonzero entries.
pub fn gemm_tn(a: &[f32], b: &[f32], m: usize, n: usize, p: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; n * p];
    let nnz_b = b.iter().filter(|v| **v != 0.0).count();
    if nnz_b * 4 < b.len() {
        let nz: Vec<Vec<usize>> = (0..m)
            .map(|i| (0..p).filter(|&j| b[i * p + j] != 0.0).collect())
            .collect();
        rows_mut(&mut out, p, m * n * p, |k, row| {
            for i in 0..m {
                let aik = a[i * n + k];
                if aik != 0.0 {
                    for &j in &nz[i] {
                        row[j] += aik * b[i * p + j];
                    }
                }
            }
        });
        return out;
    }
    rows_mut(&mut out, p, m * n * p, |k, row| {
        for i in 0..m {
            let aik = a[i * n + k];
            if aik != 0.0 {
                axpy(aik, &b[i * p..(i + 1) * p], row);
            }
        }
    });
    out
}
