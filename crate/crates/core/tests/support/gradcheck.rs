// SPDX-License-Identifier: MIT OR Apache-2.0

//! Finite-difference oracle for the tape ops.
//!
//! Every op has an independent `f64` reference forward written here. The
//! oracle gradient is the central difference of `Σ wᵢ·op(x)ᵢ` (random fixed
//! weights `w`) evaluated with the reference in `f64`; the analytic gradient
//! comes from the tape in `f32`.

#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recprobe::tape::{CsrMatrix, Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-4;
pub const POINTS: usize = 100;

type Forward = Box<dyn Fn(&mut Tape, &[Var]) -> recprobe::Result<Var>>;
type Reference = Box<dyn Fn(&[Vec<f64>]) -> Vec<f64>>;
type Sampler = Box<dyn Fn(&mut ChaCha8Rng, usize) -> f64>;
type Stable = Box<dyn Fn(&[Vec<f64>]) -> bool>;

pub struct OpCase {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub forward: Forward,
    pub reference: Reference,
    /// Draws input element `i` (flattened over all inputs).
    pub sampler: Sampler,
    /// Returns false where the op is not differentiable within the probe step.
    pub stable: Stable,
}

#[derive(Debug)]
pub struct CheckReport {
    pub name: &'static str,
    pub points: usize,
    pub worst_rel_err: f64,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random_range(1e-12..1.0);
    let v: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    (-2.0 * u.ln()).sqrt() * v.cos()
}

fn gaussian() -> Sampler {
    Box::new(|rng, _| normal(rng))
}

fn always() -> Stable {
    Box::new(|_| true)
}

fn dims(s: &[usize]) -> usize {
    s.iter().product()
}

pub fn check(case: &OpCase, seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: usize = case.shapes.iter().map(|s| dims(s)).sum();
    let mut worst = 0.0f64;
    let mut done = 0;
    let mut attempts = 0;
    while done < POINTS {
        attempts += 1;
        assert!(attempts < POINTS * 50, "{}: could not draw stable points", case.name);
        let flat: Vec<f64> = (0..total).map(|i| (case.sampler)(&mut rng, i)).collect();
        let inputs = split(&flat, &case.shapes);
        if !(case.stable)(&inputs) {
            continue;
        }
        let out_len = (case.reference)(&inputs).len();
        let weights: Vec<f64> = (0..out_len).map(|_| normal(&mut rng)).collect();

        let analytic = tape_gradient(case, &inputs, &weights);
        let numeric = fd_gradient(case, &flat, &weights);
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n) * (a - n))
            .sum::<f64>()
            .sqrt();
        let na = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rel = diff / na.max(nn).max(1e-8);
        worst = worst.max(rel);
        done += 1;
    }
    CheckReport {
        name: case.name,
        points: done,
        worst_rel_err: worst,
    }
}

fn split(flat: &[f64], shapes: &[Vec<usize>]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut at = 0;
    for s in shapes {
        let n = dims(s);
        out.push(flat[at..at + n].to_vec());
        at += n;
    }
    out
}

fn tape_gradient(case: &OpCase, inputs: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .zip(&case.shapes)
        .map(|(x, s)| {
            let t = Tensor::new(s.clone(), x.iter().map(|&v| v as f32).collect()).unwrap();
            tape.leaf(t.with_grad())
        })
        .collect();
    let out = (case.forward)(&mut tape, &vars).unwrap();
    let shape = tape.shape(out).unwrap().to_vec();
    let w = tape.constant(Tensor::new(shape, weights.iter().map(|&v| v as f32).collect()).unwrap());
    let prod = tape.mul(out, w).unwrap();
    let loss = tape.sum(prod).unwrap();
    let grads = tape.backward(loss).unwrap();
    vars.iter()
        .zip(&case.shapes)
        .flat_map(|(v, s)| match grads.get(*v) {
            Some(g) => g.data().iter().map(|&x| x as f64).collect::<Vec<_>>(),
            None => vec![0.0; dims(s)],
        })
        .collect()
}

fn fd_gradient(case: &OpCase, flat: &[f64], weights: &[f64]) -> Vec<f64> {
    let objective = |x: &[f64]| -> f64 {
        let out = (case.reference)(&split(x, &case.shapes));
        out.iter().zip(weights).map(|(o, w)| o * w).sum()
    };
    let mut x = flat.to_vec();
    (0..flat.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + FD_STEP;
            let up = objective(&x);
            x[i] = orig - FD_STEP;
            let down = objective(&x);
            x[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// f64 reference forwards
// ---------------------------------------------------------------------------

fn ref_matmul(a: &[f64], b: &[f64], m: usize, n: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        for j in 0..p {
            out[i * p + j] = (0..n).map(|k| a[i * n + k] * b[k * p + j]).sum();
        }
    }
    out
}

fn ref_transpose(x: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut t = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            t[j * r + i] = x[i * c + j];
        }
    }
    t
}

fn ref_sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn ref_softmax_rows(x: &[f64], cols: usize, mask: Option<&[bool]>) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (r, row) in x.chunks(cols).enumerate() {
        let keep = |j: usize| mask.is_none_or(|m| m[r * cols + j]);
        let max = (0..cols).filter(|&j| keep(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let z: f64 = (0..cols).filter(|&j| keep(j)).map(|j| (row[j] - max).exp()).sum();
        for j in (0..cols).filter(|&j| keep(j)) {
            out[r * cols + j] = (row[j] - max).exp() / z;
        }
    }
    out
}

/// Brute-force top-k: rank by (value desc, index asc) over allowed columns.
fn ref_top_k(x: &[f64], cols: usize, k: usize, allowed: Option<&[bool]>) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (r, row) in x.chunks(cols).enumerate() {
        let mut idx: Vec<usize> = (0..cols).filter(|&j| allowed.is_none_or(|a| a[j])).collect();
        idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
        for &j in idx.iter().take(k) {
            out[r * cols + j] = row[j];
        }
    }
    out
}

/// True when the k-th and (k+1)-th largest allowed values in every row are
/// separated by more than ten probe steps.
fn top_k_stable(x: &[f64], cols: usize, k: usize, allowed: Option<&[bool]>) -> bool {
    x.chunks(cols).all(|row| {
        let mut v: Vec<f64> = (0..cols).filter(|&j| allowed.is_none_or(|a| a[j])).map(|j| row[j]).collect();
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        v.len() <= k || (v[k - 1] - v[k]).abs() > 10.0 * FD_STEP
    })
}

// ---------------------------------------------------------------------------
// Case table
// ---------------------------------------------------------------------------

pub fn all_cases() -> Vec<OpCase> {
    let mut cases = Vec::new();

    cases.push(OpCase {
        name: "matmul",
        shapes: vec![vec![3, 4], vec![4, 2]],
        forward: Box::new(|t, v| t.matmul(v[0], v[1])),
        reference: Box::new(|x| ref_matmul(&x[0], &x[1], 3, 4, 2)),
        sampler: gaussian(),
        stable: always(),
    });
    cases.push(OpCase {
        name: "matmul_nt",
        shapes: vec![vec![3, 4], vec![5, 4]],
        forward: Box::new(|t, v| t.matmul_nt(v[0], v[1])),
        reference: Box::new(|x| ref_matmul(&x[0], &ref_transpose(&x[1], 5, 4), 3, 4, 5)),
        sampler: gaussian(),
        stable: always(),
    });
    cases.push(OpCase {
        name: "batch_matmul",
        shapes: vec![vec![2, 3, 4], vec![2, 4, 2]],
        forward: Box::new(|t, v| t.batch_matmul(v[0], v[1], false)),
        reference: Box::new(|x| {
            let mut out = ref_matmul(&x[0][..12], &x[1][..8], 3, 4, 2);
            out.extend(ref_matmul(&x[0][12..], &x[1][8..], 3, 4, 2));
            out
        }),
        sampler: gaussian(),
        stable: always(),
    });
    cases.push(OpCase {
        name: "batch_matmul_nt",
        shapes: vec![vec![2, 3, 4], vec![2, 5, 4]],
        forward: Box::new(|t, v| t.batch_matmul(v[0], v[1], true)),
        reference: Box::new(|x| {
            let mut out = ref_matmul(&x[0][..12], &ref_transpose(&x[1][..20], 5, 4), 3, 4, 5);
            out.extend(ref_matmul(&x[0][12..], &ref_transpose(&x[1][20..], 5, 4), 3, 4, 5));
            out
        }),
        sampler: gaussian(),
        stable: always(),
    });
    cases.push(OpCase {
        name: "add",
        shapes: vec![vec![2, 3], vec![2, 3]],
        forward: Box::new(|t, v| t.add(v[0], v[1])),
        reference: Box::new(|x| x[0].iter().zip(&x[1]).map(|(a, b)| a + b).collect()),
        sampler: gaussian(),
        stable: always(),
    });
    cases.push(OpCase {
        name: "sub",
        shapes: vec![vec![2, 3], vec![2, 3]],
        forward: Box::new(|t, v| t.sub(v[0], v[1])),
        reference: Box::new(|x| x[0].iter().zip(&x[1]).map(|(a, b)| a - b).collect()),
        sampler: gaussian(),
        stable: always(),
    });
    cases.push(OpCase {
        name: "mul",
        shapes: vec![vec![2, 3], vec![2, 3]],
        forward: Box::new(|t, v| t.mul(v[0], v[1])),
        reference: Box::new(|x| x[0].iter().zip(&x[1]).map(|(a, b)| a * b).collect()),
        sampler: gaussian(),
        stable: always(),
    });
    cases.push(OpCase {
        name: "add_row",
        shapes: vec![vec![3, 4], vec![4]],
        forward: Box::new(|t, v| t.add_row(v[0], v[1])),
        reference: Box::new(|x| x[0].iter().enumerate().map(|(i, a)| a + x[1][i % 4]).collect()),
        sampler: gaussian(),
        stable: always(),
    });
    cases.push(OpCase {
        name: "scale",
        shapes: vec![vec![2, 3]],
        forward: Box::new(|t, v| t.scale(v[0], -1.7)),
        reference: Box::new(|x| x[0].iter().map(|a| a * -1.7f32 as f64).collect()),
        sampler: gaussian(),
        stable: always(),
    });
    cases.push(OpCase {
        name: "gather",
        shapes: vec![vec![4, 3]],
        forward: Box::new(|t, v| t.gather(v[0], &[2, 0, 2, 3])),
        reference: Box::new(|x| {
            [2usize, 0, 2, 3]
                .iter()
                .flat_map(|&r| x[0][r * 3..(r + 1) * 3].to_vec())
                .collect()
        }),
        sampler: gaussian(),
        stable: always(),
    });
    cases.push(OpCase {
        name: "sigmoid",
        shapes: vec![vec![2, 3]],
        forward: Box::new(|t, v| t.sigmoid(v[0])),
        reference: Box::new(|x| x[0].iter().map(|&a| ref_sigmoid(a)).collect()),
        sampler: gaussian(),
        stable: always(),
    });
    cases.push(OpCase {
        name: "log",
        shapes: vec![vec![2, 3]],
        forward: Box::new(|t, v| t.log(v[0])),
        reference: Box::new(|x| x[0].iter().map(|a| a.ln()).collect()),
        sampler: Box::new(|rng, _| rng.random_range(0.2..3.0)),
        stable: always(),
    });
    cases.push(OpCase {
        name: "log_sigmoid",
        shapes: vec![vec![2, 3]],
        forward: Box::new(|t, v| t.log_sigmoid(v[0])),
        reference: Box::new(|x| x[0].iter().map(|&a| ref_sigmoid(a).ln()).collect()),
        sampler: Box::new(|rng, _| 3.0 * normal(rng)),
        stable: always(),
    });
    cases.push(OpCase {
        name: "relu",
        shapes: vec![vec![2, 3]],
        forward: Box::new(|t, v| t.relu(v[0])),
        reference: Box::new(|x| x[0].iter().map(|a| a.max(0.0)).collect()),
        sampler: gaussian(),
        stable: Box::new(|x| x[0].iter().all(|a| a.abs() > 10.0 * FD_STEP)),
    });
    cases.push(OpCase {
        name: "softmax",
        shapes: vec![vec![3, 4]],
        forward: Box::new(|t, v| t.softmax(v[0])),
        reference: Box::new(|x| ref_softmax_rows(&x[0], 4, None)),
        sampler: gaussian(),
        stable: always(),
    });
    const CAUSAL: [bool; 9] = [true, false, false, true, true, false, true, true, true];
    cases.push(OpCase {
        name: "masked_softmax",
        shapes: vec![vec![3, 3]],
        forward: Box::new(|t, v| t.masked_softmax(v[0], Some(&CAUSAL))),
        reference: Box::new(|x| ref_softmax_rows(&x[0], 3, Some(&CAUSAL))),
        sampler: gaussian(),
        stable: always(),
    });
    cases.push(OpCase {
        name: "layer_norm",
        shapes: vec![vec![3, 5], vec![5], vec![5]],
        forward: Box::new(|t, v| t.layer_norm(v[0], v[1], v[2], 1e-5)),
        reference: Box::new(|x| {
            let mut out = Vec::new();
            for row in x[0].chunks(5) {
                let mean = row.iter().sum::<f64>() / 5.0;
                let var = row.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 5.0;
                let sd = (var + 1e-5f32 as f64).sqrt();
                for j in 0..5 {
                    out.push(x[1][j] * (row[j] - mean) / sd + x[2][j]);
                }
            }
            out
        }),
        sampler: gaussian(),
        stable: always(),
    });
    cases.push(OpCase {
        name: "sum",
        shapes: vec![vec![2, 3]],
        forward: Box::new(|t, v| t.sum(v[0])),
        reference: Box::new(|x| vec![x[0].iter().sum()]),
        sampler: gaussian(),
        stable: always(),
    });
    cases.push(OpCase {
        name: "mean",
        shapes: vec![vec![2, 3]],
        forward: Box::new(|t, v| t.mean(v[0])),
        reference: Box::new(|x| vec![x[0].iter().sum::<f64>() / 6.0]),
        sampler: gaussian(),
        stable: always(),
    });
    cases.push(OpCase {
        name: "row_sum",
        shapes: vec![vec![3, 4]],
        forward: Box::new(|t, v| t.row_sum(v[0])),
        reference: Box::new(|x| x[0].chunks(4).map(|r| r.iter().sum()).collect()),
        sampler: gaussian(),
        stable: always(),
    });
    cases.push(OpCase {
        name: "top_k_mask",
        shapes: vec![vec![3, 6]],
        forward: Box::new(|t, v| t.top_k_mask(v[0], 2)),
        reference: Box::new(|x| ref_top_k(&x[0], 6, 2, None)),
        sampler: gaussian(),
        stable: Box::new(|x| top_k_stable(&x[0], 6, 2, None)),
    });
    const ALLOWED: [bool; 6] = [false, true, true, false, true, true];
    cases.push(OpCase {
        name: "top_k_mask_among",
        shapes: vec![vec![3, 6]],
        forward: Box::new(|t, v| t.top_k_mask_among(v[0], 2, &ALLOWED)),
        reference: Box::new(|x| ref_top_k(&x[0], 6, 2, Some(&ALLOWED))),
        sampler: gaussian(),
        stable: Box::new(|x| top_k_stable(&x[0], 6, 2, Some(&ALLOWED))),
    });
    cases.push(OpCase {
        name: "reshape",
        shapes: vec![vec![2, 6]],
        forward: Box::new(|t, v| {
            let r = t.reshape(v[0], &[3, 4])?;
            t.sigmoid(r)
        }),
        reference: Box::new(|x| x[0].iter().map(|&a| ref_sigmoid(a)).collect()),
        sampler: gaussian(),
        stable: always(),
    });
    let adjacency = Arc::new(
        CsrMatrix::from_triplets(
            3,
            4,
            vec![(0, 1, 0.5), (0, 3, -1.0), (1, 0, 2.0), (2, 2, 0.25), (2, 3, 1.5)],
        )
        .unwrap(),
    );
    let dense = [0.0, 0.5, 0.0, -1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.25, 1.5];
    cases.push(OpCase {
        name: "spmm",
        shapes: vec![vec![4, 2]],
        forward: Box::new(move |t, v| t.spmm(&adjacency, v[0])),
        reference: Box::new(move |x| ref_matmul(&dense, &x[0], 3, 4, 2)),
        sampler: gaussian(),
        stable: always(),
    });
    cases
}
