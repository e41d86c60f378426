// SPDX-License-Identifier: MIT OR Apache-2.0

//! Top-k sparse autoencoder over probe activations.
//!
//! ```text
//! pre = W_enc (s - b_pre)            n_latents = scale · d
//! z   = relu(topk_k(pre))
//! ŝ   = W_dec z + b_pre
//! ```
//!
//! Training adds an auxiliary term that reconstructs the main residual from
//! the rectified `k_aux` largest pre-activations among dead latents.

mod checkpoint;
mod sweep;
mod train;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::SaeSidecar;
pub use sweep::{sweep, DownstreamFn, SweepRow};
pub use train::{initialize, train, train_checkpointed, EpochStats, LatentState, SaeReport};

use crate::error::{Error, Result};
use crate::tape::{gemm_nt, top_k_indices, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaeConfig {
    pub d: usize,
    /// Expansion factor; the model has `scale · d` latents.
    pub scale: usize,
    pub k: usize,
    pub k_aux: usize,
    pub alpha: f32,
    pub lr: f32,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops training after this many optimizer steps when set.
    pub max_steps: Option<usize>,
    /// Examples without firing before a latent counts as dead. Defaults to the
    /// size of the training dump.
    pub dead_threshold: Option<u64>,
    /// Number of sampled activations whose mean initializes `b_pre`.
    pub init_samples: usize,
    /// Writes an intermediate checkpoint every this many steps when set.
    pub checkpoint_every: Option<usize>,
    pub seed: u64,
}

impl Default for SaeConfig {
    fn default() -> Self {
        Self {
            d: 64,
            scale: 16,
            k: 8,
            k_aux: 32,
            alpha: 1.0 / 32.0,
            lr: 1e-4,
            batch_size: 16,
            epochs: 10,
            max_steps: None,
            dead_threshold: None,
            init_samples: 10_000,
            checkpoint_every: None,
            seed: 0,
        }
    }
}

impl SaeConfig {
    pub fn n_latents(&self) -> usize {
        self.scale * self.d
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("sae config", reason));
        if self.d == 0 || self.scale == 0 {
            return bad("d and scale must be positive".into());
        }
        if self.k == 0 || self.k >= self.d {
            return bad(format!("k = {} must be in [1, d = {})", self.k, self.d));
        }
        if self.k_aux == 0 {
            return bad("k_aux must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) || !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("alpha must be >= 0 and lr > 0".into());
        }
        Ok(())
    }
}

/// Main, auxiliary and combined loss values for one batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f32,
    pub main: f32,
    pub aux: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaeModel {
    /// `[n_latents, d]`
    pub w_enc: Tensor,
    /// `[d]`
    pub b_pre: Tensor,
    /// `[d, n_latents]`
    pub w_dec: Tensor,
    pub config: SaeConfig,
}

impl SaeModel {
    /// Builds a model from explicit weights, checking shapes.
    pub fn from_parts(w_enc: Tensor, b_pre: Tensor, w_dec: Tensor, config: SaeConfig) -> Result<Self> {
        config.validate()?;
        let (n, d) = (config.n_latents(), config.d);
        let shape_err = |what: &'static str, t: &Tensor, expected: Vec<usize>| Error::Shape {
            op: what,
            lhs: t.shape().to_vec(),
            rhs: expected,
        };
        if w_enc.shape() != [n, d] {
            return Err(shape_err("w_enc", &w_enc, vec![n, d]));
        }
        if b_pre.shape() != [d] {
            return Err(shape_err("b_pre", &b_pre, vec![d]));
        }
        if w_dec.shape() != [d, n] {
            return Err(shape_err("w_dec", &w_dec, vec![d, n]));
        }
        Ok(Self {
            w_enc,
            b_pre,
            w_dec,
            config,
        })
    }

    pub fn d(&self) -> usize {
        self.config.d
    }

    pub fn n_latents(&self) -> usize {
        self.config.n_latents()
    }

    pub fn k(&self) -> usize {
        self.config.k
    }

    /// `W_enc (s - b_pre)` without sparsification.
    pub fn pre_activations(&self, s: &[f32]) -> Vec<f32> {
        let centered: Vec<f32> = s.iter().zip(self.b_pre.data()).map(|(x, b)| x - b).collect();
        gemm_nt(&centered, self.w_enc.data(), 1, self.d(), self.n_latents())
    }

    /// Dense latent vector with at most `k` nonzero, nonnegative entries.
    pub fn encode(&self, s: &[f32]) -> Vec<f32> {
        let pre = self.pre_activations(s);
        sparsify(&pre, self.k())
    }

    /// Nonzero latents as `(index, value)` pairs, ascending by index.
    pub fn encode_sparse(&self, s: &[f32]) -> Vec<(usize, f32)> {
        self.encode(s)
            .into_iter()
            .enumerate()
            .filter(|&(_, v)| v > 0.0)
            .collect()
    }

    /// Encodes every row of `[rows, d]`, giving `[rows, n_latents]`.
    pub fn encode_batch(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.d() {
            return Err(Error::Shape {
                op: "encode_batch",
                lhs: x.shape().to_vec(),
                rhs: vec![self.d()],
            });
        }
        let rows = x.rows();
        let n = self.n_latents();
        let mut out = vec![0.0f32; rows * n];
        out.par_chunks_mut(n).enumerate().for_each(|(r, dst)| {
            dst.copy_from_slice(&self.encode(x.row(r)));
        });
        Tensor::matrix(rows, n, out)
    }

    pub fn decode(&self, z: &[f32]) -> Vec<f32> {
        let mut out = gemm_nt(z, self.w_dec.data(), 1, self.n_latents(), self.d());
        for (o, b) in out.iter_mut().zip(self.b_pre.data()) {
            *o += b;
        }
        out
    }

    pub fn reconstruct(&self, s: &[f32]) -> Vec<f32> {
        self.decode(&self.encode(s))
    }

    /// Column `j` of `W_dec`.
    pub fn decoder_column(&self, j: usize) -> Vec<f32> {
        let n = self.n_latents();
        (0..self.d()).map(|r| self.w_dec.data()[r * n + j]).collect()
    }

    /// Renormalizes every decoder column to unit L2 norm.
    pub fn normalize_decoder(&mut self) {
        normalize_columns(&mut self.w_dec);
    }

    /// Loss of a `[B, d]` batch given which latents are currently dead.
    pub fn loss(&self, batch: &Tensor, dead: &[bool]) -> Result<LossParts> {
        let mut tape = Tape::new();
        let vars = ParamVars {
            w_enc: tape.constant(self.w_enc.clone()),
            b_pre: tape.constant(self.b_pre.clone()),
            w_dec: tape.constant(self.w_dec.clone()),
        };
        let graph = build_loss(&mut tape, &vars, batch, dead, &self.config)?;
        graph.values(&tape)
    }
}

/// Mean over rows of `‖x - x̂‖² / d`.
pub fn reconstruction_mse(model: &SaeModel, data: &Tensor) -> f64 {
    let (total, _) = residual_energy(model, data);
    total / (data.rows().max(1) * model.d()) as f64
}

/// `‖X - X̂‖_F / ‖X‖_F` over the rows of `data`.
pub fn relative_error(model: &SaeModel, data: &Tensor) -> f64 {
    let (err, norm) = residual_energy(model, data);
    if norm == 0.0 {
        return err.sqrt();
    }
    (err / norm).sqrt()
}

/// Returns `(Σ‖x - x̂‖², Σ‖x‖²)`.
fn residual_energy(model: &SaeModel, data: &Tensor) -> (f64, f64) {
    (0..data.rows())
        .into_par_iter()
        .map(|r| {
            let x = data.row(r);
            let rec = model.reconstruct(x);
            let e: f64 = x.iter().zip(&rec).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
            let n: f64 = x.iter().map(|a| (*a as f64).powi(2)).sum();
            (e, n)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, 0.0), |(e, n), (a, b)| (e + a, n + b))
}

/// Top-k by value with ties toward the lowest index, then clamped at zero.
pub fn sparsify(pre: &[f32], k: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; pre.len()];
    let mut cand: Vec<usize> = (0..pre.len()).collect();
    for j in top_k_indices(pre, k, &mut cand) {
        out[j] = pre[j].max(0.0);
    }
    out
}

pub(crate) fn normalize_columns(w: &mut Tensor) {
    let (rows, cols) = (w.rows(), w.cols());
    let data = w.data_mut();
    for c in 0..cols {
        let norm = (0..rows).map(|r| data[r * cols + c].powi(2)).sum::<f32>().sqrt();
        if norm > 0.0 {
            for r in 0..rows {
                data[r * cols + c] /= norm;
            }
        }
    }
}

pub(crate) struct ParamVars {
    pub w_enc: Var,
    pub b_pre: Var,
    pub w_dec: Var,
}

pub(crate) struct LossGraph {
    pub total: Var,
    pub main: Var,
    pub aux: Option<Var>,
    /// Post-activation latents `[B, n]`.
    pub latents: Var,
}

impl LossGraph {
    pub fn values(&self, tape: &Tape) -> Result<LossParts> {
        let parts = LossParts {
            total: tape.value(self.total)?.item(),
            main: tape.value(self.main)?.item(),
            aux: match self.aux {
                Some(a) => tape.value(a)?.item(),
                None => 0.0,
            },
        };
        if !parts.total.is_finite() {
            return Err(Error::NonFinite(format!("loss {}", parts.total)));
        }
        Ok(parts)
    }
}

/// Records the training objective. The main residual enters the auxiliary
/// term as a constant.
pub(crate) fn build_loss(
    tape: &mut Tape,
    p: &ParamVars,
    batch: &Tensor,
    dead: &[bool],
    cfg: &SaeConfig,
) -> Result<LossGraph> {
    if batch.rows() == 0 {
        return Err(Error::invalid("sae loss", "empty batch"));
    }
    if batch.cols() != cfg.d {
        return Err(Error::Shape {
            op: "sae loss",
            lhs: batch.shape().to_vec(),
            rhs: vec![cfg.d],
        });
    }
    let b = batch.rows() as f32;
    let x = tape.constant(batch.clone());
    let neg_b = tape.scale(p.b_pre, -1.0)?;
    let centered = tape.add_row(x, neg_b)?;
    let pre = tape.matmul_nt(centered, p.w_enc)?;
    let top = tape.top_k_mask(pre, cfg.k)?;
    let latents = tape.relu(top)?;
    let dec = tape.matmul_nt(latents, p.w_dec)?;
    let recon = tape.add_row(dec, p.b_pre)?;
    let err = tape.sub(x, recon)?;
    let sq = tape.mul(err, err)?;
    let sum = tape.sum(sq)?;
    let main = tape.scale(sum, 1.0 / b)?;

    let any_dead = dead.iter().any(|&d| d);
    if !any_dead {
        return Ok(LossGraph {
            total: main,
            main,
            aux: None,
            latents,
        });
    }
    let residual = tape.value(err)?.clone();
    let residual = tape.constant(residual);
    let aux_top = tape.top_k_mask_among(pre, cfg.k_aux, dead)?;
    let aux_z = tape.relu(aux_top)?;
    let aux_rec = tape.matmul_nt(aux_z, p.w_dec)?;
    let aux_err = tape.sub(residual, aux_rec)?;
    let aux_sq = tape.mul(aux_err, aux_err)?;
    let aux_sum = tape.sum(aux_sq)?;
    let aux = tape.scale(aux_sum, 1.0 / b)?;
    let weighted = tape.scale(aux, cfg.alpha)?;
    let total = tape.add(main, weighted)?;
    Ok(LossGraph {
        total,
        main,
        aux: Some(aux),
        latents,
    })
}

#[cfg(test)]
mod tests;
