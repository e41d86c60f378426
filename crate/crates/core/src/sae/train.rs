// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_loss, normalize_columns, ParamVars, SaeConfig, SaeModel};
use crate::error::{Error, Result};
use crate::tape::{Adam, AdamConfig, Tape, Tensor};

/// Per-latent firing statistics gathered during training.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    /// Examples seen since the latent last fired. Any firing resets it.
    pub since_fired: Vec<u64>,
    pub fire_count: Vec<u64>,
    pub positive_sum: Vec<f64>,
    pub max_activation: Vec<f32>,
}

impl LatentState {
    pub fn new(n_latents: usize) -> Self {
        Self {
            since_fired: vec![0; n_latents],
            fire_count: vec![0; n_latents],
            positive_sum: vec![0.0; n_latents],
            max_activation: vec![0.0; n_latents],
        }
    }

    /// Folds in a `[B, n]` block of post-activation latents, row by row.
    pub fn observe(&mut self, latents: &Tensor) {
        let n = self.since_fired.len();
        for r in 0..latents.rows() {
            let row = latents.row(r);
            for (j, &v) in row.iter().enumerate().take(n) {
                if v > 0.0 {
                    self.since_fired[j] = 0;
                    self.fire_count[j] += 1;
                    self.positive_sum[j] += v as f64;
                    self.max_activation[j] = self.max_activation[j].max(v);
                } else {
                    self.since_fired[j] += 1;
                }
            }
        }
    }

    pub fn dead_mask(&self, threshold: u64) -> Vec<bool> {
        self.since_fired.iter().map(|&s| s >= threshold).collect()
    }

    pub fn dead_fraction(&self, threshold: u64) -> f64 {
        if self.since_fired.is_empty() {
            return 0.0;
        }
        let dead = self.since_fired.iter().filter(|&&s| s >= threshold).count();
        dead as f64 / self.since_fired.len() as f64
    }

    pub fn mean_positive(&self, j: usize) -> f64 {
        if self.fire_count[j] == 0 {
            0.0
        } else {
            self.positive_sum[j] / self.fire_count[j] as f64
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    pub main: f64,
    pub aux: f64,
    pub total: f64,
    pub dead_fraction: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SaeReport {
    pub epochs: Vec<EpochStats>,
    pub steps: usize,
    pub dead_threshold: u64,
    pub final_dead_fraction: f64,
    pub latents: LatentState,
}

/// Mean-of-sample `b_pre`, unit-norm random decoder columns and a tied
/// encoder.
pub fn initialize(data: &Tensor, cfg: &SaeConfig, rng: &mut ChaCha8Rng) -> Result<SaeModel> {
    let (rows, d) = (data.rows(), cfg.d);
    let take = rows.min(cfg.init_samples.max(1));
    let mut picks: Vec<usize> = index::sample(rng, rows, take).into_vec();
    picks.sort_unstable();
    let mut mean = vec![0.0f64; d];
    for &r in &picks {
        for (m, &x) in mean.iter_mut().zip(data.row(r)) {
            *m += x as f64;
        }
    }
    let b_pre = Tensor::vector(mean.iter().map(|m| (m / take as f64) as f32).collect());
    let n = cfg.n_latents();
    let mut w_dec = Tensor::randn(&[d, n], 1.0, rng);
    normalize_columns(&mut w_dec);
    let mut enc = vec![0.0f32; n * d];
    for r in 0..d {
        for c in 0..n {
            enc[c * d + r] = w_dec.data()[r * n + c];
        }
    }
    SaeModel::from_parts(Tensor::matrix(n, d, enc)?, b_pre, w_dec, cfg.clone())
}

/// Trains on the rows of `data` (`[count, d]`).
pub fn train(data: &Tensor, cfg: &SaeConfig) -> Result<(SaeModel, SaeReport)> {
    run(data, cfg, None)
}

/// Like [`train`], writing `step-<n>` checkpoints under `dir` every
/// `cfg.checkpoint_every` steps.
pub fn train_checkpointed(
    data: &Tensor,
    cfg: &SaeConfig,
    dir: &Path,
    dump_hash: &str,
) -> Result<(SaeModel, SaeReport)> {
    run(data, cfg, Some((dir, dump_hash)))
}

fn run(data: &Tensor, cfg: &SaeConfig, checkpoints: Option<(&Path, &str)>) -> Result<(SaeModel, SaeReport)> {
    cfg.validate()?;
    if data.shape().len() != 2 || data.cols() != cfg.d {
        return Err(Error::Shape {
            op: "sae train",
            lhs: data.shape().to_vec(),
            rhs: vec![cfg.d],
        });
    }
    let rows = data.rows();
    if rows == 0 {
        return Err(Error::invalid("sae train", "no training activations"));
    }
    if !data.is_finite() {
        return Err(Error::NonFinite("training activation".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = initialize(data, cfg, &mut rng)?;
    let threshold = cfg.dead_threshold.unwrap_or(rows as u64).max(1);
    let mut state = LatentState::new(cfg.n_latents());
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr));
    let mut report = SaeReport {
        dead_threshold: threshold,
        ..SaeReport::default()
    };
    let budget = cfg.max_steps.unwrap_or(usize::MAX);
    let d = cfg.d;
    let mut order: Vec<usize> = (0..rows).collect();

    'epochs: for epoch in 0..cfg.epochs {
        if report.steps >= budget {
            break;
        }
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 3];
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut buf = Vec::with_capacity(chunk.len() * d);
            for &r in chunk {
                buf.extend_from_slice(data.row(r));
            }
            let batch = Tensor::matrix(chunk.len(), d, buf)?;
            let dead = state.dead_mask(threshold);

            let mut tape = Tape::new();
            let vars = ParamVars {
                w_enc: tape.param(&model.w_enc),
                b_pre: tape.param(&model.b_pre),
                w_dec: tape.param(&model.w_dec),
            };
            let graph = build_loss(&mut tape, &vars, &batch, &dead, cfg)?;
            let parts = graph.values(&tape)?;
            let latents = tape.value(graph.latents)?.clone();
            let mut grads = tape.backward(graph.total)?;
            let dec_grad = grads.take(vars.w_dec).map(|g| tangent_component(g, &model.w_dec));
            adam.step(
                &mut [&mut model.w_enc, &mut model.b_pre, &mut model.w_dec],
                &[grads.get(vars.w_enc), grads.get(vars.b_pre), dec_grad.as_ref()],
            )?;
            normalize_columns(&mut model.w_dec);
            state.observe(&latents);

            sums[0] += parts.main as f64;
            sums[1] += parts.aux as f64;
            sums[2] += parts.total as f64;
            steps += 1;
            report.steps += 1;
            if let (Some((dir, hash)), Some(every)) = (checkpoints, cfg.checkpoint_every) {
                if every > 0 && report.steps.is_multiple_of(every) {
                    model.save(&dir.join(format!("step-{}", report.steps)), hash)?;
                }
            }
            if report.steps >= budget {
                push_epoch(&mut report, epoch, steps, sums, state.dead_fraction(threshold));
                break 'epochs;
            }
        }
        push_epoch(&mut report, epoch, steps, sums, state.dead_fraction(threshold));
    }
    report.final_dead_fraction = state.dead_fraction(threshold);
    report.latents = state;
    Ok((model, report))
}

/// Removes from each decoder-column gradient its component along the column,
/// leaving only the part that rotates the unit-norm column.
fn tangent_component(mut g: Tensor, w: &Tensor) -> Tensor {
    let (rows, cols) = (w.rows(), w.cols());
    let wd = w.data();
    let gd = g.data_mut();
    for c in 0..cols {
        let along: f32 = (0..rows).map(|r| gd[r * cols + c] * wd[r * cols + c]).sum();
        for r in 0..rows {
            gd[r * cols + c] -= along * wd[r * cols + c];
        }
    }
    g
}

fn push_epoch(report: &mut SaeReport, epoch: usize, steps: usize, sums: [f64; 3], dead_fraction: f64) {
    let n = steps.max(1) as f64;
    report.epochs.push(EpochStats {
        epoch,
        steps,
        main: sums[0] / n,
        aux: sums[1] / n,
        total: sums[2] / n,
        dead_fraction,
    });
}
