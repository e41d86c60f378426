// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{reconstruction_mse, relative_error, train, SaeConfig, SaeModel};
use crate::error::{Error, Result};
use crate::tape::Tensor;

/// One `(scale, k)` cell. A failed cell keeps its error and no metrics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scale: usize,
    pub k: usize,
    pub n_latents: usize,
    pub mse: Option<f64>,
    pub relative_error: Option<f64>,
    pub dead_fraction: Option<f64>,
    /// Downstream ranking metrics under reconstruction replacement.
    pub downstream: BTreeMap<String, f64>,
    pub error: Option<String>,
}

/// Ranking metrics for a trained model, keyed by metric name.
pub type DownstreamFn<'a> = dyn Fn(&SaeModel) -> Result<BTreeMap<String, f64>> + 'a;

/// Trains one model per `(scale, k)` pair, scale-major, and scores each on
/// `heldout`. `downstream` maps a trained model to ranking metrics.
pub fn sweep(
    train_data: &Tensor,
    heldout: &Tensor,
    scales: &[usize],
    ks: &[usize],
    base: &SaeConfig,
    downstream: Option<&DownstreamFn<'_>>,
) -> Result<Vec<SweepRow>> {
    if scales.is_empty() || ks.is_empty() || scales.contains(&0) || ks.contains(&0) {
        return Err(Error::invalid("sweep", "scale and k values must be non-empty and positive"));
    }
    let mut rows = Vec::with_capacity(scales.len() * ks.len());
    for &scale in scales {
        for &k in ks {
            let cfg = SaeConfig {
                scale,
                k,
                ..base.clone()
            };
            let mut row = SweepRow {
                scale,
                k,
                n_latents: cfg.n_latents(),
                ..SweepRow::default()
            };
            let outcome = train(train_data, &cfg).and_then(|(model, report)| {
                row.mse = Some(reconstruction_mse(&model, heldout));
                row.relative_error = Some(relative_error(&model, heldout));
                row.dead_fraction = Some(report.final_dead_fraction);
                if let Some(f) = downstream {
                    row.downstream = f(&model)?;
                }
                Ok(())
            });
            if let Err(e) = outcome {
                row.error = Some(e.to_string());
            }
            rows.push(row);
        }
    }
    Ok(rows)
}
