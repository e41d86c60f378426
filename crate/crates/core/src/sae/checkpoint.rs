// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SaeConfig, SaeModel};
use crate::error::{Error, Result};
use crate::tape::Tensor;

const SIDECAR: &str = "sae.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaeSidecar {
    pub d: usize,
    pub scale: usize,
    pub n_latents: usize,
    pub k: usize,
    pub k_aux: usize,
    pub alpha: f32,
    pub seed: u64,
    pub dump_hash: String,
    pub config: SaeConfig,
}

impl SaeModel {
    /// Writes `w_enc.rstn`, `b_pre.rstn`, `w_dec.rstn` and `sae.json`.
    pub fn save(&self, dir: &Path, dump_hash: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.w_enc.save(&dir.join("w_enc.rstn"))?;
        self.b_pre.save(&dir.join("b_pre.rstn"))?;
        self.w_dec.save(&dir.join("w_dec.rstn"))?;
        let c = &self.config;
        let sidecar = SaeSidecar {
            d: c.d,
            scale: c.scale,
            n_latents: c.n_latents(),
            k: c.k,
            k_aux: c.k_aux,
            alpha: c.alpha,
            seed: c.seed,
            dump_hash: dump_hash.to_string(),
            config: c.clone(),
        };
        let path = dir.join(SIDECAR);
        std::fs::write(&path, serde_json::to_vec_pretty(&sidecar)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let sidecar = Self::sidecar(dir)?;
        Self::from_parts(
            Tensor::load(&dir.join("w_enc.rstn"))?,
            Tensor::load(&dir.join("b_pre.rstn"))?,
            Tensor::load(&dir.join("w_dec.rstn"))?,
            sidecar.config,
        )
    }

    /// SHA-256 over the raw bits of all three weights.
    pub fn checksum(&self) -> String {
        let mut bytes = Vec::new();
        for t in [&self.w_enc, &self.b_pre, &self.w_dec] {
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        crate::hashing::sha256_hex(&bytes)
    }

    pub fn sidecar(dir: &Path) -> Result<SaeSidecar> {
        let path = dir.join(SIDECAR);
        let raw = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_slice(&raw)?)
    }
}
