// SPDX-License-Identifier: MIT OR Apache-2.0

#![allow(dead_code)]

use std::path::Path;

use recprobe_cli::config::RunConfig;

/// A configuration small enough to run the whole pipeline in seconds.
pub fn small_config(store: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.output.store = store.to_path_buf();
    cfg.synthetic.num_users = 160;
    cfg.synthetic.num_genres = 4;
    cfg.synthetic.items_per_genre = 12;
    cfg.model.rec.d = 16;
    cfg.model.rec.epochs = 15;
    cfg.model.rec.lr = 0.01;
    cfg.sae.scale = 4;
    cfg.sae.k = 4;
    cfg.sae.k_aux = 16;
    cfg.sae.epochs = 40;
    cfg.sae.batch_size = 32;
    cfg.sae.lr = 1e-3;
    cfg.sweep.scales = vec![2, 4];
    cfg.sweep.ks = vec![2, 4];
    cfg
}
