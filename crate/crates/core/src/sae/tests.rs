// SPDX-License-Identifier: MIT OR Apache-2.0

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn cfg(d: usize, scale: usize, k: usize) -> SaeConfig {
    SaeConfig {
        d,
        scale,
        k,
        k_aux: 2,
        ..SaeConfig::default()
    }
}

fn model(w_enc: Vec<f32>, b_pre: Vec<f32>, w_dec: Vec<f32>, c: SaeConfig) -> SaeModel {
    let (n, d) = (c.n_latents(), c.d);
    SaeModel::from_parts(
        Tensor::matrix(n, d, w_enc).unwrap(),
        Tensor::vector(b_pre),
        Tensor::matrix(d, n, w_dec).unwrap(),
        c,
    )
    .unwrap()
}

fn random_model(c: SaeConfig, seed: u64) -> SaeModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d) = (c.n_latents(), c.d);
    let mut w_dec = Tensor::randn(&[d, n], 1.0, &mut rng);
    normalize_columns(&mut w_dec);
    SaeModel::from_parts(
        Tensor::randn(&[n, d], 0.5, &mut rng),
        Tensor::randn(&[d], 0.3, &mut rng),
        w_dec,
        c,
    )
    .unwrap()
}

fn identity_padded(d: usize, scale: usize) -> Vec<f32> {
    let n = d * scale;
    let mut w = vec![0.0; n * d];
    for i in 0..d {
        w[i * d + i] = 1.0;
    }
    w
}

#[test]
fn unit_input_fires_matching_latent() {
    let c = cfg(4, 2, 1);
    let m = model(identity_padded(4, 2), vec![0.0; 4], vec![0.0; 32], c);
    let z = m.encode(&[1.0, 0.0, 0.0, 0.0]);
    assert_eq!(z[0], 1.0);
    assert_eq!(z.iter().filter(|&&v| v != 0.0).count(), 1);
    assert_eq!(m.encode_sparse(&[1.0, 0.0, 0.0, 0.0]), vec![(0, 1.0)]);
}

#[test]
fn negative_pre_activations_encode_to_zero() {
    let c = cfg(16, 2, 8);
    let w: Vec<f32> = identity_padded(16, 2).iter().map(|v| -v - 0.01).collect();
    let m = model(w, vec![0.0; 16], vec![0.0; 16 * 32], c);
    assert!(m.encode(&[1.0; 16]).iter().all(|&v| v == 0.0));
}

#[test]
fn decode_is_affine() {
    let c = cfg(3, 2, 1);
    let m = random_model(c, 1);
    assert_eq!(m.decode(&[0.0; 6]), m.b_pre.data());
    let mut one_hot = vec![0.0; 6];
    one_hot[4] = 2.5;
    let got = m.decode(&one_hot);
    let col = m.decoder_column(4);
    for i in 0..3 {
        assert!((got[i] - (m.b_pre.data()[i] + 2.5 * col[i])).abs() < 1e-6);
    }
}

#[test]
fn shapes_and_k_are_validated() {
    let c = cfg(4, 2, 4);
    assert!(c.validate().is_err());
    let c = cfg(4, 2, 2);
    assert!(SaeModel::from_parts(Tensor::zeros(&[8, 3]), Tensor::zeros(&[4]), Tensor::zeros(&[4, 8]), c).is_err());
}

#[test]
fn perfect_reconstruction_has_zero_main_loss() {
    let c = cfg(3, 2, 1);
    let mut m = random_model(c, 2);
    let x = [0.4f32, -1.0, 2.0];
    m.b_pre = Tensor::vector(x.to_vec());
    let batch = Tensor::matrix(2, 3, [x, x].concat()).unwrap();
    let parts = m.loss(&batch, &[true; 6]).unwrap();
    assert_eq!(parts.main, 0.0);
    assert!((parts.total - m.config.alpha * parts.aux).abs() < 1e-7);
}

#[test]
fn no_dead_latents_means_no_aux() {
    let m = random_model(cfg(4, 2, 2), 3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch = Tensor::randn(&[5, 4], 1.0, &mut rng);
    let parts = m.loss(&batch, &[false; 8]).unwrap();
    assert_eq!(parts.total, parts.main);
    assert_eq!(parts.aux, 0.0);
}

#[test]
fn hand_built_two_latent_loss() {
    // pre = [3, 1]; top-1 keeps latent 0 so x̂ = [3, 0] and e = [0, 1].
    // Latent 1 is dead: ê = 1 · [0.6, 0.8], e - ê = [-0.6, 0.2].
    let c = SaeConfig {
        k_aux: 1,
        ..cfg(2, 1, 1)
    };
    let m = model(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], vec![1.0, 0.6, 0.0, 0.8], c);
    let batch = Tensor::matrix(1, 2, vec![3.0, 1.0]).unwrap();
    let parts = m.loss(&batch, &[false, true]).unwrap();
    assert!((parts.main - 1.0).abs() < 1e-6);
    assert!((parts.aux - 0.4).abs() < 1e-6);
    assert!((parts.total - (1.0 + 0.4 / 32.0)).abs() < 1e-6);
}

/// Direct f64 evaluation of the auxiliary term by scanning dead latents.
fn brute_force_aux(m: &SaeModel, batch: &Tensor, dead: &[bool]) -> f64 {
    let (n, d) = (m.n_latents(), m.d());
    let mut total = 0.0f64;
    for r in 0..batch.rows() {
        let x = batch.row(r);
        let centered: Vec<f64> = (0..d).map(|i| (x[i] - m.b_pre.data()[i]) as f64).collect();
        let pre: Vec<f64> = (0..n)
            .map(|j| (0..d).map(|i| m.w_enc.data()[j * d + i] as f64 * centered[i]).sum())
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| pre[b].partial_cmp(&pre[a]).unwrap().then(a.cmp(&b)));
        let kept: Vec<usize> = order.iter().copied().take(m.k()).collect();
        let mut recon: Vec<f64> = m.b_pre.data().iter().map(|&b| b as f64).collect();
        for &j in &kept {
            for (i, r) in recon.iter_mut().enumerate() {
                *r += pre[j].max(0.0) * m.w_dec.data()[i * n + j] as f64;
            }
        }
        let aux_set: Vec<usize> = order.iter().copied().filter(|&j| dead[j]).take(m.config.k_aux).collect();
        for i in 0..d {
            let e = x[i] as f64 - recon[i];
            let e_hat: f64 = aux_set.iter().map(|&j| pre[j].max(0.0) * m.w_dec.data()[i * n + j] as f64).sum();
            total += (e - e_hat).powi(2);
        }
    }
    total / batch.rows() as f64
}

proptest! {
    #[test]
    fn encode_matches_sorted_selection(seed in any::<u64>()) {
        let m = random_model(cfg(64, 2, 8), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let x: Vec<f32> = (0..64).map(|_| rng.random_range(-2.0..2.0)).collect();
        let z = m.encode(&x);
        let pre = m.pre_activations(&x);
        let mut order: Vec<usize> = (0..pre.len()).collect();
        order.sort_by(|&a, &b| pre[b].total_cmp(&pre[a]).then(a.cmp(&b)));
        let mut expected = vec![0.0f32; pre.len()];
        for &j in &order[..8] {
            expected[j] = pre[j].max(0.0);
        }
        prop_assert!(z.iter().filter(|&&v| v != 0.0).count() <= 8);
        prop_assert_eq!(z, expected);
    }

    #[test]
    fn aux_matches_brute_force(seed in any::<u64>(), rows in 1usize..5, dead_bits in any::<u16>()) {
        let c = SaeConfig { k_aux: 3, ..cfg(4, 3, 2) };
        let m = random_model(c, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(7));
        let batch = Tensor::randn(&[rows, 4], 1.0, &mut rng);
        let mut dead: Vec<bool> = (0..12).map(|j| dead_bits >> j & 1 == 1).collect();
        dead[11] = true;
        let parts = m.loss(&batch, &dead).unwrap();
        let oracle = brute_force_aux(&m, &batch, &dead);
        prop_assert!((parts.aux as f64 - oracle).abs() <= 1e-4 * oracle.max(1.0), "{} vs {}", parts.aux, oracle);
    }
}

fn planted(rows: usize, d: usize, atoms: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dict = Tensor::randn(&[d, atoms], 1.0, &mut rng);
    normalize_columns(&mut dict);
    let mut out = vec![0.0f32; rows * d];
    for r in 0..rows {
        for _ in 0..2 {
            let j = rng.random_range(0..atoms);
            let c: f32 = rng.random_range(0.5..2.0);
            for i in 0..d {
                out[r * d + i] += c * dict.data()[i * atoms + j];
            }
        }
    }
    Tensor::matrix(rows, d, out).unwrap()
}

#[test]
fn constant_input_is_absorbed_by_the_bias() {
    let x: Vec<f32> = (0..8).map(|i| i as f32 * 0.3 - 1.0).collect();
    let data = Tensor::matrix(64, 8, x.repeat(64)).unwrap();
    let c = SaeConfig {
        max_steps: Some(1000),
        epochs: 1000,
        ..cfg(8, 2, 2)
    };
    let (m, report) = train(&data, &c).unwrap();
    assert_eq!(report.steps, 1000);
    let main = m.loss(&data, &vec![false; m.n_latents()]).unwrap().main;
    assert!(main < 1e-4, "{main}");
}

#[test]
fn decoder_columns_stay_unit_norm_and_training_helps() {
    let data = planted(512, 8, 12, 4);
    let c = SaeConfig {
        lr: 1e-3,
        epochs: 30,
        ..cfg(8, 2, 2)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let init = super::train::initialize(&data, &c, &mut rng).unwrap();
    let (m, report) = train(&data, &c).unwrap();
    for j in 0..m.n_latents() {
        let norm: f32 = m.decoder_column(j).iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() <= 1e-5, "column {j}: {norm}");
    }
    let before = reconstruction_mse(&init, &data);
    let after = reconstruction_mse(&m, &data);
    assert!(after < before, "{before} -> {after}");
    assert_eq!(report.epochs.len(), 30);
}

#[test]
fn fixed_seed_gives_identical_checkpoints() {
    let data = planted(128, 6, 8, 5);
    let c = SaeConfig {
        epochs: 3,
        ..cfg(6, 2, 2)
    };
    let dir = tempfile::tempdir().unwrap();
    let (a, _) = train(&data, &c).unwrap();
    let (b, _) = train(&data, &c).unwrap();
    a.save(&dir.path().join("a"), "h").unwrap();
    b.save(&dir.path().join("b"), "h").unwrap();
    for f in ["w_enc.rstn", "b_pre.rstn", "w_dec.rstn", "sae.json"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(f)).unwrap(),
            std::fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let loaded = SaeModel::load(&dir.path().join("a")).unwrap();
    assert_eq!(loaded, a);
    assert_eq!(SaeModel::sidecar(&dir.path().join("a")).unwrap().n_latents, 12);
}

#[test]
fn checkpoints_are_written_at_the_interval() {
    let data = planted(64, 4, 6, 6);
    let c = SaeConfig {
        epochs: 2,
        checkpoint_every: Some(3),
        ..cfg(4, 2, 1)
    };
    let dir = tempfile::tempdir().unwrap();
    let (_, report) = train::train_checkpointed(&data, &c, dir.path(), "abc").unwrap();
    assert_eq!(report.steps, 8);
    assert!(dir.path().join("step-3").join("w_dec.rstn").exists());
    assert!(dir.path().join("step-6").exists());
    assert!(!dir.path().join("step-8").exists());
}

#[test]
fn width_mismatch_is_an_error() {
    let data = Tensor::zeros(&[4, 5]);
    assert!(train(&data, &cfg(4, 2, 1)).is_err());
}

#[test]
fn dead_counters_reset_on_firing() {
    let mut s = LatentState::new(3);
    s.observe(&Tensor::matrix(2, 3, vec![0.0, 1.0, 0.0, 0.0, 0.0, 2.0]).unwrap());
    assert_eq!(s.since_fired, vec![2, 1, 0]);
    assert_eq!(s.dead_mask(2), vec![true, false, false]);
    assert!((s.dead_fraction(1) - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(s.max_activation, vec![0.0, 1.0, 2.0]);
    assert_eq!(s.mean_positive(2), 2.0);
}

#[test]
fn sweep_covers_the_grid() {
    let data = planted(64, 6, 8, 7);
    let base = SaeConfig {
        epochs: 2,
        ..cfg(6, 1, 1)
    };
    let rows = sweep(&data, &data, &[1, 2], &[1, 2, 9], &base, None).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows[2].error.is_some());
    let single = sweep(&data, &data, &[2], &[2], &base, None).unwrap();
    let (m, _) = train(&data, &SaeConfig { scale: 2, k: 2, ..base }).unwrap();
    assert_eq!(single[0].mse, Some(reconstruction_mse(&m, &data)));
}
