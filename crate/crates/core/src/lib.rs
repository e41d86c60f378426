// SPDX-License-Identifier: MIT OR Apache-2.0

//! Probing, sparse-autoencoder decomposition, concept interpretation and
//! steering for small recommendation models.
//!
//! The crate is organized bottom-up:
//!
//! - [`tape`]: reverse-mode autodiff over dense `f32` tensors, plus Adam.
//! - [`corpus`]: interaction loading, k-core filtering, leave-one-out splits,
//!   BPR sampling and a planted-genre synthetic generator.
//! - [`recmodels`]: BPR-MF, LightGCN-style and self-attentive sequential
//!   recommenders, each exposing the user representation right before item
//!   scoring, activation dumps and test-all evaluation.
//! - [`sae`]: the top-k sparse autoencoder over probed activations.
//! - [`conceptlab`]: case selection, prompting, concept generation and
//!   verification against a chat-completion client.
//! - [`evalmetrics`]: reconstruction and concept-geometry metrics.
//! - [`steering`]: latent edits decoded back into the probe site.

pub mod conceptlab;
pub mod corpus;
pub mod error;
pub mod evalmetrics;
pub mod hashing;
pub mod recmodels;
pub mod sae;
pub mod steering;
pub mod tape;

pub use error::{Error, Result};
