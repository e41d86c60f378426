// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line driver for the probing pipeline.
//!
//! Every command reads its upstream artifacts from a content-addressed
//! [`store::ArtifactStore`], writes exactly one new artifact directory and
//! prints a JSON summary. [`service`] serves a finished artifact set over
//! HTTP.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod service;
pub mod store;

pub use error::{CliError, CliResult};
