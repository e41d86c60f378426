// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run configuration: a TOML file with one table per stage. Command-line
//! flags become `section.key=value` overrides applied on top of the file.

use std::path::{Path, PathBuf};

use recprobe::conceptlab::{HttpLlmConfig, PipelineConfig, BUILTIN_VERSION};
use recprobe::corpus::synthetic::GenreConfig;
use recprobe::corpus::DEFAULT_MAX_HISTORY;
use recprobe::evalmetrics::{DEFAULT_MEMBERS, GEOMETRY_MIN_CONFIDENCE};
use recprobe::recmodels::{ModelKind, RecConfig};
use recprobe::sae::SaeConfig;
use recprobe::steering::{DEFAULT_FACTORS, DEFAULT_TOP_K};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Generate the bundled planted-genre dataset instead of reading files.
    pub synthetic: bool,
    pub interactions: Option<PathBuf>,
    pub meta: Option<PathBuf>,
    pub k_core: usize,
    pub max_history_len: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            synthetic: true,
            interactions: None,
            meta: None,
            k_core: 5,
            max_history_len: DEFAULT_MAX_HISTORY,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub kind: ModelKind,
    #[serde(flatten)]
    pub rec: RecConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::Bprmf,
            rec: RecConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub scales: Vec<usize>,
    pub ks: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            scales: vec![8, 16],
            ks: vec![8, 16],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSection {
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
    /// Interpret raw activation dimensions instead of autoencoder latents.
    pub base_model: bool,
    pub template_dir: Option<PathBuf>,
    pub template_version: String,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            base_model: false,
            template_dir: None,
            template_version: BUILTIN_VERSION.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmProvider {
    #[default]
    Stub,
    Http,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSection {
    pub provider: LlmProvider,
    #[serde(flatten)]
    pub http: HttpLlmConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub members: usize,
    pub min_confidence: f64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            members: DEFAULT_MEMBERS,
            min_confidence: GEOMETRY_MIN_CONFIDENCE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteerSection {
    /// Latent to steer; defaults to the most confident concept.
    pub latent: Option<usize>,
    pub factors: Vec<f32>,
    pub top_k: usize,
    pub max_diffs: usize,
    /// Evaluate only the first this-many users; all users when unset.
    pub users: Option<usize>,
}

impl Default for SteerSection {
    fn default() -> Self {
        Self {
            latent: None,
            factors: DEFAULT_FACTORS.to_vec(),
            top_k: DEFAULT_TOP_K,
            max_diffs: 20,
            users: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub store: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            store: PathBuf::from("artifacts"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub synthetic: GenreConfig,
    pub model: ModelSection,
    pub sae: SaeConfig,
    pub sweep: SweepSection,
    pub pipeline: PipelineSection,
    pub llm: LlmSection,
    pub metrics: MetricsSection,
    pub steer: SteerSection,
    pub output: OutputSection,
}

impl RunConfig {
    /// Reads `path` (if given) and applies `overrides` in order.
    pub fn resolve(path: Option<&Path>, overrides: &[(String, String)]) -> CliResult<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for (key, raw) in overrides {
            set_key(&mut value, key, parse_value(raw))?;
        }
        let cfg: RunConfig = toml::Value::Table(value.clone())
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        // Flattened sections accept anything, so compare against what was kept.
        let kept = toml::Table::try_from(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(key) = first_unknown(&value, &kept, "") {
            return Err(CliError::Config(format!("unknown configuration key {key}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if !self.data.synthetic && self.data.interactions.is_none() {
            return Err(CliError::Config(
                "data.interactions is required unless data.synthetic is true".into(),
            ));
        }
        if self.data.k_core == 0 {
            return Err(CliError::Config("data.k_core must be at least 1".into()));
        }
        if self.pipeline.pipeline.n == 0 {
            return Err(CliError::Config("pipeline.n must be positive".into()));
        }
        if self.steer.factors.iter().any(|f| !f.is_finite()) {
            return Err(CliError::Config("steer.factors must be finite".into()));
        }
        Ok(())
    }

    /// The configuration as recorded next to artifacts: TOML, with the
    /// store location left out so artifacts do not depend on where they live.
    pub fn recorded(&self) -> CliResult<String> {
        let mut c = self.clone();
        c.output = OutputSection {
            store: PathBuf::new(),
        };
        toml::to_string(&c).map_err(|e| CliError::Config(e.to_string()))
    }
}

fn first_unknown(given: &toml::Table, kept: &toml::Table, prefix: &str) -> Option<String> {
    for (k, v) in given {
        let path = format!("{prefix}{k}");
        match (v, kept.get(k)) {
            (_, None) => return Some(path),
            (toml::Value::Table(g), Some(toml::Value::Table(c))) => {
                if let Some(p) = first_unknown(g, c, &format!("{path}.")) {
                    return Some(p);
                }
            }
            _ => {}
        }
    }
    None
}

/// Parses a TOML scalar or array, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn set_key(root: &mut toml::Table, key: &str, value: toml::Value) -> CliResult<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key {key:?}")));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("{key}: {part} is not a section")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Splits `section.key=value`.
pub fn parse_override(s: &str) -> Result<(String, String), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected section.key=value, got {s:?}"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}
