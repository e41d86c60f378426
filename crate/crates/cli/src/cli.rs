// SPDX-License-Identifier: MIT OR Apache-2.0

use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{self, Outcome};
use crate::config::{parse_override, RunConfig};
use crate::error::CliResult;
use crate::service::{self, AppState};
use crate::store::ArtifactStore;

#[derive(Debug, Parser)]
#[command(name = "recprobe", version, about = "Probe, decompose, interpret and steer recommendation models")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Artifact store directory (overrides output.store).
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    /// Override any configuration key, e.g. `--set sae.k=16`.
    #[arg(long = "set", global = true, value_parser = parse_override)]
    pub overrides: Vec<(String, String)>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load or generate interactions, k-core filter and split them.
    PrepareData {
        /// Read interactions from this file instead of generating data.
        #[arg(long)]
        interactions: Option<PathBuf>,
        /// Item metadata (`item,title,categories`).
        #[arg(long, requires = "interactions")]
        meta: Option<PathBuf>,
        #[arg(long)]
        k_core: Option<usize>,
    },
    /// Train a recommender on the latest dataset.
    TrainRec {
        /// bprmf, lightgcn or seqattn.
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Probe the latest model over the train and test partitions.
    DumpActivations,
    /// Train a sparse autoencoder on the latest dump.
    TrainSae {
        #[arg(long)]
        scale: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        alpha: Option<f32>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one autoencoder per (scale, k) pair and tabulate the frontier.
    Sweep {
        /// Comma-separated scales.
        #[arg(long = "s", value_delimiter = ',')]
        scales: Vec<usize>,
        /// Comma-separated k values.
        #[arg(long = "k", value_delimiter = ',')]
        ks: Vec<usize>,
    },
    /// Describe and verify every eligible latent.
    Interpret {
        /// Interpret raw activation dimensions of the latest dump.
        #[arg(long)]
        base_model: bool,
        /// stub or http.
        #[arg(long)]
        llm: Option<String>,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Re-run verification of the stored descriptions.
    VerifyConcepts {
        #[arg(long)]
        llm: Option<String>,
    },
    /// Reconstruction and concept-geometry metrics for the latest catalog.
    Metrics,
    /// Steering hit rates for one latent.
    Steer {
        #[arg(long)]
        latent: Option<usize>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        factors: Vec<f32>,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Write the human-annotation CSV for the latest catalog.
    ExportAnnotations,
    /// Serve the JSON API over the latest catalog.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Recompute artifact hashes and check input references.
    Verify,
    /// Run every stage from data preparation to annotation export.
    RunAll,
}

fn push<T: ToString>(out: &mut Vec<(String, String)>, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        out.push((key.into(), v.to_string()));
    }
}

fn push_str(out: &mut Vec<(String, String)>, key: &str, v: &Option<String>) {
    if let Some(v) = v {
        out.push((key.into(), toml::Value::String(v.clone()).to_string()));
    }
}

fn push_list<T: ToString>(out: &mut Vec<(String, String)>, key: &str, v: &[T]) {
    if !v.is_empty() {
        let items: Vec<String> = v.iter().map(ToString::to_string).collect();
        out.push((key.into(), format!("[{}]", items.join(", "))));
    }
}

fn push_path(out: &mut Vec<(String, String)>, key: &str, v: &Option<PathBuf>) {
    push_str(out, key, &v.as_ref().map(|p| p.to_string_lossy().into_owned()));
}

impl Command {
    /// Subcommand flags as configuration overrides.
    pub fn overrides(&self) -> Vec<(String, String)> {
        let mut o = Vec::new();
        match self {
            Command::PrepareData { interactions, meta, k_core } => {
                if interactions.is_some() {
                    o.push(("data.synthetic".into(), "false".into()));
                }
                push_path(&mut o, "data.interactions", interactions);
                push_path(&mut o, "data.meta", meta);
                push(&mut o, "data.k_core", k_core);
            }
            Command::TrainRec { model, epochs, d, seed } => {
                push_str(&mut o, "model.kind", &model.as_ref().map(|m| m.to_lowercase()));
                push(&mut o, "model.epochs", epochs);
                push(&mut o, "model.d", d);
                push(&mut o, "model.seed", seed);
            }
            Command::TrainSae {
                scale,
                k,
                alpha,
                epochs,
                max_steps,
                seed,
            } => {
                push(&mut o, "sae.scale", scale);
                push(&mut o, "sae.k", k);
                push(&mut o, "sae.alpha", alpha);
                push(&mut o, "sae.epochs", epochs);
                push(&mut o, "sae.max_steps", max_steps);
                push(&mut o, "sae.seed", seed);
            }
            Command::Sweep { scales, ks } => {
                push_list(&mut o, "sweep.scales", scales);
                push_list(&mut o, "sweep.ks", ks);
            }
            Command::Interpret {
                base_model,
                llm,
                endpoint,
                n,
            } => {
                if *base_model {
                    o.push(("pipeline.base_model".into(), "true".into()));
                }
                push_str(&mut o, "llm.provider", llm);
                push_str(&mut o, "llm.endpoint", endpoint);
                push(&mut o, "pipeline.n", n);
            }
            Command::VerifyConcepts { llm } => push_str(&mut o, "llm.provider", llm),
            Command::Steer { latent, factors, top_k } => {
                push(&mut o, "steer.latent", latent);
                push_list(&mut o, "steer.factors", factors);
                push(&mut o, "steer.top_k", top_k);
            }
            _ => {}
        }
        o
    }
}

/// Parses the process arguments, runs the command and prints one JSON line
/// per outcome. Errors go to stderr as JSON; the return value is the exit code.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    match cli.run() {
        Ok(outcomes) => {
            for o in outcomes {
                println!("{}", serde_json::to_string(&o).expect("outcome serializes"));
            }
            0
        }
        Err(e) => {
            let body = serde_json::json!({ "error": { "category": e.category(), "message": e.to_string() } });
            eprintln!("{body}");
            e.exit_code()
        }
    }
}

impl Cli {
    pub fn resolve_config(&self) -> CliResult<RunConfig> {
        let mut overrides = self.command.overrides();
        overrides.extend(self.global.overrides.iter().cloned());
        if let Some(store) = &self.global.store {
            push_path(&mut overrides, "output.store", &Some(store.clone()));
        }
        RunConfig::resolve(self.global.config.as_deref(), &overrides)
    }

    /// Runs the command, returning the outcomes to print.
    pub fn run(&self) -> CliResult<Vec<Outcome>> {
        let cfg = self.resolve_config()?;
        let store = ArtifactStore::open(&cfg.output.store)?;
        let one = |o: Outcome| Ok(vec![o]);
        match &self.command {
            Command::PrepareData { .. } => one(commands::prepare_data(&store, &cfg)?),
            Command::TrainRec { .. } => one(commands::train_rec(&store, &cfg)?),
            Command::DumpActivations => one(commands::dump(&store)?),
            Command::TrainSae { .. } => one(commands::train_sae(&store, &cfg)?),
            Command::Sweep { .. } => one(commands::sweep(&store, &cfg)?),
            Command::Interpret { .. } => one(commands::interpret(&store, &cfg)?),
            Command::VerifyConcepts { .. } => one(commands::verify_concepts(&store, &cfg)?),
            Command::Metrics => one(commands::metrics(&store, &cfg)?),
            Command::Steer { .. } => one(commands::steer(&store, &cfg)?),
            Command::ExportAnnotations => one(commands::annotations(&store)?),
            Command::Verify => one(commands::verify_store(&store)?),
            Command::RunAll => commands::run_all(&store, &cfg),
            Command::Serve { addr } => {
                let state = AppState::from_store(&store)?;
                let runtime = tokio::runtime::Builder::new_multi_thread()
                    .enable_all()
                    .build()
                    .map_err(|e| crate::CliError::Server(e.to_string()))?;
                runtime.block_on(service::serve(state, *addr))?;
                Ok(Vec::new())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("recprobe").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn sweep_lists_become_overrides() {
        let cli = parse(&["sweep", "--s", "8,16", "--k", "4,8"]);
        let cfg = cli.resolve_config().unwrap();
        assert_eq!(cfg.sweep.scales, vec![8, 16]);
        assert_eq!(cfg.sweep.ks, vec![4, 8]);
    }

    #[test]
    fn negative_factors_parse() {
        let cli = parse(&["steer", "--factors", "-10,1,10", "--latent", "3"]);
        let cfg = cli.resolve_config().unwrap();
        assert_eq!(cfg.steer.factors, vec![-10.0, 1.0, 10.0]);
        assert_eq!(cfg.steer.latent, Some(3));
    }

    #[test]
    fn global_set_wins_over_flags() {
        let cli = parse(&["train-rec", "--model", "SeqAttn", "--set", "model.epochs=2", "--store", "/tmp/x"]);
        let cfg = cli.resolve_config().unwrap();
        assert_eq!(cfg.model.kind, recprobe::recmodels::ModelKind::Seqattn);
        assert_eq!(cfg.model.rec.epochs, 2);
        assert_eq!(cfg.output.store, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn interactions_flag_disables_synthetic() {
        let cli = parse(&["prepare-data", "--interactions", "a.csv"]);
        let cfg = cli.resolve_config().unwrap();
        assert!(!cfg.data.synthetic);
        assert_eq!(cfg.data.interactions, Some(PathBuf::from("a.csv")));
    }

    #[test]
    fn bad_model_kind_is_a_config_error() {
        let cli = parse(&["train-rec", "--model", "transformerxl"]);
        assert_eq!(cli.resolve_config().unwrap_err().exit_code(), 2);
    }
}
