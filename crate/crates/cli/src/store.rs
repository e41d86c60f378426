// SPDX-License-Identifier: MIT OR Apache-2.0

//! Content-addressed artifact store.
//!
//! Every artifact lives at `<root>/<kind>/<hash>/` next to an
//! `artifact.json` record naming the command that produced it, its inputs
//! (as `kind/hash` references), the configuration it ran with and a short
//! summary. The hash covers the relative path and bytes of every file in the
//! directory, including the record, so identical runs land on the same
//! directory. `refs/<kind>` points at the most recent artifact of each kind.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use recprobe::hashing::sha256_hex;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const RECORD_FILE: &str = "artifact.json";
const STAGING: &str = ".staging";
const REFS: &str = "refs";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Dataset,
    Model,
    Dump,
    Sae,
    Sweep,
    Catalog,
    Verification,
    Metrics,
    Steering,
    Annotations,
}

impl Kind {
    pub const ALL: [Kind; 10] = [
        Kind::Dataset,
        Kind::Model,
        Kind::Dump,
        Kind::Sae,
        Kind::Sweep,
        Kind::Catalog,
        Kind::Verification,
        Kind::Metrics,
        Kind::Steering,
        Kind::Annotations,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Dataset => "dataset",
            Kind::Model => "model",
            Kind::Dump => "dump",
            Kind::Sae => "sae",
            Kind::Sweep => "sweep",
            Kind::Catalog => "catalog",
            Kind::Verification => "verification",
            Kind::Metrics => "metrics",
            Kind::Steering => "steering",
            Kind::Annotations => "annotations",
        }
    }

    /// The subcommand that produces this kind.
    pub fn producer(self) -> &'static str {
        match self {
            Kind::Dataset => "prepare-data",
            Kind::Model => "train-rec",
            Kind::Dump => "dump-activations",
            Kind::Sae => "train-sae",
            Kind::Sweep => "sweep",
            Kind::Catalog => "interpret",
            Kind::Verification => "verify-concepts",
            Kind::Metrics => "metrics",
            Kind::Steering => "steer",
            Kind::Annotations => "export-annotations",
        }
    }

    pub fn missing(self) -> CliError {
        CliError::Dependency {
            kind: self.as_str(),
            command: self.producer(),
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Kind {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Kind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| CliError::Store(format!("unknown artifact kind {s:?}")))
    }
}

/// The `artifact.json` contents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub kind: Kind,
    pub command: String,
    /// Role name to `kind/hash`.
    pub inputs: BTreeMap<String, String>,
    pub config: serde_json::Value,
    pub summary: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub hash: String,
    pub path: PathBuf,
    pub record: ArtifactRecord,
}

impl Artifact {
    pub fn kind(&self) -> Kind {
        self.record.kind
    }

    /// `kind/hash`, the form used in input references.
    pub fn reference(&self) -> String {
        format!("{}/{}", self.record.kind, self.hash)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }
}

/// A directory being filled before it is hashed and moved into place.
#[derive(Debug)]
pub struct Staging {
    pub kind: Kind,
    pub dir: PathBuf,
}

impl Staging {
    pub fn file(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checked: usize,
    pub problems: Vec<String>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.problems.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct ArtifactStore {
    root: PathBuf,
}

static STAGE_COUNTER: AtomicU64 = AtomicU64::new(0);

impl ArtifactStore {
    pub fn open(root: impl Into<PathBuf>) -> CliResult<Self> {
        let root = root.into();
        std::fs::create_dir_all(root.join(REFS))
            .map_err(|e| CliError::Store(format!("cannot create {}: {e}", root.display())))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stage(&self, kind: Kind) -> CliResult<Staging> {
        let n = STAGE_COUNTER.fetch_add(1, Ordering::Relaxed);
        let dir = self
            .root
            .join(STAGING)
            .join(format!("{}-{}-{n}", kind, std::process::id()));
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        std::fs::create_dir_all(&dir)?;
        Ok(Staging { kind, dir })
    }

    /// Writes the record, hashes the staged directory, moves it into place
    /// and points `refs/<kind>` at it.
    pub fn commit(&self, staging: Staging, record: ArtifactRecord) -> CliResult<Artifact> {
        self.commit_with(staging, record, true)
    }

    pub fn commit_with(&self, staging: Staging, record: ArtifactRecord, update_ref: bool) -> CliResult<Artifact> {
        if record.kind != staging.kind {
            return Err(CliError::Store(format!(
                "record kind {} does not match staged kind {}",
                record.kind, staging.kind
            )));
        }
        for reference in record.inputs.values() {
            self.resolve(reference)?;
        }
        std::fs::write(staging.file(RECORD_FILE), serde_json::to_vec_pretty(&record)?)?;
        let hash = tree_hash(&staging.dir)?;
        let dest = self.root.join(record.kind.as_str()).join(&hash);
        if dest.exists() {
            std::fs::remove_dir_all(&staging.dir)?;
        } else {
            std::fs::create_dir_all(dest.parent().expect("kind directory"))?;
            std::fs::rename(&staging.dir, &dest)?;
        }
        if update_ref {
            std::fs::write(self.root.join(REFS).join(record.kind.as_str()), format!("{hash}\n"))?;
        }
        Ok(Artifact {
            hash,
            path: dest,
            record,
        })
    }

    /// Loads an artifact after checking its content still hashes to its name.
    pub fn get(&self, kind: Kind, hash: &str) -> CliResult<Artifact> {
        let artifact = self.load_record(kind, hash)?;
        let actual = tree_hash(&artifact.path)?;
        if actual != hash {
            return Err(CliError::Store(format!(
                "artifact {kind}/{hash} is corrupt: content hashes to {actual}"
            )));
        }
        Ok(artifact)
    }

    fn load_record(&self, kind: Kind, hash: &str) -> CliResult<Artifact> {
        if hash.is_empty() || !hash.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(CliError::Store(format!("malformed artifact hash {hash:?}")));
        }
        let path = self.root.join(kind.as_str()).join(hash);
        let raw = std::fs::read(path.join(RECORD_FILE))
            .map_err(|_| CliError::Store(format!("artifact {kind}/{hash} not found")))?;
        let record: ArtifactRecord = serde_json::from_slice(&raw)?;
        if record.kind != kind {
            return Err(CliError::Store(format!("artifact {kind}/{hash} records kind {}", record.kind)));
        }
        Ok(Artifact {
            hash: hash.to_string(),
            path,
            record,
        })
    }

    fn resolve_record(&self, reference: &str) -> CliResult<Artifact> {
        let (kind, hash) = reference
            .split_once('/')
            .ok_or_else(|| CliError::Store(format!("malformed reference {reference:?}")))?;
        self.load_record(kind.parse()?, hash)
    }

    /// Looks up a `kind/hash` reference.
    pub fn resolve(&self, reference: &str) -> CliResult<Artifact> {
        let (kind, hash) = reference
            .split_once('/')
            .ok_or_else(|| CliError::Store(format!("malformed reference {reference:?}")))?;
        self.get(kind.parse()?, hash)
    }

    pub fn latest_hash(&self, kind: Kind) -> Option<String> {
        let text = std::fs::read_to_string(self.root.join(REFS).join(kind.as_str())).ok()?;
        let hash = text.trim();
        (!hash.is_empty()).then(|| hash.to_string())
    }

    /// The most recent artifact of `kind`, or a dependency error naming the
    /// command that produces it.
    pub fn latest(&self, kind: Kind) -> CliResult<Artifact> {
        match self.latest_hash(kind) {
            Some(h) => self.get(kind, &h),
            None => Err(kind.missing()),
        }
    }

    /// The artifact recorded under `role` in `artifact`'s inputs.
    pub fn input(&self, artifact: &Artifact, role: &str) -> CliResult<Artifact> {
        let reference = artifact.record.inputs.get(role).ok_or_else(|| {
            CliError::Store(format!("artifact {} has no {role:?} input", artifact.reference()))
        })?;
        self.resolve(reference)
    }

    /// All artifacts of `kind`, by hash.
    pub fn list(&self, kind: Kind) -> CliResult<Vec<Artifact>> {
        let dir = self.root.join(kind.as_str());
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut hashes: Vec<String> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        hashes.sort();
        hashes.iter().map(|h| self.load_record(kind, h)).collect()
    }

    /// Recomputes every artifact hash and checks input and ref targets.
    pub fn verify(&self) -> CliResult<VerifyReport> {
        let mut report = VerifyReport::default();
        for kind in Kind::ALL {
            let dir = self.root.join(kind.as_str());
            if !dir.exists() {
                continue;
            }
            let mut entries: Vec<PathBuf> = std::fs::read_dir(&dir)?.filter_map(|e| e.ok()).map(|e| e.path()).collect();
            entries.sort();
            for path in entries {
                report.checked += 1;
                let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
                let label = format!("{kind}/{name}");
                let artifact = match self.load_record(kind, &name) {
                    Ok(a) => a,
                    Err(e) => {
                        report.problems.push(format!("{label}: {e}"));
                        continue;
                    }
                };
                match tree_hash(&path) {
                    Ok(h) if h == name => {}
                    Ok(h) => report.problems.push(format!("{label}: content hashes to {h}")),
                    Err(e) => report.problems.push(format!("{label}: {e}")),
                }
                for (role, reference) in &artifact.record.inputs {
                    if let Err(e) = self.resolve_record(reference) {
                        report.problems.push(format!("{label}: input {role} -> {reference}: {e}"));
                    }
                }
            }
            if let Some(h) = self.latest_hash(kind) {
                if self.load_record(kind, &h).is_err() {
                    report.problems.push(format!("refs/{kind} points at missing {h}"));
                }
            }
        }
        Ok(report)
    }
}

/// sha256 over the sorted `(relative path, file hash)` listing of `dir`.
pub fn tree_hash(dir: &Path) -> CliResult<String> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.sort();
    let mut listing = String::new();
    for rel in &files {
        let bytes = std::fs::read(dir.join(rel))?;
        listing.push_str(rel);
        listing.push('\0');
        listing.push_str(&sha256_hex(&bytes));
        listing.push('\n');
    }
    Ok(sha256_hex(listing.as_bytes()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> CliResult<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .map_err(|e| CliError::Store(e.to_string()))?
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            out.push(rel);
        }
    }
    Ok(())
}
