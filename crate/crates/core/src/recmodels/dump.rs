// SPDX-License-Identifier: MIT OR Apache-2.0

//! Binary activation dumps.
//!
//! Layout (little-endian): magic `RSAE`, `u16` version, `u32` d, `u64` record
//! count, then per record `u64` user, `u16` history length, `u64` item id per
//! history entry, `u64` predicted item and `d` × `f32` activations. A JSON
//! manifest sits next to the file at `<path>.json`.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ModelKind, RecModel};
use crate::corpus::{Partition, SplitDataset};
use crate::error::{Error, Result};
use crate::tape::Tensor;

pub const DUMP_MAGIC: [u8; 4] = *b"RSAE";
pub const DUMP_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationRecord {
    pub user: usize,
    pub history: Vec<usize>,
    pub predicted: usize,
    pub activation: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpManifest {
    pub model_kind: ModelKind,
    pub seed: u64,
    pub dataset_hash: String,
    pub model_checksum: String,
    pub partition: Partition,
    pub d: usize,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationDump {
    pub d: usize,
    pub records: Vec<ActivationRecord>,
}

impl ActivationDump {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// All activations stacked as `[count, d]`.
    pub fn matrix(&self) -> Tensor {
        let data = self.records.iter().flat_map(|r| r.activation.iter().copied()).collect();
        Tensor::matrix(self.records.len(), self.d, data).expect("records have width d")
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e: std::io::Error| Error::Format(format!("writing activation dump: {e}"));
        w.write_all(&DUMP_MAGIC).map_err(io)?;
        w.write_all(&DUMP_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.d as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.records.len() as u64).to_le_bytes()).map_err(io)?;
        for r in &self.records {
            if r.activation.len() != self.d {
                return Err(Error::Format(format!(
                    "record for user {} has width {}, expected {}",
                    r.user,
                    r.activation.len(),
                    self.d
                )));
            }
            let len = u16::try_from(r.history.len())
                .map_err(|_| Error::Format(format!("history of user {} is too long", r.user)))?;
            w.write_all(&(r.user as u64).to_le_bytes()).map_err(io)?;
            w.write_all(&len.to_le_bytes()).map_err(io)?;
            for &h in &r.history {
                w.write_all(&(h as u64).to_le_bytes()).map_err(io)?;
            }
            w.write_all(&(r.predicted as u64).to_le_bytes()).map_err(io)?;
            for &a in &r.activation {
                w.write_all(&a.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if magic != DUMP_MAGIC {
            return Err(Error::Format("not an activation dump (bad magic)".into()));
        }
        let version = u16::from_le_bytes(read_array(&mut r)?);
        if version != DUMP_VERSION {
            return Err(Error::Format(format!("unsupported activation dump version {version}")));
        }
        let d = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let count = u64::from_le_bytes(read_array(&mut r)?) as usize;
        let mut records = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let user = u64::from_le_bytes(read_array(&mut r)?) as usize;
            let len = u16::from_le_bytes(read_array(&mut r)?) as usize;
            let history = (0..len)
                .map(|_| read_array(&mut r).map(|b| u64::from_le_bytes(b) as usize))
                .collect::<Result<_>>()?;
            let predicted = u64::from_le_bytes(read_array(&mut r)?) as usize;
            let activation = (0..d)
                .map(|_| read_array(&mut r).map(f32::from_le_bytes))
                .collect::<Result<_>>()?;
            records.push(ActivationRecord {
                user,
                history,
                predicted,
                activation,
            });
        }
        Ok(Self { d, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(f))
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated activation dump: {e}")))
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

pub fn manifest_path(dump: &Path) -> PathBuf {
    let mut s = dump.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Cases probed for a partition. Dev and test use each user's full train
/// history; the train partition of the sequential model uses every prefix of
/// the train sequence, while the other models have one vector per user.
fn cases(model: &RecModel, split: &SplitDataset, partition: Partition) -> Vec<(usize, Vec<usize>)> {
    let window = match model.kind() {
        ModelKind::Seqattn => model.config().max_len.min(split.max_history_len),
        _ => split.max_history_len,
    }
    .max(1);
    let recent = |seq: &[usize], end: usize| seq[end.saturating_sub(window)..end].to_vec();
    match (partition, model.kind()) {
        (Partition::Train, ModelKind::Seqattn) => split
            .train
            .iter()
            .enumerate()
            .flat_map(|(u, seq)| (1..=seq.len()).map(move |end| (u, recent(seq, end))))
            .collect(),
        _ => split.train.iter().enumerate().map(|(u, seq)| (u, recent(seq, seq.len()))).collect(),
    }
}

/// Probes `model` over a partition, writes the dump and its manifest, and
/// returns the dump.
pub fn dump_activations(
    model: &RecModel,
    split: &SplitDataset,
    partition: Partition,
    out_path: &Path,
) -> Result<ActivationDump> {
    let cases = cases(model, split, partition);
    if cases.is_empty() {
        return Err(Error::Data(format!("partition {partition} is empty")));
    }
    let refs: Vec<(usize, &[usize])> = cases.iter().map(|(u, h)| (*u, h.as_slice())).collect();
    let probes = model.probe_batch(&refs)?;
    let mut records = Vec::with_capacity(cases.len());
    for ((user, history), activation) in cases.into_iter().zip(probes) {
        if activation.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("activation for user {user}")));
        }
        let predicted = model
            .top1(split, user, &activation)
            .ok_or_else(|| Error::Data(format!("user {user} has no candidate items")))?;
        records.push(ActivationRecord {
            user,
            history,
            predicted,
            activation,
        });
    }
    let dump = ActivationDump { d: model.d(), records };
    dump.save(out_path)?;
    let manifest = DumpManifest {
        model_kind: model.kind(),
        seed: model.config().seed,
        dataset_hash: split_hash(split)?,
        model_checksum: model.checksum(),
        partition,
        d: dump.d,
        count: dump.len(),
    };
    let mp = manifest_path(out_path);
    std::fs::write(&mp, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&mp, e))?;
    Ok(dump)
}

/// Content hash of a split's canonical JSON form.
pub fn split_hash(split: &SplitDataset) -> Result<String> {
    Ok(crate::hashing::sha256_hex(&serde_json::to_vec(split)?))
}
