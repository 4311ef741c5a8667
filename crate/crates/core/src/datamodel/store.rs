// SPDX-License-Identifier: MIT OR Apache-2.0

//! The "ACTS" activation container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "ACTS" | version u16 = 1 | n_layers u32 | hidden_dim u32 | record_count u64
//! manifest_len u64 | manifest: record_count JSON lines
//! blob: per record
//!     n_layers * hidden_dim f32 (layer-major)
//!     [logprob block: count u32, count f32]        if has_logprobs
//!     [confidence block: 7 f32 levels, 1 f32 p_true, NaN = absent]  if has_confidence
//! ```
//!
//! `blob_offset` in the manifest is relative to the start of the blob.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::types::{ActivationRecord, ConfidencePayload, HiddenStates, PromptKind, N_LEVELS};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"ACTS";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 8;
const CONFIDENCE_BLOCK: usize = (N_LEVELS + 1) * 4;

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub record_id: String,
    pub task_id: String,
    pub candidate_id: String,
    pub prompt_kind: PromptKind,
    pub blob_offset: u64,
    pub has_logprobs: bool,
    pub has_confidence: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StoreSummary {
    pub record_count: usize,
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub bytes: usize,
}

/// Validated, immutable collection of activation records.
#[derive(Debug, Clone)]
pub struct ActivationStore {
    n_layers: usize,
    hidden_dim: usize,
    records: Vec<ActivationRecord>,
    by_id: HashMap<String, usize>,
    by_key: HashMap<(String, String, PromptKind), usize>,
}

impl PartialEq for ActivationStore {
    fn eq(&self, other: &Self) -> bool {
        self.n_layers == other.n_layers
            && self.hidden_dim == other.hidden_dim
            && self.records == other.records
    }
}

impl ActivationStore {
    /// Builds a store, checking every invariant the file format promises.
    pub fn new(records: Vec<ActivationRecord>) -> Result<Self> {
        let first = records.first().ok_or(Error::EmptyStore)?;
        let (n_layers, hidden_dim) = (first.hidden.n_layers(), first.hidden.hidden_dim());
        let mut by_id = HashMap::with_capacity(records.len());
        let mut by_key = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.hidden.n_layers() != n_layers || r.hidden.hidden_dim() != hidden_dim {
                return Err(Error::DimensionMismatch(format!(
                    "record {} is {}x{}, store is {n_layers}x{hidden_dim}",
                    r.record_id,
                    r.hidden.n_layers(),
                    r.hidden.hidden_dim()
                )));
            }
            r.validate()?;
            if by_id.insert(r.record_id.clone(), i).is_some() {
                return Err(Error::DuplicateRecordId(r.record_id.clone()));
            }
            by_key
                .entry((r.task_id.clone(), r.candidate_id.clone(), r.prompt_kind))
                .or_insert(i);
        }
        Ok(Self {
            n_layers,
            hidden_dim,
            records,
            by_id,
            by_key,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn records(&self) -> &[ActivationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, record_id: &str) -> Option<&ActivationRecord> {
        self.by_id.get(record_id).map(|&i| &self.records[i])
    }

    /// First record for a (task, candidate, prompt kind) triple.
    pub fn find(&self, task_id: &str, candidate_id: &str, kind: PromptKind) -> Option<&ActivationRecord> {
        self.by_key
            .get(&(task_id.to_owned(), candidate_id.to_owned(), kind))
            .map(|&i| &self.records[i])
    }

    pub fn summary(&self, bytes: usize) -> StoreSummary {
        StoreSummary {
            record_count: self.records.len(),
            n_layers: self.n_layers,
            hidden_dim: self.hidden_dim,
            bytes,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut blob = Vec::new();
        let mut manifest = Vec::new();
        for r in &self.records {
            let entry = ManifestEntry {
                record_id: r.record_id.clone(),
                task_id: r.task_id.clone(),
                candidate_id: r.candidate_id.clone(),
                prompt_kind: r.prompt_kind,
                blob_offset: blob.len() as u64,
                has_logprobs: r.token_logprobs.is_some(),
                has_confidence: r.confidence.is_some(),
            };
            // Serializing a plain struct of strings, bools and ints cannot fail.
            serde_json::to_writer(&mut manifest, &entry).expect("manifest entry serializes");
            manifest.push(b'\n');

            for x in r.hidden.as_slice() {
                blob.extend_from_slice(&x.to_le_bytes());
            }
            if let Some(lp) = &r.token_logprobs {
                blob.extend_from_slice(&(lp.len() as u32).to_le_bytes());
                for x in lp {
                    blob.extend_from_slice(&x.to_le_bytes());
                }
            }
            if let Some(c) = &r.confidence {
                let levels = c.level_joint_probs.unwrap_or([f32::NAN; N_LEVELS]);
                for x in levels {
                    blob.extend_from_slice(&x.to_le_bytes());
                }
                blob.extend_from_slice(&c.p_true.unwrap_or(f32::NAN).to_le_bytes());
            }
        }

        let mut out = Vec::with_capacity(HEADER_LEN + 8 + manifest.len() + blob.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n_layers as u32).to_le_bytes());
        out.extend_from_slice(&(self.hidden_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&blob);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut magic = [0u8; 4];
        let n = bytes.len().min(4);
        magic[..n].copy_from_slice(&bytes[..n]);
        if n < 4 || magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        if bytes.len() < HEADER_LEN + 8 {
            return Err(Error::TruncatedBlob(format!(
                "file is {} bytes, header needs {}",
                bytes.len(),
                HEADER_LEN + 8
            )));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::VersionUnsupported(version));
        }
        let n_layers = read_u32(bytes, 6) as usize;
        let hidden_dim = read_u32(bytes, 10) as usize;
        let record_count = read_u64(bytes, 14);
        let manifest_len = read_u64(bytes, HEADER_LEN);
        if n_layers == 0 || hidden_dim == 0 {
            return Err(Error::CorruptManifest(format!(
                "non-positive dimensions {n_layers}x{hidden_dim}"
            )));
        }
        if record_count == 0 {
            return Err(Error::EmptyStore);
        }

        let manifest_start = HEADER_LEN + 8;
        let manifest_end = manifest_start
            .checked_add(usize::try_from(manifest_len).unwrap_or(usize::MAX))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| {
                Error::CorruptManifest(format!(
                    "manifest length {manifest_len} exceeds file size {}",
                    bytes.len()
                ))
            })?;
        let manifest = std::str::from_utf8(&bytes[manifest_start..manifest_end])
            .map_err(|e| Error::CorruptManifest(format!("manifest is not UTF-8: {e}")))?;
        let entries = manifest
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, line)| {
                serde_json::from_str::<ManifestEntry>(line)
                    .map_err(|e| Error::CorruptManifest(format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        if entries.len() as u64 != record_count {
            return Err(Error::CorruptManifest(format!(
                "header declares {record_count} records, manifest has {}",
                entries.len()
            )));
        }

        let blob = &bytes[manifest_end..];
        let hidden_bytes = n_layers
            .checked_mul(hidden_dim)
            .and_then(|x| x.checked_mul(4))
            .ok_or_else(|| Error::CorruptManifest("dimensions overflow".into()))?;

        let mut extents = Vec::with_capacity(entries.len());
        let mut records = Vec::with_capacity(entries.len());
        for e in &entries {
            let start = usize::try_from(e.blob_offset).unwrap_or(usize::MAX);
            let truncated = |what: &str| {
                Error::TruncatedBlob(format!(
                    "record {}: {what} extends past blob end ({} bytes)",
                    e.record_id,
                    blob.len()
                ))
            };
            let mut cursor = start;
            let take = |cursor: &mut usize, len: usize, what: &str| -> Result<&[u8]> {
                let end = cursor.checked_add(len).filter(|&end| end <= blob.len());
                match end {
                    Some(end) => {
                        let s = &blob[*cursor..end];
                        *cursor = end;
                        Ok(s)
                    }
                    None => Err(truncated(what)),
                }
            };
            let hidden = decode_f32s(take(&mut cursor, hidden_bytes, "hidden states")?);
            let token_logprobs = if e.has_logprobs {
                let count = read_u32(take(&mut cursor, 4, "logprob count")?, 0) as usize;
                let len = count.checked_mul(4).ok_or_else(|| truncated("logprob block"))?;
                Some(decode_f32s(take(&mut cursor, len, "logprob block")?))
            } else {
                None
            };
            let confidence = if e.has_confidence {
                let vals = decode_f32s(take(&mut cursor, CONFIDENCE_BLOCK, "confidence block")?);
                let levels: [f32; N_LEVELS] = vals[..N_LEVELS].try_into().expect("7 levels");
                Some(ConfidencePayload {
                    level_joint_probs: (!levels.iter().all(|x| x.is_nan())).then_some(levels),
                    p_true: (!vals[N_LEVELS].is_nan()).then_some(vals[N_LEVELS]),
                })
            } else {
                None
            };
            extents.push((start, cursor, e.record_id.as_str()));
            records.push(ActivationRecord {
                record_id: e.record_id.clone(),
                task_id: e.task_id.clone(),
                candidate_id: e.candidate_id.clone(),
                prompt_kind: e.prompt_kind,
                hidden: HiddenStates::new(n_layers, hidden_dim, hidden)?,
                token_logprobs,
                confidence,
            });
        }

        extents.sort_unstable();
        for w in extents.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(Error::CorruptManifest(format!(
                    "records {} and {} overlap in the blob",
                    w[0].2, w[1].2
                )));
            }
        }

        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.record_id.as_str()) {
                return Err(Error::DuplicateRecordId(r.record_id.clone()));
            }
        }
        Self::new(records)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<StoreSummary> {
        let path = path.as_ref();
        let bytes = self.to_bytes();
        std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(self.summary(bytes.len()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Validates `records` and writes them as an ACTS file.
pub fn write_store(records: Vec<ActivationRecord>, path: impl AsRef<Path>) -> Result<StoreSummary> {
    ActivationStore::new(records)?.write(path)
}

pub fn read_store(path: impl AsRef<Path>) -> Result<ActivationStore> {
    ActivationStore::read(path)
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn read_u64(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

fn decode_f32s(b: &[u8]) -> Vec<f32> {
    b.chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect()
}
