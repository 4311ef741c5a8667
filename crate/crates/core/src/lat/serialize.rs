// SPDX-License-Identifier: MIT OR Apache-2.0

//! Reader file: `"LATR" | version u16 | header_len u64 | JSON header | blob`.
//!
//! The blob holds `layers × dim` f32 LE, one direction per layer (zeros for
//! unusable layers). Directions are renormalized in the target precision on
//! load.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FitMeta, LatReader, LayerFit, ReadingVector};
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::scalar::Real;

pub const READER_MAGIC: [u8; 4] = *b"LATR";
pub const READER_VERSION: u16 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u16,
    layers: usize,
    dim: usize,
    chosen_layer: Option<usize>,
    /// +1 / −1 per layer, 0 for unusable layers.
    signs: Vec<i8>,
    unusable: Vec<UnusableEntry>,
    fit_meta: FitMeta,
}

#[derive(Debug, Serialize, Deserialize)]
struct UnusableEntry {
    layer: usize,
    reason: String,
}

impl<T: Real> LatReader<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut signs = Vec::with_capacity(self.layers.len());
        let mut unusable = Vec::new();
        let mut blob = Vec::with_capacity(self.layers.len() * self.hidden_dim * 4);
        for l in &self.layers {
            match l {
                LayerFit::Usable(r) => {
                    signs.push(r.sign);
                    for x in &r.direction {
                        let v = x.to_f32().unwrap_or(f32::NAN);
                        blob.extend_from_slice(&v.to_le_bytes());
                    }
                }
                LayerFit::Unusable { layer, reason } => {
                    signs.push(0);
                    unusable.push(UnusableEntry {
                        layer: *layer,
                        reason: reason.clone(),
                    });
                    blob.extend(std::iter::repeat_n(0u8, self.hidden_dim * 4));
                }
            }
        }
        let header = Header {
            version: READER_VERSION,
            layers: self.layers.len(),
            dim: self.hidden_dim,
            chosen_layer: self.chosen_layer,
            signs,
            unusable,
            fit_meta: self.fit_meta.clone(),
        };
        let json = serde_json::to_vec(&header).expect("reader header serializes");
        let mut out = Vec::with_capacity(14 + json.len() + blob.len());
        out.extend_from_slice(&READER_MAGIC);
        out.extend_from_slice(&READER_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blob);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 14 || bytes[..4] != READER_MAGIC {
            return Err(Error::BadReader("missing LATR magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != READER_VERSION {
            return Err(Error::VersionUnsupported(version));
        }
        let header_len = u64::from_le_bytes(bytes[6..14].try_into().expect("8 bytes")) as usize;
        let header_end = 14usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::BadReader("header length exceeds file".into()))?;
        let header: Header = serde_json::from_slice(&bytes[14..header_end])?;
        if header.signs.len() != header.layers {
            return Err(Error::BadReader("signs length differs from layer count".into()));
        }
        let blob = &bytes[header_end..];
        if blob.len() != header.layers * header.dim * 4 {
            return Err(Error::BadReader(format!(
                "direction blob is {} bytes, expected {}",
                blob.len(),
                header.layers * header.dim * 4
            )));
        }

        let mut layers = Vec::with_capacity(header.layers);
        for (l, &sign) in header.signs.iter().enumerate() {
            let chunk = &blob[l * header.dim * 4..(l + 1) * header.dim * 4];
            if sign == 0 {
                let reason = header
                    .unusable
                    .iter()
                    .find(|u| u.layer == l)
                    .map(|u| u.reason.clone())
                    .unwrap_or_default();
                layers.push(LayerFit::Unusable { layer: l, reason });
                continue;
            }
            let mut direction: Vec<T> = chunk
                .chunks_exact(4)
                .map(|c| T::of_f32(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                .collect();
            let len = norm(&direction);
            if len <= T::zero() || !len.is_finite() {
                return Err(Error::BadReader(format!("layer {l} direction is not normalizable")));
            }
            direction.iter_mut().for_each(|x| *x = *x / len);
            layers.push(LayerFit::Usable(ReadingVector { layer: l, direction, sign }));
        }
        let reader = LatReader::from_layers(header.dim, layers, header.fit_meta)?;
        match header.chosen_layer {
            Some(l) => reader.with_chosen_layer(l),
            None => Ok(reader),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
