// SPDX-License-Identifier: MIT OR Apache-2.0

//! JSON run configuration for `evaluate`, with `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baselines::{MetricKind, ReflectiveMode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    #[default]
    Id,
    Ood,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fractions {
    pub fit: f64,
    pub val: f64,
    #[serde(default)]
    pub test: Option<f64>,
}

impl Fractions {
    pub fn outer(self) -> (f64, f64, f64) {
        (self.fit, self.val, self.test.unwrap_or(1.0 - self.fit - self.val))
    }

    pub fn inner(self) -> (f64, f64) {
        (self.fit, self.val)
    }
}

fn default_outer() -> usize {
    10
}

fn default_inner() -> usize {
    4
}

fn default_outer_fractions() -> Fractions {
    Fractions { fit: 0.1, val: 0.1, test: None }
}

fn default_inner_fractions() -> Fractions {
    Fractions { fit: 0.25, val: 0.25, test: None }
}

fn default_metrics() -> Vec<MetricKind> {
    MetricKind::ALL.to_vec()
}

/// Everything `evaluate` needs. Paths are relative to the config file.
/// The seed has no default: a run is reproducible only if it is written down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub protocol: ProtocolKind,
    pub store: PathBuf,
    pub dataset: PathBuf,
    pub qa: PathBuf,
    #[serde(default)]
    pub ood_store: Option<PathBuf>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub seed: u64,
    #[serde(default = "default_outer")]
    pub n_outer_folds: usize,
    #[serde(default = "default_inner")]
    pub n_inner_folds: usize,
    #[serde(default = "default_outer_fractions")]
    pub fractions: Fractions,
    #[serde(default = "default_inner_fractions")]
    pub inner_fractions: Fractions,
    #[serde(default)]
    pub reflective_mode: ReflectiveMode,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricKind>,
}

/// Sets `key` (dot-separated) in `doc`. The value is parsed as JSON when
/// possible and kept as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::BadConfig(format!("override {assignment:?} is not key=value")))?;
    if key.is_empty() {
        return Err(Error::BadConfig(format!("override {assignment:?} has an empty key")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::BadConfig(format!("override {key}: {part} is not inside an object")))?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_owned(), value);
            return Ok(());
        }
        cur = obj
            .entry((*part).to_owned())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one part")
}

impl RunConfig {
    pub fn from_value(doc: Value) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_value(doc).map_err(|e| Error::BadConfig(format!("run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, applies `overrides` in order, and resolves relative
    /// paths against the config file's directory.
    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut doc: Value =
            serde_json::from_str(&text).map_err(|e| Error::BadConfig(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg = Self::from_value(doc)?;
        cfg.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.store);
        fix(&mut self.dataset);
        fix(&mut self.qa);
        if let Some(p) = &mut self.ood_store {
            fix(p);
        }
        if let Some(p) = &mut self.out {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadConfig(m));
        if self.n_outer_folds == 0 || self.n_inner_folds == 0 {
            return bad("fold counts must be positive".into());
        }
        let (f, v, t) = self.fractions.outer();
        for x in [f, v, t, self.inner_fractions.fit, self.inner_fractions.val] {
            if !(0.0..=1.0).contains(&x) {
                return bad(format!("fraction {x} outside [0, 1]"));
            }
        }
        if f + v + t > 1.0 + 1e-9 || self.inner_fractions.fit + self.inner_fractions.val > 1.0 + 1e-9 {
            return bad("fractions sum past 1".into());
        }
        if self.metrics.is_empty() {
            return bad("no metrics selected".into());
        }
        if self.protocol == ProtocolKind::Ood && self.ood_store.is_none() {
            return bad("protocol ood needs ood_store".into());
        }
        Ok(())
    }
}
