// SPDX-License-Identifier: MIT OR Apache-2.0

//! Reading-vector fit and scoring.
//!
//! For every layer: subtract each pair's incorrect hidden state from its
//! correct one, center the differences, take the first principal component,
//! and orient it so that correct stimuli tend to project higher. A candidate's
//! representation score is the signed dot product of its raw hidden state with
//! the chosen layer's direction.

mod serialize;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{HiddenStates, PairedActivations};
use crate::error::{Error, Result};
use crate::linalg::{argmax_first, dot_f32, first_principal_component, Matrix};
use crate::scalar::Real;

pub use serialize::{READER_MAGIC, READER_VERSION};

/// Per-layer paired differences `H_c − H_w` and their means.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceSet<T> {
    per_layer: Vec<Matrix<T>>,
    mean: Vec<Vec<T>>,
}

impl<T: Real> DifferenceSet<T> {
    pub fn n_layers(&self) -> usize {
        self.per_layer.len()
    }

    pub fn n_pairs(&self) -> usize {
        self.per_layer.first().map_or(0, Matrix::rows)
    }

    /// Uncentered differences at `layer`.
    pub fn raw(&self, layer: usize) -> &Matrix<T> {
        &self.per_layer[layer]
    }

    pub fn mean(&self, layer: usize) -> &[T] {
        &self.mean[layer]
    }

    pub fn centered(&self, layer: usize) -> Matrix<T> {
        self.per_layer[layer].centered_by(&self.mean[layer])
    }
}

fn check_pairs(pairs: &[PairedActivations]) -> Result<(usize, usize)> {
    if pairs.len() < 2 {
        return Err(Error::TooFewPairs {
            needed: 2,
            got: pairs.len(),
        });
    }
    let (l, d) = (pairs[0].correct.n_layers(), pairs[0].correct.hidden_dim());
    for p in pairs {
        for h in [&p.correct, &p.incorrect] {
            if h.n_layers() != l || h.hidden_dim() != d {
                return Err(Error::DimensionMismatch(format!(
                    "pair for task {} is {}x{}, expected {l}x{d}",
                    p.task_id,
                    h.n_layers(),
                    h.hidden_dim()
                )));
            }
        }
    }
    Ok((l, d))
}

pub fn compute_differences<T: Real>(pairs: &[PairedActivations]) -> Result<DifferenceSet<T>> {
    let (n_layers, dim) = check_pairs(pairs)?;
    let per_layer: Vec<Matrix<T>> = (0..n_layers)
        .map(|l| {
            let data = pairs
                .iter()
                .flat_map(|p| {
                    p.correct
                        .layer(l)
                        .iter()
                        .zip(p.incorrect.layer(l))
                        .map(|(&c, &w)| T::of_f32(c) - T::of_f32(w))
                })
                .collect();
            Matrix::new(pairs.len(), dim, data)
        })
        .collect::<Result<_>>()?;
    let mean = per_layer.iter().map(Matrix::column_means).collect();
    Ok(DifferenceSet { per_layer, mean })
}

/// Signed unit direction for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadingVector<T> {
    pub layer: usize,
    pub direction: Vec<T>,
    pub sign: i8,
}

/// Projections of each pair's correct and incorrect hidden states at a layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SignEvidence<T> {
    pub layer: usize,
    pub correct: Vec<T>,
    pub incorrect: Vec<T>,
}

impl<T: Real> SignEvidence<T> {
    /// Pairs whose correct projection strictly exceeds the incorrect one.
    pub fn wins(&self) -> usize {
        self.correct
            .iter()
            .zip(&self.incorrect)
            .filter(|(c, w)| c > w)
            .count()
    }
}

pub fn sign_evidence<T: Real>(direction: &[T], pairs: &[PairedActivations], layer: usize) -> SignEvidence<T> {
    let (correct, incorrect) = pairs
        .iter()
        .map(|p| {
            (
                dot_f32(direction, p.correct.layer(layer)),
                dot_f32(direction, p.incorrect.layer(layer)),
            )
        })
        .unzip();
    SignEvidence {
        layer,
        correct,
        incorrect,
    }
}

/// +1 when at least half of the pairs project their correct stimulus higher.
pub fn assign_sign<T: Real>(direction: &[T], pairs: &[PairedActivations], layer: usize) -> i8 {
    let ev = sign_evidence(direction, pairs, layer);
    if 2 * ev.wins() >= pairs.len() {
        1
    } else {
        -1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerFit<T> {
    Usable(ReadingVector<T>),
    Unusable { layer: usize, reason: String },
}

impl<T> LayerFit<T> {
    pub fn reading(&self) -> Option<&ReadingVector<T>> {
        match self {
            LayerFit::Usable(r) => Some(r),
            LayerFit::Unusable { .. } => None,
        }
    }
}

/// What held-out data the layer choice was made on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionBasis {
    /// Two-way correct-vs-incorrect discrimination on fit-style pairs.
    Pairs,
    /// Multiple-choice instances.
    Choices,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FitMeta {
    pub n_pairs: usize,
    pub seed: Option<u64>,
    pub source: String,
    pub selection: Option<SelectionBasis>,
}

/// Fitted per-layer reading vectors plus the chosen operating layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LatReader<T> {
    hidden_dim: usize,
    layers: Vec<LayerFit<T>>,
    chosen_layer: Option<usize>,
    pub fit_meta: FitMeta,
}

impl<T: Real> LatReader<T> {
    /// Assembles a reader from parts, checking shapes and unit norms.
    pub fn from_layers(hidden_dim: usize, layers: Vec<LayerFit<T>>, fit_meta: FitMeta) -> Result<Self> {
        for (i, l) in layers.iter().enumerate() {
            let layer = match l {
                LayerFit::Usable(r) => {
                    if r.direction.len() != hidden_dim {
                        return Err(Error::DimensionMismatch(format!(
                            "layer {i} direction has {} entries, expected {hidden_dim}",
                            r.direction.len()
                        )));
                    }
                    if r.sign != 1 && r.sign != -1 {
                        return Err(Error::BadReader(format!("layer {i} sign {}", r.sign)));
                    }
                    r.layer
                }
                LayerFit::Unusable { layer, .. } => *layer,
            };
            if layer != i {
                return Err(Error::BadReader(format!("layer entry {i} labeled {layer}")));
            }
        }
        Ok(Self {
            hidden_dim,
            layers,
            chosen_layer: None,
            fit_meta,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn layers(&self) -> &[LayerFit<T>] {
        &self.layers
    }

    pub fn reading(&self, layer: usize) -> Option<&ReadingVector<T>> {
        self.layers.get(layer).and_then(LayerFit::reading)
    }

    pub fn usable_layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.reading().map(|_| i))
    }

    pub fn chosen_layer(&self) -> Option<usize> {
        self.chosen_layer
    }

    pub fn with_chosen_layer(mut self, layer: usize) -> Result<Self> {
        if self.reading(layer).is_none() {
            return Err(Error::UnusableLayer(layer));
        }
        self.chosen_layer = Some(layer);
        Ok(self)
    }

    /// `sign · ⟨direction, hidden[layer]⟩`, on the raw hidden state.
    pub fn score(&self, hidden: &HiddenStates, layer: usize) -> Result<T> {
        let r = self.reading(layer).ok_or(Error::UnusableLayer(layer))?;
        if hidden.hidden_dim() != self.hidden_dim || hidden.n_layers() != self.layers.len() {
            return Err(Error::DimensionMismatch(format!(
                "hidden states are {}x{}, reader expects {}x{}",
                hidden.n_layers(),
                hidden.hidden_dim(),
                self.layers.len(),
                self.hidden_dim
            )));
        }
        let s = dot_f32(&r.direction, hidden.layer(layer));
        Ok(if r.sign < 0 { -s } else { s })
    }

    /// Scores at the chosen layer.
    pub fn score_chosen(&self, hidden: &HiddenStates) -> Result<T> {
        let layer = self.chosen_layer.ok_or(Error::NoUsableLayer)?;
        self.score(hidden, layer)
    }
}

pub fn score<T: Real>(reader: &LatReader<T>, hidden: &HiddenStates, layer: usize) -> Result<T> {
    reader.score(hidden, layer)
}

/// Fits one reading vector per layer. Degenerate layers are kept as
/// [`LayerFit::Unusable`]; the fit fails only when no layer is usable.
pub fn fit<T: Real>(pairs: &[PairedActivations]) -> Result<LatReader<T>> {
    let (n_layers, dim) = check_pairs(pairs)?;
    let diffs = compute_differences::<T>(pairs)?;
    let layers: Vec<LayerFit<T>> = (0..n_layers)
        .into_par_iter()
        .map(|l| fit_layer(&diffs, pairs, l))
        .collect::<Result<_>>()?;
    if layers.iter().all(|l| l.reading().is_none()) {
        return Err(Error::FitFailed);
    }
    LatReader::from_layers(
        dim,
        layers,
        FitMeta {
            n_pairs: pairs.len(),
            ..FitMeta::default()
        },
    )
}

fn fit_layer<T: Real>(diffs: &DifferenceSet<T>, pairs: &[PairedActivations], layer: usize) -> Result<LayerFit<T>> {
    let centered = diffs.centered(layer);
    // Differences that are constant up to rounding leave nothing to fit.
    let scale = diffs.raw(layer).max_abs();
    if centered.max_abs() <= T::lit(64.0) * T::epsilon() * scale {
        return Ok(LayerFit::Unusable {
            layer,
            reason: "DegenerateFit: centered differences vanish".into(),
        });
    }
    match first_principal_component(&centered) {
        Ok(direction) => {
            let sign = assign_sign(&direction, pairs, layer);
            Ok(LayerFit::Usable(ReadingVector {
                layer,
                direction,
                sign,
            }))
        }
        Err(e @ Error::DegenerateFit(_)) => Ok(LayerFit::Unusable {
            layer,
            reason: e.to_string(),
        }),
        Err(e) => Err(e),
    }
}

/// One multiple-choice instance as hidden states.
#[derive(Debug, Clone)]
pub struct ChoiceSet<'a> {
    pub candidates: Vec<&'a HiddenStates>,
    pub correct_index: usize,
}

/// Held-out data for layer selection.
#[derive(Debug, Clone, Copy)]
pub enum Validation<'a> {
    /// Correct iff the correct stimulus scores strictly higher.
    Pairs(&'a [PairedActivations]),
    /// Correct iff the argmax (lowest index on ties) is the correct choice.
    Choices(&'a [ChoiceSet<'a>]),
}

impl Validation<'_> {
    pub fn len(&self) -> usize {
        match self {
            Validation::Pairs(p) => p.len(),
            Validation::Choices(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn basis(&self) -> SelectionBasis {
        match self {
            Validation::Pairs(_) => SelectionBasis::Pairs,
            Validation::Choices(_) => SelectionBasis::Choices,
        }
    }
}

/// Accuracy of one layer's reading on held-out data.
pub fn layer_accuracy<T: Real>(reader: &LatReader<T>, layer: usize, data: Validation<'_>) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let hits = match data {
        Validation::Pairs(pairs) => {
            let mut hits = 0usize;
            for p in pairs {
                if reader.score(&p.correct, layer)? > reader.score(&p.incorrect, layer)? {
                    hits += 1;
                }
            }
            hits
        }
        Validation::Choices(sets) => {
            let mut hits = 0usize;
            for s in sets {
                let scores = s
                    .candidates
                    .iter()
                    .map(|h| reader.score(h, layer))
                    .collect::<Result<Vec<T>>>()?;
                if argmax_first(&scores) == s.correct_index {
                    hits += 1;
                }
            }
            hits
        }
    };
    Ok(hits as f64 / data.len() as f64)
}

/// Accuracy per layer; `None` for unusable layers.
pub fn layer_accuracies<T: Real>(reader: &LatReader<T>, data: Validation<'_>) -> Result<Vec<Option<f64>>> {
    if data.is_empty() {
        return Err(Error::EmptyValidation);
    }
    (0..reader.n_layers())
        .map(|l| match reader.reading(l) {
            Some(_) => layer_accuracy(reader, l, data).map(Some),
            None => Ok(None),
        })
        .collect()
}

fn best_layer<T: Real>(reader: &LatReader<T>, data: Validation<'_>) -> Result<usize> {
    if reader.usable_layers().next().is_none() {
        return Err(Error::NoUsableLayer);
    }
    let acc = layer_accuracies(reader, data)?;
    let mut best: Option<(usize, f64)> = None;
    for (l, a) in acc.iter().enumerate() {
        if let Some(a) = *a {
            if best.is_none_or(|(_, b)| a > b) {
                best = Some((l, a));
            }
        }
    }
    best.map(|(l, _)| l).ok_or(Error::NoUsableLayer)
}

/// Picks the usable layer with the highest validation accuracy (lowest index on ties).
pub fn select_layer<T: Real>(reader: &LatReader<T>, validation: Validation<'_>) -> Result<LatReader<T>> {
    let layer = best_layer(reader, validation)?;
    let mut out = reader.clone().with_chosen_layer(layer)?;
    out.fit_meta.selection = Some(validation.basis());
    Ok(out)
}

/// Test-set optimal layer. An upper bound for reporting only.
pub fn select_layer_oracle<T: Real>(reader: &LatReader<T>, test: Validation<'_>) -> Result<usize> {
    best_layer(reader, test)
}
