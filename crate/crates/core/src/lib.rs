// SPDX-License-Identifier: MIT OR Apache-2.0

//! Linear artificial tomography (LAT) for judging code correctness from
//! hidden states, with the baselines and evaluation protocols it is compared
//! against.
//!
//! Numerics are generic over [`Real`] (`f32` or `f64`); the `*64` aliases
//! below are what the CLI uses.

pub mod baselines;
pub mod config;
pub mod datamodel;
pub mod error;
pub mod eval;
pub mod lat;
pub mod linalg;
pub mod scalar;
pub mod seed;
pub mod stimuli;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Real;

pub type LatReader64 = lat::LatReader<f64>;
pub type LatReader32 = lat::LatReader<f32>;
pub type DifferenceSet64 = lat::DifferenceSet<f64>;
pub type DifferenceSet32 = lat::DifferenceSet<f32>;
pub type ReadingVector64 = lat::ReadingVector<f64>;
pub type Matrix64 = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
