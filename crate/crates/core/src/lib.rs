//! Mixed-type tabular synthesis with two co-evolving conditional diffusion models.
//!
//! A Gaussian diffusion model generates the continuous columns while reading the
//! noisy discrete columns as its condition, and a multinomial diffusion model
//! does the reverse. Both are trained together, each with a triplet loss that
//! pushes its one-step reconstruction towards the real record and away from one
//! conditioned on shuffled partners.
//!
//! The main entry points are [`engine::CoDiModel`] for training and sampling,
//! [`data`] for schemas, CSV and encoding, and [`eval`] for coverage, TSTR and
//! marginal histograms.

mod error;

pub mod ablation;
pub mod contrastive;
pub mod data;
pub mod diffusion;
pub mod engine;
pub mod eval;
pub mod nn;
pub mod rng;
pub mod schedule;

pub use error::{Error, Result};
pub use nn::Tensor2;
pub use schedule::NoiseSchedule;
