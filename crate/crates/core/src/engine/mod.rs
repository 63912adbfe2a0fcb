//! Joint training and co-evolving sampling of the two diffusion models.

mod checkpoint;
mod config;
mod model;

pub use checkpoint::{architecture_hash, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{TrainConfig, CONFIG_KEYS};
pub use model::{CoDiModel, StepLosses, TrainProgress, UpdateOrder, SAMPLE_CHUNK};
