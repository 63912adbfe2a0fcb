//! Dense-network substrate: matrices, a gradient tape, the denoiser network,
//! sinusoidal time embeddings and Adam.

mod adam;
mod embed;
mod net;
mod tape;
mod tensor;

pub use adam::{adam_step, OptimizerState};
pub use embed::sinusoidal_embed;
pub use net::{DiffusionNet, NetDims, Param};
pub use tape::{Gradients, ParamId, Tape, Var};
pub use tensor::Tensor2;
