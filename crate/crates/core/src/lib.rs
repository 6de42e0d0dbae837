//! Weakly supervised visual feature learning from captioned images: caption
//! preprocessing, class-balanced sampling, a small convolutional/MLP backbone
//! with sampled-softmax and one-vs-all losses, an SGD trainer, and the
//! word-prediction, transfer and embedding evaluations.

pub mod data;
pub mod eval;
mod io_util;
pub mod loss;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod textpipe;
pub mod trainer;

pub use scalar::{DType, Scalar};
