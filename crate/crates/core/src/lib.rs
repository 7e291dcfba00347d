//! NORAD: a variational graph autoencoder with a spike-and-slab latent
//! prior, an overlapping blockmodel edge decoder and an attention topic
//! network over binary node attributes, trained by variational EM.

pub mod adam;
pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod compute;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod evaluate;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod prior;
pub mod rectify;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{NoradError, Result};
pub use tensor::Tensor;
