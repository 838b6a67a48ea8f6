//! Sequential recommendation with dual-view (collaborative + semantic) item
//! representations, intent prototypes, and intent-conditioned diffusion
//! augmentation for contrastive training.

pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod dataio;
pub mod diffusion;
pub mod embeddings;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod intent;
pub mod model;
pub mod nn;
pub mod params;
pub mod pipeline;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
