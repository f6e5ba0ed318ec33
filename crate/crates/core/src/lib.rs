//! Contrastive alignment of an IMU encoder to a frozen vision embedding
//! space through a frozen perceiver resampler, with evaluation tools for
//! the shared space.

// Negated comparisons such as `!(x > 0.0)` deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod data;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod io;
pub mod nn;
pub mod params;
pub mod real;
pub mod resampler;
pub mod rng;

pub use alignment::{
    AlignmentModel, Checkpoint, EmbeddingStage, LossConfig, LossTerms, ModelConfig, TrainConfig,
    TrainOutcome,
};
pub use data::{DatasetSplit, ImuWindow, PairedSample, SynthConfig};
pub use encoders::{ImuEncoder, ImuEncoderConfig, TokenSequence, VisionProvider};
pub use error::{Error, Result};
pub use resampler::{Embedding, Latents, Resampler, ResamplerConfig};
