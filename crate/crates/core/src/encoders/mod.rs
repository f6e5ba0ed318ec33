//! Modality encoders: the trainable IMU transformer and the frozen vision
//! embedding provider.

mod imu;
mod vision;

pub use imu::{ImuEncoder, ImuEncoderConfig};
pub use vision::{VisionProvider, VisionStub, VisionStubConfig};

use ndarray::Array2;

use crate::error::{Error, Result};

/// L x D token matrix produced by either encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub tokens: Array2<f32>,
}

impl TokenSequence {
    pub fn new(tokens: Array2<f32>) -> Self {
        Self { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.tokens.ncols()
    }

    pub fn validate(&self, expected_dim: usize) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Shape("empty token sequence".into()));
        }
        if self.dim() != expected_dim {
            return Err(Error::Shape(format!(
                "token dimension {} does not match configured {expected_dim}",
                self.dim()
            )));
        }
        if self.tokens.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("token sequence".into()));
        }
        Ok(())
    }
}
