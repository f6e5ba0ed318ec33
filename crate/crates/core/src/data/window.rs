use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::signal::{IMU_CHANNELS, TARGET_RATE_HZ};
use crate::error::{Error, Result};

/// Fixed window length in samples at 50 Hz.
pub const WINDOW_LEN: usize = 256;

/// A 256 x 12 IMU segment, zero-padded on the right past `valid_len`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuWindow {
    pub values: Array2<f32>,
    pub valid_len: usize,
    pub start_time_s: f64,
}

impl ImuWindow {
    pub fn end_time_s(&self) -> f64 {
        self.start_time_s + self.valid_len as f64 / TARGET_RATE_HZ
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.dim() != (WINDOW_LEN, IMU_CHANNELS) {
            return Err(Error::Shape(format!(
                "window must be 256x12, got {:?}",
                self.values.dim()
            )));
        }
        if !(1..=WINDOW_LEN).contains(&self.valid_len) {
            return Err(Error::InvalidArgument(format!(
                "valid_len {} out of range",
                self.valid_len
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("IMU window".into()));
        }
        Ok(())
    }
}

/// Copies up to 256 rows starting at `start`; remaining rows stay zero.
/// `t0_s` is the timestamp of row 0 of `assembled`.
pub fn extract_window(
    assembled: ArrayView2<'_, f32>,
    start: usize,
    t0_s: f64,
) -> Result<ImuWindow> {
    let t = assembled.nrows();
    if start >= t {
        return Err(Error::WindowStart { start, len: t });
    }
    if assembled.ncols() != IMU_CHANNELS {
        return Err(Error::Shape(format!(
            "expected 12 channels, got {}",
            assembled.ncols()
        )));
    }
    let valid_len = WINDOW_LEN.min(t - start);
    let mut values = Array2::zeros((WINDOW_LEN, IMU_CHANNELS));
    values
        .slice_mut(s![..valid_len, ..])
        .assign(&assembled.slice(s![start..start + valid_len, ..]));
    Ok(ImuWindow {
        values,
        valid_len,
        start_time_s: t0_s + start as f64 / TARGET_RATE_HZ,
    })
}

/// Per-channel z-score statistics computed on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity() -> Self {
        Self {
            mean: vec![0.0; IMU_CHANNELS],
            std: vec![1.0; IMU_CHANNELS],
        }
    }

    /// Statistics over the valid (unpadded) rows of every window.
    pub fn fit<'a>(windows: impl IntoIterator<Item = &'a ImuWindow>) -> Self {
        let mut sum = [0.0f64; IMU_CHANNELS];
        let mut sq = [0.0f64; IMU_CHANNELS];
        let mut n = 0usize;
        for w in windows {
            for row in w.values.slice(s![..w.valid_len, ..]).rows() {
                for (c, &v) in row.iter().enumerate() {
                    sum[c] += f64::from(v);
                    sq[c] += f64::from(v) * f64::from(v);
                }
                n += 1;
            }
        }
        if n == 0 {
            return Self::identity();
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / nf - m * m).max(0.0);
                if var > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    /// Normalizes the valid rows; padded rows stay exactly zero.
    pub fn apply(&self, w: &ImuWindow) -> ImuWindow {
        let mut out = w.clone();
        for mut row in out.values.slice_mut(s![..w.valid_len, ..]).rows_mut() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = ((f64::from(*v) - self.mean[c]) / self.std[c]) as f32;
            }
        }
        out
    }
}
