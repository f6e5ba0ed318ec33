use std::path::PathBuf;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng as _;

use super::window::ImuWindow;
use crate::encoders::TokenSequence;
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

/// Where the vision side of a pair comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum VisionRef {
    /// A pre-extracted frame image. Needs an upstream embedding to be usable.
    Frame { path: PathBuf, index: usize },
    /// A CMEB file holding the frozen vision encoder's token matrix.
    EmbeddingFile(PathBuf),
    /// Vision tokens already in memory (returned verbatim by providers).
    Tokens(TokenSequence),
    /// Synthetic per-token vision features, rendered by the stub provider.
    Features(TokenSequence),
}

/// One IMU window paired with its vision counterpart.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub id: String,
    pub imu: ImuWindow,
    /// Full 50 Hz assembled signal when longer than one window; enables
    /// random window starts during training.
    pub signal: Option<Arc<Array2<f32>>>,
    pub signal_t0_s: f64,
    pub vision: VisionRef,
    pub label: usize,
    pub subject_id: u32,
    pub scene_id: u32,
    pub session_id: u32,
}

/// Temporal extent of a video, in frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VideoSpan {
    pub start_s: f64,
    pub fps: f64,
    pub n_frames: usize,
}

impl VideoSpan {
    pub fn frame_time(&self, i: usize) -> f64 {
        self.start_s + i as f64 / self.fps
    }
}

const SPAN_EPS: f64 = 1e-9;

/// Draws a frame whose timestamp lies inside the window span
/// `[start_s, end_s]`. Deterministic in `seed`.
pub fn sample_frame(
    video: &VideoSpan,
    start_s: f64,
    end_s: f64,
    seed: u64,
    id: &str,
) -> Result<usize> {
    if video.fps <= 0.0 || video.n_frames == 0 {
        return Err(Error::InvalidArgument(format!("{id}: empty video")));
    }
    let lo = ((start_s - video.start_s) * video.fps - SPAN_EPS)
        .ceil()
        .max(0.0);
    let hi = ((end_s - video.start_s) * video.fps + SPAN_EPS)
        .floor()
        .min((video.n_frames - 1) as f64);
    if hi < lo {
        return Err(Error::Misaligned { id: id.to_string() });
    }
    let (lo, hi) = (lo as usize, hi as usize);
    let mut rng = stream_rng(seed, stream::FRAME, &[crate::rng::derive_seed(0, id, &[])]);
    Ok(rng.random_range(lo..=hi))
}
