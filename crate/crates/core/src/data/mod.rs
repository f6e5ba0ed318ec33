//! Sensor ingestion, windowing, splitting, batching and synthetic data.

mod batch;
mod manifest;
mod sample;
mod signal;
mod split;
mod synth;
mod window;

pub use batch::{make_batches, sequential_batches};
pub use manifest::{
    load_cache, load_record_signal, parse_manifest, preprocess_manifest, write_cache, CacheEntry,
    CacheSummary, CacheVision, ImuPaths, ManifestRecord, VisionSpec, INDEX_FILE, SUMMARY_FILE,
};
pub use sample::{sample_frame, PairedSample, VideoSpan, VisionRef};
pub use signal::{
    assemble_channels, read_sensor_csv, resample_signal, RawSignal, SensorKind, IMU_CHANNELS,
    TARGET_RATE_HZ,
};
pub use split::{split_dataset, DatasetSplit, SplitPart, SplitPolicy};
pub use synth::{synth_generate, SynthConfig, SynthGenerator, MIN_CENTER_SEPARATION};
pub use window::{extract_window, ImuWindow, NormStats, WINDOW_LEN};

/// Number of action classes in the MMAct label set.
pub const N_ACTION_CLASSES: usize = 35;
