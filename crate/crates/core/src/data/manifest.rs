//! Newline-delimited JSON dataset manifests and the preprocessed cache.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::sample::{sample_frame, PairedSample, VideoSpan, VisionRef};
use super::signal::{
    assemble_channels, read_sensor_csv, resample_signal, SensorKind, TARGET_RATE_HZ,
};
use super::window::{extract_window, WINDOW_LEN};
use crate::encoders::TokenSequence;
use crate::error::{Error, Result};
use crate::io::cmeb;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImuPaths {
    pub acc_body: Option<PathBuf>,
    pub acc_wrist: Option<PathBuf>,
    pub gyro: Option<PathBuf>,
    pub magnetometer: Option<PathBuf>,
}

impl ImuPaths {
    fn get(&self, kind: SensorKind) -> Option<&PathBuf> {
        match kind {
            SensorKind::AccBody => self.acc_body.as_ref(),
            SensorKind::AccWrist => self.acc_wrist.as_ref(),
            SensorKind::Gyro => self.gyro.as_ref(),
            SensorKind::Magnetometer => self.magnetometer.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VisionSpec {
    Frames { frames_dir: PathBuf, fps: f64 },
    Embedding { embedding_path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub subject_id: u32,
    pub scene_id: u32,
    pub session_id: u32,
    pub label: usize,
    #[serde(default)]
    pub label_name: Option<String>,
    pub imu: ImuPaths,
    pub vision: VisionSpec,
    #[serde(default)]
    pub t0_s: f64,
}

/// Parses a manifest, collecting every malformed record (with its line
/// number) before failing.
pub fn parse_manifest(text: &str, n_classes: usize) -> Result<Vec<ManifestRecord>> {
    let mut out = Vec::new();
    let mut problems = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("id").map(|id| id.to_string()))
                    .unwrap_or_else(|| "?".into());
                problems.push(format!("line {line_no} (id {id}): {e}"));
                continue;
            }
        };
        for kind in SensorKind::ORDER {
            if rec.imu.get(kind).is_none() {
                problems.push(format!(
                    "line {line_no} (id {}): missing {kind} path",
                    rec.id
                ));
            }
        }
        if rec.label >= n_classes {
            problems.push(format!(
                "line {line_no} (id {}): label {} outside [0, {n_classes})",
                rec.id, rec.label
            ));
        }
        out.push(rec);
    }
    if problems.is_empty() {
        Ok(out)
    } else {
        Err(Error::Manifest(problems))
    }
}

/// Vision reference stored in the cache index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CacheVision {
    Frames {
        frames_dir: PathBuf,
        fps: f64,
        t0_s: f64,
    },
    Embedding {
        path: PathBuf,
    },
    Features {
        path: PathBuf,
    },
}

/// One preprocessed sample: the assembled 50 Hz signal plus metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub id: String,
    pub subject_id: u32,
    pub scene_id: u32,
    pub session_id: u32,
    pub label: usize,
    pub label_name: Option<String>,
    /// Path relative to the cache directory.
    pub signal: PathBuf,
    pub signal_t0_s: f64,
    pub n_rows: usize,
    pub digest: String,
    pub vision: CacheVision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheSummary {
    pub n_samples: usize,
    pub per_class: BTreeMap<usize, usize>,
    pub per_subject: BTreeMap<u32, usize>,
}

pub const INDEX_FILE: &str = "index.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn snap_rate(rate: f64) -> f64 {
    if ((rate - TARGET_RATE_HZ) / TARGET_RATE_HZ).abs() < 0.01 {
        TARGET_RATE_HZ
    } else {
        rate
    }
}

/// Loads, resamples and assembles the four sensor streams of one record.
pub fn load_record_signal(
    rec: &ManifestRecord,
    base: &Path,
) -> Result<(ndarray::Array2<f32>, f64)> {
    let mut signals = Vec::with_capacity(4);
    let mut t0 = None;
    for kind in SensorKind::ORDER {
        let path = rec
            .imu
            .get(kind)
            .ok_or_else(|| Error::MissingSensor(format!("{kind} (record {})", rec.id)))?;
        let (mut sig, start) = read_sensor_csv(&resolve(base, path), kind)?;
        sig.rate_hz = snap_rate(sig.rate_hz);
        signals.push(resample_signal(&sig, TARGET_RATE_HZ)?);
        t0.get_or_insert(start);
    }
    Ok((
        assemble_channels(&signals)?.mapv(|v| v as f32),
        t0.unwrap_or(0.0),
    ))
}

fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_entries(out_dir: &Path, entries: &[CacheEntry]) -> Result<CacheSummary> {
    let mut index = String::new();
    let mut summary = CacheSummary {
        n_samples: entries.len(),
        per_class: BTreeMap::new(),
        per_subject: BTreeMap::new(),
    };
    for e in entries {
        index.push_str(&serde_json::to_string(e)?);
        index.push('\n');
        *summary.per_class.entry(e.label).or_default() += 1;
        *summary.per_subject.entry(e.subject_id).or_default() += 1;
    }
    let ip = out_dir.join(INDEX_FILE);
    fs::write(&ip, index).map_err(|e| Error::io(&ip, e))?;
    let sp = out_dir.join(SUMMARY_FILE);
    fs::write(&sp, serde_json::to_vec_pretty(&summary)?).map_err(|e| Error::io(&sp, e))?;
    Ok(summary)
}

fn write_signal(
    out_dir: &Path,
    id: &str,
    signal: &ndarray::Array2<f32>,
) -> Result<(PathBuf, String)> {
    let rel = PathBuf::from("signals").join(format!("{id}.cmeb"));
    let bytes = cmeb::encode(signal.view());
    let path = out_dir.join(&rel);
    fs::create_dir_all(path.parent().expect("parent")).map_err(|e| Error::io(&path, e))?;
    fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
    Ok((rel, digest_bytes(&bytes)))
}

/// Builds the windowed dataset cache from a manifest file.
pub fn preprocess_manifest(
    manifest: &Path,
    out_dir: &Path,
    n_classes: usize,
) -> Result<CacheSummary> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let records = parse_manifest(&text, n_classes)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::with_capacity(records.len());
    for rec in &records {
        let (signal, t0) = load_record_signal(rec, base)?;
        let (rel, digest) = write_signal(out_dir, &rec.id, &signal)?;
        let vision = match &rec.vision {
            VisionSpec::Frames { frames_dir, fps } => CacheVision::Frames {
                frames_dir: resolve(base, frames_dir),
                fps: *fps,
                t0_s: rec.t0_s,
            },
            VisionSpec::Embedding { embedding_path } => CacheVision::Embedding {
                path: resolve(base, embedding_path),
            },
        };
        entries.push(CacheEntry {
            id: rec.id.clone(),
            subject_id: rec.subject_id,
            scene_id: rec.scene_id,
            session_id: rec.session_id,
            label: rec.label,
            label_name: rec.label_name.clone(),
            signal: rel,
            signal_t0_s: t0,
            n_rows: signal.nrows(),
            digest,
            vision,
        });
    }
    write_entries(out_dir, &entries)
}

/// Writes in-memory samples (e.g. synthetic ones) in the cache layout.
pub fn write_cache(samples: &[PairedSample], out_dir: &Path) -> Result<CacheSummary> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let signal = s.signal.as_deref().cloned().unwrap_or_else(|| {
            s.imu
                .values
                .slice(ndarray::s![..s.imu.valid_len, ..])
                .to_owned()
        });
        let (rel, digest) = write_signal(out_dir, &s.id, &signal)?;
        let vision = match &s.vision {
            VisionRef::Features(f) | VisionRef::Tokens(f) => {
                let rel = PathBuf::from("vision").join(format!("{}.cmeb", s.id));
                cmeb::write(&out_dir.join(&rel), f.tokens.view())?;
                if matches!(s.vision, VisionRef::Features(_)) {
                    CacheVision::Features { path: rel }
                } else {
                    CacheVision::Embedding { path: rel }
                }
            }
            VisionRef::EmbeddingFile(p) => CacheVision::Embedding { path: p.clone() },
            VisionRef::Frame { .. } => {
                return Err(Error::InvalidArgument(format!(
                    "sample {}: frame references cannot be cached directly",
                    s.id
                )))
            }
        };
        entries.push(CacheEntry {
            id: s.id.clone(),
            subject_id: s.subject_id,
            scene_id: s.scene_id,
            session_id: s.session_id,
            label: s.label,
            label_name: None,
            signal: rel,
            signal_t0_s: s.signal_t0_s,
            n_rows: signal.nrows(),
            digest,
            vision,
        });
    }
    write_entries(out_dir, &entries)
}

fn count_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut frames: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension()
                    .and_then(|e| e.to_str())
                    .map(str::to_ascii_lowercase)
                    .as_deref(),
                Some("png" | "jpg" | "jpeg")
            )
        })
        .collect();
    frames.sort();
    Ok(frames)
}

/// Loads a cache written by [`preprocess_manifest`] or [`write_cache`].
/// Frame references are resolved with `frame_seed`.
pub fn load_cache(dir: &Path, frame_seed: u64) -> Result<Vec<PairedSample>> {
    let ip = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&ip).map_err(|e| Error::io(&ip, e))?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let e: CacheEntry = serde_json::from_str(line)?;
        let signal = cmeb::read(&resolve(dir, &e.signal))?;
        let imu = extract_window(signal.view(), 0, e.signal_t0_s)?;
        let vision = match &e.vision {
            CacheVision::Embedding { path } => VisionRef::EmbeddingFile(resolve(dir, path)),
            CacheVision::Features { path } => {
                VisionRef::Features(TokenSequence::new(cmeb::read(&resolve(dir, path))?))
            }
            CacheVision::Frames {
                frames_dir,
                fps,
                t0_s,
            } => {
                let frames = count_frames(frames_dir)?;
                let span = VideoSpan {
                    start_s: *t0_s,
                    fps: *fps,
                    n_frames: frames.len(),
                };
                let index =
                    sample_frame(&span, imu.start_time_s, imu.end_time_s(), frame_seed, &e.id)?;
                VisionRef::Frame {
                    path: frames[index].clone(),
                    index,
                }
            }
        };
        out.push(PairedSample {
            id: e.id,
            signal: (signal.nrows() > WINDOW_LEN).then(|| Arc::new(signal)),
            signal_t0_s: e.signal_t0_s,
            imu,
            vision,
            label: e.label,
            subject_id: e.subject_id,
            scene_id: e.scene_id,
            session_id: e.session_id,
        });
    }
    Ok(out)
}
