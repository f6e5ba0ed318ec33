//! Synthetic paired datasets with a known latent structure.
//!
//! Each pair is driven by a latent `z = center[class] + offset`, where the
//! offset lies in a ball of radius `pair_radius`. The IMU window renders
//! `z + imu noise`: each latent coordinate drives a constant channel offset
//! (orthonormal directions across coordinates) plus a channel-mixed sinusoid
//! with its own integer frequency. The map is an exact scaled isometry from
//! latent space into the window, and the offsets keep every coordinate
//! readable from time-averaged features.
//! The vision side renders `z + vision noise` through per-token linear maps
//! (a shared map plus a per-token part) into features that the stub vision
//! provider consumes.

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::sample::{PairedSample, VisionRef};
use super::signal::IMU_CHANNELS;
use super::window::{ImuWindow, WINDOW_LEN};
use crate::encoders::TokenSequence;
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub n_pairs: usize,
    pub latent_dim: usize,
    /// Standard deviation of the per-coordinate IMU-side latent noise.
    pub noise_sigma: f64,
    /// Standard deviation of the vision-side latent noise.
    pub vision_noise_sigma: f64,
    pub pair_radius: f64,
    pub center_scale: f64,
    pub vision_len: usize,
    pub vision_feature_dim: usize,
    pub n_subjects: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 8,
            n_pairs: 512,
            latent_dim: 8,
            noise_sigma: 0.05,
            vision_noise_sigma: 0.05,
            pair_radius: 1.0,
            center_scale: 1.2,
            vision_len: 64,
            vision_feature_dim: 32,
            n_subjects: 10,
            seed: 0,
        }
    }
}

/// Offset amplitude; with unit sinusoid mixes both parts carry equal energy.
const OFFSET_GAIN: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Minimum distance between class centers, in units of `pair_radius`.
/// Above 4 radii every within-class distance is below every cross-class one.
pub const MIN_CENTER_SEPARATION: f64 = 4.5;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::InvalidArgument("n_classes must be >= 2".into()));
        }
        if self.n_pairs < self.n_classes {
            return Err(Error::InvalidArgument(
                "n_pairs must be >= n_classes".into(),
            ));
        }
        if self.noise_sigma < 0.0 || self.vision_noise_sigma < 0.0 {
            return Err(Error::InvalidArgument("noise_sigma must be >= 0".into()));
        }
        // each coordinate needs its own orthogonal channel-offset direction
        if self.latent_dim == 0 || self.latent_dim > IMU_CHANNELS {
            return Err(Error::InvalidArgument(format!(
                "latent_dim must be in [1, {IMU_CHANNELS}]"
            )));
        }
        if !(self.pair_radius >= 0.0) || !(self.center_scale > 0.0) {
            return Err(Error::InvalidArgument(
                "pair_radius >= 0 and center_scale > 0 required".into(),
            ));
        }
        if self.vision_len == 0 || self.vision_feature_dim == 0 || self.n_subjects == 0 {
            return Err(Error::InvalidArgument(
                "vision shape and subject count must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn gaussian_vec(rng: &mut Rng, n: usize) -> Array1<f64> {
    Array1::from_iter((0..n).map(|_| StandardNormal.sample(rng)))
}

/// Frozen rendering functions plus class centers for one seed.
#[derive(Debug, Clone)]
pub struct SynthGenerator {
    cfg: SynthConfig,
    /// latent_dim x 12 orthonormal channel offsets.
    offset: Array2<f64>,
    /// latent_dim x 12 unit channel mixes.
    mix: Array2<f64>,
    /// latent_dim x 12 phases.
    phase: Array2<f64>,
    /// vision_len maps of shape feature_dim x latent_dim.
    vision_maps: Vec<Array2<f64>>,
    centers: Vec<Array1<f64>>,
}

impl SynthGenerator {
    pub fn new(cfg: SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.latent_dim;
        let mut rng = stream_rng(cfg.seed, stream::SYNTH, &[0]);
        let mut offset = Array2::<f64>::zeros((d, IMU_CHANNELS));
        for j in 0..d {
            let mut v = gaussian_vec(&mut rng, IMU_CHANNELS);
            for k in 0..j {
                let prev = offset.row(k).to_owned();
                v = &v - &(&prev * prev.dot(&v));
            }
            let norm = v.dot(&v).sqrt();
            offset.row_mut(j).assign(&(v / norm));
        }
        let mut mix = Array2::zeros((d, IMU_CHANNELS));
        for mut row in mix.rows_mut() {
            let v = gaussian_vec(&mut rng, IMU_CHANNELS);
            let norm = v.dot(&v).sqrt();
            row.assign(&(v / norm));
        }
        let phase = Array2::from_shape_fn((d, IMU_CHANNELS), |_| rng.random_range(0.0..2.0 * PI));
        // tokens share one map plus an equal-energy per-token part, so the
        // content survives averaging over tokens
        let scale = 1.0 / (2.0 * d as f64).sqrt();
        let gauss = |rng: &mut Rng| {
            Array2::from_shape_fn((cfg.vision_feature_dim, d), |_| {
                let g: f64 = StandardNormal.sample(rng);
                g * scale
            })
        };
        let shared = gauss(&mut rng);
        let vision_maps = (0..cfg.vision_len)
            .map(|_| &shared + &gauss(&mut rng))
            .collect();

        let mut crng = stream_rng(cfg.seed, stream::SYNTH, &[1]);
        let min_sep = MIN_CENTER_SEPARATION * cfg.pair_radius;
        let mut centers: Vec<Array1<f64>> = Vec::with_capacity(cfg.n_classes);
        let mut attempts = 0;
        while centers.len() < cfg.n_classes {
            attempts += 1;
            if attempts > 100_000 {
                return Err(Error::InvalidArgument(
                    "could not place class centers with the required separation; increase center_scale".into(),
                ));
            }
            let c = gaussian_vec(&mut crng, d) * cfg.center_scale;
            if centers.iter().all(|o| {
                let diff = o - &c;
                diff.dot(&diff).sqrt() > min_sep
            }) {
                centers.push(c);
            }
        }
        Ok(Self {
            cfg,
            offset,
            mix,
            phase,
            vision_maps,
            centers,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    pub fn centers(&self) -> &[Array1<f64>] {
        &self.centers
    }

    /// Renders a latent into a full 256 x 12 window.
    pub fn render_imu(&self, z: &Array1<f64>) -> Array2<f32> {
        let mut out = Array2::<f64>::zeros((WINDOW_LEN, IMU_CHANNELS));
        for (j, &zj) in z.iter().enumerate() {
            let omega = 2.0 * PI * (j + 1) as f64 / WINDOW_LEN as f64;
            for c in 0..IMU_CHANNELS {
                let dc = OFFSET_GAIN * self.offset[[j, c]] * zj;
                let a = self.mix[[j, c]] * zj;
                let ph = self.phase[[j, c]];
                for t in 0..WINDOW_LEN {
                    out[[t, c]] += dc + a * (omega * t as f64 + ph).sin();
                }
            }
        }
        out.mapv(|v| v as f32)
    }

    /// Renders a latent into vision features (vision_len x feature_dim).
    pub fn render_vision(&self, z: &Array1<f64>) -> Array2<f32> {
        let mut out = Array2::zeros((self.cfg.vision_len, self.cfg.vision_feature_dim));
        for (mut row, map) in out.rows_mut().into_iter().zip(&self.vision_maps) {
            row.assign(&map.dot(z).mapv(|v| v as f32));
        }
        out
    }

    /// Noise-free latent of pair `i` (center plus bounded offset).
    pub fn pair_latent(&self, i: usize) -> Array1<f64> {
        let label = i % self.cfg.n_classes;
        let mut rng = stream_rng(self.cfg.seed, stream::SYNTH, &[2, i as u64]);
        let d = self.cfg.latent_dim;
        let dir = gaussian_vec(&mut rng, d);
        let norm = dir.dot(&dir).sqrt().max(1e-12);
        let u: f64 = rng.random_range(0.0..1.0);
        let radius = self.cfg.pair_radius * u.powf(1.0 / d as f64);
        &self.centers[label] + &(dir * (radius / norm))
    }

    pub fn sample(&self, i: usize) -> PairedSample {
        let cfg = &self.cfg;
        let label = i % cfg.n_classes;
        let z = self.pair_latent(i);
        let mut nrng = stream_rng(cfg.seed, stream::SYNTH, &[3, i as u64]);
        let z_imu = &z + &(gaussian_vec(&mut nrng, cfg.latent_dim) * cfg.noise_sigma);
        let z_vis = &z + &(gaussian_vec(&mut nrng, cfg.latent_dim) * cfg.vision_noise_sigma);
        let subject = (i as u32) % cfg.n_subjects;
        PairedSample {
            id: format!("synth-{i:05}"),
            imu: ImuWindow {
                values: self.render_imu(&z_imu),
                valid_len: WINDOW_LEN,
                start_time_s: 0.0,
            },
            signal: None,
            signal_t0_s: 0.0,
            vision: VisionRef::Features(TokenSequence::new(self.render_vision(&z_vis))),
            label,
            subject_id: subject,
            scene_id: ((i as u32) / cfg.n_subjects) % 4,
            session_id: (i as u32) % 20,
        }
    }

    pub fn generate(&self) -> Vec<PairedSample> {
        (0..self.cfg.n_pairs).map(|i| self.sample(i)).collect()
    }
}

/// Generates `n_pairs` labelled, balanced pairs (labels assigned round-robin).
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<PairedSample>> {
    Ok(SynthGenerator::new(cfg.clone())?.generate())
}
