//! Checkpoint archives: configuration, trainable and frozen tensors,
//! normalization statistics and training state in one file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{AlignmentModel, EmbeddingStage, Pipeline};
use crate::data::NormStats;
use crate::encoders::{ImuEncoder, ImuEncoderConfig, VisionProvider, VisionStub, VisionStubConfig};
use crate::error::{Error, Result};
use crate::io::Archive;
use crate::params::ParamSet;
use crate::resampler::{Resampler, ResamplerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VisionConfig {
    Precomputed { d_model: usize },
    Stub(VisionStubConfig),
}

/// Everything needed to rebuild the model skeleton.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: ImuEncoderConfig,
    pub resampler: ResamplerConfig,
    pub vision: VisionConfig,
    pub n_classes: usize,
    #[serde(default)]
    pub stage: EmbeddingStage,
}

impl ModelConfig {
    /// Desk-scale model over synthetic vision features of width `feature_dim`.
    pub fn desk(n_classes: usize, feature_dim: usize, seed: u64) -> Self {
        let encoder = ImuEncoderConfig::desk();
        Self {
            resampler: ResamplerConfig {
                d_model: encoder.d_model,
                seed,
                ..ResamplerConfig::default()
            },
            vision: VisionConfig::Stub(VisionStubConfig {
                feature_dim,
                d_model: encoder.d_model,
                seed,
            }),
            encoder,
            n_classes,
            stage: EmbeddingStage::Resampled,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.resampler.validate()?;
        let vd = match &self.vision {
            VisionConfig::Precomputed { d_model } => *d_model,
            VisionConfig::Stub(s) => s.d_model,
        };
        if self.encoder.d_model != self.resampler.d_model || vd != self.resampler.d_model {
            return Err(Error::InvalidArgument(format!(
                "model dimensions disagree: encoder {}, resampler {}, vision {vd}",
                self.encoder.d_model, self.resampler.d_model
            )));
        }
        if self.n_classes < 2 {
            return Err(Error::InvalidArgument("n_classes must be >= 2".into()));
        }
        Ok(())
    }

    /// Fresh model: encoder initialized from `init_seed`; frozen parts from
    /// their own configured seeds.
    pub fn build(&self, init_seed: u64) -> Result<AlignmentModel> {
        self.validate()?;
        let encoder = ImuEncoder::init(self.encoder.clone(), init_seed)?;
        let resampler = Resampler::init(self.resampler.clone())?;
        let vision = match &self.vision {
            VisionConfig::Precomputed { d_model } => {
                VisionProvider::Precomputed { d_model: *d_model }
            }
            VisionConfig::Stub(s) => VisionProvider::Stub(VisionStub::new(s.clone())),
        };
        Ok(AlignmentModel::new(
            encoder,
            resampler,
            vision,
            self.n_classes,
            self.stage,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    /// Free-form resolved run configuration stored for reproducibility.
    pub run_config: serde_json::Value,
    pub model: AlignmentModel,
    pub state: TrainState,
}

#[derive(Serialize, Deserialize)]
struct ConfigEntry {
    model: ModelConfig,
    run: serde_json::Value,
}

impl Checkpoint {
    pub fn to_archive(&self) -> Result<Archive> {
        let mut a = Archive::new();
        a.insert(
            "config.json",
            serde_json::to_vec_pretty(&ConfigEntry {
                model: self.model_config.clone(),
                run: self.run_config.clone(),
            })?,
        );
        a.insert(
            "normalization.json",
            serde_json::to_vec_pretty(&self.model.norm)?,
        );
        a.insert("train_state.json", serde_json::to_vec_pretty(&self.state)?);
        self.model
            .pipeline
            .encoder
            .params
            .write_to_archive(&mut a, "encoder")?;
        self.model.head.write_to_archive(&mut a, "head")?;
        self.model
            .pipeline
            .resampler
            .params
            .write_to_archive(&mut a, "resampler")?;
        self.model
            .vision
            .params()
            .write_to_archive(&mut a, "vision")?;
        Ok(a)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let a = Archive::read(path)?;
        let get = |name: &str| {
            a.get(name)
                .ok_or_else(|| Error::format(path, format!("missing {name}")))
        };
        let cfg: ConfigEntry = serde_json::from_slice(get("config.json")?)?;
        let norm: NormStats = serde_json::from_slice(get("normalization.json")?)?;
        let state: TrainState = serde_json::from_slice(get("train_state.json")?)?;
        cfg.model.validate()?;
        let encoder_params = ParamSet::read_from_archive(&a, "encoder", path)?;
        let head = ParamSet::read_from_archive(&a, "head", path)?;
        let resampler_params: ParamSet<f32> = ParamSet::read_from_archive(&a, "resampler", path)?;
        let vision_params: ParamSet<f32> = ParamSet::read_from_archive(&a, "vision", path)?;
        if resampler_params
            .iter()
            .chain(vision_params.iter())
            .any(|p| !p.frozen)
        {
            return Err(Error::format(
                path,
                "frozen components must be marked frozen",
            ));
        }
        let vision = match &cfg.model.vision {
            VisionConfig::Precomputed { d_model } => {
                VisionProvider::Precomputed { d_model: *d_model }
            }
            VisionConfig::Stub(s) => VisionProvider::Stub(VisionStub {
                config: s.clone(),
                params: vision_params,
            }),
        };
        let model = AlignmentModel {
            pipeline: Pipeline {
                encoder: ImuEncoder {
                    config: cfg.model.encoder.clone(),
                    params: encoder_params,
                },
                resampler: Resampler {
                    config: cfg.model.resampler.clone(),
                    params: resampler_params,
                },
            },
            head,
            vision,
            norm,
            stage: cfg.model.stage,
        };
        Ok(Self {
            model_config: cfg.model,
            run_config: cfg.run,
            model,
            state,
        })
    }
}
