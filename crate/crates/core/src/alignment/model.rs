//! The full embedding pipeline: encoder -> frozen resampler -> mean pool.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::loss::ClassHead;
use crate::data::{ImuWindow, NormStats, PairedSample};
use crate::encoders::{ImuEncoder, TokenSequence, VisionProvider};
use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::params::{Bound, ParamSet};
use crate::real::Real;
use crate::resampler::{Latents, Resampler};
use crate::rng::Rng;

/// Where pooled embeddings are taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingStage {
    /// Mean over the resampler's latents (default).
    #[default]
    Resampled,
    /// Mean over the encoder's output tokens, bypassing the resampler.
    Encoder,
}

/// Encoder + resampler pair sharing one element type.
#[derive(Debug, Clone)]
pub struct Pipeline<F> {
    pub encoder: ImuEncoder<F>,
    pub resampler: Resampler<F>,
}

impl<F: Real> Pipeline<F> {
    /// Pooled (pre-normalization) 1 x D IMU embedding node.
    #[allow(clippy::too_many_arguments)]
    pub fn imu_pooled(
        &self,
        g: &mut Graph<F>,
        enc: &Bound,
        res: &Bound,
        input: NodeId,
        valid_len: usize,
        dropout: Option<&mut Rng>,
        stage: EmbeddingStage,
    ) -> NodeId {
        let tokens = self.encoder.forward(g, enc, input, valid_len, dropout);
        self.pool_tokens(g, res, tokens, stage)
    }

    pub fn pool_tokens(
        &self,
        g: &mut Graph<F>,
        res: &Bound,
        tokens: NodeId,
        stage: EmbeddingStage,
    ) -> NodeId {
        match stage {
            EmbeddingStage::Resampled => {
                let lat = self.resampler.forward(g, res, tokens);
                g.mean_rows(lat)
            }
            EmbeddingStage::Encoder => g.mean_rows(tokens),
        }
    }
}

/// Trainable IMU side plus frozen vision side, ready for training or export.
#[derive(Debug, Clone)]
pub struct AlignmentModel {
    pub pipeline: Pipeline<f32>,
    pub head: ParamSet<f32>,
    pub vision: VisionProvider,
    pub norm: NormStats,
    pub stage: EmbeddingStage,
}

impl AlignmentModel {
    pub fn new(
        encoder: ImuEncoder<f32>,
        resampler: Resampler<f32>,
        vision: VisionProvider,
        n_classes: usize,
        stage: EmbeddingStage,
    ) -> Self {
        let d = encoder.config.d_model;
        let mut head = ParamSet::new();
        head.insert("weight", Array2::zeros((d, n_classes)), false);
        head.insert("bias", Array2::zeros((1, n_classes)), false);
        Self {
            pipeline: Pipeline { encoder, resampler },
            head,
            vision,
            norm: NormStats::identity(),
            stage,
        }
    }

    pub fn d_model(&self) -> usize {
        self.pipeline.encoder.config.d_model
    }

    pub fn n_classes(&self) -> usize {
        self.head.get("weight").expect("head").ncols()
    }

    pub fn class_head(&self) -> ClassHead<f32> {
        ClassHead {
            weight: self.head.get("weight").expect("head").clone(),
            bias: self.head.get("bias").expect("head").clone(),
        }
    }

    /// Raw pooled IMU embedding for an already-normalized window.
    pub fn imu_embedding_normalized(
        &self,
        window: &ImuWindow,
        stage: EmbeddingStage,
    ) -> Result<Array1<f32>> {
        self.pipeline.encoder.check_window(window)?;
        let mut g = Graph::new();
        let enc = self.pipeline.encoder.params.bind(&mut g, false);
        let res = self.pipeline.resampler.params.bind(&mut g, false);
        let x = g.constant(window.values.clone());
        let out = self
            .pipeline
            .imu_pooled(&mut g, &enc, &res, x, window.valid_len, None, stage);
        Ok(g.value(out).row(0).to_owned())
    }

    /// Raw pooled IMU embedding; applies the stored channel normalization.
    pub fn imu_embedding(&self, window: &ImuWindow) -> Result<Array1<f32>> {
        self.imu_embedding_normalized(&self.norm.apply(window), self.stage)
    }

    pub fn imu_embedding_at(
        &self,
        window: &ImuWindow,
        stage: EmbeddingStage,
    ) -> Result<Array1<f32>> {
        self.imu_embedding_normalized(&self.norm.apply(window), stage)
    }

    /// Raw pooled vision embedding through the same frozen resampler.
    pub fn vision_embedding_at(
        &self,
        sample: &PairedSample,
        stage: EmbeddingStage,
    ) -> Result<Array1<f32>> {
        let seq = self.vision.vision_embed(&sample.vision)?;
        self.pool_sequence(&seq, stage)
    }

    pub fn vision_embedding(&self, sample: &PairedSample) -> Result<Array1<f32>> {
        self.vision_embedding_at(sample, self.stage)
    }

    pub fn pool_sequence(&self, seq: &TokenSequence, stage: EmbeddingStage) -> Result<Array1<f32>> {
        self.pipeline.resampler.check_input(seq)?;
        let mut g = Graph::new();
        let res = self.pipeline.resampler.params.bind(&mut g, false);
        let x = g.constant(seq.tokens.clone());
        let out = self.pipeline.pool_tokens(&mut g, &res, x, stage);
        Ok(g.value(out).row(0).to_owned())
    }

    /// Resampled latents of an IMU window (applies the stored normalization).
    pub fn imu_latents(&self, window: &ImuWindow) -> Result<Latents> {
        let tokens = self.pipeline.encoder.encode(&self.norm.apply(window))?;
        self.pipeline.resampler.resample_tokens(&tokens)
    }

    pub fn vision_latents(&self, sample: &PairedSample) -> Result<Latents> {
        let seq = self.vision.vision_embed(&sample.vision)?;
        self.pipeline.resampler.resample_tokens(&seq)
    }

    /// Digest of every frozen tensor (resampler and vision stub).
    pub fn frozen_digest(&self) -> String {
        let mut all = ParamSet::<f32>::new();
        for p in self.pipeline.resampler.params.iter() {
            all.insert(format!("resampler.{}", p.name), p.value.clone(), p.frozen);
        }
        for p in self.vision.params().iter() {
            all.insert(format!("vision.{}", p.name), p.value.clone(), p.frozen);
        }
        all.digest()
    }

    /// Digest of the trainable tensors (encoder and head).
    pub fn trainable_digest(&self) -> String {
        let mut all = ParamSet::<f32>::new();
        for p in self.pipeline.encoder.params.iter() {
            all.insert(format!("encoder.{}", p.name), p.value.clone(), p.frozen);
        }
        for p in self.head.iter() {
            all.insert(format!("head.{}", p.name), p.value.clone(), p.frozen);
        }
        all.digest()
    }
}
