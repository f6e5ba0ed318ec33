use std::path::Path;

use ndarray::s;
use serde::{Deserialize, Serialize};

use super::TokenSequence;
use crate::data::VisionRef;
use crate::error::{Error, Result};
use crate::io::cmeb;
use crate::nn::normal;
use crate::params::ParamSet;
use crate::rng::{stream, stream_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisionStubConfig {
    pub feature_dim: usize,
    pub d_model: usize,
    pub seed: u64,
}

/// Frozen stand-in for the upstream vision encoder: a seeded linear map
/// followed by tanh.
#[derive(Debug, Clone, PartialEq)]
pub struct VisionStub {
    pub config: VisionStubConfig,
    pub params: ParamSet<f32>,
}

impl VisionStub {
    pub fn new(config: VisionStubConfig) -> Self {
        let mut rng = stream_rng(config.seed, stream::INIT, &[2]);
        let mut params = ParamSet::new();
        let std = 1.0 / (config.feature_dim as f64).sqrt();
        params.insert(
            "weight",
            normal(&mut rng, (config.feature_dim, config.d_model), std),
            true,
        );
        params.insert("bias", normal(&mut rng, (1, config.d_model), 0.1), true);
        Self { config, params }
    }

    pub fn render(&self, features: &TokenSequence) -> Result<TokenSequence> {
        features.validate(self.config.feature_dim)?;
        let w = self.params.get("weight").expect("weight");
        let b = self.params.get("bias").expect("bias");
        Ok(TokenSequence::new(
            (features.tokens.dot(w) + b).mapv(f32::tanh),
        ))
    }
}

/// Source of frozen vision tokens.
#[derive(Debug, Clone, PartialEq)]
pub enum VisionProvider {
    /// Token matrices come from CMEB files (or memory) and are returned unchanged.
    Precomputed { d_model: usize },
    /// Synthetic features are rendered through a frozen seeded map.
    Stub(VisionStub),
}

/// Row count emitted by a ViT-L/14 at 224px including the class token.
const VIT_TOKENS_WITH_CLS: usize = 257;

impl VisionProvider {
    pub fn d_model(&self) -> usize {
        match self {
            VisionProvider::Precomputed { d_model } => *d_model,
            VisionProvider::Stub(s) => s.config.d_model,
        }
    }

    pub fn stub(&self) -> Option<&VisionStub> {
        match self {
            VisionProvider::Stub(s) => Some(s),
            VisionProvider::Precomputed { .. } => None,
        }
    }

    fn load_file(&self, path: &Path) -> Result<TokenSequence> {
        if !path.exists() {
            return Err(Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "missing embedding file"),
            ));
        }
        let mut tokens = cmeb::read(path)?;
        // drop the class token so both modalities present 256 tokens
        if tokens.nrows() == VIT_TOKENS_WITH_CLS {
            tokens = tokens.slice(s![1.., ..]).to_owned();
        }
        Ok(TokenSequence::new(tokens))
    }

    /// Returns frozen vision tokens for one sample.
    pub fn vision_embed(&self, vision: &VisionRef) -> Result<TokenSequence> {
        let d = self.d_model();
        let seq = match (vision, self) {
            (VisionRef::Tokens(t), _) => t.clone(),
            (VisionRef::EmbeddingFile(p), _) => self.load_file(p)?,
            (VisionRef::Features(f), VisionProvider::Stub(stub)) => stub.render(f)?,
            (VisionRef::Features(_), VisionProvider::Precomputed { .. }) => {
                return Err(Error::InvalidArgument(
                    "synthetic vision features need the stub provider".into(),
                ))
            }
            (VisionRef::Frame { path, index }, _) => {
                return Err(Error::InvalidArgument(format!(
                "frame {} #{index} has no precomputed embedding; frames must be embedded upstream",
                path.display()
            )))
            }
        };
        seq.validate(d)?;
        Ok(seq)
    }

    /// Parameters of the frozen stub (empty for precomputed providers).
    pub fn params(&self) -> ParamSet<f32> {
        match self {
            VisionProvider::Stub(s) => s.params.clone(),
            VisionProvider::Precomputed { .. } => ParamSet::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn precomputed_file_is_returned_verbatim() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.cmeb");
        let m = Array2::from_shape_fn((256, 1024), |(i, j)| ((i * 3 + j) % 17) as f32 * 0.01);
        cmeb::write(&path, m.view()).unwrap();
        let p = VisionProvider::Precomputed { d_model: 1024 };
        let out = p.vision_embed(&VisionRef::EmbeddingFile(path)).unwrap();
        assert_eq!(out.tokens, m);
    }

    #[test]
    fn class_token_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.cmeb");
        let m = Array2::from_shape_fn((257, 8), |(i, _)| i as f32);
        cmeb::write(&path, m.view()).unwrap();
        let p = VisionProvider::Precomputed { d_model: 8 };
        let out = p.vision_embed(&VisionRef::EmbeddingFile(path)).unwrap();
        assert_eq!(out.len(), 256);
        assert_eq!(out.tokens[[0, 0]], 1.0);
    }

    #[test]
    fn missing_file_and_dim_mismatch() {
        let p = VisionProvider::Precomputed { d_model: 8 };
        assert!(matches!(
            p.vision_embed(&VisionRef::EmbeddingFile("/nonexistent/x.cmeb".into())),
            Err(Error::Io { .. })
        ));
        assert!(matches!(
            p.vision_embed(&VisionRef::Tokens(TokenSequence::new(Array2::zeros((
                4, 6
            ))))),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn stub_shape_and_determinism() {
        let cfg = VisionStubConfig {
            feature_dim: 32,
            d_model: 64,
            seed: 5,
        };
        let a = VisionProvider::Stub(VisionStub::new(cfg.clone()));
        let b = VisionProvider::Stub(VisionStub::new(cfg));
        let f = VisionRef::Features(TokenSequence::new(Array2::from_elem((16, 32), 0.3)));
        let ta = a.vision_embed(&f).unwrap();
        assert_eq!(ta.tokens.dim(), (16, 64));
        assert_eq!(ta, b.vision_embed(&f).unwrap());
        assert_eq!(a.params().digest(), b.params().digest());
    }
}
