//! Frozen perceiver resampler: a fixed set of latent queries cross-attends
//! to the input tokens (concatenated with the latents) and the result is
//! average-pooled into a single embedding.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::encoders::TokenSequence;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::nn::{linear, multi_head_attention, normal, orthogonal};
use crate::params::{Bound, ParamSet};
use crate::real::Real;
use crate::rng::{stream, stream_rng};

pub const DEFAULT_LATENTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResamplerConfig {
    pub d_model: usize,
    pub n_latents: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ff_mult: usize,
    /// Standard deviation of the latent query initialization.
    pub latent_init_std: f64,
    pub seed: u64,
}

impl Default for ResamplerConfig {
    fn default() -> Self {
        Self {
            d_model: 1024,
            n_latents: DEFAULT_LATENTS,
            n_layers: 2,
            n_heads: 8,
            ff_mult: 4,
            latent_init_std: 1.0,
            seed: 0,
        }
    }
}

impl ResamplerConfig {
    pub fn desk() -> Self {
        Self {
            d_model: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidArgument(format!(
                "resampler d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.n_latents == 0 || self.ff_mult == 0 {
            return Err(Error::InvalidArgument(
                "n_latents and ff_mult must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Fixed-length set of resampled tokens (n_latents x D).
#[derive(Debug, Clone, PartialEq)]
pub struct Latents {
    pub values: Array2<f32>,
}

/// Pooled vector in the shared space.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Array1<f32>,
    pub normalized: bool,
}

impl Embedding {
    pub fn new(vector: Array1<f32>, normalized: bool) -> Self {
        Self { vector, normalized }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn norm(&self) -> f64 {
        self.vector
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resampler<F> {
    pub config: ResamplerConfig,
    pub params: ParamSet<F>,
}

impl<F: Real> Resampler<F> {
    /// Seeded initialization; every tensor is marked frozen.
    pub fn init(config: ResamplerConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(config.seed, stream::INIT, &[3]);
        let d = config.d_model;
        let ff = d * config.ff_mult;
        let mut p = ParamSet::new();
        let ones = || Array2::from_elem((1, d), F::one());
        let zeros = || Array2::zeros((1, d));
        p.insert(
            "latents",
            normal(&mut rng, (config.n_latents, d), config.latent_init_std),
            true,
        );
        for l in 0..config.n_layers {
            let n = |s: &str| format!("layers.{l}.{s}");
            p.insert(n("norm_media.gamma"), ones(), true);
            p.insert(n("norm_media.beta"), zeros(), true);
            p.insert(n("norm_latents.gamma"), ones(), true);
            p.insert(n("norm_latents.beta"), zeros(), true);
            for w in ["wq", "wk", "wv", "wo"] {
                p.insert(
                    n(&format!("attn.{w}")),
                    orthogonal(&mut rng, d, d, 1.0),
                    true,
                );
            }
            p.insert(n("ff.ln.gamma"), ones(), true);
            p.insert(n("ff.ln.beta"), zeros(), true);
            p.insert(n("ff.w1"), orthogonal(&mut rng, d, ff, 1.0), true);
            p.insert(n("ff.w2"), orthogonal(&mut rng, ff, d, 1.0), true);
        }
        p.insert("final_ln.gamma", ones(), true);
        p.insert("final_ln.beta", zeros(), true);
        Ok(Self { config, params: p })
    }

    /// Maps an L x D token node to n_latents x D. The input tokens carry no
    /// positional information, so the output is invariant to their order.
    pub fn forward(&self, g: &mut Graph<F>, b: &Bound, tokens: NodeId) -> NodeId {
        let cfg = &self.config;
        let mut lat = b.id("latents");
        for l in 0..cfg.n_layers {
            let n = |s: &str| b.id(&format!("layers.{l}.{s}"));
            let media = g.layer_norm(tokens, n("norm_media.gamma"), n("norm_media.beta"));
            let latn = g.layer_norm(lat, n("norm_latents.gamma"), n("norm_latents.beta"));
            let q = linear(g, latn, n("attn.wq"), None);
            let kv_in = g.concat_rows(&[media, latn]);
            let k = linear(g, kv_in, n("attn.wk"), None);
            let v = linear(g, kv_in, n("attn.wv"), None);
            let a = multi_head_attention(g, q, k, v, cfg.n_heads, None);
            let a = linear(g, a, n("attn.wo"), None);
            lat = g.add(lat, a);
            let h = g.layer_norm(lat, n("ff.ln.gamma"), n("ff.ln.beta"));
            let f = linear(g, h, n("ff.w1"), None);
            let f = g.gelu(f);
            let f = linear(g, f, n("ff.w2"), None);
            lat = g.add(lat, f);
        }
        g.layer_norm(lat, b.id("final_ln.gamma"), b.id("final_ln.beta"))
    }

    pub fn check_input(&self, seq: &TokenSequence) -> Result<()> {
        seq.validate(self.config.d_model)
    }

    pub fn resample_tokens(&self, seq: &TokenSequence) -> Result<Latents> {
        self.check_input(seq)?;
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let x = g.constant(seq.tokens.mapv(|v| F::lit(f64::from(v))));
        let out = self.forward(&mut g, &b, x);
        Ok(Latents {
            values: g.value(out).mapv(|v| v.as_f64() as f32),
        })
    }

    /// Resample then pool.
    pub fn embed(&self, seq: &TokenSequence, normalize: bool) -> Result<Embedding> {
        pool(&self.resample_tokens(seq)?, normalize)
    }
}

/// Column-wise mean over the latent rows, optionally L2-normalized.
pub fn pool(latents: &Latents, normalize: bool) -> Result<Embedding> {
    let mean = latents
        .values
        .mapv(f64::from)
        .mean_axis(Axis(0))
        .ok_or_else(|| Error::Shape("no latent rows".into()))?;
    let vector = if normalize {
        let norm = mean.dot(&mean).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroNorm);
        }
        mean / norm
    } else {
        mean
    };
    Ok(Embedding::new(vector.mapv(|v| v as f32), normalize))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn seq(len: usize, d: usize, seed: u64) -> TokenSequence {
        let mut rng = stream_rng(seed, "seq", &[]);
        TokenSequence::new(normal::<f64>(&mut rng, (len, d), 1.0).mapv(|v| v as f32))
    }

    #[test]
    fn pool_examples() {
        let lat = Latents {
            values: Array2::from_shape_fn((64, 3), |(_, j)| j as f32 + 0.5),
        };
        assert_eq!(pool(&lat, false).unwrap().vector, array![0.5f32, 1.5, 2.5]);
        let lat = Latents {
            values: array![[1.0f32, 0.0], [0.0, 1.0]],
        };
        assert_eq!(pool(&lat, false).unwrap().vector, array![0.5f32, 0.5]);
        let e = pool(&lat, true).unwrap();
        assert!((e.vector[0] - 0.70710677).abs() < 1e-6 && (e.vector[1] - 0.70710677).abs() < 1e-6);
        let zero = Latents {
            values: Array2::zeros((4, 2)),
        };
        assert!(matches!(pool(&zero, true), Err(Error::ZeroNorm)));
    }

    #[test]
    fn fixed_output_rows() {
        let r = Resampler::<f32>::init(ResamplerConfig::desk()).unwrap();
        for len in [1, 16, 50, 256, 300] {
            let out = r.resample_tokens(&seq(len, 64, len as u64)).unwrap();
            assert_eq!(out.values.dim(), (64, 64));
            assert!(out.values.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let r = Resampler::<f32>::init(ResamplerConfig::desk()).unwrap();
        assert!(matches!(
            r.resample_tokens(&seq(4, 32, 0)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn all_tensors_frozen() {
        let r = Resampler::<f32>::init(ResamplerConfig::desk()).unwrap();
        assert!(r.params.iter().all(|p| p.frozen));
        assert_eq!(r.params.count_trainable(), 0);
    }
}
