use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::TokenSequence;
use crate::data::{ImuWindow, IMU_CHANNELS, WINDOW_LEN};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::nn::{dropout_mask, linear, multi_head_attention, normal, xavier};
use crate::params::{Bound, ParamSet};
use crate::real::Real;
use crate::rng::{stream, stream_rng, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImuEncoderConfig {
    pub d_model: usize,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ff_mult: usize,
    pub dropout: f64,
    pub window_len: usize,
    pub in_channels: usize,
}

impl Default for ImuEncoderConfig {
    fn default() -> Self {
        Self::full_scale()
    }
}

impl ImuEncoderConfig {
    /// 1024-wide model emitting 256 tokens.
    pub fn full_scale() -> Self {
        Self {
            d_model: 1024,
            conv_kernel: 3,
            conv_stride: 1,
            n_layers: 4,
            n_heads: 8,
            ff_mult: 4,
            dropout: 0.1,
            window_len: WINDOW_LEN,
            in_channels: IMU_CHANNELS,
        }
    }

    /// Laptop-sized model used by the test suite and synthetic runs.
    pub fn desk() -> Self {
        Self {
            d_model: 64,
            conv_kernel: 3,
            conv_stride: 4,
            n_layers: 2,
            n_heads: 4,
            ff_mult: 4,
            dropout: 0.0,
            window_len: WINDOW_LEN,
            in_channels: IMU_CHANNELS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.conv_stride == 0 || self.conv_kernel == 0 {
            return bad("conv kernel and stride must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.window_len == 0 || self.in_channels == 0 || self.ff_mult == 0 {
            return bad("window_len, in_channels and ff_mult must be positive".into());
        }
        Ok(())
    }

    /// Number of output tokens: ceil(window_len / conv_stride).
    pub fn out_len(&self) -> usize {
        self.window_len.div_ceil(self.conv_stride)
    }

    pub fn ff_dim(&self) -> usize {
        self.d_model * self.ff_mult
    }
}

/// Conv stem + pre-norm transformer over IMU windows.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuEncoder<F> {
    pub config: ImuEncoderConfig,
    pub params: ParamSet<F>,
}

impl<F: Real> ImuEncoder<F> {
    pub fn init(config: ImuEncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, stream::INIT, &[1]);
        let d = config.d_model;
        let ff = config.ff_dim();
        let mut p = ParamSet::new();
        let ones = || Array2::from_elem((1, d), F::one());
        let zeros = |n: usize| Array2::zeros((1, n));
        p.insert(
            "conv.weight",
            xavier(&mut rng, config.conv_kernel * config.in_channels, d),
            false,
        );
        p.insert("conv.bias", zeros(d), false);
        p.insert("pos", normal(&mut rng, (config.out_len(), d), 0.02), false);
        for l in 0..config.n_layers {
            let n = |s: &str| format!("layers.{l}.{s}");
            p.insert(n("ln1.gamma"), ones(), false);
            p.insert(n("ln1.beta"), zeros(d), false);
            for w in ["wq", "wk", "wv", "wo"] {
                p.insert(n(&format!("attn.{w}")), xavier(&mut rng, d, d), false);
                p.insert(n(&format!("attn.b{}", &w[1..])), zeros(d), false);
            }
            p.insert(n("ln2.gamma"), ones(), false);
            p.insert(n("ln2.beta"), zeros(d), false);
            p.insert(n("ff.w1"), xavier(&mut rng, d, ff), false);
            p.insert(n("ff.b1"), zeros(ff), false);
            p.insert(n("ff.w2"), xavier(&mut rng, ff, d), false);
            p.insert(n("ff.b2"), zeros(d), false);
        }
        p.insert("final_ln.gamma", ones(), false);
        p.insert("final_ln.beta", zeros(d), false);
        Ok(Self { config, params: p })
    }

    /// Scalar trainable parameter count.
    pub fn count_parameters(&self) -> usize {
        self.params.count_trainable()
    }

    /// Number of tokens that cover unpadded input rows.
    pub fn valid_tokens(&self, valid_len: usize) -> usize {
        valid_len
            .div_ceil(self.config.conv_stride)
            .clamp(1, self.config.out_len())
    }

    /// Builds the encoder graph over `input` (window_len x in_channels).
    /// Keys beyond the valid region are masked. When `dropout` carries an
    /// rng and the configured rate is positive, dropout is applied to the
    /// attention and feed-forward outputs.
    pub fn forward(
        &self,
        g: &mut Graph<F>,
        b: &Bound,
        input: NodeId,
        valid_len: usize,
        mut dropout: Option<&mut Rng>,
    ) -> NodeId {
        let cfg = &self.config;
        let p_drop = cfg.dropout;
        let valid = self.valid_tokens(valid_len);
        let cols = g.im2col(input, cfg.conv_kernel, cfg.conv_stride);
        let x = linear(g, cols, b.id("conv.weight"), Some(b.id("conv.bias")));
        let mut x = g.add(x, b.id("pos"));
        let mut drop = |g: &mut Graph<F>, node: NodeId| -> NodeId {
            match dropout.as_deref_mut() {
                Some(rng) if p_drop > 0.0 => {
                    let mask = dropout_mask(rng, g.value(node).dim(), p_drop);
                    g.mul_const(node, mask)
                }
                _ => node,
            }
        };
        for l in 0..cfg.n_layers {
            let n = |s: &str| b.id(&format!("layers.{l}.{s}"));
            let h = g.layer_norm(x, n("ln1.gamma"), n("ln1.beta"));
            let q = linear(g, h, n("attn.wq"), Some(n("attn.bq")));
            let k = linear(g, h, n("attn.wk"), Some(n("attn.bk")));
            let v = linear(g, h, n("attn.wv"), Some(n("attn.bv")));
            let a = multi_head_attention(g, q, k, v, cfg.n_heads, Some(valid));
            let a = linear(g, a, n("attn.wo"), Some(n("attn.bo")));
            let a = drop(g, a);
            x = g.add(x, a);
            let h = g.layer_norm(x, n("ln2.gamma"), n("ln2.beta"));
            let f = linear(g, h, n("ff.w1"), Some(n("ff.b1")));
            let f = g.gelu(f);
            let f = linear(g, f, n("ff.w2"), Some(n("ff.b2")));
            let f = drop(g, f);
            x = g.add(x, f);
        }
        g.layer_norm(x, b.id("final_ln.gamma"), b.id("final_ln.beta"))
    }

    pub fn check_window(&self, window: &ImuWindow) -> Result<()> {
        if window.values.dim() != (self.config.window_len, self.config.in_channels) {
            return Err(Error::Shape(format!(
                "window {:?} does not match encoder input {}x{}",
                window.values.dim(),
                self.config.window_len,
                self.config.in_channels
            )));
        }
        if window.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("IMU window".into()));
        }
        Ok(())
    }

    /// Eval-mode encoding (no dropout).
    pub fn encode(&self, window: &ImuWindow) -> Result<TokenSequence> {
        self.check_window(window)?;
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let x = g.constant(window.values.mapv(|v| F::lit(f64::from(v))));
        let out = self.forward(&mut g, &b, x, window.valid_len, None);
        Ok(TokenSequence::new(g.value(out).mapv(|v| v.as_f64() as f32)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::extract_window;

    fn window(seed: u64, valid: usize) -> ImuWindow {
        let mut rng = stream_rng(seed, "w", &[]);
        let m: Array2<f64> = normal(&mut rng, (valid, IMU_CHANNELS), 1.0);
        extract_window(m.mapv(|v| v as f32).view(), 0, 0.0).unwrap()
    }

    #[test]
    fn conv_and_positional_counts() {
        let enc = ImuEncoder::<f32>::init(
            ImuEncoderConfig {
                conv_stride: 1,
                ..ImuEncoderConfig::desk()
            },
            0,
        )
        .unwrap();
        let conv = enc.params.get("conv.weight").unwrap().len()
            + enc.params.get("conv.bias").unwrap().len();
        assert_eq!(conv, 12 * 3 * 64 + 64);
        assert_eq!(conv, 2368);
        assert_eq!(enc.params.get("pos").unwrap().len(), 16384);
    }

    #[test]
    fn output_shape_matches_stride() {
        for stride in [1, 2, 3, 4, 5] {
            let cfg = ImuEncoderConfig {
                d_model: 16,
                n_heads: 2,
                n_layers: 1,
                conv_stride: stride,
                ..ImuEncoderConfig::desk()
            };
            let enc = ImuEncoder::<f32>::init(cfg, 1).unwrap();
            let out = enc.encode(&window(0, 256)).unwrap();
            assert_eq!(out.len(), 256usize.div_ceil(stride));
            assert_eq!(out.dim(), 16);
        }
    }

    #[test]
    fn zero_window_is_finite_and_eval_is_deterministic() {
        let enc = ImuEncoder::<f32>::init(ImuEncoderConfig::desk(), 3).unwrap();
        let zero = ImuWindow {
            values: Array2::zeros((256, 12)),
            valid_len: 256,
            start_time_s: 0.0,
        };
        let out = enc.encode(&zero).unwrap();
        assert!(out.tokens.iter().all(|v| v.is_finite()));
        let w = window(4, 200);
        assert_eq!(enc.encode(&w).unwrap(), enc.encode(&w).unwrap());
    }

    #[test]
    fn rejects_non_finite_input() {
        let enc = ImuEncoder::<f32>::init(ImuEncoderConfig::desk(), 3).unwrap();
        let mut w = window(1, 256);
        w.values[[5, 5]] = f32::NAN;
        assert!(matches!(enc.encode(&w), Err(Error::NonFinite(_))));
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = ImuEncoderConfig {
            d_model: 10,
            n_heads: 4,
            ..ImuEncoderConfig::desk()
        };
        assert!(ImuEncoder::<f32>::init(cfg, 0).is_err());
    }
}
