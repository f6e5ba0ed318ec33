//! Central finite-difference checks of the analytic gradients.

use ndarray::{Array2, Axis};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::encoders::{ImuEncoder, ImuEncoderConfig};
use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::nn::{linear, normal};
use crate::params::{Bound, ParamSet};
use crate::resampler::{Resampler, ResamplerConfig};
use crate::rng::{stream, stream_rng};

/// Default finite-difference step.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Denominator floor so coordinates whose true gradient is zero (attention
/// key biases, for one) are compared in absolute terms instead of dividing
/// finite-difference round-off by itself.
const REL_FLOOR: f64 = 1e-5;

/// Maximum relative error between analytic gradients and central
/// differences of `scalar_fn` over the parameters of `params`.
///
/// `max_coords` caps the number of coordinates checked per tensor (sampled
/// without replacement from `seed`); `None` checks all of them.
pub fn grad_check<S>(
    scalar_fn: S,
    params: &ParamSet<f64>,
    eps: f64,
    max_coords: Option<usize>,
    seed: u64,
) -> Result<f64>
where
    S: Fn(&mut Graph<f64>, &Bound) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let b = params.bind_all_variables(&mut g);
    let root = scalar_fn(&mut g, &b)?;
    let grads = b.grads(&g.backward_scalar(root));

    let eval = |p: &ParamSet<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let root = scalar_fn(&mut g, &b)?;
        Ok(g.scalar(root))
    };

    let mut rng = stream_rng(seed, stream::PROBE, &[]);
    let mut worst = 0.0f64;
    let mut work = params.clone();
    for (t, param) in params.iter().enumerate() {
        let n = param.value.len();
        let coords: Vec<usize> = match max_coords {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let cols = param.value.ncols();
        for c in coords {
            let (r, col) = (c / cols, c % cols);
            let orig = param.value[[r, col]];
            let set = |w: &mut ParamSet<f64>, v: f64| {
                w.get_mut(&param.name).expect("same names")[[r, col]] = v;
            };
            set(&mut work, orig + eps);
            let plus = eval(&work)?;
            set(&mut work, orig - eps);
            let minus = eval(&work)?;
            set(&mut work, orig);
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads[t].as_ref().map_or(0.0, |g| g[[r, col]]);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// One named gradient check and its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn result(name: &str, err: f64, tol: f64) -> GradCheckResult {
    GradCheckResult {
        name: name.into(),
        max_rel_error: err,
        tolerance: tol,
        passed: err < tol,
    }
}

/// f(x) = x A x^T + c x^T.
pub fn check_quadratic(seed: u64) -> Result<GradCheckResult> {
    let mut rng = stream_rng(seed, stream::INIT, &[0]);
    let a: Array2<f64> = normal(&mut rng, (5, 5), 1.0);
    let c: Array2<f64> = normal(&mut rng, (1, 5), 1.0);
    let mut p = ParamSet::new();
    p.insert("x", normal(&mut rng, (1, 5), 1.0), false);
    let err = grad_check(
        |g, b| {
            let x = b.id("x");
            let a = g.constant(a.clone());
            let ct = g.constant(c.clone());
            let xa = g.matmul(x, a);
            let q = g.matmul_nt(xa, x);
            let l = g.matmul_nt(ct, x);
            Ok(g.add(q, l))
        },
        &p,
        DEFAULT_EPS,
        None,
        seed,
    )?;
    Ok(result("quadratic", err, 1e-8))
}

/// Symmetric infoNCE over a 3 x 3 similarity matrix.
pub fn check_info_nce(seed: u64) -> Result<GradCheckResult> {
    let mut rng = stream_rng(seed, stream::INIT, &[1]);
    let mut p = ParamSet::new();
    let sim: Array2<f64> = normal(&mut rng, (3, 3), 0.5);
    p.insert("sim", sim.mapv(f64::tanh), false);
    let mut worst = 0.0f64;
    for symmetric in [true, false] {
        let err = grad_check(
            |g, b| g.info_nce(b.id("sim"), 0.07, symmetric),
            &p,
            DEFAULT_EPS,
            None,
            seed,
        )?;
        worst = worst.max(err);
    }
    Ok(result("info_nce", worst, 1e-6))
}

/// Cross-entropy through a linear head, w.r.t. head and embeddings.
pub fn check_supervised(seed: u64) -> Result<GradCheckResult> {
    let mut rng = stream_rng(seed, stream::INIT, &[2]);
    let mut p = ParamSet::new();
    p.insert("emb", normal(&mut rng, (4, 6), 1.0), false);
    p.insert("weight", normal(&mut rng, (6, 5), 0.5), false);
    p.insert("bias", normal(&mut rng, (1, 5), 0.5), false);
    let labels = [0usize, 3, 4, 3];
    let err = grad_check(
        |g, b| {
            let logits = linear(g, b.id("emb"), b.id("weight"), Some(b.id("bias")));
            g.cross_entropy(logits, &labels)
        },
        &p,
        DEFAULT_EPS,
        None,
        seed,
    )?;
    Ok(result("supervised", err, 1e-4))
}

/// Tiny encoder used by the encoder-path check.
pub fn tiny_encoder_config() -> ImuEncoderConfig {
    ImuEncoderConfig {
        d_model: 8,
        conv_kernel: 3,
        conv_stride: 1,
        n_layers: 1,
        n_heads: 2,
        ff_mult: 4,
        dropout: 0.0,
        window_len: 16,
        in_channels: 12,
    }
}

fn tiny_resampler_config(seed: u64) -> ResamplerConfig {
    ResamplerConfig {
        d_model: 8,
        n_latents: 4,
        n_layers: 1,
        n_heads: 2,
        ff_mult: 4,
        seed,
        ..ResamplerConfig::default()
    }
}

/// Full path: encoder -> frozen resampler -> pool -> normalize ->
/// infoNCE against fixed vision rows, plus the supervised head.
pub fn check_encoder_path(seed: u64) -> Result<GradCheckResult> {
    let cfg = tiny_encoder_config();
    let enc = ImuEncoder::<f64>::init(cfg.clone(), seed)?;
    let res = Resampler::<f64>::init(tiny_resampler_config(seed))?;
    let mut rng = stream_rng(seed, stream::INIT, &[3]);
    let n = 3;
    let windows: Vec<Array2<f64>> = (0..n)
        .map(|i| {
            let mut w: Array2<f64> = normal(&mut rng, (cfg.window_len, cfg.in_channels), 1.0);
            // one padded window exercises the key mask
            if i == 1 {
                w.slice_mut(ndarray::s![12.., ..]).fill(0.0);
            }
            w
        })
        .collect();
    let valid = [16usize, 12, 16];
    let vision: Array2<f64> = normal(&mut rng, (n, cfg.d_model), 1.0);
    let vision = &vision
        / &vision
            .map_axis(Axis(1), |r| r.dot(&r).sqrt())
            .insert_axis(Axis(1));
    let labels = [0usize, 1, 1];

    let mut p = enc.params.clone();
    p.insert(
        "head.weight",
        normal(&mut rng, (cfg.d_model, 2), 0.5),
        false,
    );
    p.insert("head.bias", Array2::zeros((1, 2)), false);
    let err = grad_check(
        |g, b| {
            let res_b = res.params.bind(g, false);
            let pooled: Vec<NodeId> = windows
                .iter()
                .zip(valid)
                .map(|(w, v)| {
                    let x = g.constant(w.clone());
                    let tokens = enc.forward(g, b, x, v, None);
                    let lat = res.forward(g, &res_b, tokens);
                    g.mean_rows(lat)
                })
                .collect();
            let raw = g.concat_rows(&pooled);
            let norm = g.l2_normalize_rows(raw)?;
            let vis = g.constant(vision.clone());
            let sim = g.matmul_nt(norm, vis);
            let nce = g.info_nce(sim, 0.07, true)?;
            let logits = linear(g, raw, b.id("head.weight"), Some(b.id("head.bias")));
            let sup = g.cross_entropy(logits, &labels)?;
            Ok(g.add_scaled(nce, sup, 1.0))
        },
        &p,
        DEFAULT_EPS,
        None,
        seed,
    )?;
    Ok(result("imu_encoder_path", err, 1e-4))
}

/// d(pooled resampler output)/d(input tokens) with frozen weights.
pub fn check_resampler_input(seed: u64) -> Result<GradCheckResult> {
    let res = Resampler::<f64>::init(ResamplerConfig {
        d_model: 16,
        n_latents: 8,
        n_layers: 2,
        n_heads: 4,
        ff_mult: 4,
        seed,
        ..ResamplerConfig::default()
    })?;
    let mut rng = stream_rng(seed, stream::INIT, &[4]);
    let probe: Array2<f64> = normal(&mut rng, (1, 16), 1.0);
    let mut p = ParamSet::new();
    p.insert("tokens", normal(&mut rng, (5, 16), 1.0), false);
    let err = grad_check(
        |g, b| {
            let res_b = res.params.bind(g, false);
            let lat = res.forward(g, &res_b, b.id("tokens"));
            let pooled = g.mean_rows(lat);
            let w = g.constant(probe.clone());
            Ok(g.matmul_nt(pooled, w))
        },
        &p,
        DEFAULT_EPS,
        None,
        seed,
    )?;
    Ok(result("resampler_input", err, 1e-4))
}

/// All checks in a fixed order.
pub fn run_suite(seed: u64) -> Result<Vec<GradCheckResult>> {
    Ok(vec![
        check_quadratic(seed)?,
        check_info_nce(seed)?,
        check_supervised(seed)?,
        check_encoder_path(seed)?,
        check_resampler_input(seed)?,
    ])
}
