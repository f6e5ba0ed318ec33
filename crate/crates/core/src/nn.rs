//! Building blocks shared by the IMU encoder and the resampler.

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::graph::{Graph, NodeId};
use crate::real::Real;
use crate::rng::Rng;

/// Scaled dot-product attention split across `n_heads` column groups.
/// Keys at or beyond `valid_keys` are masked out.
pub fn multi_head_attention<F: Real>(
    g: &mut Graph<F>,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    n_heads: usize,
    valid_keys: Option<usize>,
) -> NodeId {
    let d = g.value(q).ncols();
    let dh = d / n_heads;
    let q = g.scale(q, F::lit(1.0 / (dh as f64).sqrt()));
    let heads: Vec<NodeId> = (0..n_heads)
        .map(|h| {
            let qh = g.slice_cols(q, h * dh, dh);
            let kh = g.slice_cols(k, h * dh, dh);
            let vh = g.slice_cols(v, h * dh, dh);
            let scores = g.matmul_nt(qh, kh);
            let probs = g.softmax_rows(scores, valid_keys);
            g.matmul(probs, vh)
        })
        .collect();
    if heads.len() == 1 {
        heads[0]
    } else {
        g.concat_cols(&heads)
    }
}

pub fn linear<F: Real>(g: &mut Graph<F>, x: NodeId, w: NodeId, b: Option<NodeId>) -> NodeId {
    let y = g.matmul(x, w);
    match b {
        Some(b) => g.add_row(y, b),
        None => y,
    }
}

/// Inverted dropout mask with keep-scaling.
pub fn dropout_mask<F: Real>(rng: &mut Rng, shape: (usize, usize), p: f64) -> Array2<F> {
    let keep = F::lit(1.0 / (1.0 - p));
    Array2::from_shape_fn(shape, |_| {
        if rng.random::<f64>() < p {
            F::zero()
        } else {
            keep
        }
    })
}

pub fn normal<F: Real>(rng: &mut Rng, shape: (usize, usize), std: f64) -> Array2<F> {
    Array2::from_shape_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        F::lit(z * std)
    })
}

/// Glorot-uniform initialization.
pub fn xavier<F: Real>(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Array2<F> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| {
        F::lit(rng.random_range(-limit..limit))
    })
}

/// Matrix with orthonormal rows or columns (whichever is shorter), from
/// modified Gram-Schmidt on a Gaussian draw, scaled by `gain`.
pub fn orthogonal<F: Real>(rng: &mut Rng, rows: usize, cols: usize, gain: f64) -> Array2<F> {
    let tall = rows >= cols;
    let (n, k) = if tall { (rows, cols) } else { (cols, rows) };
    // k orthonormal vectors of length n
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        let val = if tall { basis[j][i] } else { basis[i][j] };
        F::lit(val * gain)
    })
}
