//! Exact t-SNE.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::normal;
use crate::rng::{stream, stream_rng};

const MAX_SEARCH_ITERS: usize = 50;
const ENTROPY_TOL: f64 = 1e-4;
const P_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            seed: 0,
            exaggeration: 12.0,
            exaggeration_iters: 250,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self, n_points: usize) -> Result<()> {
        if !(self.perplexity > 0.0) || self.perplexity >= (n_points as f64 - 1.0) / 3.0 {
            return Err(Error::InvalidArgument(format!(
                "perplexity {} must be in (0, (n - 1) / 3) for {n_points} points",
                self.perplexity
            )));
        }
        if self.iterations == 0 || !(self.learning_rate > 0.0) || !(self.exaggeration >= 1.0) {
            return Err(Error::InvalidArgument(
                "iterations and learning_rate must be positive, exaggeration >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Symmetrized joint affinities plus bandwidth-search diagnostics.
#[derive(Debug, Clone)]
pub struct Affinities {
    pub p: Array2<f64>,
    /// Largest number of bisection steps any point needed.
    pub max_search_iters: usize,
    /// Points whose entropy did not reach the tolerance.
    pub unconverged: usize,
}

fn squared_distances(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let sq = x.map_axis(Axis(1), |r| r.dot(&r));
    let g = x.dot(&x.t());
    let n = x.nrows();
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            (sq[i] + sq[j] - 2.0 * g[[i, j]]).max(0.0)
        }
    })
}

/// Conditional row i for precision beta; returns (row, entropy in nats).
fn conditional_row(d: &[f64], i: usize, beta: f64) -> (Vec<f64>, f64) {
    let dmin = d
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = d
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            if j == i {
                0.0
            } else {
                (-(v - dmin) * beta).exp()
            }
        })
        .collect();
    let sum: f64 = p.iter().sum();
    let mut h = 0.0;
    for (j, pj) in p.iter_mut().enumerate() {
        *pj /= sum;
        if j != i && *pj > 0.0 {
            h -= *pj * pj.ln();
        }
    }
    (p, h)
}

/// Gaussian affinities with per-point bandwidths matching `perplexity`.
pub fn affinities(x: ArrayView2<'_, f64>, perplexity: f64) -> Affinities {
    let n = x.nrows();
    let d = squared_distances(x);
    let target = perplexity.ln();
    let rows: Vec<(Vec<f64>, usize, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let di = d.row(i).to_vec();
            let (mut lo, mut hi, mut beta) = (0.0f64, f64::INFINITY, 1.0f64);
            let (mut p, mut h) = conditional_row(&di, i, beta);
            let mut iters = 0;
            while (h - target).abs() > ENTROPY_TOL && iters < MAX_SEARCH_ITERS {
                if h > target {
                    lo = beta;
                    beta = if hi.is_finite() {
                        (beta + hi) / 2.0
                    } else {
                        beta * 2.0
                    };
                } else {
                    hi = beta;
                    beta = (beta + lo) / 2.0;
                }
                (p, h) = conditional_row(&di, i, beta);
                iters += 1;
            }
            (p, iters, (h - target).abs() <= ENTROPY_TOL)
        })
        .collect();
    let mut cond = Array2::zeros((n, n));
    let mut max_search_iters = 0;
    let mut unconverged = 0;
    for (i, (row, iters, ok)) in rows.into_iter().enumerate() {
        cond.row_mut(i).assign(&Array1::from(row));
        max_search_iters = max_search_iters.max(iters);
        unconverged += usize::from(!ok);
    }
    let mut p = (&cond + &cond.t()) / (2.0 * n as f64);
    p.mapv_inplace(|v| v.max(P_FLOOR));
    let total = p.sum();
    p /= total;
    Affinities {
        p,
        max_search_iters,
        unconverged,
    }
}

/// Student-t kernel numerators and their sum (diagonal excluded).
fn kernel(y: &Array2<f64>) -> (Array2<f64>, f64) {
    let d = squared_distances(y.view());
    let num = Array2::from_shape_fn(
        d.dim(),
        |(i, j)| if i == j { 0.0 } else { 1.0 / (1.0 + d[[i, j]]) },
    );
    let z = num.sum();
    (num, z)
}

/// KL(P || Q) for embedding `y`.
pub fn kl_divergence(p: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let (num, z) = kernel(y);
    let mut kl = 0.0;
    for ((i, j), &pij) in p.indexed_iter() {
        if i != j && pij > 0.0 {
            let q = (num[[i, j]] / z).max(P_FLOOR);
            kl += pij * (pij / q).ln();
        }
    }
    kl
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    pub coords: Array2<f64>,
    pub initial_kl: f64,
    pub final_kl: f64,
    pub iterations: usize,
    pub max_search_iters: usize,
}

/// Projects `x` (M x D) to two dimensions.
pub fn tsne_project(x: ArrayView2<'_, f32>, cfg: &TsneConfig) -> Result<TsneResult> {
    let n = x.nrows();
    cfg.validate(n)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("t-SNE input".into()));
    }
    let aff = affinities(x.mapv(f64::from).view(), cfg.perplexity);
    let p = aff.p;
    let mut rng = stream_rng(cfg.seed, stream::TSNE, &[]);
    let mut y: Array2<f64> = normal(&mut rng, (n, 2), 1e-4);
    let initial_kl = kl_divergence(&p, &y);
    let mut update = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));

    for it in 0..cfg.iterations {
        let early = it < cfg.exaggeration_iters;
        let exag = if early { cfg.exaggeration } else { 1.0 };
        let momentum = if early { 0.5 } else { 0.8 };
        let (num, z) = kernel(&y);
        let grad_rows: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = [0.0; 2];
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let w = (exag * p[[i, j]] - num[[i, j]] / z) * num[[i, j]];
                    g[0] += 4.0 * w * (y[[i, 0]] - y[[j, 0]]);
                    g[1] += 4.0 * w * (y[[i, 1]] - y[[j, 1]]);
                }
                g
            })
            .collect();
        for (i, g) in grad_rows.iter().enumerate() {
            for k in 0..2 {
                let same_sign = (g[k] > 0.0) == (update[[i, k]] > 0.0);
                let gain = &mut gains[[i, k]];
                *gain = if same_sign { *gain * 0.8 } else { *gain + 0.2 };
                *gain = gain.max(0.01);
                update[[i, k]] = momentum * update[[i, k]] - cfg.learning_rate * *gain * g[k];
                y[[i, k]] += update[[i, k]];
            }
        }
        let mean = y.mean_axis(Axis(0)).expect("n > 0");
        y -= &mean;
    }
    let final_kl = kl_divergence(&p, &y);
    Ok(TsneResult {
        coords: y,
        initial_kl,
        final_kl,
        iterations: cfg.iterations,
        max_search_iters: aff.max_search_iters,
    })
}

/// Fraction of k-nearest-neighbour pairs (self excluded) sharing a label.
pub fn knn_purity(coords: ArrayView2<'_, f64>, labels: &[usize], k: usize) -> f64 {
    let d = squared_distances(coords);
    let n = coords.nrows();
    let mut agree = 0usize;
    for i in 0..n {
        let mut idx: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        idx.sort_by(|&a, &b| d[[i, a]].total_cmp(&d[[i, b]]).then(a.cmp(&b)));
        agree += idx
            .iter()
            .take(k)
            .filter(|&&j| labels[j] == labels[i])
            .count();
    }
    agree as f64 / (n * k.min(n - 1)) as f64
}
