//! Contrastive and supervised objectives with closed-form gradients.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Softmax temperature applied to cosine similarities.
    pub tau: f64,
    /// Weight of the supervised class-logit term.
    pub lambda_sup: f64,
    /// Average the IMU->vision and vision->IMU directions. When false only
    /// the row-wise (IMU query) direction is used.
    pub symmetric: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            lambda_sup: 1.0,
            symmetric: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "tau must be > 0, got {}",
                self.tau
            )));
        }
        if !(self.lambda_sup >= 0.0 && self.lambda_sup.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda_sup must be >= 0, got {}",
                self.lambda_sup
            )));
        }
        Ok(())
    }
}

/// Per-term breakdown of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub info_nce: f64,
    pub supervised: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn combine(cfg: &LossConfig, info_nce: f64, supervised: f64) -> Self {
        Self {
            info_nce,
            supervised,
            total: info_nce + cfg.lambda_sup * supervised,
        }
    }
}

/// Cosine similarity matrix between row-normalized IMU and vision embeddings.
///
/// Rows index IMU embeddings, columns vision embeddings; the diagonal holds
/// the positive pairs.
pub fn cosine_similarity_matrix<F: Real>(
    imu: ArrayView2<'_, F>,
    vision: ArrayView2<'_, F>,
) -> Result<Array2<F>> {
    if imu.dim() != vision.dim() {
        return Err(Error::Shape(format!(
            "imu {:?} vs vision {:?}",
            imu.dim(),
            vision.dim()
        )));
    }
    Ok(imu.dot(&vision.t()))
}

/// Row-wise L2 normalization. Fails on an all-zero row.
pub fn l2_normalize_rows<F: Real>(x: ArrayView2<'_, F>) -> Result<Array2<F>> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let norm = row.iter().map(|&v| v * v).sum::<F>().sqrt();
        if norm == F::zero() || !norm.is_finite() {
            return Err(Error::ZeroNorm);
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(out)
}

fn log_sum_exp<F: Real>(values: impl Iterator<Item = F> + Clone) -> F {
    let max = values.clone().fold(F::neg_infinity(), F::max);
    max + values.map(|v| (v - max).exp()).sum::<F>().ln()
}

/// One-direction cross entropy of `logits` where the target of row `i` is
/// column `i`. Returns the mean loss and d(loss)/d(logits).
fn diagonal_cross_entropy<F: Real>(logits: ArrayView2<'_, F>) -> (F, Array2<F>) {
    let n = logits.nrows();
    let nf = F::lit(n as f64);
    let mut grad = Array2::zeros((n, n));
    let mut total = F::zero();
    for (i, row) in logits.rows().into_iter().enumerate() {
        let lse = log_sum_exp(row.iter().copied());
        total += lse - row[i];
        for (k, &v) in row.iter().enumerate() {
            grad[[i, k]] = (v - lse).exp() / nf;
        }
        grad[[i, i]] -= F::one() / nf;
    }
    (total / nf, grad)
}

/// Symmetric infoNCE over a square similarity matrix.
///
/// Returns the loss and its gradient with respect to `sim`.
pub fn info_nce_with_grad<F: Real>(
    sim: ArrayView2<'_, F>,
    tau: f64,
    symmetric: bool,
) -> Result<(F, Array2<F>)> {
    let (n, m) = sim.dim();
    if n != m || n == 0 {
        return Err(Error::Shape(format!(
            "similarity matrix must be square and non-empty, got {n}x{m}"
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tau must be > 0, got {tau}"
        )));
    }
    if sim.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("similarity matrix".into()));
    }
    let inv_tau = F::lit(1.0 / tau);
    let logits = sim.mapv(|v| v * inv_tau);
    let (row_loss, row_grad) = diagonal_cross_entropy(logits.view());
    let (loss, grad) = if symmetric {
        let (col_loss, col_grad) = diagonal_cross_entropy(logits.t());
        let half = F::lit(0.5);
        (
            (row_loss + col_loss) * half,
            (row_grad + col_grad.t()) * half,
        )
    } else {
        (row_loss, row_grad)
    };
    Ok((loss, grad * inv_tau))
}

/// Loss-only convenience wrapper around [`info_nce_with_grad`].
pub fn info_nce_loss<F: Real>(sim: ArrayView2<'_, F>, tau: f64, symmetric: bool) -> Result<F> {
    info_nce_with_grad(sim, tau, symmetric).map(|(l, _)| l)
}

pub(crate) fn check_labels(labels: &[usize], n_classes: usize) -> Result<()> {
    match labels.iter().position(|&l| l >= n_classes) {
        Some(index) => Err(Error::LabelOutOfRange {
            index,
            label: labels[index],
            n_classes,
        }),
        None => Ok(()),
    }
}

/// Mean softmax cross entropy of `logits` (N x C) against integer labels.
pub fn cross_entropy_with_grad<F: Real>(
    logits: ArrayView2<'_, F>,
    labels: &[usize],
) -> Result<(F, Array2<F>)> {
    let (n, c) = logits.dim();
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    check_labels(labels, c)?;
    if n == 0 {
        return Ok((F::zero(), Array2::zeros((0, c))));
    }
    let nf = F::lit(n as f64);
    let mut grad = Array2::zeros((n, c));
    let mut total = F::zero();
    for (i, row) in logits.rows().into_iter().enumerate() {
        let lse = log_sum_exp(row.iter().copied());
        total += lse - row[labels[i]];
        for (k, &v) in row.iter().enumerate() {
            grad[[i, k]] = (v - lse).exp() / nf;
        }
        grad[[i, labels[i]]] -= F::one() / nf;
    }
    Ok((total / nf, grad))
}

/// Accuracy (fraction in [0, 1]) of argmax predictions; ties go to the lower index.
pub fn argmax_accuracy<F: Real>(logits: ArrayView2<'_, F>, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &l)| argmax(row.iter().copied()) == l)
        .count();
    hits as f64 / labels.len() as f64
}

pub(crate) fn argmax<F: Real>(values: impl Iterator<Item = F>) -> usize {
    let mut best = 0;
    let mut best_v = F::neg_infinity();
    for (i, v) in values.enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Linear classification head mapping embeddings to class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassHead<F> {
    /// D x C
    pub weight: Array2<F>,
    /// 1 x C
    pub bias: Array2<F>,
}

impl<F: Real> ClassHead<F> {
    pub fn zeros(dim: usize, n_classes: usize) -> Self {
        Self {
            weight: Array2::zeros((dim, n_classes)),
            bias: Array2::zeros((1, n_classes)),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.weight.ncols()
    }

    pub fn logits(&self, emb: ArrayView2<'_, F>) -> Result<Array2<F>> {
        if emb.ncols() != self.weight.nrows() {
            return Err(Error::Shape(format!(
                "head expects dim {}, got {}",
                self.weight.nrows(),
                emb.ncols()
            )));
        }
        Ok(emb.dot(&self.weight) + &self.bias)
    }
}

/// Gradients of the supervised loss.
#[derive(Debug, Clone)]
pub struct SupervisedGrads<F> {
    pub weight: Array2<F>,
    pub bias: Array2<F>,
    pub embeddings: Array2<F>,
}

/// Mean cross entropy of the head's logits; returns the loss and gradients
/// for the head parameters and the embeddings.
pub fn supervised_loss_with_grad<F: Real>(
    head: &ClassHead<F>,
    emb: ArrayView2<'_, F>,
    labels: &[usize],
) -> Result<(F, SupervisedGrads<F>)> {
    check_labels(labels, head.n_classes())?;
    let logits = head.logits(emb)?;
    let (loss, dlogits) = cross_entropy_with_grad(logits.view(), labels)?;
    let grads = SupervisedGrads {
        weight: emb.t().dot(&dlogits),
        bias: dlogits.sum_axis(Axis(0)).insert_axis(Axis(0)),
        embeddings: dlogits.dot(&head.weight.t()),
    };
    Ok((loss, grads))
}

pub fn supervised_loss<F: Real>(
    head: &ClassHead<F>,
    emb: ArrayView2<'_, F>,
    labels: &[usize],
) -> Result<F> {
    supervised_loss_with_grad(head, emb, labels).map(|(l, _)| l)
}

/// Combined objective: `info_nce + lambda_sup * supervised`.
///
/// `imu_raw` are pooled IMU embeddings before normalization (the head input);
/// `sim` is the cosine matrix of the normalized embeddings.
pub fn total_loss<F: Real>(
    cfg: &LossConfig,
    sim: ArrayView2<'_, F>,
    head: &ClassHead<F>,
    imu_raw: ArrayView2<'_, F>,
    labels: &[usize],
) -> Result<LossTerms> {
    cfg.validate()?;
    let nce = info_nce_loss(sim, cfg.tau, cfg.symmetric)?;
    let sup = if cfg.lambda_sup > 0.0 {
        supervised_loss(head, imu_raw, labels)?.as_f64()
    } else {
        check_labels(labels, head.n_classes())?;
        0.0
    };
    Ok(LossTerms::combine(cfg, nce.as_f64(), sup))
}

/// Softmax over a row vector (helper for tests and probes).
pub fn softmax<F: Real>(row: &[F]) -> Array1<F> {
    let lse = log_sum_exp(row.iter().copied());
    row.iter().map(|&v| (v - lse).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn single_pair_has_zero_loss() {
        let sim = array![[0.3_f64]];
        assert_eq!(info_nce_loss(sim.view(), 0.07, true).unwrap(), 0.0);
    }

    #[test]
    fn constant_similarity_gives_log_n() {
        for n in [2usize, 4, 35] {
            let sim = Array2::from_elem((n, n), 0.42_f64);
            let l = info_nce_loss(sim.view(), 0.07, true).unwrap();
            assert_abs_diff_eq!(l, (n as f64).ln(), epsilon = 1e-9);
        }
        let sim = Array2::from_elem((4, 4), -1.0_f64);
        assert_abs_diff_eq!(
            info_nce_loss(sim.view(), 1.0, false).unwrap(),
            1.386294,
            epsilon = 1e-6
        );
    }

    #[test]
    fn identity_two_by_two() {
        let sim = array![[1.0_f64, 0.0], [0.0, 1.0]];
        let expected = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
        assert_abs_diff_eq!(expected, 0.313262, epsilon = 1e-6);
        assert_abs_diff_eq!(
            info_nce_loss(sim.view(), 1.0, false).unwrap(),
            expected,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            info_nce_loss(sim.view(), 1.0, true).unwrap(),
            expected,
            epsilon = 1e-12
        );
    }

    #[test]
    fn rejects_non_finite_and_bad_tau() {
        let sim = array![[1.0_f64, f64::NAN], [0.0, 1.0]];
        assert!(matches!(
            info_nce_loss(sim.view(), 1.0, true),
            Err(Error::NonFinite(_))
        ));
        let sim = array![[1.0_f64]];
        assert!(info_nce_loss(sim.view(), 0.0, true).is_err());
    }

    #[test]
    fn uniform_logits_give_log_35() {
        let head = ClassHead::<f64>::zeros(4, 35);
        let emb = Array2::from_elem((3, 4), 0.5);
        let l = supervised_loss(&head, emb.view(), &[0, 7, 34]).unwrap();
        assert_abs_diff_eq!(l, 35f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(l, 3.5553, epsilon = 1e-4);
    }

    #[test]
    fn saturated_logits_give_zero_loss() {
        let mut head = ClassHead::<f64>::zeros(3, 3);
        head.weight = Array2::eye(3) * 1000.0;
        let emb = Array2::eye(3);
        let l = supervised_loss(&head, emb.view(), &[0, 1, 2]).unwrap();
        assert!(l < 1e-6);
    }

    #[test]
    fn out_of_range_label_names_index() {
        let head = ClassHead::<f64>::zeros(2, 35);
        let emb = Array2::zeros((3, 2));
        match supervised_loss(&head, emb.view(), &[1, 35, 2]) {
            Err(Error::LabelOutOfRange { index, label, .. }) => {
                assert_eq!((index, label), (1, 35));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn total_loss_is_additive_and_linear() {
        let sim = array![[0.9_f64, 0.1], [0.2, 0.8]];
        let mut head = ClassHead::<f64>::zeros(2, 3);
        head.weight = array![[0.3, -0.2, 0.1], [0.5, 0.4, -0.6]];
        let raw = array![[1.0, 2.0], [-0.5, 0.3]];
        let labels = [2, 0];
        let nce = info_nce_loss(sim.view(), 0.07, true).unwrap();
        let sup = supervised_loss(&head, raw.view(), &labels).unwrap();

        let mut cfg = LossConfig {
            lambda_sup: 0.0,
            ..Default::default()
        };
        assert_eq!(
            total_loss(&cfg, sim.view(), &head, raw.view(), &labels)
                .unwrap()
                .total,
            nce
        );
        cfg.lambda_sup = 1.0;
        let one = total_loss(&cfg, sim.view(), &head, raw.view(), &labels).unwrap();
        assert_abs_diff_eq!(one.total, nce + sup, epsilon = 1e-12);
        cfg.lambda_sup = 2.0;
        let two = total_loss(&cfg, sim.view(), &head, raw.view(), &labels).unwrap();
        assert_abs_diff_eq!(two.total - nce, 2.0 * (one.total - nce), epsilon = 1e-12);
    }

    #[test]
    fn cosine_matrix_matches_double_loop() {
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(3, "test", &[]);
        let raw_a = Array2::from_shape_fn((4, 8), |_| rng.random_range(-1.0..1.0_f64));
        let raw_b = Array2::from_shape_fn((4, 8), |_| rng.random_range(-1.0..1.0_f64));
        let a = l2_normalize_rows(raw_a.view()).unwrap();
        let b = l2_normalize_rows(raw_b.view()).unwrap();
        let sim = cosine_similarity_matrix(a.view(), b.view()).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let mut dot = 0.0;
                for k in 0..8 {
                    dot += a[[i, k]] * b[[j, k]];
                }
                assert_abs_diff_eq!(sim[[i, j]], dot, epsilon = 1e-12);
                assert!(sim[[i, j]].abs() <= 1.0 + 1e-6);
            }
        }
        let eye = Array2::<f64>::eye(3);
        assert_eq!(
            cosine_similarity_matrix(eye.view(), eye.view()).unwrap(),
            eye
        );
        let mut neg = eye.clone();
        neg.row_mut(0).mapv_inplace(|v| -v);
        assert_eq!(
            cosine_similarity_matrix(neg.view(), eye.view()).unwrap()[[0, 0]],
            -1.0
        );
    }
}
