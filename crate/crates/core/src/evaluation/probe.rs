//! Linear probes on frozen features.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::alignment::loss::{argmax_accuracy, check_labels, cross_entropy_with_grad};
use crate::error::{Error, Result};
use crate::nn::normal;
use crate::rng::{stream, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Video,
    Imu,
    Combined,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Video, Modality::Imu, Modality::Combined];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Video => "video",
            Modality::Imu => "imu",
            Modality::Combined => "combined",
        }
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "video" | "vision" => Ok(Modality::Video),
            "imu" => Ok(Modality::Imu),
            "combined" => Ok(Modality::Combined),
            other => Err(Error::InvalidArgument(format!(
                "unknown modality {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Z-score features with train-split statistics before fitting.
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 1e-3,
            seed: 0,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub modality: Modality,
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub n_classes: usize,
    pub feature_dim: usize,
}

/// Fits a linear classifier on `train` rows of `features` and reports
/// loss and accuracy (in percent) on both parts. Test labels are only
/// read for the final evaluation.
pub fn linear_probe(
    features: ArrayView2<'_, f32>,
    labels: &[usize],
    train: &[usize],
    test: &[usize],
    n_classes: usize,
    modality: Modality,
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    if features.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} feature rows but {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument(
            "probe needs non-empty train and test parts".into(),
        ));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("probe features".into()));
    }
    check_labels(labels, n_classes)?;
    let train_y: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let mut present = train_y.clone();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "probe needs at least 2 classes in the train part, found {}",
            present.len()
        )));
    }

    let x = features.mapv(f64::from);
    let mut xtr = x.select(Axis(0), train);
    let mut xte = x.select(Axis(0), test);
    if cfg.standardize {
        let mean = xtr.mean_axis(Axis(0)).expect("non-empty");
        let std = xtr
            .std_axis(Axis(0), 0.0)
            .mapv(|s| if s > 1e-12 { s } else { 1.0 });
        for m in [&mut xtr, &mut xte] {
            *m -= &mean;
            *m /= &std;
        }
    }

    let f = x.ncols();
    let mut rng = stream_rng(cfg.seed, stream::PROBE, &[]);
    let mut w: Array2<f64> = normal(&mut rng, (f, n_classes), 0.01);
    let mut b: Array1<f64> = Array1::zeros(n_classes);
    let (mut mw, mut vw) = (Array2::<f64>::zeros(w.dim()), Array2::<f64>::zeros(w.dim()));
    let (mut mb, mut vb) = (
        Array1::<f64>::zeros(n_classes),
        Array1::<f64>::zeros(n_classes),
    );
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    for t in 1..=cfg.epochs {
        let logits = xtr.dot(&w) + &b;
        let (_, dlogits) = cross_entropy_with_grad(logits.view(), &train_y)?;
        let gw = xtr.t().dot(&dlogits);
        let gb = dlogits.sum_axis(Axis(0));
        let (c1, c2) = (1.0 - b1.powi(t as i32), 1.0 - b2.powi(t as i32));
        ndarray::Zip::from(&mut w)
            .and(&mut mw)
            .and(&mut vw)
            .and(&gw)
            .for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        ndarray::Zip::from(&mut b)
            .and(&mut mb)
            .and(&mut vb)
            .and(&gb)
            .for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
    }

    let eval = |xs: &Array2<f64>, ys: &[usize]| -> Result<(f64, f64)> {
        let logits = xs.dot(&w) + &b;
        let (loss, _) = cross_entropy_with_grad(logits.view(), ys)?;
        Ok((loss, 100.0 * argmax_accuracy(logits.view(), ys)))
    };
    let (train_loss, train_acc) = eval(&xtr, &train_y)?;
    let test_y: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
    let (test_loss, test_acc) = eval(&xte, &test_y)?;
    Ok(ProbeReport {
        modality,
        train_loss,
        test_loss,
        train_acc,
        test_acc,
        n_classes,
        feature_dim: f,
    })
}

/// Row-wise concatenation [video | imu].
pub fn concat_features(
    video: ArrayView2<'_, f32>,
    imu: ArrayView2<'_, f32>,
) -> Result<Array2<f32>> {
    if video.nrows() != imu.nrows() {
        return Err(Error::Shape(format!(
            "{} vs {} rows",
            video.nrows(),
            imu.nrows()
        )));
    }
    Ok(ndarray::concatenate(Axis(1), &[video, imu]).expect("row counts checked"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_features_are_separable() {
        let n_classes = 5;
        let labels: Vec<usize> = (0..100).map(|i| i % n_classes).collect();
        let x = Array2::from_shape_fn(
            (100, n_classes),
            |(i, j)| if labels[i] == j { 1.0 } else { 0.0 },
        );
        let train: Vec<usize> = (0..70).collect();
        let test: Vec<usize> = (70..100).collect();
        let r = linear_probe(
            x.view(),
            &labels,
            &train,
            &test,
            n_classes,
            Modality::Imu,
            &ProbeConfig::default(),
        )
        .unwrap();
        assert_eq!(r.test_acc, 100.0);
        assert_eq!(r.train_acc, 100.0);
        assert_eq!(r.feature_dim, n_classes);
    }

    #[test]
    fn single_class_is_rejected() {
        let x = Array2::<f32>::zeros((4, 2));
        let labels = [1, 1, 1, 0];
        let err = linear_probe(
            x.view(),
            &labels,
            &[0, 1, 2],
            &[3],
            2,
            Modality::Video,
            &ProbeConfig::default(),
        );
        assert!(err.is_err());
    }
}
