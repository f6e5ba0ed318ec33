//! Consolidated evaluation: probes, retrieval and the combination sweep.

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::combine::{combine_rows, CombinationWeights};
use super::probe::{concat_features, linear_probe, Modality, ProbeConfig, ProbeReport};
use super::retrieval::{batched_retrieval, RetrievalReport};
use crate::error::{Error, Result};

/// Normalized embeddings of one dataset part, rows aligned across modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub video: Array2<f32>,
    pub imu: Array2<f32>,
}

impl EmbeddingSet {
    pub fn validate(&self) -> Result<()> {
        let n = self.ids.len();
        if self.labels.len() != n || self.video.nrows() != n || self.imu.dim() != self.video.dim() {
            return Err(Error::Shape(format!(
                "embedding set: {n} ids, {} labels, video {:?}, imu {:?}",
                self.labels.len(),
                self.video.dim(),
                self.imu.dim()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    pub retrieval_batch: usize,
    pub weights: Vec<f64>,
    pub probe: ProbeConfig,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            retrieval_batch: 64,
            weights: vec![0.0, 0.2, 0.5, 0.8, 1.0],
            probe: ProbeConfig::default(),
        }
    }
}

/// One row of the weight sweep: combined(w) used as the query against each
/// modality, plus a probe on the combined vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationRow {
    pub w_vision: f64,
    pub w_imu: f64,
    pub to_vision_top1: f64,
    pub to_imu_top1: f64,
    pub probe_test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub probes: Vec<ProbeReport>,
    pub retrieval: Vec<RetrievalReport>,
    pub combination: Vec<CombinationRow>,
}

fn stacked(
    train: &EmbeddingSet,
    test: &EmbeddingSet,
    f: impl Fn(&EmbeddingSet) -> Result<Array2<f32>>,
) -> Result<Array2<f32>> {
    let a = f(train)?;
    let b = f(test)?;
    concatenate(Axis(0), &[a.view(), b.view()]).map_err(|e| Error::Shape(e.to_string()))
}

/// Video, IMU and concatenated probes, fit on `train` and scored on `test`.
pub fn probe_all(
    train: &EmbeddingSet,
    test: &EmbeddingSet,
    n_classes: usize,
    cfg: &ProbeConfig,
) -> Result<Vec<ProbeReport>> {
    train.validate()?;
    test.validate()?;
    let labels: Vec<usize> = train.labels.iter().chain(&test.labels).copied().collect();
    let tr: Vec<usize> = (0..train.labels.len()).collect();
    let te: Vec<usize> = (train.labels.len()..labels.len()).collect();
    let video = stacked(train, test, |s| Ok(s.video.clone()))?;
    let imu = stacked(train, test, |s| Ok(s.imu.clone()))?;
    let both = concat_features(video.view(), imu.view())?;
    [
        (video, Modality::Video),
        (imu, Modality::Imu),
        (both, Modality::Combined),
    ]
    .iter()
    .map(|(x, m)| linear_probe(x.view(), &labels, &tr, &te, n_classes, *m, cfg))
    .collect()
}

/// Probes are fit on `train` and scored on `test`; retrieval and the sweep
/// run on `test` in batches of `cfg.retrieval_batch`.
pub fn evaluate(
    train: &EmbeddingSet,
    test: &EmbeddingSet,
    n_classes: usize,
    cfg: &ReportConfig,
) -> Result<EvalReport> {
    train.validate()?;
    test.validate()?;
    let labels: Vec<usize> = train.labels.iter().chain(&test.labels).copied().collect();
    let tr: Vec<usize> = (0..train.labels.len()).collect();
    let te: Vec<usize> = (train.labels.len()..labels.len()).collect();
    let probe = |x: &Array2<f32>, m: Modality| {
        linear_probe(x.view(), &labels, &tr, &te, n_classes, m, &cfg.probe)
    };

    let probes = probe_all(train, test, n_classes, &cfg.probe)?;
    let batch = cfg.retrieval_batch.min(test.ids.len()).max(2);
    let retrieval = batched_retrieval(test.imu.view(), test.video.view(), batch)?.to_vec();

    let mut combination = Vec::new();
    for &w in &cfg.weights {
        let weights = CombinationWeights::vision_share(w)?;
        let comb = |s: &EmbeddingSet| combine_rows(s.video.view(), s.imu.view(), weights, true);
        let test_comb = comb(test)?;
        let to_vision = batched_retrieval(test_comb.view(), test.video.view(), batch)?[0].top1;
        let to_imu = batched_retrieval(test_comb.view(), test.imu.view(), batch)?[0].top1;
        let all = stacked(train, test, comb)?;
        let p = probe(&all, Modality::Combined)?;
        combination.push(CombinationRow {
            w_vision: weights.w_vision,
            w_imu: weights.w_imu,
            to_vision_top1: to_vision,
            to_imu_top1: to_imu,
            probe_test_acc: p.test_acc,
        });
    }
    Ok(EvalReport {
        probes,
        retrieval,
        combination,
    })
}
