//! Embedding export to CMEB files.

use std::path::Path;

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use super::probe::{concat_features, Modality};
use crate::alignment::{l2_normalize_rows, AlignmentModel, EmbeddingStage};
use crate::data::PairedSample;
use crate::error::Result;
use crate::io::cmeb::{self, Sidecar};

/// Pooled embeddings for every sample, rows in input order. Combined rows
/// are [video | imu] of the normalized embeddings.
pub fn embedding_matrix(
    model: &AlignmentModel,
    samples: &[PairedSample],
    modality: Modality,
    stage: EmbeddingStage,
    normalize: bool,
) -> Result<Array2<f32>> {
    let one = |m: Modality| -> Result<Array2<f32>> {
        let rows: Vec<Array1<f32>> = samples
            .par_iter()
            .map(|s| match m {
                Modality::Imu => model.imu_embedding_at(&s.imu, stage),
                _ => model.vision_embedding_at(s, stage),
            })
            .collect::<Result<_>>()?;
        let d = rows.first().map_or(model.d_model(), |r| r.len());
        let mut out = Array2::zeros((rows.len(), d));
        for (mut o, r) in out.rows_mut().into_iter().zip(&rows) {
            o.assign(r);
        }
        if normalize {
            l2_normalize_rows(out.view())
        } else {
            Ok(out)
        }
    };
    match modality {
        Modality::Combined => {
            let v = one(Modality::Video)?;
            let i = one(Modality::Imu)?;
            concat_features(v.view(), i.view())
        }
        m => one(m),
    }
}

pub fn sidecar(samples: &[PairedSample]) -> Sidecar {
    Sidecar {
        ids: samples.iter().map(|s| s.id.clone()).collect(),
        labels: samples.iter().map(|s| s.label).collect(),
    }
}

/// Writes the embeddings and a sidecar with ids and labels.
pub fn export_embeddings(
    model: &AlignmentModel,
    samples: &[PairedSample],
    modality: Modality,
    stage: EmbeddingStage,
    normalize: bool,
    out_path: &Path,
) -> Result<Array2<f32>> {
    let m = embedding_matrix(model, samples, modality, stage, normalize)?;
    cmeb::write_with_sidecar(out_path, m.view(), &sidecar(samples))?;
    Ok(m)
}
