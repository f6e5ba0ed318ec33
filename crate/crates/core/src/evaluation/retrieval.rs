//! In-batch cross-modal retrieval.

use ndarray::{s, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ImuToVision,
    VisionToImu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub direction: Direction,
    pub top1: f64,
    pub top5: f64,
    pub batch_size: usize,
}

/// Rank of candidate `target` when candidates are sorted by descending
/// score, ties going to the lower index.
pub fn rank_of(scores: ArrayView1<'_, f32>, target: usize) -> usize {
    let t = scores[target];
    scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > t || (s == t && j < target))
        .count()
}

/// Hits at each k for queries `q` against candidates `c` (row i of each
/// is a positive pair), as counts.
fn hits(q: ArrayView2<'_, f32>, c: ArrayView2<'_, f32>, ks: &[usize]) -> Vec<usize> {
    let sim = q.dot(&c.t());
    let mut out = vec![0; ks.len()];
    for (i, row) in sim.rows().into_iter().enumerate() {
        let r = rank_of(row, i);
        for (o, &k) in out.iter_mut().zip(ks) {
            if r < k {
                *o += 1;
            }
        }
    }
    out
}

fn check(imu: ArrayView2<'_, f32>, vis: ArrayView2<'_, f32>) -> Result<()> {
    if imu.dim() != vis.dim() {
        return Err(Error::Shape(format!(
            "imu {:?} vs vision {:?}",
            imu.dim(),
            vis.dim()
        )));
    }
    if imu.nrows() < 2 {
        return Err(Error::InvalidArgument(
            "retrieval needs at least 2 pairs".into(),
        ));
    }
    Ok(())
}

/// Retrieval over one batch in both directions; percentages over N.
pub fn retrieval_accuracy(
    imu: ArrayView2<'_, f32>,
    vis: ArrayView2<'_, f32>,
) -> Result<[RetrievalReport; 2]> {
    check(imu, vis)?;
    batched_retrieval(imu, vis, imu.nrows())
}

/// Retrieval within consecutive batches of `batch_size` rows (a trailing
/// batch with a single row is skipped, it has no negatives).
pub fn batched_retrieval(
    imu: ArrayView2<'_, f32>,
    vis: ArrayView2<'_, f32>,
    batch_size: usize,
) -> Result<[RetrievalReport; 2]> {
    check(imu, vis)?;
    if batch_size < 2 {
        return Err(Error::InvalidArgument(
            "retrieval batch size must be >= 2".into(),
        ));
    }
    let ks = [1, 5];
    let (mut iv, mut vi, mut n) = (vec![0; 2], vec![0; 2], 0);
    let mut start = 0;
    while start < imu.nrows() {
        let end = (start + batch_size).min(imu.nrows());
        if end - start >= 2 {
            let (qi, qv) = (imu.slice(s![start..end, ..]), vis.slice(s![start..end, ..]));
            for (acc, h) in iv.iter_mut().zip(hits(qi, qv, &ks)) {
                *acc += h;
            }
            for (acc, h) in vi.iter_mut().zip(hits(qv, qi, &ks)) {
                *acc += h;
            }
            n += end - start;
        }
        start = end;
    }
    let pct = |h: usize| 100.0 * h as f64 / n as f64;
    Ok([
        RetrievalReport {
            direction: Direction::ImuToVision,
            top1: pct(iv[0]),
            top5: pct(iv[1]),
            batch_size,
        },
        RetrievalReport {
            direction: Direction::VisionToImu,
            top1: pct(vi[0]),
            top5: pct(vi[1]),
            batch_size,
        },
    ])
}

/// Top-1 retrieval of `queries` against `candidates` within batches.
pub fn batched_top1(
    queries: ArrayView2<'_, f32>,
    candidates: ArrayView2<'_, f32>,
    batch_size: usize,
) -> Result<f64> {
    Ok(batched_retrieval(queries, candidates, batch_size)?[0].top1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn self_match_is_perfect() {
        let m = Array2::from_shape_fn((6, 6), |(i, j)| if i == j { 1.0 } else { 0.0 });
        let r = retrieval_accuracy(m.view(), m.view()).unwrap();
        assert_eq!(r[0].top1, 100.0);
        assert_eq!(r[1].top1, 100.0);
    }

    #[test]
    fn ties_break_by_index() {
        let imu = array![[1.0f32, 0.0], [1.0, 0.0], [1.0, 0.0], [1.0, 0.0]];
        let vis = array![[0.0f32, 1.0], [0.0, 1.0], [0.0, 1.0], [0.0, 1.0]];
        // every score is 0; only query 0 ranks its partner first
        let r = retrieval_accuracy(imu.view(), vis.view()).unwrap();
        assert_eq!(r[0].top1, 25.0);
        assert_eq!(r[0].top5, 100.0);
    }

    #[test]
    fn too_few_rows() {
        let m = Array2::<f32>::zeros((1, 3));
        assert!(retrieval_accuracy(m.view(), m.view()).is_err());
    }
}
