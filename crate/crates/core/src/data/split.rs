use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::sample::PairedSample;
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitPolicy {
    #[default]
    BySubject,
    BySession,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

impl SplitPart {
    pub const ALL: [SplitPart; 3] = [SplitPart::Train, SplitPart::Val, SplitPart::Test];

    pub fn name(self) -> &'static str {
        match self {
            SplitPart::Train => "train",
            SplitPart::Val => "val",
            SplitPart::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitPart {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitPart::Train),
            "val" => Ok(SplitPart::Val),
            "test" => Ok(SplitPart::Test),
            _ => Err(Error::InvalidArgument(format!("unknown split part {s}"))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct DatasetSplit {
    pub train: Vec<PairedSample>,
    pub val: Vec<PairedSample>,
    pub test: Vec<PairedSample>,
    pub seed: u64,
    pub policy: SplitPolicy,
}

impl DatasetSplit {
    pub fn part(&self, part: SplitPart) -> &[PairedSample] {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Val => &self.val,
            SplitPart::Test => &self.test,
        }
    }
}

/// Split counts: val and test get `round(n * r)` (at least one each),
/// train takes the remainder.
fn counts(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    let val = ((n as f64 * ratios[1]).round() as usize).max(1);
    let test = ((n as f64 * ratios[2]).round() as usize).max(1);
    if val + test >= n {
        return Err(Error::InvalidArgument(format!(
            "{n} groups cannot fill three splits"
        )));
    }
    Ok([n - val - test, val, test])
}

/// Partitions samples into train/val/test. Group-aware policies keep every
/// subject (or session) inside a single split. Each part preserves input order.
pub fn split_dataset(
    samples: Vec<PairedSample>,
    ratios: [f64; 3],
    policy: SplitPolicy,
    seed: u64,
) -> Result<DatasetSplit> {
    if ratios.iter().any(|&r| !(r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be positive and sum to 1, got {ratios:?}"
        )));
    }
    let key = |s: &PairedSample| -> u64 {
        match policy {
            SplitPolicy::BySubject => u64::from(s.subject_id),
            SplitPolicy::BySession => u64::from(s.session_id),
            SplitPolicy::Random => 0,
        }
    };
    let mut rng = stream_rng(seed, stream::SPLIT, &[]);
    // assignment[i] = split index for sample i
    let assignment: Vec<usize> = if policy == SplitPolicy::Random {
        let n = samples.len();
        let c = counts(n, ratios)?;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut a = vec![0; n];
        for (rank, &i) in order.iter().enumerate() {
            a[i] = if rank < c[0] {
                0
            } else if rank < c[0] + c[1] {
                1
            } else {
                2
            };
        }
        a
    } else {
        let groups: Vec<u64> = samples
            .iter()
            .map(key)
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        if groups.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "{:?} split needs at least 3 groups, found {}",
                policy,
                groups.len()
            )));
        }
        let c = counts(groups.len(), ratios)?;
        let mut shuffled = groups;
        shuffled.shuffle(&mut rng);
        let group_split: BTreeMap<u64, usize> = shuffled
            .iter()
            .enumerate()
            .map(|(rank, &g)| {
                let part = if rank < c[0] {
                    0
                } else if rank < c[0] + c[1] {
                    1
                } else {
                    2
                };
                (g, part)
            })
            .collect();
        samples.iter().map(|s| group_split[&key(s)]).collect()
    };
    let mut out = DatasetSplit {
        seed,
        policy,
        ..Default::default()
    };
    for (s, a) in samples.into_iter().zip(assignment) {
        match a {
            0 => out.train.push(s),
            1 => out.val.push(s),
            _ => out.test.push(s),
        }
    }
    Ok(out)
}
