use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

/// Shuffled index batches for one epoch. The order is a pure function of
/// `(seed, epoch)`.
pub fn make_batches(
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
    drop_last: bool,
    contrastive: bool,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 || (contrastive && batch_size < 2) {
        return Err(Error::InvalidArgument(format!(
            "batch size {batch_size} too small{}",
            if contrastive {
                " for contrastive training (need >= 2)"
            } else {
                ""
            }
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, stream::DATA_SHUFFLE, &[epoch as u64]));
    Ok(order
        .chunks(batch_size)
        .filter(|c| !drop_last || c.len() == batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

/// Sequential, unshuffled batches (evaluation order).
pub fn sequential_batches(n: usize, batch_size: usize) -> Vec<Vec<usize>> {
    (0..n)
        .collect::<Vec<_>>()
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}
