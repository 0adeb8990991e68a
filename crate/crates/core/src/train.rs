//! Mini-batch bookkeeping shared by the three trainers.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::tensor::Prng;

/// Seeded permutation of `0..n` cut into batches of at most `batch`.
pub fn shuffled_batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Prng::substream(seed, &[epoch as u64]);
    order.shuffle(&mut rng);
    order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

pub fn ensure_finite(loss: f64, stage: &'static str, epoch: usize, hint: &str) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            stage,
            epoch,
            hint: hint.to_owned(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_every_index_once() {
        let b = shuffled_batches(123, 50, 7, 2);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![50, 50, 23]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..123).collect::<Vec<_>>());
        assert_eq!(b, shuffled_batches(123, 50, 7, 2));
        assert_ne!(b, shuffled_batches(123, 50, 7, 3));
    }
}
