//! Batches that always hold an LBA and a PPA complex while any remain.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tasks::TaskId;

/// Splits `0..affinity.len()` into batches of at most `batch_size`.
///
/// `affinity[i]` names the affinity task labelled on sample `i`. Every
/// sample appears exactly once per epoch. Each batch first takes one
/// remaining LBA sample and one remaining PPA sample, then fills its free
/// slots in the order of a seeded permutation.
pub fn balanced_batches(affinity: &[Option<TaskId>], batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let has = |t: TaskId| affinity.contains(&Some(t));
    let quotas = usize::from(has(TaskId::Lba)) + usize::from(has(TaskId::Ppa));
    if batch_size == 0 || batch_size < quotas {
        return Err(Error::config(format!(
            "batch size {batch_size} cannot hold one sample from each of {quotas} affinity pools"
        )));
    }
    let mut order: Vec<usize> = (0..affinity.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pool = |t: TaskId| -> Vec<usize> { order.iter().copied().filter(|&i| affinity[i] == Some(t)).collect() };
    let pools = [pool(TaskId::Lba), pool(TaskId::Ppa)];
    let mut cursors = [0usize; 2];
    let mut fill = 0usize;
    let mut used = vec![false; affinity.len()];
    let mut remaining = affinity.len();
    let mut batches = Vec::new();
    while remaining > 0 {
        let mut batch = Vec::with_capacity(batch_size);
        for (p, cursor) in pools.iter().zip(cursors.iter_mut()) {
            while *cursor < p.len() && used[p[*cursor]] {
                *cursor += 1;
            }
            if let Some(&i) = p.get(*cursor) {
                used[i] = true;
                batch.push(i);
            }
        }
        while batch.len() < batch_size && fill < order.len() {
            let i = order[fill];
            fill += 1;
            if !used[i] {
                used[i] = true;
                batch.push(i);
            }
        }
        remaining -= batch.len();
        batches.push(batch);
    }
    Ok(batches)
}
