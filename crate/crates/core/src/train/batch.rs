use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A mini-batch: row indices into the training set and `|batch| / |D|`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub fraction: f64,
}

/// Sizes of the consecutive batches covering `n` points. A trailing batch of a single point is
/// merged into its predecessor, since batch statistics need at least two rows.
pub fn batch_sizes(n: usize, batch_size: usize) -> Vec<usize> {
    assert!(batch_size >= 1);
    let mut sizes = vec![batch_size; n / batch_size];
    match n % batch_size {
        0 => {}
        1 if !sizes.is_empty() => *sizes.last_mut().unwrap() += 1,
        r => sizes.push(r),
    }
    sizes
}

/// Rng for the batch order of one epoch: stream `epoch + 1` of the run seed (stream 0 belongs to
/// the trainer).
pub fn epoch_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch.wrapping_add(1));
    rng
}

/// Partitions a random permutation of `0..n` into batches, sampling without replacement.
pub fn minibatches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut start = 0;
    batch_sizes(n, batch_size)
        .into_iter()
        .map(|size| {
            let indices = order[start..start + size].to_vec();
            start += size;
            Batch {
                indices,
                fraction: size as f64 / n as f64,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_fractions() {
        let b = minibatches(10, 4, &mut epoch_rng(0, 0));
        let sizes: Vec<usize> = b.iter().map(|b| b.indices.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let fr: Vec<f64> = b.iter().map(|b| b.fraction).collect();
        assert_eq!(fr, vec![0.4, 0.4, 0.2]);
        let mut all: Vec<usize> = b.iter().flat_map(|b| b.indices.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(batch_sizes(9, 4), vec![4, 5]);
        assert_eq!(batch_sizes(1, 4), vec![1]);
        assert_eq!(batch_sizes(0, 4), Vec::<usize>::new());
    }

    #[test]
    fn seeded_orders() {
        let a = minibatches(50, 7, &mut epoch_rng(3, 4));
        assert_eq!(a, minibatches(50, 7, &mut epoch_rng(3, 4)));
        let orders: std::collections::HashSet<Vec<usize>> = (0..100)
            .map(|e| minibatches(10, 10, &mut epoch_rng(3, e)).remove(0).indices)
            .collect();
        assert_eq!(orders.len(), 100);
    }
}
