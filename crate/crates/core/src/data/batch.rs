use super::Dataset;
use crate::numerics::Rng;

/// Indices of one mini-batch into its dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// A single-sample batch has no in-batch negatives, so the contrastive
    /// objective is degenerate on it.
    pub fn contrastive_degenerate(&self) -> bool {
        self.indices.len() < 2
    }
}

/// One epoch of batches over a fixed permutation.
#[derive(Debug, Clone)]
pub struct BatchIter {
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for BatchIter {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(Batch { indices })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

impl ExactSizeIterator for BatchIter {}

/// Shuffles the dataset with `seed` and yields consecutive batches of
/// `batch_size`; the final short batch is kept. `batch_size` is clamped to 1.
pub fn batch_iter(ds: &Dataset, batch_size: usize, seed: u64) -> BatchIter {
    let mut order: Vec<usize> = (0..ds.len()).collect();
    Rng::new(seed).shuffle(&mut order);
    BatchIter {
        order,
        batch_size: batch_size.max(1),
        pos: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, GenConfig};
    use proptest::prelude::*;

    fn ds(n: usize) -> Dataset {
        generate_synthetic(&GenConfig {
            n_samples: n,
            frames: (1, 1),
            tokens: (1, 1),
            ..GenConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn sizes_with_short_tail() {
        let sizes: Vec<usize> = batch_iter(&ds(10), 4, 0).map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn singleton_batches_are_flagged() {
        assert!(batch_iter(&ds(3), 1, 0).all(|b| b.contrastive_degenerate()));
        assert!(batch_iter(&ds(4), 2, 0).all(|b| !b.contrastive_degenerate()));
    }

    #[test]
    fn deterministic_order() {
        let d = ds(20);
        let a: Vec<Batch> = batch_iter(&d, 3, 11).collect();
        let b: Vec<Batch> = batch_iter(&d, 3, 11).collect();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn batches_form_a_permutation(n in 1usize..40, bs in 1usize..12, seed in any::<u64>()) {
            let d = ds(n);
            let mut ids: Vec<&str> = batch_iter(&d, bs, seed)
                .flat_map(|b| b.indices)
                .map(|i| d.samples()[i].id.as_str())
                .collect();
            ids.sort_unstable();
            let mut expected: Vec<&str> = d.samples().iter().map(|s| s.id.as_str()).collect();
            expected.sort_unstable();
            prop_assert_eq!(ids, expected);
        }
    }
}
