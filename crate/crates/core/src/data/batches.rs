use rand::seq::SliceRandom;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::{Real, Tensor};

/// The sample order of `epoch`: a permutation of `0..n` determined by
/// `(seed, epoch)` alone.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, &[epoch]));
    order
}

/// Iterator over one epoch's mini-batches; the final batch may be short.
pub struct Batches<'a, T> {
    dataset: &'a Dataset<T>,
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
}

impl<T: Real> Batches<'_, T> {
    /// Sample indices of every batch, in iteration order.
    pub fn index_batches(&self) -> Vec<Vec<usize>> {
        self.order.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }
}

impl<T: Real> Iterator for Batches<'_, T> {
    type Item = (Tensor<T>, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.order.len() {
            return None;
        }
        let end = (self.next + self.batch_size).min(self.order.len());
        let batch = self.dataset.gather(&self.order[self.next..end]).expect("indices in range");
        self.next = end;
        Some(batch)
    }
}

pub fn batches<T: Real>(dataset: &Dataset<T>, batch_size: usize, seed: u64, epoch: u64) -> Result<Batches<'_, T>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    Ok(Batches {
        dataset,
        order: epoch_order(dataset.len(), seed, epoch),
        batch_size,
        next: 0,
    })
}

/// Maps a global iteration counter onto epochs of `ceil(n / batch_size)`
/// batches each, so iteration `t` always sees the same samples.
#[derive(Debug, Clone)]
pub struct BatchSchedule {
    n: usize,
    batch_size: usize,
    seed: u64,
    cached: Option<(u64, Vec<usize>)>,
}

impl BatchSchedule {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if n == 0 || batch_size == 0 {
            return Err(Error::InvalidArgument("dataset and batch size must be non-empty".into()));
        }
        Ok(BatchSchedule {
            n,
            batch_size,
            seed,
            cached: None,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.n.div_ceil(self.batch_size)
    }

    /// `(epoch, sample indices)` of iteration `iter`.
    pub fn indices(&mut self, iter: u64) -> (u64, &[usize]) {
        let per = self.batches_per_epoch() as u64;
        let (epoch, k) = (iter / per, (iter % per) as usize);
        if self.cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
            self.cached = Some((epoch, epoch_order(self.n, self.seed, epoch)));
        }
        let order = &self.cached.as_ref().unwrap().1;
        let start = k * self.batch_size;
        (epoch, &order[start..(start + self.batch_size).min(self.n)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(n: usize) -> Dataset<f64> {
        let images = Tensor::from_vec([n, 1, 1, 1], (0..n).map(|i| i as f64).collect()).unwrap();
        Dataset::new(images, (0..n).map(|i| i % 3).collect()).unwrap()
    }

    #[test]
    fn partition_of_ten_by_four() {
        let d = dataset(10);
        let sizes: Vec<usize> = batches(&d, 4, 1, 0).unwrap().map(|(_, y)| y.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let mut seen: Vec<usize> = batches(&d, 4, 1, 0)
            .unwrap()
            .flat_map(|(x, _)| x.data().iter().map(|&v| v as usize).collect::<Vec<_>>())
            .collect();
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn epochs_differ() {
        assert_ne!(epoch_order(50, 3, 1), epoch_order(50, 3, 2));
        assert_eq!(epoch_order(50, 3, 1), epoch_order(50, 3, 1));
    }

    #[test]
    fn schedule_matches_epoch_iteration() {
        let d = dataset(10);
        let mut s = BatchSchedule::new(10, 4, 7).unwrap();
        let expected = batches(&d, 4, 7, 1).unwrap().index_batches();
        for (k, b) in expected.iter().enumerate() {
            let (epoch, idx) = s.indices(3 + k as u64);
            assert_eq!(epoch, 1);
            assert_eq!(idx, b.as_slice());
        }
    }
}
