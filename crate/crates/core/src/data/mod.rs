//! Datasets of labelled images, IDX ingestion, augmentation and batching.

mod augment;
mod batches;
mod idx;

pub use augment::{augment, augment_batch, crop_mirror, AugmentSpec};
pub use batches::{batches, epoch_order, BatchSchedule, Batches};
pub use idx::{load_idx, read_idx_images, read_idx_labels, write_idx};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Images `(N, C, H, W)` with values in `[0, 1]` and one label per image.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
}

impl<T: Real> Dataset<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>) -> Result<Self> {
        let (n, _, _, _) = images.shape().nchw()?;
        if n != labels.len() {
            return Err(Error::InvalidArgument(format!("{n} images but {} labels", labels.len())));
        }
        if n == 0 {
            return Err(Error::InvalidArgument("dataset is empty".into()));
        }
        if !images.all_finite() {
            return Err(Error::InvalidArgument("images contain non-finite values".into()));
        }
        Ok(Dataset { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(C, H, W)` of one image.
    pub fn image_dims(&self) -> [usize; 3] {
        let d = self.images.dims();
        [d[1], d[2], d[3]]
    }

    /// One more than the largest label.
    pub fn classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Gathers the images and labels at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let [c, h, w] = self.image_dims();
        let per = c * h * w;
        let src = self.images.data();
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!("sample {i} of {}", self.len())));
            }
            data.extend_from_slice(&src[i * per..(i + 1) * per]);
            labels.push(self.labels[i]);
        }
        Ok((Tensor::from_vec([indices.len(), c, h, w], data)?, labels))
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let (images, labels) = self.gather(indices)?;
        Dataset::new(images, labels)
    }

    /// The first `n` samples and the rest.
    pub fn split_at(&self, n: usize) -> Result<(Self, Self)> {
        if n == 0 || n >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "split point {n} must lie strictly inside 0..{}",
                self.len()
            )));
        }
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        Ok((self.subset(&head)?, self.subset(&tail)?))
    }

    /// Fails with an invalid-label error if any label is `>= classes`.
    pub fn check_labels(&self, classes: usize) -> Result<()> {
        match self.labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            Some((row, &label)) => Err(Error::InvalidLabel { row, label, classes }),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset<f64> {
        let images = Tensor::from_vec([3, 1, 1, 2], vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        Dataset::new(images, vec![2, 0, 1]).unwrap()
    }

    #[test]
    fn gather_and_split() {
        let d = tiny();
        let (x, y) = d.gather(&[2, 0]).unwrap();
        assert_eq!(x.data(), &[0.4, 0.5, 0.0, 0.1]);
        assert_eq!(y, vec![1, 2]);
        let (a, b) = d.split_at(1).unwrap();
        assert_eq!((a.len(), b.len()), (1, 2));
        assert!(d.split_at(3).is_err());
        assert_eq!(d.classes(), 3);
        assert!(matches!(d.check_labels(2), Err(Error::InvalidLabel { row: 0, .. })));
    }

    #[test]
    fn rejects_inconsistent_counts() {
        let images = Tensor::<f64>::filled([2, 1, 1, 1], 0.0).unwrap();
        assert!(Dataset::new(images, vec![0]).is_err());
    }
}
