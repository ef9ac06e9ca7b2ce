use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{forward, NetworkConfig, ParameterStore};
use crate::tensor::{Real, Tensor};

/// Fraction of rows whose label is among the `k` largest logits. A class
/// outranks the label if its logit is larger, or equal with a lower index.
pub fn top_k_accuracy<T: Real>(logits: &Tensor<T>, labels: &[usize], k: usize) -> Result<f64> {
    Ok(top_k_hits(logits, labels, k)? as f64 / labels.len().max(1) as f64)
}

fn top_k_hits<T: Real>(logits: &Tensor<T>, labels: &[usize], k: usize) -> Result<usize> {
    let (rows, classes) = logits.shape().rows_cols();
    if labels.len() != rows {
        return Err(Error::InvalidArgument(format!("{} labels for {rows} rows", labels.len())));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut hits = 0;
    for (row, (z, &label)) in logits.data().chunks(classes).zip(labels).enumerate() {
        if label >= classes {
            return Err(Error::InvalidLabel { row, label, classes });
        }
        let target = z[label];
        let rank = z
            .iter()
            .enumerate()
            .filter(|&(j, &v)| v > target || (v == target && j < label))
            .count();
        if rank < k {
            hits += 1;
        }
    }
    Ok(hits)
}

/// Classification and reconstruction quality over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub top1: f64,
    pub topk: f64,
    pub k: usize,
    /// Mean over samples of `‖x̂ − x‖²`.
    pub mean_recon_l2_per_sample: f64,
    /// Mean over samples of `‖â_l − a_l‖²` for each boundary `l`.
    pub per_layer_recon: Vec<f64>,
    pub sample_count: usize,
}

impl EvalReport {
    /// Flat `key=value` lines.
    pub fn render(&self) -> String {
        let mut s = String::new();
        writeln!(s, "sample_count={}", self.sample_count).unwrap();
        writeln!(s, "top1={}", self.top1).unwrap();
        writeln!(s, "top{}={}", self.k, self.topk).unwrap();
        writeln!(s, "mean_recon_l2_per_sample={}", self.mean_recon_l2_per_sample).unwrap();
        for (l, v) in self.per_layer_recon.iter().enumerate() {
            writeln!(s, "recon_l{l}={v}").unwrap();
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render())?;
        Ok(())
    }
}

/// Runs the network over `dataset` in order, in chunks of `batch_size`,
/// without augmentation. Per-sample quantities are accumulated in sample
/// order, so the result does not depend on `batch_size`.
pub fn evaluate<T: Real>(
    store: &ParameterStore<T>,
    config: &NetworkConfig,
    dataset: &Dataset<T>,
    batch_size: usize,
    k: usize,
) -> Result<EvalReport> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let depth = config.depth();
    let (mut hits1, mut hitsk) = (0usize, 0usize);
    let mut recon = vec![0.0f64; depth];
    let n = dataset.len();
    let mut start = 0;
    while start < n {
        let idx: Vec<usize> = (start..(start + batch_size).min(n)).collect();
        let (x, y) = dataset.gather(&idx)?;
        let r = forward(store, config, &x, &y)?;
        hits1 += top_k_hits(&r.logits, &y, 1)?;
        hitsk += top_k_hits(&r.logits, &y, k)?;
        for (l, acc) in recon.iter_mut().enumerate() {
            for v in r.per_sample_recon(l) {
                *acc += v;
            }
        }
        start += batch_size;
    }
    let per_layer_recon: Vec<f64> = recon.iter().map(|s| s / n as f64).collect();
    Ok(EvalReport {
        top1: hits1 as f64 / n as f64,
        topk: hitsk as f64 / n as f64,
        k,
        mean_recon_l2_per_sample: per_layer_recon.first().copied().unwrap_or(0.0),
        per_layer_recon,
        sample_count: n,
    })
}

/// Mean over samples of `‖x̂ − x‖²` for the image-level reconstruction of
/// the configured variant.
pub fn reconstruction_l2<T: Real>(
    store: &ParameterStore<T>,
    config: &NetworkConfig,
    dataset: &Dataset<T>,
    batch_size: usize,
) -> Result<f64> {
    Ok(evaluate(store, config, dataset, batch_size, 1)?.mean_recon_l2_per_sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{build_network, Variant};
    use crate::tensor::gaussian_init;

    #[test]
    fn hand_cases() {
        let z = Tensor::from_vec([1, 3], vec![3.0, 2.0, 1.0]).unwrap();
        assert_eq!(top_k_accuracy(&z, &[1], 1).unwrap(), 0.0);
        assert_eq!(top_k_accuracy(&z, &[1], 2).unwrap(), 1.0);
        assert_eq!(top_k_accuracy(&z, &[2], 3).unwrap(), 1.0);
        let tie = Tensor::from_vec([1, 3], vec![1.0, 1.0, 0.0]).unwrap();
        assert_eq!(top_k_accuracy(&tie, &[0], 1).unwrap(), 1.0);
        assert_eq!(top_k_accuracy(&tie, &[1], 1).unwrap(), 0.0);
        assert!(top_k_accuracy(&z, &[1], 0).is_err());
    }

    #[test]
    fn one_hot_is_perfect() {
        let mut v = vec![0.0; 20];
        v[3] = 1.0;
        v[10 + 7] = 1.0;
        let z = Tensor::from_vec([2, 10], v).unwrap();
        for k in 1..=10 {
            assert_eq!(top_k_accuracy(&z, &[3, 7], k).unwrap(), 1.0);
        }
    }

    #[test]
    fn batch_partition_invariance() {
        let cfg = NetworkConfig::simple([1, 8, 8], &[3, 3], 3, 4, Variant::SaeAll);
        let store = build_network::<f64>(&cfg, 1).unwrap();
        let images = gaussian_init::<f64>(&[7, 1, 8, 8], 1.0, 2).unwrap().map(|v| v.abs().min(1.0));
        let d = Dataset::new(images, vec![0, 1, 2, 3, 0, 1, 2]).unwrap();
        let a = evaluate(&store, &cfg, &d, 1, 2).unwrap();
        let b = evaluate(&store, &cfg, &d, 64, 2).unwrap();
        let c = evaluate(&store, &cfg, &d, 3, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert!(a.top1 <= a.topk);
        assert!(a.render().contains("top2="));
    }
}
