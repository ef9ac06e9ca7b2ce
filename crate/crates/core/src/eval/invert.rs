use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::image::{dump_png, tile_rows};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{decode_from, encode, NetworkConfig, ParameterStore, SwitchMode};
use crate::tensor::{Real, Tensor};

/// Result of reconstructing images from one encoder level.
#[derive(Debug, Clone, PartialEq)]
pub struct InversionReport {
    pub layer: usize,
    pub switch_mode: SwitchMode,
    /// Mean over samples of `‖x̂ − x‖²`.
    pub mean_l2: f64,
    pub sample_count: usize,
}

impl InversionReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        writeln!(s, "layer={}", self.layer).unwrap();
        let mode = match self.switch_mode {
            SwitchMode::Known => "known",
            SwitchMode::Fixed => "fixed",
        };
        writeln!(s, "switches={mode}").unwrap();
        writeln!(s, "sample_count={}", self.sample_count).unwrap();
        writeln!(s, "mean_recon_l2_per_sample={}", self.mean_l2).unwrap();
        s
    }
}

/// Encodes every sample to `a_layer`, decodes back to the image through the
/// stacked decoder with the given switch mode, and reports the mean squared
/// error. Returns a grid of the first `show` originals (top row) above their
/// reconstructions (bottom row).
pub fn invert_from_layer<T: Real>(
    store: &ParameterStore<T>,
    config: &NetworkConfig,
    layer: usize,
    dataset: &Dataset<T>,
    switch_mode: SwitchMode,
    batch_size: usize,
    show: usize,
) -> Result<(InversionReport, Tensor<T>)> {
    if layer > config.depth() {
        return Err(Error::InvalidArgument(format!(
            "layer {layer} exceeds the {} macro-layers",
            config.depth()
        )));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let n = dataset.len();
    let show = show.clamp(1, n);
    let mut total = 0.0f64;
    let (mut orig, mut rec) = (Vec::new(), Vec::new());
    let per: usize = dataset.image_dims().iter().product();
    let mut start = 0;
    while start < n {
        let idx: Vec<usize> = (start..(start + batch_size).min(n)).collect();
        let (x, _) = dataset.gather(&idx)?;
        let (acts, switches) = encode(store, config, &x, layer)?;
        let xhat = decode_from(store, config, layer, &acts[layer], &switches, switch_mode)?;
        for (p, t) in xhat.data().chunks(per).zip(x.data().chunks(per)) {
            total += p.iter().zip(t).map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2)).sum::<f64>();
        }
        let k = (show * per).saturating_sub(orig.len()).min(x.len());
        orig.extend_from_slice(&x.data()[..k]);
        rec.extend_from_slice(&xhat.data()[..k]);
        start += batch_size;
    }
    let [c, h, w] = dataset.image_dims();
    let orig = Tensor::from_vec([show, c, h, w], orig)?;
    let rec = Tensor::from_vec([show, c, h, w], rec)?;
    let grid = tile_rows(&[&orig, &rec])?;
    Ok((
        InversionReport {
            layer,
            switch_mode,
            mean_l2: total / n as f64,
            sample_count: n,
        },
        grid,
    ))
}

/// Runs [`invert_from_layer`] and writes `grid.png` and `summary.txt` into
/// `out_dir`, creating it if needed.
pub fn write_inversion<T: Real>(report: &InversionReport, grid: &Tensor<T>, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    dump_png(grid, &out_dir.join("grid.png"))?;
    fs::write(out_dir.join("summary.txt"), report.render())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{build_network, Variant};
    use crate::tensor::gaussian_init;

    #[test]
    fn level_zero_is_identity_and_grid_layout() {
        let cfg = NetworkConfig::simple([1, 8, 8], &[3, 3], 3, 4, Variant::SaeFirst);
        let store = build_network::<f64>(&cfg, 1).unwrap();
        let images = gaussian_init::<f64>(&[5, 1, 8, 8], 1.0, 2).unwrap().map(|v| v.abs().min(1.0));
        let d = Dataset::new(images, vec![0, 1, 2, 3, 0]).unwrap();
        let (r, grid) = invert_from_layer(&store, &cfg, 0, &d, SwitchMode::Known, 2, 3).unwrap();
        assert_eq!(r.mean_l2, 0.0);
        assert_eq!(grid.dims(), &[1, 16, 24]);
        let (r2, _) = invert_from_layer(&store, &cfg, 2, &d, SwitchMode::Fixed, 2, 3).unwrap();
        assert!(r2.mean_l2 > 0.0);
        assert!(invert_from_layer(&store, &cfg, 3, &d, SwitchMode::Fixed, 2, 3).is_err());

        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("nested/out");
        write_inversion(&r, &grid, &out).unwrap();
        let png = image::open(out.join("grid.png")).unwrap();
        assert_eq!((png.width(), png.height()), (24, 16));
    }
}
