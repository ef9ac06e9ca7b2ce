use std::path::Path;

use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// `clamp(v, 0, 1) · 255`, rounded half up.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Writes a `(C, H, W)` or `(1, C, H, W)` tensor with one (grayscale) or
/// three (RGB) channels as an 8-bit PNG.
pub fn dump_png<T: Real>(tensor: &Tensor<T>, path: &Path) -> Result<()> {
    let (c, h, w) = match *tensor.dims() {
        [c, h, w] | [1, c, h, w] => (c, h, w),
        _ => return Err(Error::InvalidShape(tensor.dims().to_vec())),
    };
    let data = tensor.data();
    let plane = h * w;
    let err = |e: image::ImageError| Error::Image(e.to_string());
    match c {
        1 => {
            let bytes = data.iter().map(|v| quantize(v.as_f64())).collect();
            GrayImage::from_raw(w as u32, h as u32, bytes)
                .expect("buffer sized to image")
                .save(path)
                .map_err(err)
        }
        3 => {
            let bytes = (0..plane)
                .flat_map(|i| (0..3).map(move |ch| quantize(data[ch * plane + i].as_f64())))
                .collect();
            RgbImage::from_raw(w as u32, h as u32, bytes)
                .expect("buffer sized to image")
                .save(path)
                .map_err(err)
        }
        _ => Err(Error::InvalidArgument(format!("cannot write {c} channels as PNG"))),
    }
}

/// Lays out `(N, C, H, W)` batches as rows of a `(C, rows·H, N·W)` image,
/// one batch per row.
pub fn tile_rows<T: Real>(rows: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = rows.first().ok_or_else(|| Error::InvalidArgument("no rows to tile".into()))?;
    let (n, c, h, w) = first.shape().nchw()?;
    if let Some(bad) = rows.iter().find(|r| r.dims() != first.dims()) {
        return Err(Error::shape("tile_rows", first.dims(), bad.dims()));
    }
    let (gh, gw) = (rows.len() * h, n * w);
    let mut out = vec![T::zero(); c * gh * gw];
    for (r, t) in rows.iter().enumerate() {
        let src = t.data();
        for i in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    let s = ((i * c + ch) * h + y) * w;
                    let d = (ch * gh + r * h + y) * gw + i * w;
                    out[d..d + w].copy_from_slice(&src[s..s + w]);
                }
            }
        }
    }
    Tensor::from_vec([c, gh, gw], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantisation_rule() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(7.0), 255);
    }

    #[test]
    fn black_and_white_files() {
        let dir = tempfile::tempdir().unwrap();
        for (value, byte) in [(0.0, 0u8), (1.0, 255u8)] {
            let p = dir.path().join(format!("{byte}.png"));
            dump_png(&Tensor::<f32>::filled([1, 3, 4], value).unwrap(), &p).unwrap();
            let img = image::open(&p).unwrap().into_luma8();
            assert_eq!(img.dimensions(), (4, 3));
            assert!(img.pixels().all(|px| px.0[0] == byte));
        }
        let rgb = dir.path().join("rgb.png");
        dump_png(&Tensor::<f32>::filled([3, 2, 2], 0.5).unwrap(), &rgb).unwrap();
        assert!(image::open(&rgb).unwrap().into_rgb8().pixels().all(|px| px.0 == [128; 3]));
        assert!(dump_png(&Tensor::<f32>::filled([2, 2, 2], 0.5).unwrap(), &rgb).is_err());
    }

    #[test]
    fn tiling_layout() {
        let a = Tensor::from_vec([2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = a.map(|v| v * 10.0);
        let g = tile_rows(&[&a, &b]).unwrap();
        assert_eq!(g.dims(), &[1, 2, 4]);
        assert_eq!(g.data(), &[1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0]);
    }
}
