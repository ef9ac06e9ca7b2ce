use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Zero-pad by `pad` on every side, crop a `crop` window at a uniformly
/// random offset, and mirror horizontally with probability 0.5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSpec {
    pub pad: usize,
    /// `(h, w)` of the output; `None` keeps the input extent.
    pub crop: Option<[usize; 2]>,
    pub mirror: bool,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            pad: 2,
            crop: None,
            mirror: true,
        }
    }
}

impl AugmentSpec {
    /// Output extent and the largest crop offset for an `h × w` input.
    fn geometry(&self, h: usize, w: usize) -> Result<([usize; 2], [usize; 2])> {
        let [ch, cw] = self.crop.unwrap_or([h, w]);
        let (ph, pw) = (h + 2 * self.pad, w + 2 * self.pad);
        if ch == 0 || cw == 0 || ch > ph || cw > pw {
            return Err(Error::InvalidArgument(format!(
                "crop {ch}x{cw} does not fit the padded {ph}x{pw} image"
            )));
        }
        Ok(([ch, cw], [ph - ch, pw - cw]))
    }
}

/// Crops one `(C, H, W)` or `(1, C, H, W)` image at `offset`, given in padded
/// coordinates (`(pad, pad)` is the unshifted position), then mirrors it if
/// `flip`. The output keeps the input's rank.
pub fn crop_mirror<T: Real>(image: &Tensor<T>, spec: &AugmentSpec, offset: [usize; 2], flip: bool) -> Result<Tensor<T>> {
    let dims = image.dims();
    let (c, h, w) = match *dims {
        [c, h, w] | [1, c, h, w] => (c, h, w),
        _ => return Err(Error::InvalidShape(dims.to_vec())),
    };
    let ([ch, cw], [max_y, max_x]) = spec.geometry(h, w)?;
    if offset[0] > max_y || offset[1] > max_x {
        return Err(Error::InvalidArgument(format!(
            "offset {offset:?} exceeds the largest valid offset {:?}",
            [max_y, max_x]
        )));
    }
    let src = image.data();
    let mut out = Vec::with_capacity(c * ch * cw);
    for plane in 0..c {
        for y in 0..ch {
            let sy = (y + offset[0]) as isize - spec.pad as isize;
            for x in 0..cw {
                let xx = if flip { cw - 1 - x } else { x };
                let sx = (xx + offset[1]) as isize - spec.pad as isize;
                let inside = sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w;
                out.push(if inside {
                    src[plane * h * w + sy as usize * w + sx as usize]
                } else {
                    T::zero()
                });
            }
        }
    }
    let mut shape = dims.to_vec();
    let r = shape.len();
    shape[r - 2] = ch;
    shape[r - 1] = cw;
    Tensor::from_vec(shape, out)
}

/// Random crop and mirror of one image, drawing offset then flip from `rng`.
pub fn augment<T: Real>(image: &Tensor<T>, spec: &AugmentSpec, rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
    let d = image.dims();
    let (h, w) = (d[d.len() - 2], d[d.len() - 1]);
    let (_, [max_y, max_x]) = spec.geometry(h, w)?;
    let offset = [rng.random_range(0..=max_y), rng.random_range(0..=max_x)];
    let flip = spec.mirror && rng.random_bool(0.5);
    crop_mirror(image, spec, offset, flip)
}

/// Augments every image of an `(N, C, H, W)` batch in order.
pub fn augment_batch<T: Real>(batch: &Tensor<T>, spec: &AugmentSpec, rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
    let (n, c, h, w) = batch.shape().nchw()?;
    let ([ch, cw], _) = spec.geometry(h, w)?;
    let mut out = Vec::with_capacity(n * c * ch * cw);
    for i in 0..n {
        let img = batch.rows(i, 1)?;
        out.extend_from_slice(augment(&img, spec, rng)?.data());
    }
    Tensor::from_vec([n, c, ch, cw], out)
}
