//! Convolution (cross-correlation, no kernel flip) and its adjoint, the
//! transposed convolution used by the decoding pathway.
//!
//! All three passes share one loop nest over `(o, c, i, j, y, x)`:
//!
//! * `correlate`:   `out[o, y, x] += w[o, c, i, j] * in[c, y*s + i - p, x*s + j - p]`
//! * `scatter`:     `dst[c, y*s + i - p, x*s + j - p] += w[o, c, i, j] * src[o, y, x]`
//! * `weight_grad`: `gw[o, c, i, j] += g[o, y, x] * in[c, y*s + i - p, x*s + j - p]`
//!
//! Work is split across samples; weight gradients are reduced over samples in
//! sample order, so results do not depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::LayerGrad;
use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    /// Square kernel with a bias.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            pad,
            has_bias: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::InvalidSpec(format!("zero channel or kernel extent in {self:?}")));
        }
        if self.stride == 0 {
            return Err(Error::InvalidSpec("stride must be positive".into()));
        }
        Ok(())
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    /// Fan-in of the transposed convolution, whose inputs are this spec's
    /// output channels.
    pub fn transposed_fan_in(&self) -> usize {
        self.out_channels * self.kernel_h * self.kernel_w
    }

    /// `(in + 2·pad − k) / stride + 1`, which must divide exactly.
    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let one = |len: usize, k: usize, axis: &str| -> Result<usize> {
            let padded = len + 2 * self.pad;
            if padded < k || !(padded - k).is_multiple_of(self.stride) {
                return Err(Error::InvalidSpec(format!(
                    "{axis} extent {len} with pad {} does not tile kernel {k} at stride {}",
                    self.pad, self.stride
                )));
            }
            Ok((padded - k) / self.stride + 1)
        };
        Ok((one(h, self.kernel_h, "height")?, one(w, self.kernel_w, "width")?))
    }

    /// `(in − 1)·stride − 2·pad + k`: the input extent of the paired convolution.
    pub fn transposed_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let one = |len: usize, k: usize| -> Result<usize> {
            let full = (len - 1) * self.stride + k;
            if full <= 2 * self.pad {
                return Err(Error::InvalidSpec(format!(
                    "transposed extent of {len} is empty with kernel {k}, pad {}",
                    self.pad
                )));
            }
            Ok(full - 2 * self.pad)
        };
        Ok((one(h, self.kernel_h)?, one(w, self.kernel_w)?))
    }
}

/// Per-sample geometry: `(c_in, h, w)` on the wide side, `(c_out, oh, ow)` on
/// the narrow side of the convolution.
#[derive(Clone, Copy)]
struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    oh: usize,
    ow: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new(spec: &ConvSpec, h: usize, w: usize, oh: usize, ow: usize) -> Self {
        Geometry {
            c_in: spec.in_channels,
            h,
            w,
            c_out: spec.out_channels,
            oh,
            ow,
            kh: spec.kernel_h,
            kw: spec.kernel_w,
            stride: spec.stride,
            pad: spec.pad,
        }
    }

    fn wide_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    fn narrow_len(&self) -> usize {
        self.c_out * self.oh * self.ow
    }
}

/// Output positions `[lo, hi)` whose tap `k` lands inside `[0, len)`.
#[inline]
fn tap_range(k: usize, pad: usize, stride: usize, len: usize, out_len: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    if len + pad <= k {
        return (0, 0);
    }
    let hi = ((len - 1 + pad - k) / stride + 1).min(out_len);
    if lo >= hi {
        (0, 0)
    } else {
        (lo, hi)
    }
}

fn correlate<T: Real>(g: &Geometry, input: &[T], weights: &[T], out: &mut [T]) {
    let (plane, oplane) = (g.h * g.w, g.oh * g.ow);
    for o in 0..g.c_out {
        let out_o = &mut out[o * oplane..(o + 1) * oplane];
        for c in 0..g.c_in {
            let in_c = &input[c * plane..(c + 1) * plane];
            for i in 0..g.kh {
                let (ylo, yhi) = tap_range(i, g.pad, g.stride, g.h, g.oh);
                for j in 0..g.kw {
                    let wv = weights[((o * g.c_in + c) * g.kh + i) * g.kw + j];
                    let (xlo, xhi) = tap_range(j, g.pad, g.stride, g.w, g.ow);
                    if xlo == xhi {
                        continue;
                    }
                    for y in ylo..yhi {
                        let iy = y * g.stride + i - g.pad;
                        let in_row = &in_c[iy * g.w..(iy + 1) * g.w];
                        let out_row = &mut out_o[y * g.ow..(y + 1) * g.ow];
                        if g.stride == 1 {
                            let shift = xlo + j - g.pad;
                            for (ov, &iv) in out_row[xlo..xhi].iter_mut().zip(&in_row[shift..]) {
                                *ov += wv * iv;
                            }
                        } else {
                            for x in xlo..xhi {
                                out_row[x] += wv * in_row[x * g.stride + j - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn scatter<T: Real>(g: &Geometry, src: &[T], weights: &[T], dst: &mut [T]) {
    let (plane, oplane) = (g.h * g.w, g.oh * g.ow);
    for o in 0..g.c_out {
        let src_o = &src[o * oplane..(o + 1) * oplane];
        for c in 0..g.c_in {
            let dst_c = &mut dst[c * plane..(c + 1) * plane];
            for i in 0..g.kh {
                let (ylo, yhi) = tap_range(i, g.pad, g.stride, g.h, g.oh);
                for j in 0..g.kw {
                    let wv = weights[((o * g.c_in + c) * g.kh + i) * g.kw + j];
                    let (xlo, xhi) = tap_range(j, g.pad, g.stride, g.w, g.ow);
                    if xlo == xhi {
                        continue;
                    }
                    for y in ylo..yhi {
                        let iy = y * g.stride + i - g.pad;
                        let dst_row = &mut dst_c[iy * g.w..(iy + 1) * g.w];
                        let src_row = &src_o[y * g.ow..(y + 1) * g.ow];
                        if g.stride == 1 {
                            let shift = xlo + j - g.pad;
                            for (dv, &sv) in dst_row[shift..].iter_mut().zip(&src_row[xlo..xhi]) {
                                *dv += wv * sv;
                            }
                        } else {
                            for x in xlo..xhi {
                                dst_row[x * g.stride + j - g.pad] += wv * src_row[x];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn weight_grad<T: Real>(g: &Geometry, grad: &[T], input: &[T], out: &mut [T]) {
    let (plane, oplane) = (g.h * g.w, g.oh * g.ow);
    for o in 0..g.c_out {
        let g_o = &grad[o * oplane..(o + 1) * oplane];
        for c in 0..g.c_in {
            let in_c = &input[c * plane..(c + 1) * plane];
            for i in 0..g.kh {
                let (ylo, yhi) = tap_range(i, g.pad, g.stride, g.h, g.oh);
                for j in 0..g.kw {
                    let (xlo, xhi) = tap_range(j, g.pad, g.stride, g.w, g.ow);
                    let mut acc = T::zero();
                    if xlo < xhi {
                        for y in ylo..yhi {
                            let iy = y * g.stride + i - g.pad;
                            let in_row = &in_c[iy * g.w..(iy + 1) * g.w];
                            let g_row = &g_o[y * g.ow..(y + 1) * g.ow];
                            if g.stride == 1 {
                                let shift = xlo + j - g.pad;
                                for (&gv, &iv) in g_row[xlo..xhi].iter().zip(&in_row[shift..]) {
                                    acc += gv * iv;
                                }
                            } else {
                                for x in xlo..xhi {
                                    acc += g_row[x] * in_row[x * g.stride + j - g.pad];
                                }
                            }
                        }
                    }
                    out[((o * g.c_in + c) * g.kh + i) * g.kw + j] += acc;
                }
            }
        }
    }
}

/// Sums per-sample weight gradients in sample order.
fn batched_weight_grad<T: Real>(g: &Geometry, batch: usize, grad: &[T], input: &[T]) -> Vec<T> {
    let wlen = g.c_out * g.c_in * g.kh * g.kw;
    let partials: Vec<Vec<T>> = (0..batch)
        .into_par_iter()
        .map(|n| {
            let mut part = vec![T::zero(); wlen];
            weight_grad(
                g,
                &grad[n * g.narrow_len()..(n + 1) * g.narrow_len()],
                &input[n * g.wide_len()..(n + 1) * g.wide_len()],
                &mut part,
            );
            part
        })
        .collect();
    let mut total = vec![T::zero(); wlen];
    for part in &partials {
        for (t, &p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    total
}

/// Per-channel sums over batch and space of an NCHW tensor.
fn channel_sums<T: Real>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = t.shape().nchw()?;
    let plane = h * w;
    let mut sums = vec![T::zero(); c];
    for b in 0..n {
        for (ch, s) in sums.iter_mut().enumerate() {
            let start = (b * c + ch) * plane;
            for &v in &t.data()[start..start + plane] {
                *s += v;
            }
        }
    }
    Tensor::from_vec([c], sums)
}

fn check_weights<T: Real>(op: &'static str, weights: &Tensor<T>, spec: &ConvSpec) -> Result<()> {
    spec.validate()?;
    if weights.dims() != spec.weight_dims() {
        return Err(Error::shape(op, &spec.weight_dims(), weights.dims()));
    }
    Ok(())
}

fn check_bias<T: Real>(op: &'static str, bias: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.dims() != [channels] {
            return Err(Error::shape(op, &[channels], b.dims()));
        }
    }
    Ok(())
}

fn fill_bias<T: Real>(out: &mut [T], bias: Option<&Tensor<T>>, plane: usize) {
    if let Some(b) = bias {
        for (chunk, &bv) in out.chunks_mut(plane).zip(b.data().iter().cycle()) {
            chunk.fill(bv);
        }
    }
}

pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    check_weights("conv2d_forward", weights, spec)?;
    check_bias("conv2d_forward", bias, spec.out_channels)?;
    let (n, c, h, w) = input.shape().nchw()?;
    if c != spec.in_channels {
        return Err(Error::shape("conv2d_forward", &[n, spec.in_channels, h, w], input.dims()));
    }
    let (oh, ow) = spec.output_extent(h, w)?;
    let geo = Geometry::new(spec, h, w, oh, ow);
    let out_shape = Shape::new(vec![n, spec.out_channels, oh, ow])?;
    let mut out = Tensor::zeros(&out_shape);
    fill_bias(out.data_mut(), bias, oh * ow);
    out.data_mut()
        .par_chunks_mut(geo.narrow_len())
        .zip(input.data().par_chunks(geo.wide_len()))
        .for_each(|(o, i)| correlate(&geo, i, weights.data(), o));
    Ok(out)
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<LayerGrad<T>> {
    check_weights("conv2d_backward", weights, spec)?;
    let (n, c, h, w) = input.shape().nchw()?;
    if c != spec.in_channels {
        return Err(Error::shape("conv2d_backward", &[n, spec.in_channels, h, w], input.dims()));
    }
    let (oh, ow) = spec.output_extent(h, w)?;
    let expected = [n, spec.out_channels, oh, ow];
    if grad_out.dims() != expected {
        return Err(Error::shape("conv2d_backward", &expected, grad_out.dims()));
    }
    let geo = Geometry::new(spec, h, w, oh, ow);

    let mut grad_input = Tensor::zeros(input.shape());
    grad_input
        .data_mut()
        .par_chunks_mut(geo.wide_len())
        .zip(grad_out.data().par_chunks(geo.narrow_len()))
        .for_each(|(d, s)| scatter(&geo, s, weights.data(), d));

    let gw = batched_weight_grad(&geo, n, grad_out.data(), input.data());
    let grad_bias = if spec.has_bias {
        Some(channel_sums(grad_out)?)
    } else {
        None
    };
    Ok(LayerGrad {
        grad_input,
        grad_weights: Some(Tensor::from_vec(spec.weight_dims(), gw)?),
        grad_bias,
    })
}

/// Transposed convolution: maps `out_channels` back to `in_channels`, and the
/// paired convolution's output extent back to its input extent. With a zero
/// bias this is the exact adjoint of [`conv2d_forward`] under the same spec.
pub fn deconv2d_forward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    check_weights("deconv2d_forward", weights, spec)?;
    check_bias("deconv2d_forward", bias, spec.in_channels)?;
    let (n, c, ih, iw) = input.shape().nchw()?;
    if c != spec.out_channels {
        return Err(Error::shape("deconv2d_forward", &[n, spec.out_channels, ih, iw], input.dims()));
    }
    let (h, w) = spec.transposed_extent(ih, iw)?;
    let geo = Geometry::new(spec, h, w, ih, iw);
    let out_shape = Shape::new(vec![n, spec.in_channels, h, w])?;
    let mut out = Tensor::zeros(&out_shape);
    fill_bias(out.data_mut(), bias, h * w);
    out.data_mut()
        .par_chunks_mut(geo.wide_len())
        .zip(input.data().par_chunks(geo.narrow_len()))
        .for_each(|(d, s)| scatter(&geo, s, weights.data(), d));
    Ok(out)
}

pub fn deconv2d_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<LayerGrad<T>> {
    check_weights("deconv2d_backward", weights, spec)?;
    let (n, c, ih, iw) = input.shape().nchw()?;
    if c != spec.out_channels {
        return Err(Error::shape("deconv2d_backward", &[n, spec.out_channels, ih, iw], input.dims()));
    }
    let (h, w) = spec.transposed_extent(ih, iw)?;
    let expected = [n, spec.in_channels, h, w];
    if grad_out.dims() != expected {
        return Err(Error::shape("deconv2d_backward", &expected, grad_out.dims()));
    }
    let geo = Geometry::new(spec, h, w, ih, iw);

    let mut grad_input = Tensor::zeros(input.shape());
    grad_input
        .data_mut()
        .par_chunks_mut(geo.narrow_len())
        .zip(grad_out.data().par_chunks(geo.wide_len()))
        .for_each(|(o, i)| correlate(&geo, i, weights.data(), o));

    let gw = batched_weight_grad(&geo, n, input.data(), grad_out.data());
    let grad_bias = if spec.has_bias {
        Some(channel_sums(grad_out)?)
    } else {
        None
    };
    Ok(LayerGrad {
        grad_input,
        grad_weights: Some(Tensor::from_vec(spec.weight_dims(), gw)?),
        grad_bias,
    })
}
