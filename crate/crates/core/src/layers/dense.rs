//! Fully-connected (inner-product) layer. Inputs of any rank are flattened
//! per leading row; weights are `(out_features, in_features)`.

use super::LayerGrad;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

fn check<T: Real>(op: &'static str, input: &Tensor<T>, weights: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (rows, features) = input.shape().rows_cols();
    match weights.dims() {
        &[out, inp] if inp == features => Ok((rows, features, out)),
        dims => Err(Error::shape(op, &[dims.first().copied().unwrap_or(0), features], dims)),
    }
}

pub fn inner_product_forward<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, features, out) = check("inner_product_forward", input, weights)?;
    if bias.dims() != [out] {
        return Err(Error::shape("inner_product_forward", &[out], bias.dims()));
    }
    let x = input.data();
    let w = weights.data();
    let mut y = Vec::with_capacity(rows * out);
    for r in 0..rows {
        let xr = &x[r * features..(r + 1) * features];
        for (k, &b) in bias.data().iter().enumerate() {
            let wk = &w[k * features..(k + 1) * features];
            let mut acc = b;
            for (&a, &wv) in xr.iter().zip(wk) {
                acc += a * wv;
            }
            y.push(acc);
        }
    }
    Tensor::from_vec([rows, out], y)
}

pub fn inner_product_backward<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, grad_out: &Tensor<T>) -> Result<LayerGrad<T>> {
    let (rows, features, out) = check("inner_product_backward", input, weights)?;
    if grad_out.dims() != [rows, out] {
        return Err(Error::shape("inner_product_backward", &[rows, out], grad_out.dims()));
    }
    let x = input.data();
    let w = weights.data();
    let g = grad_out.data();
    let mut gx = vec![T::zero(); rows * features];
    let mut gw = vec![T::zero(); out * features];
    let mut gb = vec![T::zero(); out];
    for r in 0..rows {
        let xr = &x[r * features..(r + 1) * features];
        let gxr = &mut gx[r * features..(r + 1) * features];
        for k in 0..out {
            let gk = g[r * out + k];
            gb[k] += gk;
            let wk = &w[k * features..(k + 1) * features];
            let gwk = &mut gw[k * features..(k + 1) * features];
            for f in 0..features {
                gxr[f] += gk * wk[f];
                gwk[f] += gk * xr[f];
            }
        }
    }
    Ok(LayerGrad {
        grad_input: Tensor::from_vec(input.shape(), gx)?,
        grad_weights: Some(Tensor::from_vec([out, features], gw)?),
        grad_bias: Some(Tensor::from_vec([out], gb)?),
    })
}
