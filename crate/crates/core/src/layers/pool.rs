//! Non-overlapping max-pooling that records its switches, and the two
//! unpooling operators of the decoder.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Pooling window. Only non-overlapping windows are supported, so `stride`
/// must equal both kernel extents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PoolSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
}

impl PoolSpec {
    pub fn square(size: usize) -> Self {
        PoolSpec {
            kernel_h: size,
            kernel_w: size,
            stride: size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.kernel_h != self.stride || self.kernel_w != self.stride {
            return Err(Error::InvalidSpec(format!(
                "pooling must be non-overlapping with stride == kernel, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn window(&self) -> usize {
        self.kernel_h * self.kernel_w
    }

    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        if !h.is_multiple_of(self.kernel_h) || !w.is_multiple_of(self.kernel_w) {
            return Err(Error::InvalidSpec(format!(
                "{h}x{w} is not divisible by the {}x{} pooling window",
                self.kernel_h, self.kernel_w
            )));
        }
        Ok((h / self.kernel_h, w / self.kernel_w))
    }
}

/// Argmax positions recorded by [`maxpool_forward`]: for each pooled element,
/// the row-major index of the maximum inside its window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchMap {
    pub shape: Shape,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub indices: Vec<u32>,
}

impl SwitchMap {
    /// All switches at window offset (0, 0).
    pub fn zeros(shape: &Shape, spec: &PoolSpec) -> Self {
        SwitchMap {
            shape: shape.clone(),
            kernel_h: spec.kernel_h,
            kernel_w: spec.kernel_w,
            indices: vec![0; shape.numel()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.indices.len() != self.shape.numel() {
            return Err(Error::InvalidArgument(format!(
                "switch map holds {} indices for shape {:?}",
                self.indices.len(),
                self.shape
            )));
        }
        let window = self.kernel_h * self.kernel_w;
        if let Some((position, &index)) = self
            .indices
            .iter()
            .enumerate()
            .find(|(_, &i)| i as usize >= window)
        {
            return Err(Error::CorruptedSwitch {
                position,
                index,
                window,
            });
        }
        Ok(())
    }

    fn matches(&self, spec: &PoolSpec) -> Result<()> {
        if self.kernel_h != spec.kernel_h || self.kernel_w != spec.kernel_w {
            return Err(Error::InvalidSpec(format!(
                "switches recorded with a {}x{} window used with {spec:?}",
                self.kernel_h, self.kernel_w
            )));
        }
        Ok(())
    }
}

/// Where unpooling places each pooled value inside its window.
#[derive(Debug, Clone, Copy)]
pub enum Switches<'a> {
    /// The recorded argmax locations ("what-where").
    Known(&'a SwitchMap),
    /// Window offset (0, 0), independent of the input.
    Fixed,
}

impl Switches<'_> {
    #[inline]
    fn offset(&self, pooled_index: usize, kw: usize) -> (usize, usize) {
        match self {
            Switches::Known(map) => {
                let idx = map.indices[pooled_index] as usize;
                (idx / kw, idx % kw)
            }
            Switches::Fixed => (0, 0),
        }
    }

    fn check(&self, pooled: &Shape, spec: &PoolSpec) -> Result<()> {
        if let Switches::Known(map) = self {
            map.matches(spec)?;
            if &map.shape != pooled {
                return Err(Error::shape("unpool", map.shape.dims(), pooled.dims()));
            }
            map.validate()?;
        }
        Ok(())
    }
}

pub fn maxpool_forward<T: Real>(input: &Tensor<T>, spec: &PoolSpec) -> Result<(Tensor<T>, SwitchMap)> {
    let (n, c, h, w) = input.shape().nchw()?;
    let (ph, pw) = spec.output_extent(h, w)?;
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let out_shape = Shape::new(vec![n, c, ph, pw])?;
    let mut out = Vec::with_capacity(out_shape.numel());
    let mut indices = Vec::with_capacity(out_shape.numel());
    let src = input.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for py in 0..ph {
            for px in 0..pw {
                let mut best = src[base + py * kh * w + px * kw];
                let mut best_idx = 0u32;
                for i in 0..kh {
                    let row = base + (py * kh + i) * w + px * kw;
                    for j in 0..kw {
                        let v = src[row + j];
                        // strict comparison keeps the first maximum on ties
                        if v > best {
                            best = v;
                            best_idx = (i * kw + j) as u32;
                        }
                    }
                }
                out.push(best);
                indices.push(best_idx);
            }
        }
    }
    let switches = SwitchMap {
        shape: out_shape.clone(),
        kernel_h: kh,
        kernel_w: kw,
        indices,
    };
    Ok((Tensor::from_vec(out_shape, out)?, switches))
}

/// Routes each pooled gradient back to the recorded argmax.
pub fn maxpool_backward<T: Real>(grad_out: &Tensor<T>, switches: &SwitchMap, input_shape: &Shape) -> Result<Tensor<T>> {
    let spec = PoolSpec {
        kernel_h: switches.kernel_h,
        kernel_w: switches.kernel_w,
        stride: switches.kernel_h,
    };
    unpool_forward(grad_out, Switches::Known(switches), &spec, input_shape)
}

/// Scatters each input element into its window of a zero tensor of
/// `out_shape`, at the location named by `switches`.
pub fn unpool_forward<T: Real>(
    input: &Tensor<T>,
    switches: Switches<'_>,
    spec: &PoolSpec,
    out_shape: &Shape,
) -> Result<Tensor<T>> {
    let (n, c, ph, pw) = input.shape().nchw()?;
    spec.validate()?;
    let expected = [n, c, ph * spec.kernel_h, pw * spec.kernel_w];
    if out_shape.dims() != expected {
        return Err(Error::shape("unpool", &expected, out_shape.dims()));
    }
    switches.check(input.shape(), spec)?;
    let (h, w) = (expected[2], expected[3]);
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let mut out = Tensor::zeros(out_shape);
    let dst = out.data_mut();
    for (pi, &v) in input.data().iter().enumerate() {
        let plane = pi / (ph * pw);
        let rem = pi % (ph * pw);
        let (py, px) = (rem / pw, rem % pw);
        let (i, j) = switches.offset(pi, kw);
        dst[plane * h * w + (py * kh + i) * w + px * kw + j] = v;
    }
    Ok(out)
}

pub fn unpool_known_forward<T: Real>(
    input: &Tensor<T>,
    switches: &SwitchMap,
    spec: &PoolSpec,
    out_shape: &Shape,
) -> Result<Tensor<T>> {
    unpool_forward(input, Switches::Known(switches), spec, out_shape)
}

pub fn unpool_fixed_forward<T: Real>(input: &Tensor<T>, spec: &PoolSpec, out_shape: &Shape) -> Result<Tensor<T>> {
    unpool_forward(input, Switches::Fixed, spec, out_shape)
}

/// Adjoint of [`unpool_forward`]: gathers the upstream gradient at each
/// routed location. Switches carry no gradient.
pub fn unpool_backward<T: Real>(grad_out: &Tensor<T>, switches: Switches<'_>, spec: &PoolSpec) -> Result<Tensor<T>> {
    let (n, c, h, w) = grad_out.shape().nchw()?;
    let (ph, pw) = spec.output_extent(h, w)?;
    let pooled = Shape::new(vec![n, c, ph, pw])?;
    switches.check(&pooled, spec)?;
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let src = grad_out.data();
    let data = (0..pooled.numel())
        .map(|pi| {
            let plane = pi / (ph * pw);
            let rem = pi % (ph * pw);
            let (py, px) = (rem / pw, rem % pw);
            let (i, j) = switches.offset(pi, kw);
            src[plane * h * w + (py * kh + i) * w + px * kw + j]
        })
        .collect();
    Tensor::from_vec(pooled, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{dot, gaussian_init};

    fn t(dims: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(dims, data).unwrap()
    }

    #[test]
    fn single_window() {
        let x = t(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let (y, s) = maxpool_forward(&x, &PoolSpec::square(2)).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(s.indices, vec![3]);
    }

    #[test]
    fn ties_pick_first() {
        let x = Tensor::filled([1, 2, 4, 4], 0.7).unwrap();
        let (_, s) = maxpool_forward::<f64>(&x, &PoolSpec::square(2)).unwrap();
        assert!(s.indices.iter().all(|&i| i == 0));
    }

    #[test]
    fn backward_routes_to_argmax() {
        let x = t(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let (_, s) = maxpool_forward(&x, &PoolSpec::square(2)).unwrap();
        let g = maxpool_backward(&t(&[1, 1, 1, 1], vec![2.5]), &s, x.shape()).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0, 2.5]);
        let z = maxpool_backward(&t(&[1, 1, 1, 1], vec![0.0]), &s, x.shape()).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn corrupted_switch_is_reported() {
        let x = t(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let (_, mut s) = maxpool_forward(&x, &PoolSpec::square(2)).unwrap();
        s.indices[0] = 4;
        let err = maxpool_backward(&t(&[1, 1, 1, 1], vec![1.0]), &s, x.shape()).unwrap_err();
        assert!(matches!(err, Error::CorruptedSwitch { index: 4, window: 4, .. }));
    }

    #[test]
    fn non_divisible_extent_is_invalid_spec() {
        let x = gaussian_init::<f64>(&[1, 1, 5, 4], 1.0, 0).unwrap();
        assert!(matches!(maxpool_forward(&x, &PoolSpec::square(2)), Err(Error::InvalidSpec(_))));
        let overlapping = PoolSpec {
            kernel_h: 3,
            kernel_w: 3,
            stride: 2,
        };
        let x = gaussian_init::<f64>(&[1, 1, 6, 6], 1.0, 0).unwrap();
        assert!(matches!(maxpool_forward(&x, &overlapping), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn unpool_examples() {
        let spec = PoolSpec::square(2);
        let out = Shape::new(vec![1, 1, 2, 2]).unwrap();
        let y = t(&[1, 1, 1, 1], vec![4.0]);
        let mut s = SwitchMap::zeros(y.shape(), &spec);
        s.indices[0] = 3;
        assert_eq!(unpool_known_forward(&y, &s, &spec, &out).unwrap().data(), &[0.0, 0.0, 0.0, 4.0]);
        assert_eq!(unpool_fixed_forward(&y, &spec, &out).unwrap().data(), &[4.0, 0.0, 0.0, 0.0]);
        let zero = t(&[1, 1, 1, 1], vec![0.0]);
        assert!(unpool_fixed_forward(&zero, &spec, &out).unwrap().data().iter().all(|&v| v == 0.0));
        let g = unpool_backward(&t(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]), Switches::Known(&s), &spec).unwrap();
        assert_eq!(g.data(), &[4.0]);
        let g = unpool_backward(&t(&[1, 1, 2, 2], vec![0.0; 4]), Switches::Fixed, &spec).unwrap();
        assert_eq!(g.data(), &[0.0]);
    }

    #[test]
    fn unpool_geometry_mismatch() {
        let spec = PoolSpec::square(2);
        let y = gaussian_init::<f64>(&[1, 2, 3, 3], 1.0, 0).unwrap();
        let bad = Shape::new(vec![1, 2, 5, 6]).unwrap();
        assert!(matches!(unpool_fixed_forward(&y, &spec, &bad), Err(Error::ShapeMismatch { .. })));
        let s = SwitchMap::zeros(&Shape::new(vec![1, 2, 3, 2]).unwrap(), &spec);
        let good = Shape::new(vec![1, 2, 6, 6]).unwrap();
        assert!(matches!(unpool_known_forward(&y, &s, &spec, &good), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn pool_then_unpool_keeps_maxima_only() {
        let spec = PoolSpec::square(2);
        let x = gaussian_init::<f64>(&[2, 3, 6, 4], 1.0, 42).unwrap();
        let (y, s) = maxpool_forward(&x, &spec).unwrap();
        let back = unpool_known_forward(&y, &s, &spec, x.shape()).unwrap();
        let nonzero = back.data().iter().filter(|&&v| v != 0.0).count();
        assert_eq!(nonzero, y.len());
        for (b, xv) in back.data().iter().zip(x.data()) {
            assert!(*b == 0.0 || b == xv);
        }
    }

    #[test]
    fn unpool_adjoint() {
        let spec = PoolSpec::square(3);
        let x = gaussian_init::<f64>(&[2, 2, 6, 9], 1.0, 5).unwrap();
        let (u, s) = maxpool_forward(&x, &spec).unwrap();
        let v = gaussian_init::<f64>(x.dims(), 1.0, 6).unwrap();
        for sw in [Switches::Known(&s), Switches::Fixed] {
            let lhs = dot(&unpool_forward(&u, sw, &spec, x.shape()).unwrap(), &v).unwrap();
            let rhs = dot(&u, &unpool_backward(&v, sw, &spec).unwrap()).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        }
    }
}
