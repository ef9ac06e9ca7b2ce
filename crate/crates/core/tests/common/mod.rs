//! Naive loop oracles for the layer kernels and a random shape generator.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swwae::layers::{
    conv2d_backward, conv2d_forward, deconv2d_forward, maxpool_backward, maxpool_forward, unpool_backward,
    unpool_forward, ConvSpec, PoolSpec, Switches,
};
use swwae::tensor::{dot, gaussian_init};
use swwae::{Shape, Tensor};

pub const TOL: f64 = 1e-10;

/// `max |a − b| / max |b|`; exact agreement of two zero tensors is 0.
pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if diff == 0.0 {
        0.0
    } else {
        diff / scale.max(f64::MIN_POSITIVE)
    }
}

fn at(dims: &[usize], n: usize, c: usize, y: usize, x: usize) -> usize {
    ((n * dims[1] + c) * dims[2] + y) * dims[3] + x
}

pub fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, s: &ConvSpec) -> Vec<f64> {
    let d = x.dims();
    let (n, h, wd) = (d[0], d[2] as isize, d[3] as isize);
    let oh = (d[2] + 2 * s.pad - s.kernel_h) / s.stride + 1;
    let ow = (d[3] + 2 * s.pad - s.kernel_w) / s.stride + 1;
    let od = [n, s.out_channels, oh, ow];
    let mut out = vec![0.0; od.iter().product()];
    for b_ in 0..n {
        for o in 0..s.out_channels {
            for p in 0..oh {
                for q in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b.data()[o]);
                    for c in 0..s.in_channels {
                        for i in 0..s.kernel_h {
                            for j in 0..s.kernel_w {
                                let y = (p * s.stride + i) as isize - s.pad as isize;
                                let xx = (q * s.stride + j) as isize - s.pad as isize;
                                if y < 0 || xx < 0 || y >= h || xx >= wd {
                                    continue;
                                }
                                let wi = ((o * s.in_channels + c) * s.kernel_h + i) * s.kernel_w + j;
                                acc += w.data()[wi] * x.data()[at(d, b_, c, y as usize, xx as usize)];
                            }
                        }
                    }
                    out[at(&od, b_, o, p, q)] = acc;
                }
            }
        }
    }
    out
}

/// Transposed convolution by direct scatter; `h`, `w` is the output extent.
pub fn deconv_oracle(
    u: &Tensor<f64>,
    w: &Tensor<f64>,
    b: Option<&Tensor<f64>>,
    s: &ConvSpec,
    h: usize,
    wd: usize,
) -> Vec<f64> {
    let d = u.dims();
    let od = [d[0], s.in_channels, h, wd];
    let mut out = vec![0.0; od.iter().product()];
    if let Some(b) = b {
        for (k, v) in out.iter_mut().enumerate() {
            *v = b.data()[(k / (h * wd)) % s.in_channels];
        }
    }
    for n in 0..d[0] {
        for o in 0..s.out_channels {
            for p in 0..d[2] {
                for q in 0..d[3] {
                    let v = u.data()[at(d, n, o, p, q)];
                    for c in 0..s.in_channels {
                        for i in 0..s.kernel_h {
                            for j in 0..s.kernel_w {
                                let y = (p * s.stride + i) as isize - s.pad as isize;
                                let x = (q * s.stride + j) as isize - s.pad as isize;
                                if y < 0 || x < 0 || y >= h as isize || x >= wd as isize {
                                    continue;
                                }
                                let wi = ((o * s.in_channels + c) * s.kernel_h + i) * s.kernel_w + j;
                                out[at(&od, n, c, y as usize, x as usize)] += v * w.data()[wi];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Weight gradient of the convolution: `Σ g[n,o,p,q] · x[n,c,p·s+i−pad,q·s+j−pad]`.
pub fn conv_weight_grad_oracle(x: &Tensor<f64>, g: &Tensor<f64>, s: &ConvSpec) -> Vec<f64> {
    let (d, gd) = (x.dims(), g.dims());
    let mut out = vec![0.0; s.weight_dims().iter().product()];
    for n in 0..d[0] {
        for o in 0..s.out_channels {
            for c in 0..s.in_channels {
                for i in 0..s.kernel_h {
                    for j in 0..s.kernel_w {
                        let mut acc = 0.0;
                        for p in 0..gd[2] {
                            for q in 0..gd[3] {
                                let y = (p * s.stride + i) as isize - s.pad as isize;
                                let xx = (q * s.stride + j) as isize - s.pad as isize;
                                if y < 0 || xx < 0 || y >= d[2] as isize || xx >= d[3] as isize {
                                    continue;
                                }
                                acc += g.data()[at(gd, n, o, p, q)] * x.data()[at(d, n, c, y as usize, xx as usize)];
                            }
                        }
                        out[((o * s.in_channels + c) * s.kernel_h + i) * s.kernel_w + j] += acc;
                    }
                }
            }
        }
    }
    out
}

/// Max over each window and the first row-major argmax.
pub fn maxpool_oracle(x: &Tensor<f64>, k: usize) -> (Vec<f64>, Vec<u32>) {
    let d = x.dims();
    let od = [d[0], d[1], d[2] / k, d[3] / k];
    let mut vals = vec![0.0; od.iter().product()];
    let mut idx = vec![0u32; vals.len()];
    for n in 0..d[0] {
        for c in 0..d[1] {
            for p in 0..od[2] {
                for q in 0..od[3] {
                    let mut best = (f64::NEG_INFINITY, 0u32);
                    for i in 0..k {
                        for j in 0..k {
                            let v = x.data()[at(d, n, c, p * k + i, q * k + j)];
                            if v > best.0 {
                                best = (v, (i * k + j) as u32);
                            }
                        }
                    }
                    let o = at(&od, n, c, p, q);
                    vals[o] = best.0;
                    idx[o] = best.1;
                }
            }
        }
    }
    (vals, idx)
}

/// Places each pooled value at its switch (or offset 0) inside a zero window.
pub fn unpool_oracle(u: &Tensor<f64>, switches: Option<&[u32]>, k: usize) -> Vec<f64> {
    let d = u.dims();
    let od = [d[0], d[1], d[2] * k, d[3] * k];
    let mut out = vec![0.0; od.iter().product()];
    for n in 0..d[0] {
        for c in 0..d[1] {
            for p in 0..d[2] {
                for q in 0..d[3] {
                    let o = at(d, n, c, p, q);
                    let s = switches.map_or(0, |s| s[o] as usize);
                    out[at(&od, n, c, p * k + s / k, q * k + s % k)] = u.data()[o];
                }
            }
        }
    }
    out
}

/// A random convolution whose input extent is tiled exactly by its windows.
pub fn random_conv(rng: &mut ChaCha8Rng) -> (ConvSpec, [usize; 4]) {
    loop {
        let kh = rng.random_range(1..=5);
        let kw = rng.random_range(1..=5);
        let stride = rng.random_range(1..=3);
        let pad = rng.random_range(0..kh.min(kw));
        let extent = |out: usize, k: usize| ((out - 1) * stride + k) as isize - 2 * pad as isize;
        let h = extent(rng.random_range(1..=6), kh);
        let w = extent(rng.random_range(1..=6), kw);
        if h < 1 || w < 1 {
            continue;
        }
        let mut spec = ConvSpec::new(rng.random_range(1..=4), rng.random_range(1..=4), kh, stride, pad);
        spec.kernel_w = kw;
        spec.has_bias = rng.random_bool(0.5);
        let n = rng.random_range(1..=3);
        return (spec, [n, spec.in_channels, h as usize, w as usize]);
    }
}

pub fn random_pool(rng: &mut ChaCha8Rng) -> (PoolSpec, [usize; 4]) {
    let k = rng.random_range(1..=3);
    let dims = [
        rng.random_range(1..=3),
        rng.random_range(1..=4),
        k * rng.random_range(1..=5),
        k * rng.random_range(1..=5),
    ];
    (PoolSpec::square(k), dims)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(dims: &[usize], seed: u64) -> Tensor<f64> {
    gaussian_init(dims, 1.0, seed).unwrap()
}

/// Worst relative errors over `cases` random instances, as
/// `(forward, backward)` for conv and deconv and `(forward, 0)` for pooling.
#[derive(Debug, Default, Clone, Copy)]
pub struct OracleSummary {
    pub conv: f64,
    pub conv_backward: f64,
    pub deconv: f64,
    pub pool: f64,
    pub pool_backward: f64,
    pub unpool: f64,
    pub switches_match: bool,
}

pub fn run_oracles(cases: usize, seed: u64) -> OracleSummary {
    let mut r = rng(seed);
    let mut s = OracleSummary {
        switches_match: true,
        ..Default::default()
    };
    for t in 0..cases as u64 {
        let (spec, dims) = random_conv(&mut r);
        let x = randn(&dims, seed ^ (t * 4 + 1));
        let w = randn(&spec.weight_dims(), seed ^ (t * 4 + 2));
        let b = randn(&[spec.out_channels], seed ^ (t * 4 + 3));
        let bias = spec.has_bias.then_some(&b);
        let y = conv2d_forward(&x, &w, bias, &spec).unwrap();
        s.conv = s.conv.max(rel_diff(y.data(), &conv_oracle(&x, &w, bias, &spec)));

        let g = randn(y.dims(), seed ^ (t * 4 + 4));
        let grads = conv2d_backward(&x, &w, &spec, &g).unwrap();
        let gi = deconv_oracle(&g, &w, None, &spec, dims[2], dims[3]);
        let gw = conv_weight_grad_oracle(&x, &g, &spec);
        s.conv_backward = s
            .conv_backward
            .max(rel_diff(grads.grad_input.data(), &gi))
            .max(rel_diff(grads.grad_weights.unwrap().data(), &gw));

        let bd = randn(&[spec.in_channels], seed ^ (t * 4 + 5));
        let dbias = spec.has_bias.then_some(&bd);
        let z = deconv2d_forward(&g, &w, dbias, &spec).unwrap();
        s.deconv = s
            .deconv
            .max(rel_diff(z.data(), &deconv_oracle(&g, &w, dbias, &spec, dims[2], dims[3])));

        let (pspec, pdims) = random_pool(&mut r);
        let px = randn(&pdims, seed ^ (t * 4 + 6));
        let (py, sw) = maxpool_forward(&px, &pspec).unwrap();
        let (vals, idx) = maxpool_oracle(&px, pspec.kernel_h);
        s.pool = s.pool.max(rel_diff(py.data(), &vals));
        s.switches_match &= sw.indices == idx;
        let pg = randn(py.dims(), seed ^ (t * 4 + 7));
        let back = maxpool_backward(&pg, &sw, px.shape()).unwrap();
        s.pool_backward = s
            .pool_backward
            .max(rel_diff(back.data(), &unpool_oracle(&pg, Some(&idx), pspec.kernel_h)));
        for known in [true, false] {
            let sws = if known { Switches::Known(&sw) } else { Switches::Fixed };
            let up = unpool_forward(&pg, sws, &pspec, px.shape()).unwrap();
            let oracle = unpool_oracle(&pg, known.then_some(&idx[..]), pspec.kernel_h);
            s.unpool = s.unpool.max(rel_diff(up.data(), &oracle));
        }
    }
    s
}

/// Worst `|⟨Au, v⟩ − ⟨u, Aᵀv⟩| / max(|⟨Au, v⟩|, |⟨u, Aᵀv⟩|)` over random
/// instances of conv/deconv, conv/conv-backward and pool-gather/unpool pairs.
pub fn run_adjointness(cases: usize, seed: u64) -> f64 {
    let rel = |a: f64, b: f64| {
        let m = a.abs().max(b.abs());
        if m == 0.0 {
            0.0
        } else {
            (a - b).abs() / m
        }
    };
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for t in 0..cases as u64 {
        let (spec, dims) = random_conv(&mut r);
        let u = randn(&dims, seed ^ (t * 3 + 1));
        let w = randn(&spec.weight_dims(), seed ^ (t * 3 + 2));
        let cu = conv2d_forward(&u, &w, None, &spec).unwrap();
        let v = randn(cu.dims(), seed ^ (t * 3 + 3));
        let lhs = dot(&cu, &v).unwrap();
        worst = worst.max(rel(lhs, dot(&u, &deconv2d_forward(&v, &w, None, &spec).unwrap()).unwrap()));
        let gi = conv2d_backward(&u, &w, &spec, &v).unwrap().grad_input;
        worst = worst.max(rel(lhs, dot(&u, &gi).unwrap()));

        // pooling with frozen switches is a linear gather; unpooling is its adjoint
        let (pspec, pdims) = random_pool(&mut r);
        let src = randn(&pdims, seed ^ (t * 3 + 4));
        let (_, sw) = maxpool_forward(&src, &pspec).unwrap();
        let pooled = Shape::new(sw.shape.dims().to_vec()).unwrap();
        let pv = randn(pooled.dims(), seed ^ (t * 3 + 5));
        let pu = randn(&pdims, seed ^ (t * 3 + 6));
        for sws in [Switches::Known(&sw), Switches::Fixed] {
            let gathered = unpool_backward(&pu, sws, &pspec).unwrap();
            let lhs = dot(&gathered, &pv).unwrap();
            let rhs = dot(&pu, &unpool_forward(&pv, sws, &pspec, src.shape()).unwrap()).unwrap();
            worst = worst.max(rel(lhs, rhs));
        }
    }
    worst
}
