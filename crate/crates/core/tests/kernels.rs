mod common;

use common::*;
use proptest::prelude::*;
use swwae::layers::{
    conv2d_backward, conv2d_forward, deconv2d_backward, deconv2d_forward, inner_product_backward,
    inner_product_forward, maxpool_forward, relu_backward, relu_forward, softmax_xent, unpool_fixed_forward,
    unpool_known_forward, weighted_l2_loss, ConvSpec, PoolSpec, SwitchMap,
};
use swwae::tensor::dot;
use swwae::Tensor;

#[test]
fn kernels_match_loop_oracles() {
    let s = run_oracles(100, 11);
    assert!(s.conv <= TOL, "conv {}", s.conv);
    assert!(s.conv_backward <= TOL, "conv backward {}", s.conv_backward);
    assert!(s.deconv <= TOL, "deconv {}", s.deconv);
    assert!(s.pool <= TOL && s.switches_match, "pool {}", s.pool);
    assert!(s.pool_backward <= TOL, "pool backward {}", s.pool_backward);
    assert!(s.unpool <= TOL, "unpool {}", s.unpool);
}

#[test]
fn adjoint_pairs() {
    let worst = run_adjointness(100, 12);
    assert!(worst <= TOL, "{worst}");
}

#[test]
fn oracle_sanity() {
    // 1x1 input, 3x3 kernel, pad 1: only the centre tap contributes
    let spec = ConvSpec::new(1, 1, 3, 1, 1);
    let w = Tensor::from_vec([1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
    let x = Tensor::from_vec([1, 1, 1, 1], vec![2.0]).unwrap();
    assert_eq!(conv_oracle(&x, &w, None, &spec), vec![10.0]);
    let (v, i) = maxpool_oracle(&Tensor::from_vec([1, 1, 2, 2], vec![1.0, 3.0, 3.0, 2.0]).unwrap(), 2);
    assert_eq!((v, i), (vec![3.0], vec![1]));
}

/// Central differences of `Σ out · probe` with respect to every input element.
fn fd(x: &Tensor<f64>, probe: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> Tensor<f64>) -> Vec<f64> {
    let h = 1e-6;
    (0..x.len())
        .map(|i| {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            (dot(&f(&p), probe).unwrap() - dot(&f(&m), probe).unwrap()) / (2.0 * h)
        })
        .collect()
}

fn assert_close(analytic: &[f64], numeric: &[f64], what: &str) {
    let e = rel_diff(analytic, numeric);
    assert!(e < 1e-6, "{what}: {e}");
}

#[test]
fn conv_and_deconv_gradients_match_finite_differences() {
    let spec = ConvSpec::new(2, 3, 3, 2, 1);
    let x = randn(&[2, 2, 5, 7], 1);
    let w = randn(&spec.weight_dims(), 2);
    let b = randn(&[3], 3);
    let y = conv2d_forward(&x, &w, Some(&b), &spec).unwrap();
    let g = randn(y.dims(), 4);
    let grads = conv2d_backward(&x, &w, &spec, &g).unwrap();
    assert_close(grads.grad_input.data(), &fd(&x, &g, |x| conv2d_forward(x, &w, Some(&b), &spec).unwrap()), "conv input");
    assert_close(grads.grad_weights.unwrap().data(), &fd(&w, &g, |w| conv2d_forward(&x, w, Some(&b), &spec).unwrap()), "conv weights");
    assert_close(grads.grad_bias.unwrap().data(), &fd(&b, &g, |b| conv2d_forward(&x, &w, Some(b), &spec).unwrap()), "conv bias");

    let bd = randn(&[2], 5);
    let z = deconv2d_forward(&y, &w, Some(&bd), &spec).unwrap();
    let gz = randn(z.dims(), 6);
    let dg = deconv2d_backward(&y, &w, &spec, &gz).unwrap();
    assert_close(dg.grad_input.data(), &fd(&y, &gz, |y| deconv2d_forward(y, &w, Some(&bd), &spec).unwrap()), "deconv input");
    assert_close(dg.grad_weights.unwrap().data(), &fd(&w, &gz, |w| deconv2d_forward(&y, w, Some(&bd), &spec).unwrap()), "deconv weights");
    assert_close(dg.grad_bias.unwrap().data(), &fd(&bd, &gz, |b| deconv2d_forward(&y, &w, Some(b), &spec).unwrap()), "deconv bias");
}

#[test]
fn dense_relu_and_loss_gradients_match_finite_differences() {
    let x = randn(&[3, 5], 1);
    let w = randn(&[4, 5], 2);
    let b = randn(&[4], 3);
    let g = randn(&[3, 4], 4);
    let grads = inner_product_backward(&x, &w, &g).unwrap();
    assert_close(grads.grad_input.data(), &fd(&x, &g, |x| inner_product_forward(x, &w, &b).unwrap()), "dense input");
    assert_close(grads.grad_weights.unwrap().data(), &fd(&w, &g, |w| inner_product_forward(&x, w, &b).unwrap()), "dense weights");
    assert_close(grads.grad_bias.unwrap().data(), &fd(&b, &g, |b| inner_product_forward(&x, &w, b).unwrap()), "dense bias");

    // keep inputs away from the kink
    let r = randn(&[2, 6], 5).map(|v| if v.abs() < 0.1 { v + 0.3 } else { v });
    let gr = randn(&[2, 6], 6);
    let y = relu_forward(&r);
    assert_close(relu_backward(&gr, &r).unwrap().data(), &fd(&r, &gr, relu_forward), "relu");
    assert_eq!(y.data().iter().filter(|v| **v < 0.0).count(), 0);

    let one = Tensor::from_vec([1], vec![1.0]).unwrap();
    let scalar = |v: f64| Tensor::from_vec([1], vec![v]).unwrap();
    let labels = [1, 3];
    let z = randn(&[2, 5], 8);
    let (_, dz) = softmax_xent(&z, &labels).unwrap();
    assert_close(dz.data(), &fd(&z, &one, |z| scalar(softmax_xent(z, &labels).unwrap().0)), "softmax xent");

    let t = randn(&[2, 1, 3, 3], 9);
    let p = randn(&[2, 1, 3, 3], 10);
    let (_, dp) = weighted_l2_loss(&p, &t, 0.7).unwrap();
    assert_close(dp.data(), &fd(&p, &one, |p| scalar(weighted_l2_loss(p, &t, 0.7).unwrap().0)), "weighted l2");
}

#[test]
fn fixed_unpooling_equals_known_with_zero_switches() {
    let spec = PoolSpec::square(2);
    let u = randn(&[2, 3, 3, 4], 1);
    let out = swwae::Shape::new(vec![2, 3, 6, 8]).unwrap();
    let zeros = SwitchMap::zeros(u.shape(), &spec);
    assert_eq!(
        unpool_fixed_forward(&u, &spec, &out).unwrap(),
        unpool_known_forward(&u, &zeros, &spec, &out).unwrap()
    );
}

proptest! {
    #[test]
    fn pooling_inverts_known_unpooling(
        k in 1usize..4,
        n in 1usize..3,
        c in 1usize..4,
        ph in 1usize..5,
        pw in 1usize..5,
        seed in any::<u64>(),
    ) {
        let spec = PoolSpec::square(k);
        let x = randn(&[n, c, ph * k, pw * k], seed);
        let (pooled, switches) = maxpool_forward(&x, &spec).unwrap();
        // strictly positive pooled values survive next to the zero fill
        let z = pooled.map(|v| v.abs() + 0.5);
        let up = unpool_known_forward(&z, &switches, &spec, x.shape()).unwrap();
        let (back, sw2) = maxpool_forward(&up, &spec).unwrap();
        prop_assert_eq!(back, z);
        prop_assert_eq!(sw2.indices, switches.indices);
    }
}
