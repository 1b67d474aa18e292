use affconv::gradcheck::{check, DEFAULT_STEP};
use affconv::nn::ParamSet;
use affconv::ops::Axis;
use affconv::optim::{adam_step, AdamConfig, OptimState};
use affconv::{Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Weighted sum against a fixed random probe, so every output element
/// carries a distinct gradient.
fn probe_sum(t: &mut Tape<f64>, y: Var, seed: u64) -> affconv::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = t.constant(uniform(&t.shape(y).to_vec(), &mut rng));
    let y = t.mul(y, p)?;
    t.sum(y)
}

fn assert_grads(inputs: &[(&str, Tensor<f64>)], tol: f64, f: impl Fn(&mut Tape<f64>, &[Var]) -> affconv::Result<Var>) {
    for r in check(inputs, DEFAULT_STEP, f).unwrap() {
        assert!(r.passes(tol), "{r:?}");
    }
}

#[test]
fn ones_conv_centre_is_nine_terms() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::ones([1, 1, 3, 3]));
    let w = t.constant(Tensor::ones([1, 1, 3, 3]));
    let y = t.conv2d(x, w, None, 1, 1).unwrap();
    let oracle: f64 = (0..9).map(|_| 1.0).sum();
    assert_eq!(t.value(y).data()[4], oracle);
    assert_eq!(t.value(y).data()[0], 4.0);
}

#[test]
fn conv2d_gradients_within_1e6() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (stride, pad) in [(1, 1), (2, 1), (1, 0), (2, 2)] {
        let inputs = [
            ("x", uniform(&[2, 3, 7, 6], &mut rng)),
            ("w", uniform(&[4, 3, 3, 3], &mut rng)),
            ("b", uniform(&[4], &mut rng)),
        ];
        assert_grads(&inputs, 1e-6, |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
            probe_sum(t, y, 9)
        });
    }
}

#[test]
fn bilinear_sample_coordinate_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let map = uniform(&[1, 2, 5, 6], &mut rng);
    // non-integer points away from cell boundaries by more than the step
    let coords = Tensor::from_fn([1, 7, 2], |i| {
        let base: f64 = if i % 2 == 0 { rng.random_range(-0.8..5.8) } else { rng.random_range(-0.8..4.8) };
        let f = base - base.floor();
        if f < 0.05 || f > 0.95 {
            base.floor() + 0.5
        } else {
            base
        }
    });
    assert_grads(&[("map", map), ("coords", coords)], 1e-6, |t, v| {
        let y = t.bilinear_sample(v[0], v[1])?;
        probe_sum(t, y, 3)
    });
}

#[test]
fn bilinear_sample_reads_pixels_and_midpoints() {
    let mut t = Tape::<f64>::new();
    let m = t.constant(Tensor::from_f64([1, 1, 1, 2], &[2.0, 4.0]).unwrap());
    let c = t.constant(Tensor::from_f64([1, 3, 2], &[0.0, 0.0, 1.0, 0.0, 0.5, 0.0]).unwrap());
    let y = t.bilinear_sample(m, c).unwrap();
    assert_eq!(t.value(y).data(), &[2.0, 4.0, 3.0]);
}

#[test]
fn elementwise_and_shape_op_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = uniform(&[2, 3, 4, 5], &mut rng);
    let b = uniform(&[2, 3, 4, 5], &mut rng).map(|v| v + 2.5);
    let g = uniform(&[2, 3], &mut rng);
    let one = uniform(&[2, 1, 4, 5], &mut rng);
    assert_grads(&[("a", a.clone()), ("b", b.clone())], 1e-6, |t, v| {
        let s = t.add(v[0], v[1])?;
        let d = t.sub(s, v[0])?;
        let m = t.mul(d, v[0])?;
        let q = t.sqrt(v[1])?;
        let r = t.square(m)?;
        let sg = t.sigmoid(r)?;
        let lr = t.leaky_relu(v[0], 0.2)?;
        let sc = t.scale(lr, -1.5)?;
        let ad = t.add_scalar(sc, 0.25)?;
        let c = t.concat_channels(&[sg, ad, q])?;
        probe_sum(t, c, 4)
    });
    assert_grads(&[("x", a.clone()), ("gain", g), ("one", one)], 1e-6, |t, v| {
        let m = t.mul_channels(v[0], v[1])?;
        let e = t.expand_channels(v[2], 3)?;
        let y = t.add(m, e)?;
        let y = t.reshape(y, &[2, 60])?;
        probe_sum(t, y, 5)
    });
}

#[test]
fn resampling_and_filter_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = uniform(&[1, 2, 8, 6], &mut rng);
    assert_grads(&[("x", x.clone())], 1e-6, |t, v| {
        let a = t.resize_bilinear(v[0], 5, 11)?;
        let a = probe_sum(t, a, 1)?;
        let b = t.upsample2x(v[0])?;
        let b = probe_sum(t, b, 2)?;
        let c = t.avgpool(v[0], 2)?;
        let c = probe_sum(t, c, 3)?;
        let d = t.gaussian_blur(v[0], 1.3, 3)?;
        let d = probe_sum(t, d, 4)?;
        let e = t.flip_h(v[0])?;
        let e = probe_sum(t, e, 5)?;
        let f = t.forward_diff(v[0], Axis::Height)?;
        let f = probe_sum(t, f, 6)?;
        let s = [a, b, c, d, e, f].into_iter().try_fold(t.constant(Tensor::scalar(0.0)), |acc, v| t.add(acc, v))?;
        Ok(s)
    });
}

#[test]
fn statistics_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = uniform(&[2, 3, 5, 5], &mut rng);
    let mask = Tensor::from_fn([2, 1, 5, 5], |i| if i % 3 == 0 { 0.0 } else { 1.0 });
    assert_grads(&[("x", x.clone())], 1e-6, |t, v| {
        let s = t.masked_std(v[0], &mask)?;
        let b1 = t.bce_with_logits(v[0], 1.0, 1e-7)?;
        let b0 = t.bce_with_logits(v[0], 0.0, 1e-7)?;
        let m = t.mean(v[0])?;
        let y = t.add(s, b1)?;
        let y = t.add(y, b0)?;
        t.add(y, m)
    });
}

#[test]
fn adam_first_step_matches_hand_formula() {
    let cfg = AdamConfig::default();
    let mut p = ParamSet::<f64>::new();
    p.push("w", Tensor::from_f64([2], &[0.5, -1.0]).unwrap());
    let mut st = OptimState::new(cfg);
    adam_step(&mut p, &[Some(Tensor::ones([2]))], &mut st).unwrap();
    // m = (1-b1) g, v = (1-b2) g^2, bias-corrected to g and g^2
    let m_hat = ((1.0 - cfg.beta1) * 1.0) / (1.0 - cfg.beta1);
    let v_hat = ((1.0 - cfg.beta2) * 1.0) / (1.0 - cfg.beta2);
    let delta = cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    assert!((p.get(0).data()[0] - (0.5 - delta)).abs() < 1e-15);
    assert!((delta - 0.001).abs() < 1e-10);
    assert_eq!(st.step_count(), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn resize_of_constant_is_exact(c in -10.0f64..10.0, h in 1usize..12, w in 1usize..12, oh in 1usize..20, ow in 1usize..20) {
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::full([1, 2, h, w], c as f32));
        let y = t.resize_bilinear(x, oh, ow).unwrap();
        prop_assert!(t.value(y).data().iter().all(|&v| v == c as f32));
    }

    #[test]
    fn bilinear_sample_of_constant_is_exact_inside(c in 0.0f32..1.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (6, 9);
        let mut t = Tape::<f32>::new();
        let m = t.constant(Tensor::full([1, 3, h, w], c));
        let pts = Tensor::from_fn([1, 16, 2], |i| {
            let hi = if i % 2 == 0 { (w - 1) as f32 } else { (h - 1) as f32 };
            rng.random_range(0.0..hi)
        });
        let p = t.constant(pts);
        let y = t.bilinear_sample(m, p).unwrap();
        prop_assert!(t.value(y).data().iter().all(|&v| v == c));
    }

    #[test]
    fn flip_is_an_involution_and_commutes_with_blur(seed in any::<u64>(), h in 1usize..9, w in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tape::<f64>::new();
        let x = t.constant(uniform(&[1, 2, h, w], &mut rng));
        let f = t.flip_h(x).unwrap();
        let ff = t.flip_h(f).unwrap();
        prop_assert_eq!(t.value(ff), t.value(x));
        let bf = t.gaussian_blur(f, 1.1, 4).unwrap();
        let b = t.gaussian_blur(x, 1.1, 4).unwrap();
        let fb = t.flip_h(b).unwrap();
        prop_assert!(t.value(bf).max_abs_diff(t.value(fb)).unwrap() < 1e-12);
    }

    #[test]
    fn stack_then_slice_round_trips(seed in any::<u64>(), n in 1usize..5, c in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parts: Vec<Tensor<f64>> = (0..n).map(|_| uniform(&[1, c, 3, 2], &mut rng)).collect();
        let refs: Vec<&Tensor<f64>> = parts.iter().collect();
        let s = Tensor::stack_batch(&refs).unwrap();
        prop_assert_eq!(s.shape(), &[n, c, 3, 2]);
        for (i, p) in parts.iter().enumerate() {
            prop_assert_eq!(&s.batch_slice(i, i + 1).unwrap(), p);
        }
    }

    #[test]
    fn adam_moments_and_step_counter(seed in any::<u64>(), steps in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::<f64>::new();
        p.push("a", uniform(&[3, 2], &mut rng));
        p.push("b", uniform(&[4], &mut rng));
        let mut st = OptimState::new(AdamConfig::default());
        let mut last = 0;
        for _ in 0..steps {
            let g = vec![Some(uniform(&[3, 2], &mut rng)), Some(uniform(&[4], &mut rng))];
            adam_step(&mut p, &g, &mut st).unwrap();
            prop_assert!(st.step_count() > last);
            last = st.step_count();
        }
        // a fresh step with zero gradients moves nothing after bias correction of m = 0
        let before = p.clone();
        let mut fresh = OptimState::new(AdamConfig::default());
        adam_step(&mut p, &[Some(Tensor::zeros([3, 2])), Some(Tensor::zeros([4]))], &mut fresh).unwrap();
        for ((_, x), (_, y)) in p.iter().zip(before.iter()) {
            prop_assert_eq!(x, y);
        }
    }

    #[test]
    fn mean_gradient_is_uniform(n in 1usize..40) {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::zeros([n]));
        let m = t.mean(x).unwrap();
        let g = t.backward(m).unwrap();
        prop_assert!(g.get(x).unwrap().data().iter().all(|&v| (v - 1.0 / n as f64).abs() < 1e-15));
    }
}
