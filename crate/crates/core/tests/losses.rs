use affconv::gradcheck::{check, DEFAULT_STEP};
use affconv::loss::{
    auxiliary_diffuse_loss, discriminator_loss, generator_loss, l1_loss, masked_l1_loss, perceptual_loss,
    reconstruction_loss, std_loss, symmetry_loss, tv_loss, BlurParams, FeatureExtractor, LossWeights, BCE_EPS,
    FEATURE_SEED,
};
use affconv::networks::{MultiScaleDiscriminators, NetworkConfig};
use affconv::{Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(0.0..1.0))
}

fn value(t: &Tape<f64>, v: Var) -> f64 {
    t.value(v).item().unwrap()
}

/// Left-right mirror image `[1,C,H,W]`.
fn mirrored(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let half = uniform(&[c, h, w.div_ceil(2)], rng);
    let hw = w.div_ceil(2);
    Tensor::from_fn([1, c, h, w], |i| {
        let (ch, y, x) = (i / (h * w), (i / w) % h, i % w);
        let x = x.min(w - 1 - x);
        half.data()[(ch * h + y) * hw + x]
    })
}

const TINY_BLUR: BlurParams = BlurParams { sigma: 0.05, radius: 4 };

#[test]
fn l1_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut t = Tape::<f64>::new();
    let a = t.constant(Tensor::zeros([2, 3, 4, 4]));
    let b = t.constant(Tensor::full([2, 3, 4, 4], 0.5));
    let l = l1_loss(&mut t, a, b).unwrap();
    assert_eq!(value(&t, l), 0.5);
    let l = l1_loss(&mut t, b, b).unwrap();
    assert_eq!(value(&t, l), 0.0);

    let (x, y) = (uniform(&[2, 3, 5, 5], &mut rng), uniform(&[2, 3, 5, 5], &mut rng));
    let mut oracle = 0.0;
    for i in 0..x.numel() {
        oracle += (x.data()[i] - y.data()[i]).abs();
    }
    oracle /= x.numel() as f64;
    let (xv, yv) = (t.constant(x), t.constant(y));
    let l = l1_loss(&mut t, xv, yv).unwrap();
    assert!((value(&t, l) - oracle).abs() < 1e-7);
}

#[test]
fn reconstruction_weighting_gives_seven_tenths() {
    let w = LossWeights {
        l1d: 1.0,
        l1p: 3.0,
        ..LossWeights::default()
    };
    let mut t = Tape::<f64>::new();
    // single-texel maps so each component L1 is exactly the literal
    let image = t.constant(Tensor::zeros([1, 1, 1, 1]));
    let rendered = t.constant(Tensor::full([1, 1, 1, 1], 0.1));
    let pos = t.constant(Tensor::zeros([1, 1, 1, 1]));
    let pos_gt = t.constant(Tensor::full([1, 1, 1, 1], 0.2));
    let parts = (l1_loss(&mut t, image, rendered).unwrap(), l1_loss(&mut t, pos, pos_gt).unwrap());
    assert_eq!((value(&t, parts.0), value(&t, parts.1)), (0.1, 0.2));
    let l = reconstruction_loss(&mut t, image, rendered, pos, pos_gt, None, &w).unwrap();
    // 0.1 + 0.6 rounds to the double just above 0.7
    assert_eq!(value(&t, l), 1.0 * 0.1 + 3.0 * 0.2);
    assert!((value(&t, l) - 0.7).abs() <= 1e-15);

    let zero_p = LossWeights { l1p: 0.0, ..w };
    let l = reconstruction_loss(&mut t, image, rendered, pos, pos_gt, None, &zero_p).unwrap();
    assert_eq!(value(&t, l), value(&t, parts.0));
    let same = reconstruction_loss(&mut t, image, image, pos, pos, None, &w).unwrap();
    assert_eq!(value(&t, same), 0.0);
}

#[test]
fn masked_l1_ignores_unmasked_texels() {
    let mut t = Tape::<f64>::new();
    let a = t.constant(Tensor::zeros([1, 3, 2, 2]));
    let b = t.constant(Tensor::from_fn([1, 3, 2, 2], |i| if i % 4 == 0 { 0.3 } else { 9.0 }));
    let mask = Tensor::from_f64([1, 1, 2, 2], &[1.0, 0.0, 0.0, 0.0]).unwrap();
    let l = masked_l1_loss(&mut t, a, b, &mask).unwrap();
    assert!((value(&t, l) - 0.3).abs() < 1e-15);
    assert!(masked_l1_loss(&mut t, a, b, &Tensor::zeros([1, 1, 2, 2])).is_err());
}

#[test]
fn perceptual_matches_tap_by_tap_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let fx = FeatureExtractor::<f64>::new(FEATURE_SEED);
    let mut t = Tape::<f64>::new();
    let a = t.constant(uniform(&[1, 3, 16, 16], &mut rng));
    let b = t.constant(uniform(&[1, 3, 16, 16], &mut rng));
    let l = perceptual_loss(&mut t, &fx, a, b, 1.0).unwrap();
    let r = perceptual_loss(&mut t, &fx, b, a, 1.0).unwrap();
    assert_eq!(value(&t, l), value(&t, r));
    let same = perceptual_loss(&mut t, &fx, a, a, 1.0).unwrap();
    assert_eq!(value(&t, same), 0.0);

    let fa = fx.features(&mut t, a).unwrap();
    let fb = fx.features(&mut t, b).unwrap();
    assert_eq!(fa.len(), 5);
    let mut oracle = 0.0;
    for (p, q) in fa.iter().zip(&fb) {
        let (p, q) = (t.value(*p).data(), t.value(*q).data());
        oracle += p.iter().zip(q).map(|(x, y)| (x - y).abs()).sum::<f64>() / p.len() as f64;
    }
    assert!((value(&t, l) - oracle).abs() < 1e-12);
    let l2 = perceptual_loss(&mut t, &fx, a, b, 2.5).unwrap();
    assert!((value(&t, l2) - 2.5 * oracle).abs() < 1e-12);
}

#[test]
fn symmetry_loss_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let blur = BlurParams::for_resolution(64);
    let mut t = Tape::<f64>::new();
    for w in [8, 9] {
        let m = t.constant(mirrored(3, 6, w, &mut rng));
        let l = symmetry_loss(&mut t, m, 0.3, blur).unwrap();
        assert_eq!(value(&t, l), 0.0);
    }
    let x = t.constant(uniform(&[1, 3, 8, 8], &mut rng));
    let f = t.flip_h(x).unwrap();
    let lx = symmetry_loss(&mut t, x, 0.3, blur).unwrap();
    let lf = symmetry_loss(&mut t, f, 0.3, blur).unwrap();
    assert!((value(&t, lx) - value(&t, lf)).abs() < 1e-15);

    // left half 0, right half 1: every pixel differs from its mirror by 1
    let step = t.constant(Tensor::from_fn([1, 3, 8, 8], |i| if i % 8 >= 4 { 1.0 } else { 0.0 }));
    let l = symmetry_loss(&mut t, step, 0.3, TINY_BLUR).unwrap();
    assert!((value(&t, l) - 0.3).abs() < 1e-12);
    // with a real blur, against blur-then-flip computed separately
    let l = symmetry_loss(&mut t, step, 0.3, blur).unwrap();
    let g = t.gaussian_blur(step, blur.sigma, blur.radius).unwrap();
    let gf = t.flip_h(g).unwrap();
    let (p, q) = (t.value(g).data(), t.value(gf).data());
    let oracle = 0.3 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64;
    assert!((value(&t, l) - oracle).abs() < 1e-15);
    assert!(value(&t, l) < 0.3);
}

#[test]
fn std_loss_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let blur = BlurParams::for_resolution(64);
    let mut t = Tape::<f64>::new();
    let c = t.constant(Tensor::full([2, 3, 8, 8], 0.37));
    let mask = Tensor::from_fn([2, 1, 8, 8], |_| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
    let l = std_loss(&mut t, c, &mask, 1.0, blur).unwrap();
    assert_eq!(value(&t, l), 0.0);

    // two pixels, values 0 and 1: population std 0.5
    let two = t.constant(Tensor::from_f64([1, 1, 1, 2], &[0.0, 1.0]).unwrap());
    let m2 = Tensor::ones([1, 1, 1, 2]);
    let l = std_loss(&mut t, two, &m2, 0.7, TINY_BLUR).unwrap();
    assert!((value(&t, l) - 0.7 * 0.5).abs() < 1e-12);
    // colour pixels deviate as vectors: (0,0,0) and (1,1,1) are sqrt(3)/2 from their mean
    let grey = t.constant(Tensor::from_fn([1, 3, 1, 2], |i| (i % 2) as f64));
    let l = std_loss(&mut t, grey, &m2, 1.0, TINY_BLUR).unwrap();
    assert!((value(&t, l) - 0.75f64.sqrt()).abs() < 1e-12);

    // mask inside a constant block wider than the blur support
    let img = t.constant(Tensor::from_fn([1, 3, 20, 20], |i| {
        if i % 20 < 10 {
            0.25
        } else {
            rng.random_range(0.0..1.0)
        }
    }));
    let m = Tensor::from_fn([1, 1, 20, 20], |i| if i % 20 < 5 { 1.0 } else { 0.0 });
    let l = std_loss(&mut t, img, &m, 1.0, blur).unwrap();
    assert!(value(&t, l).abs() < 1e-12);
}

#[test]
fn tv_loss_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut t = Tape::<f64>::new();
    let c = t.constant(Tensor::full([1, 1, 6, 7], 0.8));
    let l = tv_loss(&mut t, c, 0.3).unwrap();
    assert_eq!(value(&t, l), 0.0);

    let s = 0.125;
    let (h, w) = (5, 6);
    let ramp = Tensor::from_fn([1, 1, h, w], |i| s * (i % w) as f64);
    let mut dx = 0.0;
    let mut dy = 0.0;
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                dx += (ramp.data()[y * w + x + 1] - ramp.data()[y * w + x]).abs();
            }
            if y + 1 < h {
                dy += (ramp.data()[(y + 1) * w + x] - ramp.data()[y * w + x]).abs();
            }
        }
    }
    let oracle = dx / (h * (w - 1)) as f64 + dy / ((h - 1) * w) as f64;
    assert_eq!(oracle, s);
    let r = t.constant(ramp);
    let l = tv_loss(&mut t, r, 1.0).unwrap();
    assert!((value(&t, l) - oracle).abs() < 1e-15);

    let x = t.constant(uniform(&[2, 1, 6, 6], &mut rng));
    let f = t.flip_h(x).unwrap();
    let (a, b) = (tv_loss(&mut t, x, 1.0).unwrap(), tv_loss(&mut t, f, 1.0).unwrap());
    assert!((value(&t, a) - value(&t, b)).abs() < 1e-15);
}

fn zeroed_discs(logit_bias: f64) -> MultiScaleDiscriminators<f64> {
    let cfg = NetworkConfig {
        base_width: 4,
        ..NetworkConfig::default()
    };
    let mut d = MultiScaleDiscriminators::new(&cfg, 11).unwrap();
    for net in &mut d.nets {
        for i in 0..net.params.len() {
            let shape = net.params.get(i).shape().to_vec();
            let v = if net.params.name(i) == "conv5.bias" { logit_bias } else { 0.0 };
            net.params.replace(i, Tensor::full(shape, v)).unwrap();
        }
    }
    d
}

#[test]
fn adversarial_closed_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let lambda = 0.01;
    let d = zeroed_discs(0.0);
    assert_eq!(d.input_sizes(), [64, 32, 16]);
    let mut t = Tape::<f64>::new();
    let vars = d.bind(&mut t, true);
    let real = t.constant(uniform(&[2, 3, 64, 64], &mut rng));
    let fake = t.leaf(uniform(&[2, 3, 64, 64], &mut rng));
    let ld = discriminator_loss(&mut t, &d, &vars, real, fake, lambda).unwrap();
    assert!((value(&t, ld) - 3.0 * 2f64.ln() * lambda).abs() < 1e-15);
    let g = t.backward(ld).unwrap();
    // D is constant in its input at this point, so the fake receives nothing
    assert!(g.get(fake).unwrap().data().iter().all(|&v| v == 0.0));

    let mut t = Tape::<f64>::new();
    let fake = t.leaf(uniform(&[1, 3, 64, 64], &mut rng));
    let lg = generator_loss(&mut t, &d, fake, lambda).unwrap();
    assert!((value(&t, lg) - 3.0 * 2f64.ln() * lambda).abs() < 1e-15);

    // a discriminator certain that everything is fake
    let sure = zeroed_discs(-1000.0);
    let mut t = Tape::<f64>::new();
    let fake = t.constant(uniform(&[1, 3, 64, 64], &mut rng));
    let lg = generator_loss(&mut t, &sure, fake, 1.0).unwrap();
    let v = value(&t, lg);
    assert!(v.is_finite() && v > 40.0);
    assert!((v - 3.0 * -(BCE_EPS.ln())).abs() < 1e-6);
}

#[test]
fn generator_and_discriminator_gradients_are_partitioned() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = NetworkConfig {
        base_width: 4,
        ..NetworkConfig::default()
    };
    let d = MultiScaleDiscriminators::<f64>::new(&cfg, 3).unwrap();
    let mut t = Tape::<f64>::new();
    let fake = t.leaf(uniform(&[1, 3, 64, 64], &mut rng));
    let lg = generator_loss(&mut t, &d, fake, 1.0).unwrap();
    let g = t.backward(lg).unwrap();
    assert!(g.get(fake).unwrap().data().iter().any(|&v| v != 0.0));

    let mut t = Tape::<f64>::new();
    let vars = d.bind(&mut t, true);
    let gen_out = t.leaf(uniform(&[1, 3, 64, 64], &mut rng));
    let fake = t.constant(t.value(gen_out).clone());
    let real = t.constant(uniform(&[1, 3, 64, 64], &mut rng));
    let ld = discriminator_loss(&mut t, &d, &vars, real, fake, 1.0).unwrap();
    let g = t.backward(ld).unwrap();
    assert!(g.get(gen_out).is_none());
    assert!(vars.iter().flatten().all(|&v| g.get(v).is_some()));
}

#[test]
fn logit_maps_follow_stride_arithmetic() {
    let cfg = NetworkConfig {
        resolution: 48,
        base_width: 2,
        ..NetworkConfig::default()
    };
    let d = MultiScaleDiscriminators::<f32>::new(&cfg, 0).unwrap();
    let mut t = Tape::<f32>::new();
    let vars = d.bind(&mut t, false);
    let x = t.constant(Tensor::zeros([1, 3, 48, 48]));
    let out = d.forward(&mut t, &vars, x).unwrap();
    for (k, o) in out.iter().enumerate() {
        let mut r = 48 / [1, 2, 4][k];
        for _ in 0..4 {
            r = (r + 2 - 3) / 2 + 1;
        }
        assert_eq!(t.shape(*o), [1, 1, r, r]);
        assert_eq!(d.nets[k].output_size(), r);
    }
}

#[test]
fn auxiliary_diffuse_loss_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let fx = FeatureExtractor::<f64>::new(FEATURE_SEED);
    let mut t = Tape::<f64>::new();
    let d = t.constant(uniform(&[1, 3, 16, 16], &mut rng));
    let gt = t.constant(uniform(&[1, 3, 16, 16], &mut rng));
    let none = auxiliary_diffuse_loss(&mut t, &fx, d, None).unwrap();
    assert_eq!(value(&t, none), 0.0);
    let same = auxiliary_diffuse_loss(&mut t, &fx, d, Some(d)).unwrap();
    assert_eq!(value(&t, same), 0.0);
    let l = auxiliary_diffuse_loss(&mut t, &fx, d, Some(gt)).unwrap();
    let a = l1_loss(&mut t, d, gt).unwrap();
    let p = perceptual_loss(&mut t, &fx, d, gt, 1.0).unwrap();
    assert_eq!(value(&t, l), value(&t, a) + value(&t, p));
}

#[test]
fn every_loss_passes_a_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let fx = FeatureExtractor::<f64>::new(FEATURE_SEED);
    let blur = BlurParams::for_resolution(64);
    let a = uniform(&[1, 3, 16, 16], &mut rng);
    let b = uniform(&[1, 3, 16, 16], &mut rng);
    let light = uniform(&[1, 1, 6, 6], &mut rng);
    let mask = Tensor::from_fn([1, 1, 16, 16], |i| if (i / 16 + i % 16) % 3 == 0 { 0.0 } else { 1.0 });
    let w = LossWeights::default();
    type LossFn<'a> = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> affconv::Result<Var> + 'a>;
    let cases: Vec<(&str, LossFn)> = vec![
        ("l1", Box::new(|t, v| l1_loss(t, v[0], v[1]))),
        ("masked-l1", Box::new(|t, v| masked_l1_loss(t, v[0], v[1], &mask))),
        ("reconstruction", Box::new(|t, v| reconstruction_loss(t, v[0], v[1], v[1], v[0], Some(&mask), &w))),
        ("perceptual", Box::new(|t, v| perceptual_loss(t, &fx, v[0], v[1], 1.0))),
        ("symmetry", Box::new(|t, v| symmetry_loss(t, v[0], 0.3, blur))),
        ("std", Box::new(|t, v| std_loss(t, v[0], &mask, 1.0, blur))),
        ("aux", Box::new(|t, v| auxiliary_diffuse_loss(t, &fx, v[0], Some(v[1])))),
    ];
    for (name, f) in &cases {
        let reports = check(&[("a", a.clone()), ("b", b.clone())], DEFAULT_STEP, f).unwrap();
        for r in reports.iter().filter(|r| r.grad_norm_inf > 0.0) {
            assert!(r.passes(1e-4), "{name}: {r:?}");
        }
    }
    for r in check(&[("light", light)], DEFAULT_STEP, |t, v| tv_loss(t, v[0], 0.3)).unwrap() {
        assert!(r.passes(1e-4), "tv: {r:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn l1_is_a_symmetric_nonnegative_distance(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tape::<f64>::new();
        let a = t.constant(uniform(&[1, 2, 3, 4], &mut rng));
        let b = t.constant(uniform(&[1, 2, 3, 4], &mut rng));
        let ab = l1_loss(&mut t, a, b).unwrap();
        let ba = l1_loss(&mut t, b, a).unwrap();
        prop_assert!(value(&t, ab) >= 0.0);
        prop_assert_eq!(value(&t, ab), value(&t, ba));
    }

    #[test]
    fn tv_ignores_constant_offsets(seed in any::<u64>(), c in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tape::<f64>::new();
        let x = uniform(&[1, 1, 5, 5], &mut rng);
        let xv = t.constant(x.clone());
        let yv = t.constant(x.map(|v| v + c));
        let a = tv_loss(&mut t, xv, 1.0).unwrap();
        let b = tv_loss(&mut t, yv, 1.0).unwrap();
        prop_assert!((value(&t, a) - value(&t, b)).abs() < 1e-12);
    }

    #[test]
    fn mirror_symmetric_maps_have_zero_symmetry_loss(seed in any::<u64>(), h in 1usize..8, w in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tape::<f64>::new();
        let m = t.constant(mirrored(3, h, w, &mut rng));
        let l = symmetry_loss(&mut t, m, 1.0, BlurParams::for_resolution(128)).unwrap();
        prop_assert_eq!(value(&t, l), 0.0);
    }
}
