use affconv::networks::{
    load_params, save_params, AffUNet, Head, LayerKind, LightEncoder, MultiScaleDiscriminators, NetworkConfig,
    PoseEncoder,
};
use affconv::nn::ParamSet;
use affconv::optim::{adam_step, AdamConfig, OptimState};
use affconv::{Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(resolution: usize, affine: bool) -> NetworkConfig {
    NetworkConfig {
        resolution,
        base_width: 4,
        affine,
        ..NetworkConfig::default()
    }
}

fn image(b: usize, r: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn([b, 3, r, r], |_| rng.random_range(0.0..1.0))
}

#[test]
fn affunet_shapes_and_layer_kinds() {
    let net = AffUNet::<f32>::new(&small(64, true), 3, Head::Sigmoid, 1).unwrap();
    use LayerKind::*;
    let mut want = vec![Vanilla, Affine, Affine, Affine];
    want.extend([Vanilla; 7]);
    want.extend([Upsample; 3]);
    assert_eq!(net.layer_kinds(), want);

    let mut t = Tape::<f32>::new();
    let vars = net.params.bind(&mut t, false);
    let x = t.constant(Tensor::zeros([2, 3, 64, 64]));
    let f = net.forward_features(&mut t, &vars, x).unwrap();
    let sizes: Vec<usize> = f.encoder.iter().map(|&e| t.shape(e)[2]).collect();
    assert_eq!(sizes, [64, 32, 16, 8]);
    assert_eq!(t.shape(f.output), [2, 3, 64, 64]);
    assert!(t.value(f.output).all_finite());

    let vanilla = AffUNet::<f32>::new(&small(64, false), 3, Head::Linear, 1).unwrap();
    assert_eq!(vanilla.layer_kinds()[1..4], [Vanilla; 3]);
    assert!(AffUNet::<f32>::new(&small(60, true), 3, Head::Linear, 1).is_err());
}

#[test]
fn variants_differ_only_by_predictor_parameters() {
    let a = AffUNet::<f32>::new(&small(64, true), 3, Head::Sigmoid, 7).unwrap();
    let v = AffUNet::<f32>::new(&small(64, false), 3, Head::Sigmoid, 7).unwrap();
    assert_eq!(v.predictor_params(), 0);
    assert!(a.predictor_params() > 0);
    assert_eq!(a.params.count(), v.params.count() + a.predictor_params());
    // host weights draw the same random stream
    for (name, t) in v.params.iter() {
        let i = a.params.index_of(name).unwrap();
        assert_eq!(a.params.get(i), t, "{name}");
    }
}

#[test]
fn fresh_affine_and_vanilla_nets_agree() {
    // identity predictors make the affine variant a plain network at init
    let a = AffUNet::<f32>::new(&small(32, true), 3, Head::Sigmoid, 3).unwrap();
    let v = AffUNet::<f32>::new(&small(32, false), 3, Head::Sigmoid, 3).unwrap();
    let x = image(1, 32, 4);
    let run = |net: &AffUNet<f32>| {
        let mut t = Tape::<f32>::new();
        let vars = net.params.bind(&mut t, false);
        let xv = t.constant(x.clone());
        let y = net.forward(&mut t, &vars, xv).unwrap();
        t.value(y).clone()
    };
    assert_eq!(run(&a), run(&v));
}

#[test]
fn same_seed_same_parameters() {
    let cfg = small(32, true);
    let a = AffUNet::<f32>::new(&cfg, 3, Head::Linear, 11).unwrap();
    let b = AffUNet::<f32>::new(&cfg, 3, Head::Linear, 11).unwrap();
    let c = AffUNet::<f32>::new(&cfg, 3, Head::Linear, 12).unwrap();
    assert!(a.params.iter().zip(b.params.iter()).all(|(p, q)| p == q));
    assert!(a.params.iter().zip(c.params.iter()).any(|(p, q)| p != q));
    assert_eq!(a.params.count(), c.params.count());
}

#[test]
fn light_encoder_contract() {
    let big = LightEncoder::<f32>::new(&small(512, true), 0).unwrap();
    assert_eq!(big.output_size(), 64);
    let enc = LightEncoder::<f32>::new(&small(64, true), 0).unwrap();
    assert_eq!(enc.output_size(), 8);
    let mut t = Tape::<f32>::new();
    let vars = enc.params.bind(&mut t, false);
    let x = t.constant(image(2, 64, 1));
    let out = enc.forward(&mut t, &vars, x).unwrap();
    assert_eq!(t.shape(out.map), [2, 1, 8, 8]);
    assert!(t.value(out.map).data().iter().all(|&v| v > 0.0 && v < 1.0));
    assert!(out.tint.is_none());
    // extreme inputs saturate in f32 but never leave the unit interval
    let x = t.constant(image(2, 64, 1).map(|v| 2000.0 * v - 1000.0));
    let out = enc.forward(&mut t, &vars, x).unwrap();
    assert!(t.value(out.map).data().iter().all(|&v| (0.0..=1.0).contains(&v)));

    let tinted = LightEncoder::<f32>::new(&NetworkConfig { light_tint: true, ..small(64, true) }, 0).unwrap();
    let mut t = Tape::<f32>::new();
    let vars = tinted.params.bind(&mut t, false);
    let x = t.constant(image(2, 64, 1));
    let out = tinted.forward(&mut t, &vars, x).unwrap();
    let tint = out.tint.unwrap();
    assert_eq!(t.shape(tint), [2, 3, 1, 1]);
    assert!(t.value(tint).data().iter().all(|&v| v == 1.0));
}

fn pose_loss(t: &mut Tape<f32>, enc: &PoseEncoder<f32>, vars: &[Var], x: &Tensor<f32>) -> Var {
    let xv = t.constant(x.clone());
    let p = enc.forward(t, vars, xv).unwrap();
    let target = t.constant(Tensor::from_fn([2, 6, 1, 1], |i| 0.1 * (i % 6) as f32 - 0.2));
    let d = t.sub(p, target).unwrap();
    let d = t.square(d).unwrap();
    t.mean(d).unwrap()
}

#[test]
fn pose_encoder_starts_at_identity_and_trains_end_to_end() {
    let mut enc = PoseEncoder::<f32>::new(&small(32, false), 5).unwrap();
    let x = image(2, 32, 6);
    let mut t = Tape::<f32>::new();
    let vars = enc.params.bind(&mut t, false);
    let xv = t.constant(x.clone());
    let p = enc.forward(&mut t, &vars, xv).unwrap();
    assert_eq!(t.shape(p), [2, 6, 1, 1]);
    assert!(t.value(p).data().iter().all(|&v| v == 0.0));

    // the zero head blocks gradient to earlier layers until it has moved once
    let mut opt = OptimState::new(AdamConfig::default());
    for step in 0..2 {
        let mut t = Tape::<f32>::new();
        let vars = enc.params.bind(&mut t, true);
        let l = pose_loss(&mut t, &enc, &vars, &x);
        let mut g = t.backward(l).unwrap();
        let grads: Vec<Option<Tensor<f32>>> = vars.iter().map(|&v| g.take(v)).collect();
        let first = grads[enc.params.index_of("conv1.weight").unwrap()].as_ref().unwrap();
        let reach = first.data().iter().any(|&v| v != 0.0);
        assert_eq!(reach, step > 0, "step {step}");
        adam_step(&mut enc.params, &grads, &mut opt).unwrap();
    }
}

#[test]
fn discriminator_pyramid_sizes() {
    let d = MultiScaleDiscriminators::<f32>::new(&small(64, true), 0).unwrap();
    assert_eq!(d.input_sizes(), [64, 32, 16]);
    let mut t = Tape::<f32>::new();
    let vars = d.bind(&mut t, false);
    let x = t.constant(image(1, 64, 2));
    let out = d.forward(&mut t, &vars, x).unwrap();
    let sizes: Vec<usize> = out.iter().map(|&o| t.shape(o)[2]).collect();
    assert_eq!(sizes, [4, 2, 1]);
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let net = AffUNet::<f32>::new(&small(32, true), 3, Head::Linear, 21).unwrap();
    save_params(dir.path(), &net.params).unwrap();
    let mut other = AffUNet::<f32>::new(&small(32, true), 3, Head::Linear, 22).unwrap();
    load_params(dir.path(), &mut other.params).unwrap();
    assert!(net.params.iter().zip(other.params.iter()).all(|(a, b)| a == b));

    // a wider net cannot load it and stays untouched
    let mut wide = AffUNet::<f32>::new(&NetworkConfig { base_width: 8, ..small(32, true) }, 3, Head::Linear, 23).unwrap();
    let before: ParamSet<f32> = wide.params.clone();
    assert!(load_params(dir.path(), &mut wide.params).is_err());
    assert!(wide.params.iter().zip(before.iter()).all(|(a, b)| a == b));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn output_shape_tracks_resolution(k in 1usize..5, batch in 1usize..3, out in 1usize..4) {
        let r = 8 * k;
        let net = AffUNet::<f32>::new(&NetworkConfig { base_width: 2, ..small(r, true) }, out, Head::Sigmoid, 0).unwrap();
        let mut t = Tape::<f32>::new();
        let vars = net.params.bind(&mut t, false);
        let x = t.constant(image(batch, r, 0));
        let y = net.forward(&mut t, &vars, x).unwrap();
        prop_assert_eq!(t.shape(y), &[batch, out, r, r]);
        prop_assert!(t.value(y).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
