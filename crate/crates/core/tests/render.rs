use affconv::geometry::{bundled_head, HeadParams, HeadShape, PositionMap, TriMesh};
use affconv::gradcheck::{check, DEFAULT_STEP};
use affconv::render::{overlay, rasterize_view, render, Camera, Pose};
use affconv::{Scalar, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn head_map(size: usize, seed: u64) -> PositionMap {
    HeadShape::new(&HeadParams {
        magnitude: 0.05,
        seed,
        ..HeadParams::default()
    })
    .unwrap()
    .position_map(size, size)
}

struct Shot<T> {
    image: Tensor<T>,
    coverage: Tensor<T>,
}

fn shoot<T: Scalar>(pm: &PositionMap, diffuse: Tensor<T>, light: Tensor<T>, pose: Pose, cam: &Camera) -> Shot<T> {
    let mut t = Tape::<T>::new();
    let (d, l) = (t.constant(diffuse), t.constant(light));
    let r = render(&mut t, &[pm], &bundled_head(), d, l, &[pose], cam, None).unwrap();
    Shot {
        image: t.value(r.image).clone(),
        coverage: r.coverage,
    }
}

fn covered_pixels<T: Scalar>(s: &Shot<T>) -> Vec<usize> {
    (0..s.coverage.numel()).filter(|&p| s.coverage.data()[p] != T::ZERO).collect()
}

#[test]
fn constant_diffuse_under_unit_light_is_exact() {
    let pm = head_map(64, 1);
    let cam = Camera::fit(64);
    for c in [0.0f32, 0.1, 0.37, 0.5, 0.999, 1.0] {
        for pose in [Pose::identity(), Pose::from_euler(0.4, -0.3, 0.1, [0.05, -0.02, 0.0])] {
            let s = shoot(&pm, Tensor::full([1, 3, 64, 64], c), Tensor::ones([1, 1, 8, 8]), pose, &cam);
            let px = covered_pixels(&s);
            assert!(px.len() > 500);
            for ch in 0..3 {
                for &p in &px {
                    assert_eq!(s.image.data()[ch * 64 * 64 + p], c);
                }
            }
        }
    }
}

#[test]
fn zero_light_renders_black() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pm = head_map(32, 2);
    let d = Tensor::<f64>::from_fn([1, 3, 32, 32], |_| rng.random_range(0.0..1.0));
    let s = shoot(&pm, d, Tensor::zeros([1, 1, 4, 4]), Pose::identity(), &Camera::fit(32));
    assert!(s.image.data().iter().all(|&v| v == 0.0));
}

#[test]
fn shading_scales_with_light() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pm = head_map(32, 3);
    let cam = Camera::fit(32);
    let d = Tensor::<f64>::from_fn([1, 3, 32, 32], |_| rng.random_range(0.0..0.5));
    let l = Tensor::<f64>::from_fn([1, 1, 4, 4], |_| rng.random_range(0.0..1.0));
    let a = shoot(&pm, d.clone(), l.clone(), Pose::identity(), &cam);
    let b = shoot(&pm, d, l.map(|v| 1.5 * v), Pose::identity(), &cam);
    assert!(a.image.map(|v| 1.5 * v).max_abs_diff(&b.image).unwrap() < 1e-12);
}

#[test]
fn appearance_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pm = head_map(32, 4);
    let cam = Camera::fit(24);
    let template = bundled_head();
    let pose = Pose::from_euler(0.2, 0.1, 0.0, [0.0; 3]);
    let d = Tensor::<f64>::from_fn([1, 3, 32, 32], |_| rng.random_range(0.1..0.6));
    let l = Tensor::<f64>::from_fn([1, 1, 4, 4], |_| rng.random_range(0.3..1.2));
    let reports = check(&[("diffuse", d), ("light", l)], DEFAULT_STEP, |t, v| {
        let r = render(t, &[&pm], &template, v[0], v[1], &[pose], &cam, None)?;
        let covered = r.coverage.data().iter().filter(|&&c| c != 0.0).count() as f64 * 3.0;
        let s = t.sum(r.image)?;
        t.scale(s, 1.0 / covered)
    })
    .unwrap();
    for r in &reports {
        assert!(r.grad_norm_inf > 0.0);
        assert!(r.passes(1e-4), "{r:?}");
    }
}

#[test]
fn translation_by_whole_pixels_shifts_the_image() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pm = head_map(64, 5);
    let cam = Camera {
        scale: 16.0,
        width: 64,
        height: 64,
    };
    let d = Tensor::<f64>::from_fn([1, 3, 64, 64], |_| rng.random_range(0.0..1.0));
    let l = Tensor::<f64>::ones([1, 1, 8, 8]);
    let base = shoot(&pm, d.clone(), l.clone(), Pose::identity(), &cam);
    // 3 px right and 2 px down in image space
    let moved = shoot(&pm, d, l, Pose::from_vec6([0.0, 0.0, 0.0, 3.0 / 16.0, -2.0 / 16.0, 0.0]), &cam);
    let (mut compared, mut mismatched) = (0, 0);
    for y in 0..62 {
        for x in 0..61 {
            let (p, q) = (y * 64 + x, (y + 2) * 64 + x + 3);
            let (a, b) = (base.coverage.data()[p] != 0.0, moved.coverage.data()[q] != 0.0);
            if a != b {
                mismatched += 1;
                continue;
            }
            if a {
                compared += 1;
                for ch in 0..3 {
                    let o = ch * 64 * 64;
                    assert!((base.image.data()[o + p] - moved.image.data()[o + q]).abs() < 1e-9);
                }
            }
        }
    }
    assert!(compared > 300);
    // rounding can flip pixels whose centres sit on a silhouette edge
    assert!(mismatched <= compared / 200, "{mismatched} of {compared}");
}

#[test]
fn nearest_surface_wins() {
    // two overlapping screen-space triangles; the later one is farther away
    let verts = vec![
        [-1.0, -1.0, 0.5],
        [1.0, -1.0, 0.5],
        [0.0, 1.0, 0.5],
        [-1.0, -1.0, -0.5],
        [1.0, -1.0, -0.5],
        [0.0, 1.0, -0.5],
    ];
    let uvs = vec![[0.1, 0.1], [0.2, 0.1], [0.1, 0.2], [0.8, 0.8], [0.9, 0.8], [0.8, 0.9]];
    let mesh = TriMesh::new(verts.clone(), uvs, vec![[0, 1, 2], [3, 4, 5]]).unwrap();
    let cam = Camera {
        scale: 8.0,
        width: 24,
        height: 24,
    };
    let v = rasterize_view(&verts, &[true; 6], &mesh, &cam).unwrap();
    assert!(v.covered() > 20);
    for p in 0..24 * 24 {
        if v.coverage[p] {
            assert_eq!(v.face[p], Some(0));
            assert!(v.uv[p][0] < 0.5);
        }
    }
    // swap depths: the other face takes over
    let flipped: Vec<[f64; 3]> = verts.iter().map(|p| [p[0], p[1], -p[2]]).collect();
    let v = rasterize_view(&flipped, &[true; 6], &mesh, &cam).unwrap();
    assert!(v.face.iter().flatten().all(|&f| f == 1));
}

#[test]
fn head_faces_the_camera() {
    let pm = head_map(64, 6);
    let cam = Camera::fit(64);
    let mut t = Tape::<f32>::new();
    let d = t.constant(Tensor::full([1, 3, 64, 64], 0.5));
    let l = t.constant(Tensor::ones([1, 1, 8, 8]));
    let r = render(&mut t, &[&pm], &bundled_head(), d, l, &[Pose::identity()], &cam, None).unwrap();
    let centre = 32 * 64 + 32;
    assert!(r.views[0].coverage[centre]);
    assert!(r.views[0].depth[centre] > 0.5);
    // the centre pixel looks at the middle of the face, u near 1/2
    assert!((r.views[0].uv[centre][0] - 0.5).abs() < 0.05);
}

#[test]
fn overlay_selects_per_pixel() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let shape = [2, 3, 5, 6];
    let r = Tensor::<f64>::from_fn(shape, |_| rng.random_range(0.0..1.0));
    let b = Tensor::<f64>::from_fn(shape, |_| rng.random_range(0.0..1.0));
    let m = Tensor::<f64>::from_fn([2, 1, 5, 6], |_| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
    let mut t = Tape::<f64>::new();
    let (rv, bv) = (t.constant(r.clone()), t.constant(b.clone()));
    let none = overlay(&mut t, rv, &Tensor::zeros([2, 1, 5, 6]), bv).unwrap();
    assert_eq!(t.value(none), &b);
    let all = overlay(&mut t, rv, &Tensor::ones([2, 1, 5, 6]), bv).unwrap();
    assert_eq!(t.value(all), &r);
    let o = overlay(&mut t, rv, &m, bv).unwrap();
    for i in 0..r.numel() {
        let mi = m.data()[(i / 90) * 30 + i % 30];
        let want = mi * r.data()[i] + (1.0 - mi) * b.data()[i];
        assert_eq!(t.value(o).data()[i], want);
    }
}

#[test]
fn bad_inputs_are_rejected() {
    let pm = head_map(16, 0);
    let mut t = Tape::<f32>::new();
    let d = t.constant(Tensor::zeros([1, 3, 16, 16]));
    let l = t.constant(Tensor::zeros([1, 1, 2, 2]));
    let cam = Camera::fit(16);
    assert!(render(&mut t, &[&pm], &bundled_head(), d, l, &[], &cam, None).is_err());
    let bad = t.constant(Tensor::zeros([1, 2, 16, 16]));
    assert!(render(&mut t, &[&pm], &bundled_head(), bad, l, &[Pose::identity()], &cam, None).is_err());
    assert!(Pose::from_vec6([4.0, 0.0, 0.0, 0.0, 0.0, 0.0]).validate().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn constant_colour_survives_any_pose(c in 0.0f32..=1.0, yaw in -0.6f64..0.6, pitch in -0.5f64..0.5, roll in -0.2f64..0.2, seed in 0u64..20) {
        let pm = head_map(32, seed);
        let s = shoot(&pm, Tensor::full([1, 3, 32, 32], c), Tensor::ones([1, 1, 4, 4]), Pose::from_euler(yaw, pitch, roll, [0.0; 3]), &Camera::fit(32));
        for p in covered_pixels(&s) {
            for ch in 0..3 {
                prop_assert_eq!(s.image.data()[ch * 32 * 32 + p], c);
            }
        }
    }

    #[test]
    fn euler_pose_round_trips_through_vec6(yaw in -1.0f64..1.0, pitch in -1.0f64..1.0, roll in -1.0f64..1.0) {
        let p = Pose::from_euler(yaw, pitch, roll, [0.1, 0.2, 0.3]);
        prop_assert!(p.validate().is_ok());
        let q = Pose::from_vec6(p.to_vec6());
        prop_assert_eq!(p, q);
        // rotations preserve length
        let v = [0.3, -0.4, 1.2];
        let w = Pose { translation: [0.0; 3], ..p }.apply(v);
        let n = |a: [f64; 3]| a.iter().map(|x| x * x).sum::<f64>();
        prop_assert!((n(v) - n(w)).abs() < 1e-12);
    }
}
