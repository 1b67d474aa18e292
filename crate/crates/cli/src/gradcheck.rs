//! Finite-difference suites for the affine convolution, the losses and the
//! renderer, plus zero-case checks for the losses.

use affconv::affconv::predict_affine_field;
use affconv::geometry::{bundled_head, bundled_head_params, HeadShape};
use affconv::gradcheck::{check, GroupReport, DEFAULT_STEP};
use affconv::loss::{
    auxiliary_diffuse_loss, discriminator_loss, generator_loss, l1_loss, masked_l1_loss, perceptual_loss,
    reconstruction_loss, std_loss, symmetry_loss, tv_loss, BlurParams, FeatureExtractor, LossWeights, FEATURE_SEED,
};
use affconv::networks::{MultiScaleDiscriminators, NetworkConfig};
use affconv::render::{render, Camera, Pose};
use affconv::{Tape, Tensor, Var};
use anyhow::{bail, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    Affconv,
    Losses,
    Renderer,
    All,
}

impl std::str::FromStr for Target {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "affconv" => Target::Affconv,
            "losses" => Target::Losses,
            "renderer" => Target::Renderer,
            "all" => Target::All,
            _ => bail!("unknown gradcheck target `{s}` (affconv, losses, renderer, all)"),
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Entry {
    pub suite: String,
    #[serde(flatten)]
    pub report: GroupReport,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ZeroCase {
    pub loss: String,
    pub value: f64,
    pub max_abs_grad: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub tolerance: f64,
    pub step: f64,
    pub groups: Vec<Entry>,
    pub zero_cases: Vec<ZeroCase>,
    pub passed: bool,
    /// `suite/group` names above tolerance.
    pub failures: Vec<String>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

struct Collector {
    groups: Vec<Entry>,
    zero_cases: Vec<ZeroCase>,
}

impl Collector {
    fn run<F>(&mut self, suite: &str, inputs: &[(&str, Tensor<f64>)], f: F) -> Result<()>
    where
        F: Fn(&mut Tape<f64>, &[Var]) -> affconv::Result<Var>,
    {
        for report in check(inputs, DEFAULT_STEP, f)? {
            self.groups.push(Entry {
                suite: suite.to_string(),
                passed: report.passes(TOLERANCE),
                report,
            });
        }
        Ok(())
    }

    /// Value and gradient of a loss at an input where it must vanish.
    fn zero<F>(&mut self, loss: &str, inputs: &[Tensor<f64>], f: F) -> Result<()>
    where
        F: Fn(&mut Tape<f64>, &[Var]) -> affconv::Result<Var>,
    {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let root = f(&mut tape, &vars)?;
        let value = tape.value(root).item()?;
        let g = tape.backward(root)?;
        let max_abs_grad = vars
            .iter()
            .filter_map(|&v| g.get(v))
            .flat_map(|t| t.data().iter().map(|x| x.abs()))
            .fold(0.0, f64::max);
        self.zero_cases.push(ZeroCase {
            loss: loss.to_string(),
            value,
            max_abs_grad,
            passed: value == 0.0 && max_abs_grad == 0.0,
        });
        Ok(())
    }
}

/// `(batch, cin, cout, size, kernel, stride)` per seed, up to `1x8x16x16`.
const AFFCONV_CASES: [(usize, usize, usize, usize, usize, usize); 5] = [
    (1, 3, 4, 9, 3, 1),
    (1, 4, 4, 12, 3, 2),
    (2, 2, 3, 8, 5, 1),
    (1, 8, 8, 16, 3, 2),
    (1, 8, 4, 16, 3, 1),
];

const PREDICTED_MAX_SIZE: usize = 8;

fn affconv_suite(c: &mut Collector) -> Result<()> {
    for (seed, &(b, cin, cout, size, k, stride)) in AFFCONV_CASES.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
        let pad = k / 2;
        let out = (size + 2 * pad - k) / stride + 1;
        let x = uniform(&mut rng, &[b, cin, size, size], -1.0, 1.0);
        let w = uniform(&mut rng, &[cout, cin, k, k], -0.5, 0.5);
        let bias = uniform(&mut rng, &[cout], -0.5, 0.5);
        // identity encoding plus a perturbation, so taps land off the grid
        let identity = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let field = Tensor::from_fn([b, 6, out, out], |i| {
            let ch = (i / (out * out)) % 6;
            identity[ch] + rng.random_range(-0.3..0.3)
        });
        let suite = format!("affconv/seed{seed}");
        c.run(
            &suite,
            &[("input", x.clone()), ("weight", w.clone()), ("bias", bias.clone()), ("field", field)],
            |t, v| {
                let y = t.affine_conv2d(v[0], v[1], Some(v[2]), v[3], stride, pad)?;
                let y = t.square(y)?;
                t.mean(y)
            },
        )?;
        // gradients flowing back through a predicted field; every predictor
        // weight moves all sample points, so a small map keeps bilinear kinks
        // out of the finite-difference step
        let small = size.min(PREDICTED_MAX_SIZE);
        let x = uniform(&mut rng, &[1, cin, small, small], -1.0, 1.0);
        let pw = uniform(&mut rng, &[6, cin, k, k], -0.05, 0.05);
        let pb = Tensor::from_fn([6], |i| identity[i] + rng.random_range(-0.2..0.2));
        c.run(
            &format!("{suite}/predicted"),
            &[("input", x), ("field.weight", pw), ("field.bias", pb)],
            |t, v| {
                let wv = t.constant(w.clone());
                let bv = t.constant(bias.clone());
                let f = predict_affine_field(t, v[0], v[1], v[2], stride, pad)?;
                let y = t.affine_conv2d(v[0], wv, Some(bv), f, stride, pad)?;
                let y = t.square(y)?;
                t.mean(y)
            },
        )?;
    }
    Ok(())
}

fn losses_suite(c: &mut Collector) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let r = 16;
    let img = |rng: &mut ChaCha8Rng| uniform(rng, &[1, 3, r, r], 0.0, 1.0);
    let blur = BlurParams::for_resolution(128);
    let fx = FeatureExtractor::<f64>::new(FEATURE_SEED);
    let (a, b) = (img(&mut rng), img(&mut rng));
    let mask = Tensor::from_fn([1, 1, r, r], |i| if (i * 7) % 5 < 3 { 1.0 } else { 0.0 });

    c.run("losses/l1", &[("a", a.clone()), ("b", b.clone())], |t, v| l1_loss(t, v[0], v[1]))?;
    c.run("losses/masked-l1", &[("a", a.clone()), ("b", b.clone())], |t, v| {
        masked_l1_loss(t, v[0], v[1], &mask)
    })?;
    c.run("losses/reconstruction", &[("image", a.clone()), ("rendered", b.clone())], |t, v| {
        let p = t.constant(Tensor::from_fn([1, 3, 4, 4], |i| i as f64 * 0.1));
        let q = t.constant(Tensor::from_fn([1, 3, 4, 4], |i| 1.0 - i as f64 * 0.07));
        reconstruction_loss(t, v[0], v[1], p, q, None, &LossWeights::default())
    })?;
    c.run("losses/perceptual", &[("a", a.clone()), ("b", b.clone())], |t, v| {
        perceptual_loss(t, &fx, v[0], v[1], 1.0)
    })?;
    c.run("losses/symmetry", &[("diffuse", a.clone())], |t, v| symmetry_loss(t, v[0], 1.0, blur))?;
    c.run("losses/std", &[("image", a.clone())], |t, v| std_loss(t, v[0], &mask, 1.0, blur))?;
    let light = uniform(&mut rng, &[2, 1, 6, 6], 0.0, 1.0);
    c.run("losses/tv", &[("light", light)], |t, v| tv_loss(t, v[0], 1.0))?;
    c.run("losses/aux", &[("diffuse", a.clone()), ("gt", b.clone())], |t, v| {
        auxiliary_diffuse_loss(t, &fx, v[0], Some(v[1]))
    })?;
    let net = NetworkConfig {
        resolution: r,
        base_width: 2,
        ..NetworkConfig::default()
    };
    let discs = MultiScaleDiscriminators::<f64>::new(&net, 3)?;
    c.run("losses/adversarial-generator", &[("fake", a.clone())], |t, v| {
        generator_loss(t, &discs, v[0], 1.0)
    })?;
    let disc_inputs: Vec<(String, Tensor<f64>)> = discs
        .nets
        .iter()
        .enumerate()
        .flat_map(|(k, d)| d.params.iter().map(move |(n, p)| (format!("disc{k}.{n}"), p.clone())))
        .collect();
    let named: Vec<(&str, Tensor<f64>)> = disc_inputs.iter().map(|(n, t)| (n.as_str(), t.clone())).collect();
    let counts: Vec<usize> = discs.nets.iter().map(|d| d.params.len()).collect();
    c.run("losses/adversarial-discriminator", &named, |t, v| {
        let (v0, rest) = v.split_at(counts[0]);
        let (v1, v2) = rest.split_at(counts[1]);
        let vars = [v0.to_vec(), v1.to_vec(), v2.to_vec()];
        let real = t.constant(a.clone());
        let fake = t.constant(b.clone());
        discriminator_loss(t, &discs, &vars, real, fake, 1.0)
    })?;

    // zero cases
    let flat = Tensor::full([1, 3, r, r], 0.4);
    let mirrored = {
        let half = img(&mut rng);
        Tensor::from_fn([1, 3, r, r], |i| {
            let x = i % r;
            let x = x.min(r - 1 - x);
            half.data()[i - i % r + x]
        })
    };
    c.zero("tv(constant)", &[Tensor::full([1, 1, 8, 8], 0.7)], |t, v| tv_loss(t, v[0], 1.0))?;
    c.zero("symmetry(mirror-symmetric)", &[mirrored], |t, v| symmetry_loss(t, v[0], 1.0, blur))?;
    c.zero("std(constant)", &[flat], |t, v| std_loss(t, v[0], &mask, 1.0, blur))?;
    c.zero("l1(x,x)", &[a.clone(), a.clone()], |t, v| l1_loss(t, v[0], v[1]))?;
    c.zero("perceptual(x,x)", &[a.clone(), a], |t, v| perceptual_loss(t, &fx, v[0], v[1], 1.0))?;
    Ok(())
}

fn renderer_suite(c: &mut Collector) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let template = bundled_head();
    let head = HeadShape::new(&bundled_head_params())?;
    let uv = 32;
    let pm = head.position_map(uv, uv);
    let cam = Camera::fit(24);
    let pose = Pose::from_euler(0.3, -0.2, 0.1, [0.02, -0.03, 0.0]);
    let diffuse = uniform(&mut rng, &[1, 3, uv, uv], 0.0, 1.0);
    let light = uniform(&mut rng, &[1, 1, uv / 8, uv / 8], 0.2, 1.0);
    let weights = uniform(&mut rng, &[1, 3, cam.height, cam.width], -1.0, 1.0);
    c.run("renderer", &[("diffuse", diffuse), ("light", light)], |t, v| {
        let r = render(t, &[&pm], &template, v[0], v[1], &[pose], &cam, None)?;
        let w = t.constant(weights.clone());
        let y = t.mul(r.image, w)?;
        t.sum(y)
    })?;
    Ok(())
}

pub fn run(target: Target) -> Result<Report> {
    let mut c = Collector {
        groups: Vec::new(),
        zero_cases: Vec::new(),
    };
    if matches!(target, Target::Affconv | Target::All) {
        affconv_suite(&mut c)?;
    }
    if matches!(target, Target::Losses | Target::All) {
        losses_suite(&mut c)?;
    }
    if matches!(target, Target::Renderer | Target::All) {
        renderer_suite(&mut c)?;
    }
    let mut failures: Vec<String> = c
        .groups
        .iter()
        .filter(|e| !e.passed)
        .map(|e| format!("{}/{}", e.suite, e.report.group))
        .collect();
    failures.extend(c.zero_cases.iter().filter(|z| !z.passed).map(|z| format!("zero-case/{}", z.loss)));
    Ok(Report {
        tolerance: TOLERANCE,
        step: DEFAULT_STEP,
        passed: failures.is_empty(),
        groups: c.groups,
        zero_cases: c.zero_cases,
        failures,
    })
}
