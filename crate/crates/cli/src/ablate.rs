//! Affine versus vanilla downsampling on the UV diffuse task.

use std::fs;
use std::path::Path;
use std::time::Instant;

use affconv::loss::l1_loss;
use affconv::networks::{AffUNet, Head, NetworkConfig};
use affconv::optim::{adam_step, AdamConfig, OptimState};
use affconv::Tape;
use anyhow::{Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{AblationConfig, RunConfig};
use crate::NumericalFailure;
use crate::data::{chunks, diffuse, images, stack, Batcher};
use crate::toyset::{load_toyset, Generator, ToyManifest, ToySample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub affine: bool,
    pub parameters: usize,
    pub predictor_parameters: usize,
    pub initial_held_out_l1: f64,
    pub held_out_l1: f64,
    pub train_l1_last: f64,
    /// `(step, held-out L1)` at each evaluation point.
    pub curve: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub affine: VariantReport,
    pub vanilla: VariantReport,
    /// `affine / vanilla` held-out L1.
    pub ratio: f64,
}

impl Comparison {
    pub fn new(affine: VariantReport, vanilla: VariantReport) -> Self {
        let ratio = affine.held_out_l1 / vanilla.held_out_l1;
        Self { affine, vanilla, ratio }
    }

    /// Relative gap `|a - v| / v`.
    pub fn gap(&self) -> f64 {
        (self.ratio - 1.0).abs()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub resolution: usize,
    pub config: AblationConfig,
    pub misaligned: Comparison,
    pub identity_pose: Comparison,
}

pub struct Split<'a> {
    pub train: &'a [ToySample],
    pub held_out: &'a [ToySample],
}

const EVAL_BATCH: usize = 10;

pub fn held_out_l1(net: &AffUNet<f32>, samples: &[ToySample]) -> Result<f64> {
    let mut total = 0.0;
    for idx in chunks(samples.len(), EVAL_BATCH) {
        let mut tape = Tape::<f32>::new();
        let vars = net.params.bind(&mut tape, false);
        let x = tape.constant(stack(samples, &idx, images)?);
        let y = tape.constant(stack(samples, &idx, diffuse)?);
        let p = net.forward(&mut tape, &vars, x)?;
        let l = l1_loss(&mut tape, p, y)?;
        total += tape.value(l).item()? as f64 * idx.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Cosine schedule from `lr` down to `lr * floor` over `total` steps.
pub fn cosine_lr(lr: f64, floor: f64, step: usize, total: usize) -> f64 {
    let t = step as f64 / total.max(1) as f64;
    lr * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
}

/// Train one diffuse network with plain L1 supervision.
pub fn train_variant(
    data: &Split,
    cfg: &AblationConfig,
    resolution: usize,
    affine: bool,
    seed: u64,
) -> Result<VariantReport> {
    let net_cfg = NetworkConfig {
        resolution,
        base_width: cfg.base_width,
        affine,
        ..NetworkConfig::default()
    };
    let mut net = AffUNet::<f32>::new(&net_cfg, 3, Head::Sigmoid, seed)?;
    let mut opt = OptimState::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batcher = Batcher::new(data.train.len());
    let initial = held_out_l1(&net, data.held_out)?;
    let mut curve = vec![(0, initial)];
    let mut last = f64::NAN;
    let started = Instant::now();
    for step in 1..=cfg.steps {
        opt.config.lr = cosine_lr(cfg.lr, cfg.final_lr_fraction, step - 1, cfg.steps);
        let idx = batcher.next(cfg.batch_size, &mut rng);
        let mut tape = Tape::<f32>::new();
        let vars = net.params.bind(&mut tape, true);
        let x = tape.constant(stack(data.train, &idx, images)?);
        let y = tape.constant(stack(data.train, &idx, diffuse)?);
        let p = net.forward(&mut tape, &vars, x)?;
        let l = l1_loss(&mut tape, p, y)?;
        last = tape.value(l).item()? as f64;
        if !last.is_finite() {
            return Err(NumericalFailure(format!("non-finite ablation loss at step {step}")).into());
        }
        let mut g = tape.backward(l)?;
        let grads: Vec<_> = vars.iter().map(|&v| g.take(v)).collect();
        adam_step(&mut net.params, &grads, &mut opt)?;
        if cfg.eval_every > 0 && step % cfg.eval_every == 0 && step != cfg.steps {
            curve.push((step, held_out_l1(&net, data.held_out)?));
        }
    }
    let held = held_out_l1(&net, data.held_out)?;
    curve.push((cfg.steps, held));
    eprintln!(
        "ablation {}: held-out L1 {initial:.5} -> {held:.5} in {:.1}s",
        if affine { "affine" } else { "vanilla" },
        started.elapsed().as_secs_f64()
    );
    Ok(VariantReport {
        affine,
        parameters: net.params.count(),
        predictor_parameters: net.predictor_params(),
        initial_held_out_l1: initial,
        held_out_l1: held,
        train_l1_last: last,
        curve,
    })
}

/// Both variants from the same seed on one dataset.
pub fn compare(data: &Split, cfg: &AblationConfig, resolution: usize, seed: u64) -> Result<Comparison> {
    let affine = train_variant(data, cfg, resolution, true, seed)?;
    let vanilla = train_variant(data, cfg, resolution, false, seed)?;
    Ok(Comparison::new(affine, vanilla))
}

/// `ablate-affconv`: compare the variants on the stored toy set and on an
/// identity-pose control set regenerated from the same seed, writing
/// `ablation.json`.
pub fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<AblationReport> {
    cfg.validate()?;
    let spec = &cfg.dataset;
    let total = spec.train + spec.held_out;
    let (manifest, samples) = load_toyset(&spec.path, total)?;
    let control = {
        let g = Generator::new(ToyManifest {
            identity_pose: true,
            ..manifest.clone()
        })?;
        (0..total).map(|i| g.sample(i)).collect::<Result<Vec<_>>>()?
    };
    let run = |s: &[ToySample]| {
        let split = Split {
            train: &s[..spec.train],
            held_out: &s[spec.train..],
        };
        compare(&split, &cfg.ablation, manifest.resolution, cfg.seed)
    };
    let report = AblationReport {
        seed: cfg.seed,
        resolution: manifest.resolution,
        config: cfg.ablation.clone(),
        misaligned: run(&samples)?,
        identity_pose: run(&control)?,
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("ablation.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}
