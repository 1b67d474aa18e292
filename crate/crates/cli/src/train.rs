//! Three-stage training on the toy set.
//!
//! Stage 1 fits the position network to ground-truth position maps. Stage 2
//! freezes it and trains the diffuse, light and pose networks through the
//! renderer. Stage 3 fine-tunes everything jointly and adds the
//! multi-scale adversarial terms, alternating one generator and one
//! discriminator update.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use affconv::geometry::{bundled_head, PositionMap, TriMesh};
use affconv::loss::{
    auxiliary_diffuse_loss, discriminator_loss, generator_loss, l1_loss, masked_l1_loss, perceptual_loss,
    std_loss, symmetry_loss, tv_loss, BlurParams, FeatureExtractor, FEATURE_SEED,
};
use affconv::networks::{load_params, save_params, AffUNet, Head, LightEncoder, MultiScaleDiscriminators, PoseEncoder};
use affconv::nn::ParamSet;
use affconv::optim::{adam_step, OptimState};
use affconv::render::{overlay, render, Camera, Pose};
use affconv::{Tape, Tensor, Var};
use anyhow::{bail, Context, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, StdTarget};
use crate::data::{chunks, diffuse, images, position_masks, positions, poses, stack, Batcher};
use crate::toyset::{load_toyset, ToySample};
use crate::NumericalFailure;

/// Weight of the direct pose supervision used in place of pose gradients
/// through the rasteriser.
pub const POSE_WEIGHT: f64 = 1.0;

const EVAL_BATCH: usize = 10;

/// All networks of the pipeline.
#[derive(Clone, Debug)]
pub struct Models {
    pub position: AffUNet<f32>,
    pub diffuse: AffUNet<f32>,
    pub light: LightEncoder<f32>,
    pub pose: PoseEncoder<f32>,
    pub discs: MultiScaleDiscriminators<f32>,
}

impl Models {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let n = &cfg.network;
        let s = cfg.seed;
        Ok(Self {
            position: AffUNet::new(n, 3, Head::Linear, s.wrapping_add(1))?,
            diffuse: AffUNet::new(n, 3, Head::Sigmoid, s.wrapping_add(2))?,
            light: LightEncoder::new(n, s.wrapping_add(3))?,
            pose: PoseEncoder::new(n, s.wrapping_add(4))?,
            discs: MultiScaleDiscriminators::new(n, s.wrapping_add(5))?,
        })
    }

    fn sets(&self) -> Vec<(&'static str, &ParamSet<f32>)> {
        let [d0, d1, d2] = &self.discs.nets;
        vec![
            ("position", &self.position.params),
            ("diffuse", &self.diffuse.params),
            ("light", &self.light.params),
            ("pose", &self.pose.params),
            ("disc0", &d0.params),
            ("disc1", &d1.params),
            ("disc2", &d2.params),
        ]
    }

    fn sets_mut(&mut self) -> Vec<(&'static str, &mut ParamSet<f32>)> {
        let [d0, d1, d2] = &mut self.discs.nets;
        vec![
            ("position", &mut self.position.params),
            ("diffuse", &mut self.diffuse.params),
            ("light", &mut self.light.params),
            ("pose", &mut self.pose.params),
            ("disc0", &mut d0.params),
            ("disc1", &mut d1.params),
            ("disc2", &mut d2.params),
        ]
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        for (name, p) in self.sets() {
            save_params(dir.join(name), p).with_context(|| format!("saving {name} to {}", dir.display()))?;
        }
        Ok(())
    }

    pub fn load(&mut self, dir: &Path) -> Result<()> {
        for (name, p) in self.sets_mut() {
            load_params(dir.join(name), p).with_context(|| format!("loading {name} from {}", dir.display()))?;
        }
        Ok(())
    }

    /// Bitwise equality of every parameter.
    pub fn identical(&self, other: &Models) -> bool {
        self.sets()
            .iter()
            .zip(other.sets())
            .all(|((_, a), (_, b))| a.iter().zip(b.iter()).all(|((_, x), (_, y))| x.data() == y.data()))
    }
}

#[derive(Clone, Debug)]
struct Optims {
    position: OptimState<f32>,
    diffuse: OptimState<f32>,
    light: OptimState<f32>,
    pose: OptimState<f32>,
    discs: [OptimState<f32>; 3],
}

impl Optims {
    fn new(cfg: &RunConfig) -> Self {
        let o = || OptimState::new(cfg.adam);
        Self {
            position: o(),
            diffuse: o(),
            light: o(),
            pose: o(),
            discs: [o(), o(), o()],
        }
    }
}

/// Scalar losses of one step, unweighted terms already multiplied by their
/// lambdas. Terms absent from a stage are zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub total: f64,
    pub position: f64,
    pub image: f64,
    pub perceptual: f64,
    pub symmetry: f64,
    pub std: f64,
    pub tv: f64,
    pub aux: f64,
    pub pose: f64,
    pub adv_g: f64,
    pub adv_d: f64,
}

impl StepLosses {
    const HEADER: &'static str = "stage,epoch,step,total,position,image,perceptual,symmetry,std,tv,aux,pose,adv_g,adv_d";

    fn values(&self) -> [f64; 11] {
        [
            self.total,
            self.position,
            self.image,
            self.perceptual,
            self.symmetry,
            self.std,
            self.tv,
            self.aux,
            self.pose,
            self.adv_g,
            self.adv_d,
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub stage: usize,
    pub epoch: usize,
    pub step: usize,
    pub losses: StepLosses,
}

/// Append-only CSV of per-step losses, flushed after every row.
pub struct MetricsLog {
    out: BufWriter<File>,
}

impl MetricsLog {
    pub fn open(path: &Path) -> Result<Self> {
        let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("opening metrics log {}", path.display()))?;
        let mut log = Self { out: BufWriter::new(file) };
        if fresh {
            writeln!(log.out, "{}", StepLosses::HEADER)?;
            log.out.flush()?;
        }
        Ok(log)
    }

    pub fn append(&mut self, r: &StepRecord) -> Result<()> {
        write!(self.out, "{},{},{}", r.stage, r.epoch, r.step)?;
        for v in r.losses.values() {
            write!(self.out, ",{v}")?;
        }
        writeln!(self.out)?;
        self.out.flush()?;
        Ok(())
    }
}

/// Held-out evaluation. `rendered_l1` compares the render of predicted
/// geometry, diffuse and light under the ground-truth pose with the input
/// over covered pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub position_l1: f64,
    pub diffuse_l1: f64,
    pub rendered_l1: f64,
    pub pose_l1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: usize,
    pub steps: usize,
    pub start: EvalMetrics,
    /// Held-out metrics after each epoch.
    pub epochs: Vec<EvalMetrics>,
    pub end: EvalMetrics,
    /// Mean training losses per epoch.
    pub epoch_losses: Vec<StepLosses>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub stages: Vec<StageReport>,
    pub final_eval: EvalMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub stage: usize,
    pub epoch: usize,
    pub seed: u64,
    pub config: RunConfig,
}

pub struct Dataset {
    pub train: Vec<ToySample>,
    pub held_out: Vec<ToySample>,
}

impl Dataset {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let spec = &cfg.dataset;
        let (manifest, mut samples) = load_toyset(&spec.path, spec.train + spec.held_out)?;
        if manifest.resolution != cfg.resolution {
            bail!(
                "toy set resolution {} does not match run resolution {}",
                manifest.resolution,
                cfg.resolution
            );
        }
        let held_out = samples.split_off(spec.train);
        Ok(Self { train: samples, held_out })
    }

    pub fn from_samples(mut samples: Vec<ToySample>, train: usize) -> Self {
        let held_out = samples.split_off(train);
        Self { train: samples, held_out }
    }
}

/// Everything that evolves during training. Cloning forks a run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: RunConfig,
    pub models: Models,
    opts: Optims,
    fx: FeatureExtractor<f32>,
    template: TriMesh,
    camera: Camera,
    blur: BlurParams,
    /// Training samples whose diffuse ground truth feeds the auxiliary loss.
    aux: Vec<bool>,
}

fn scalar(tape: &Tape<f32>, v: Var) -> Result<f64> {
    Ok(tape.value(v).item()? as f64)
}

fn sum_vars(tape: &mut Tape<f32>, vs: &[Var]) -> Result<Var> {
    let mut acc = vs[0];
    for &v in &vs[1..] {
        acc = tape.add(acc, v)?;
    }
    Ok(acc)
}

fn take_grads(g: &mut affconv::Gradients<f32>, vars: &[Var]) -> Vec<Option<Tensor<f32>>> {
    vars.iter().map(|&v| g.take(v)).collect()
}

fn gt_poses(samples: &[ToySample], idx: &[usize]) -> Vec<Pose> {
    idx.iter().map(|&i| samples[i].meta.pose).collect()
}

/// Per-sample position maps from a batched network output, restricted to
/// the chart texels of each sample.
fn geometry(pred: &Tensor<f32>, samples: &[ToySample], idx: &[usize]) -> Result<Vec<PositionMap>> {
    idx.iter()
        .enumerate()
        .map(|(b, &i)| Ok(PositionMap::from_tensor(&pred.batch_slice(b, b + 1)?, samples[i].position.valid.clone())?))
        .collect()
}

struct Appearance {
    total: Var,
    over: Var,
}

impl Trainer {
    pub fn new(cfg: RunConfig, train_len: usize) -> Result<Self> {
        cfg.validate()?;
        let models = Models::new(&cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(u64::MAX);
        let mut order: Vec<usize> = (0..train_len).collect();
        order.shuffle(&mut rng);
        let n_aux = (cfg.aux_fraction * train_len as f64).round() as usize;
        let mut aux = vec![false; train_len];
        for &i in &order[..n_aux] {
            aux[i] = true;
        }
        Ok(Self {
            opts: Optims::new(&cfg),
            fx: FeatureExtractor::new(FEATURE_SEED),
            template: bundled_head(),
            camera: Camera::fit(cfg.resolution),
            blur: BlurParams::for_resolution(cfg.resolution),
            aux,
            models,
            cfg,
        })
    }

    pub fn aux_count(&self) -> usize {
        self.aux.iter().filter(|&&a| a).count()
    }

    fn stage1_step(&mut self, data: &[ToySample], idx: &[usize]) -> Result<StepLosses> {
        let mut tape = Tape::<f32>::new();
        let pv = self.models.position.params.bind(&mut tape, true);
        let x = tape.constant(stack(data, idx, images)?);
        let gt = tape.constant(stack(data, idx, positions)?);
        let mask: Tensor<f32> = stack(data, idx, position_masks)?;
        let p = self.models.position.forward(&mut tape, &pv, x)?;
        let l = masked_l1_loss(&mut tape, p, gt, &mask)?;
        let l = tape.scale(l, self.cfg.weights.l1p)?;
        let v = scalar(&tape, l)?;
        let losses = StepLosses {
            total: v,
            position: v,
            ..StepLosses::default()
        };
        if !losses.all_finite() {
            return Ok(losses);
        }
        let mut g = tape.backward(l)?;
        adam_step(&mut self.models.position.params, &take_grads(&mut g, &pv), &mut self.opts.position)?;
        Ok(losses)
    }

    /// Appearance objective on `x` rendered with `geo`; adds each term to `out`.
    #[allow(clippy::too_many_arguments)]
    fn appearance(
        &self,
        tape: &mut Tape<f32>,
        vars: [&[Var]; 3],
        x: Var,
        geo: &[PositionMap],
        data: &[ToySample],
        idx: &[usize],
        adv: bool,
        out: &mut StepLosses,
    ) -> Result<Appearance> {
        let w = self.cfg.weights;
        let [dv, lv, pv] = vars;
        let d = self.models.diffuse.forward(tape, dv, x)?;
        let light = self.models.light.forward(tape, lv, x)?;
        let pz = self.models.pose.forward(tape, pv, x)?;
        let refs: Vec<&PositionMap> = geo.iter().collect();
        let r = render(tape, &refs, &self.template, d, light.map, &gt_poses(data, idx), &self.camera, light.tint)?;
        let over = overlay(tape, r.image, &r.coverage, x)?;

        let mut terms = Vec::new();
        let mut add = |tape: &Tape<f32>, v: Var, slot: &mut f64| -> Result<()> {
            *slot = scalar(tape, v)?;
            terms.push(v);
            Ok(())
        };
        let li = l1_loss(tape, over, x)?;
        let li = tape.scale(li, w.l1d)?;
        add(tape, li, &mut out.image)?;
        let lp = perceptual_loss(tape, &self.fx, over, x, w.perc)?;
        add(tape, lp, &mut out.perceptual)?;
        let ls = symmetry_loss(tape, d, w.sym, self.blur)?;
        add(tape, ls, &mut out.symmetry)?;
        let lstd = match self.cfg.std_target {
            StdTarget::Diffuse => {
                let skin = data[idx[0]].skin_mask.clone();
                std_loss(tape, d, &skin, w.std, self.blur)?
            }
            StdTarget::Rendered => std_loss(tape, over, &r.coverage, w.std, self.blur)?,
        };
        add(tape, lstd, &mut out.std)?;
        let ltv = tv_loss(tape, light.map, w.tv)?;
        add(tape, ltv, &mut out.tv)?;

        let aux_idx: Vec<usize> = idx.iter().copied().filter(|&i| self.aux.get(i) == Some(&true)).collect();
        if !aux_idx.is_empty() {
            let xa = tape.constant(stack(data, &aux_idx, images)?);
            let gt = tape.constant(stack(data, &aux_idx, diffuse)?);
            let da = self.models.diffuse.forward(tape, dv, xa)?;
            let la = auxiliary_diffuse_loss(tape, &self.fx, da, Some(gt))?;
            add(tape, la, &mut out.aux)?;
        }

        let b = idx.len();
        let pz = tape.reshape(pz, &[b, 6])?;
        let pgt = tape.constant(stack(data, idx, poses)?);
        let lpose = l1_loss(tape, pz, pgt)?;
        let lpose = tape.scale(lpose, POSE_WEIGHT)?;
        add(tape, lpose, &mut out.pose)?;

        if adv {
            let lg = generator_loss(tape, &self.models.discs, over, w.adv)?;
            add(tape, lg, &mut out.adv_g)?;
        }
        let total = sum_vars(tape, &terms)?;
        Ok(Appearance { total, over })
    }

    fn stage2_step(&mut self, data: &[ToySample], idx: &[usize]) -> Result<StepLosses> {
        let x_val: Tensor<f32> = stack(data, idx, images)?;
        let geo = {
            let mut tape = Tape::<f32>::new();
            let pv = self.models.position.params.bind(&mut tape, false);
            let x = tape.constant(x_val.clone());
            let p = self.models.position.forward(&mut tape, &pv, x)?;
            geometry(tape.value(p), data, idx)?
        };
        let mut tape = Tape::<f32>::new();
        let dv = self.models.diffuse.params.bind(&mut tape, true);
        let lv = self.models.light.params.bind(&mut tape, true);
        let pv = self.models.pose.params.bind(&mut tape, true);
        let x = tape.constant(x_val);
        let mut losses = StepLosses::default();
        let a = self.appearance(&mut tape, [&dv, &lv, &pv], x, &geo, data, idx, false, &mut losses)?;
        losses.total = scalar(&tape, a.total)?;
        if !losses.all_finite() {
            return Ok(losses);
        }
        let mut g = tape.backward(a.total)?;
        let m = &mut self.models;
        adam_step(&mut m.diffuse.params, &take_grads(&mut g, &dv), &mut self.opts.diffuse)?;
        adam_step(&mut m.light.params, &take_grads(&mut g, &lv), &mut self.opts.light)?;
        adam_step(&mut m.pose.params, &take_grads(&mut g, &pv), &mut self.opts.pose)?;
        Ok(losses)
    }

    /// Joint generator update, then (when `adversarial`) one discriminator
    /// update against the pre-update render.
    fn stage3_step(&mut self, data: &[ToySample], idx: &[usize], adversarial: bool) -> Result<StepLosses> {
        let mut tape = Tape::<f32>::new();
        let posv = self.models.position.params.bind(&mut tape, true);
        let dv = self.models.diffuse.params.bind(&mut tape, true);
        let lv = self.models.light.params.bind(&mut tape, true);
        let pv = self.models.pose.params.bind(&mut tape, true);
        let x = tape.constant(stack(data, idx, images)?);
        let gt = tape.constant(stack(data, idx, positions)?);
        let mask: Tensor<f32> = stack(data, idx, position_masks)?;
        let p = self.models.position.forward(&mut tape, &posv, x)?;
        let geo = geometry(tape.value(p), data, idx)?;
        let lpos = masked_l1_loss(&mut tape, p, gt, &mask)?;
        let lpos = tape.scale(lpos, self.cfg.weights.l1p)?;
        let mut losses = StepLosses {
            position: scalar(&tape, lpos)?,
            ..StepLosses::default()
        };
        let a = self.appearance(&mut tape, [&dv, &lv, &pv], x, &geo, data, idx, adversarial, &mut losses)?;
        let total = tape.add(a.total, lpos)?;
        losses.total = scalar(&tape, total)?;
        let fake = tape.value(a.over).clone();
        if !losses.all_finite() {
            return Ok(losses);
        }
        let mut g = tape.backward(total)?;
        let m = &mut self.models;
        adam_step(&mut m.position.params, &take_grads(&mut g, &posv), &mut self.opts.position)?;
        adam_step(&mut m.diffuse.params, &take_grads(&mut g, &dv), &mut self.opts.diffuse)?;
        adam_step(&mut m.light.params, &take_grads(&mut g, &lv), &mut self.opts.light)?;
        adam_step(&mut m.pose.params, &take_grads(&mut g, &pv), &mut self.opts.pose)?;

        if adversarial {
            let mut tape = Tape::<f32>::new();
            let vars = self.models.discs.bind(&mut tape, true);
            let real = tape.constant(stack(data, idx, images)?);
            let fake = tape.constant(fake);
            let ld = discriminator_loss(&mut tape, &self.models.discs, &vars, real, fake, self.cfg.weights.adv)?;
            losses.adv_d = scalar(&tape, ld)?;
            if !losses.all_finite() {
                return Ok(losses);
            }
            let mut g = tape.backward(ld)?;
            for k in 0..3 {
                let grads = take_grads(&mut g, &vars[k]);
                adam_step(&mut self.models.discs.nets[k].params, &grads, &mut self.opts.discs[k])?;
            }
        }
        Ok(losses)
    }

    /// Held-out metrics with every network frozen.
    pub fn evaluate(&self, samples: &[ToySample]) -> Result<EvalMetrics> {
        let mut acc = [0.0; 4];
        for idx in chunks(samples.len(), EVAL_BATCH) {
            let mut tape = Tape::<f32>::new();
            let m = &self.models;
            let posv = m.position.params.bind(&mut tape, false);
            let dv = m.diffuse.params.bind(&mut tape, false);
            let lv = m.light.params.bind(&mut tape, false);
            let pv = m.pose.params.bind(&mut tape, false);
            let x = tape.constant(stack(samples, &idx, images)?);
            let pgt = tape.constant(stack(samples, &idx, positions)?);
            let mask: Tensor<f32> = stack(samples, &idx, position_masks)?;
            let dgt = tape.constant(stack(samples, &idx, diffuse)?);
            let posegt = tape.constant(stack(samples, &idx, poses)?);

            let p = m.position.forward(&mut tape, &posv, x)?;
            let lp = masked_l1_loss(&mut tape, p, pgt, &mask)?;
            let d = m.diffuse.forward(&mut tape, &dv, x)?;
            let ld = l1_loss(&mut tape, d, dgt)?;
            let light = m.light.forward(&mut tape, &lv, x)?;
            let geo = geometry(tape.value(p), samples, &idx)?;
            let refs: Vec<&PositionMap> = geo.iter().collect();
            let poses_gt = gt_poses(samples, &idx);
            let r = render(&mut tape, &refs, &self.template, d, light.map, &poses_gt, &self.camera, light.tint)?;
            let lr = masked_l1_loss(&mut tape, r.image, x, &r.coverage)?;
            let pz = m.pose.forward(&mut tape, &pv, x)?;
            let pz = tape.reshape(pz, &[idx.len(), 6])?;
            let lpose = l1_loss(&mut tape, pz, posegt)?;
            for (a, v) in acc.iter_mut().zip([lp, ld, lr, lpose]) {
                *a += scalar(&tape, v)? * idx.len() as f64;
            }
        }
        let n = samples.len() as f64;
        Ok(EvalMetrics {
            position_l1: acc[0] / n,
            diffuse_l1: acc[1] / n,
            rendered_l1: acc[2] / n,
            pose_l1: acc[3] / n,
        })
    }

    pub fn steps_per_epoch(&self, train_len: usize) -> usize {
        if self.cfg.steps_per_epoch > 0 {
            self.cfg.steps_per_epoch
        } else {
            train_len.div_ceil(self.cfg.batch_size)
        }
    }

    /// Run one stage from fresh optimizer state. Each stage draws its batches
    /// from its own stream of the run seed, so a stage resumed from a
    /// checkpoint in a new process follows the same trajectory.
    pub fn run_stage(
        &mut self,
        stage: usize,
        data: &Dataset,
        adversarial: bool,
        mut sink: impl FnMut(&StepRecord, &Models) -> Result<()>,
        mut on_epoch: impl FnMut(usize, &Models) -> Result<()>,
    ) -> Result<StageReport> {
        if !(1..=3).contains(&stage) {
            bail!("stage must be 1, 2 or 3, got {stage}");
        }
        self.opts = Optims::new(&self.cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(stage as u64);
        let mut batcher = Batcher::new(data.train.len());
        let epochs = self.cfg.epochs[stage - 1];
        let per_epoch = self.steps_per_epoch(data.train.len());
        let start = self.evaluate(&data.held_out)?;
        let mut report = StageReport {
            stage,
            steps: 0,
            start,
            epochs: Vec::new(),
            end: start,
            epoch_losses: Vec::new(),
        };
        for epoch in 1..=epochs {
            let mut mean = [0.0; 11];
            for _ in 0..per_epoch {
                let idx = batcher.next(self.cfg.batch_size, &mut rng);
                let losses = match stage {
                    1 => self.stage1_step(&data.train, &idx)?,
                    2 => self.stage2_step(&data.train, &idx)?,
                    _ => self.stage3_step(&data.train, &idx, adversarial)?,
                };
                report.steps += 1;
                let record = StepRecord {
                    stage,
                    epoch,
                    step: report.steps,
                    losses,
                };
                sink(&record, &self.models)?;
                if !losses.all_finite() {
                    return Err(NumericalFailure(format!(
                        "non-finite loss in stage {stage}, epoch {epoch}, step {}: {losses:?}",
                        report.steps
                    ))
                    .into());
                }
                for (m, v) in mean.iter_mut().zip(losses.values()) {
                    *m += v / per_epoch as f64;
                }
            }
            let [total, position, image, perceptual, symmetry, std, tv, aux, pose, adv_g, adv_d] = mean;
            report.epoch_losses.push(StepLosses {
                total,
                position,
                image,
                perceptual,
                symmetry,
                std,
                tv,
                aux,
                pose,
                adv_g,
                adv_d,
            });
            report.epochs.push(self.evaluate(&data.held_out)?);
            on_epoch(epoch, &self.models)?;
        }
        report.end = report.epochs.last().copied().unwrap_or(start);
        Ok(report)
    }
}

/// Which stages a `train` invocation runs.
pub fn parse_stages(s: &str) -> Result<Vec<usize>> {
    match s {
        "all" => Ok(vec![1, 2, 3]),
        "1" | "2" | "3" => Ok(vec![s.parse()?]),
        _ => bail!("--stage must be 1, 2, 3 or all, got `{s}`"),
    }
}

fn stage_dir(out: &Path, stage: usize) -> PathBuf {
    out.join(format!("stage{stage}"))
}

fn write_checkpoint(dir: &Path, models: &Models, manifest: &CheckpointManifest) -> Result<()> {
    // write next to the target and swap, so an interrupted save keeps the old one
    let tmp = dir.with_extension("tmp");
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    models.save(&tmp)?;
    fs::write(tmp.join("manifest.json"), serde_json::to_string_pretty(manifest)?)?;
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(&tmp, dir)?;
    Ok(())
}

/// `train`: run the requested stages, writing `metrics.csv`, per-epoch
/// checkpoints under `stage{k}/last`, `stage{k}/final` and `report.json`.
pub fn cmd_train(cfg: RunConfig, out: &Path, stages: &[usize]) -> Result<TrainReport> {
    cfg.validate()?;
    let data = Dataset::load(&cfg)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut trainer = Trainer::new(cfg.clone(), data.train.len())?;
    let first = stages[0];
    if first > 1 {
        let prev = stage_dir(out, first - 1).join("final");
        if !prev.join("manifest.json").exists() {
            bail!("stage {first} needs the stage {} checkpoint at {}", first - 1, prev.display());
        }
        trainer.models.load(&prev)?;
    }
    let mut log = MetricsLog::open(&out.join("metrics.csv"))?;
    let mut report = TrainReport {
        seed: cfg.seed,
        stages: Vec::new(),
        final_eval: trainer.evaluate(&data.held_out)?,
    };
    for &stage in stages {
        let dir = stage_dir(out, stage);
        let manifest = |epoch| CheckpointManifest {
            stage,
            epoch,
            seed: cfg.seed,
            config: cfg.clone(),
        };
        let r = trainer.run_stage(
            stage,
            &data,
            true,
            |rec, _| log.append(rec),
            |epoch, models| write_checkpoint(&dir.join("last"), models, &manifest(epoch)),
        )?;
        write_checkpoint(&dir.join("final"), &trainer.models, &manifest(cfg.epochs[stage - 1]))?;
        eprintln!(
            "stage {stage}: {} steps, held-out position {:.5} -> {:.5}, diffuse {:.5} -> {:.5}, rendered {:.5} -> {:.5}",
            r.steps,
            r.start.position_l1,
            r.end.position_l1,
            r.start.diffuse_l1,
            r.end.diffuse_l1,
            r.start.rendered_l1,
            r.end.rendered_l1
        );
        report.final_eval = r.end;
        report.stages.push(r);
    }
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}
