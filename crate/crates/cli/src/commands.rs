//! Artifact commands: position maps, renders and microbenchmarks.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use affconv::geometry::{bundled_head, load_obj, round_trip, PreviewNormalization, RoundTrip};
use affconv::image_io::{save_gray_png, save_rgb_png};
use affconv::nn::he_uniform;
use affconv::render::{overlay, render, Camera};
use affconv::{Tape, Tensor};
use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::data::images;
use crate::toyset::{load_manifest, load_sample, sample_dir, Generator};
use crate::train::Models;

#[derive(Clone, Debug, Serialize)]
pub struct PosmapSummary {
    pub mesh: String,
    pub vertices: usize,
    pub faces: usize,
    pub round_trip: RoundTrip,
    pub preview: PreviewNormalization,
}

/// `posmap`: rasterise a mesh into `position.atsr`, `position_mask.atsr`, a
/// normalised 16-bit preview and `posmap.json`.
pub fn cmd_posmap(mesh: Option<&Path>, resolution: usize, out: &Path) -> Result<PosmapSummary> {
    let (m, name) = match mesh {
        Some(p) => (load_obj(p)?, p.display().to_string()),
        None => (bundled_head(), "bundled:synthetic_head.obj".to_string()),
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (pm, rt) = round_trip(&m, resolution)?;
    pm.save(out, "position")?;
    let preview = pm.save_preview(out.join("position_preview.png"))?;
    let summary = PosmapSummary {
        mesh: name,
        vertices: m.vertex_count(),
        faces: m.face_count(),
        round_trip: rt,
        preview,
    };
    fs::write(out.join("posmap.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

#[derive(Clone, Debug, Serialize)]
pub struct RenderSummary {
    pub index: usize,
    pub covered_pixels: usize,
    pub source: String,
    /// Mean absolute difference between the composite and the stored input.
    pub input_l1: f64,
}

/// `render`: shade toy sample `index` under its ground-truth pose, either
/// from its stored components or from a checkpoint's predictions. Writes
/// `render.png`, `coverage.png` and `composite.png`.
pub fn cmd_render(
    data: &Path,
    index: usize,
    checkpoint: Option<&Path>,
    cfg: &RunConfig,
    out: &Path,
) -> Result<RenderSummary> {
    let manifest = load_manifest(data)?;
    if index >= manifest.count {
        bail!("sample {index} out of range for a toy set of {}", manifest.count);
    }
    let sample = load_sample(&sample_dir(data, index))?;
    let resolution = manifest.resolution;
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(images(&sample));
    let (pm, d, l, source) = match checkpoint {
        None => (
            sample.position.clone(),
            tape.constant(sample.diffuse.clone()),
            tape.constant(sample.light.clone()),
            "ground truth".to_string(),
        ),
        Some(dir) => {
            let mut cfg = cfg.clone();
            cfg.resolution = resolution;
            cfg.network.resolution = resolution;
            let mut m = Models::new(&cfg)?;
            m.load(dir)?;
            let pv = m.position.params.bind(&mut tape, false);
            let dv = m.diffuse.params.bind(&mut tape, false);
            let lv = m.light.params.bind(&mut tape, false);
            let p = m.position.forward(&mut tape, &pv, x)?;
            let pm = affconv::geometry::PositionMap::from_tensor(tape.value(p), sample.position.valid.clone())?;
            let d = m.diffuse.forward(&mut tape, &dv, x)?;
            let l = m.light.forward(&mut tape, &lv, x)?.map;
            (pm, d, l, dir.display().to_string())
        }
    };
    let cam = Camera::fit(resolution);
    let r = render(&mut tape, &[&pm], &bundled_head(), d, l, &[sample.meta.pose], &cam, None)?;
    let comp = overlay(&mut tape, r.image, &r.coverage, x)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    save_rgb_png(out.join("render.png"), tape.value(r.image), 0)?;
    save_gray_png(out.join("coverage.png"), &r.coverage, 0)?;
    save_rgb_png(out.join("composite.png"), tape.value(comp), 0)?;
    let (a, b) = (tape.value(comp).data(), sample.image.data());
    let input_l1 = a.iter().zip(b).map(|(p, q)| (p - q).abs() as f64).sum::<f64>() / a.len() as f64;
    let summary = RenderSummary {
        index,
        covered_pixels: r.views[0].covered(),
        source,
        input_l1,
    };
    fs::write(out.join("render.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

/// Generate a toy set directly into `out`.
pub fn cmd_make_toyset(n: usize, seed: u64, resolution: usize, identity_pose: bool, out: &Path) -> Result<()> {
    let manifest = crate::toyset::ToyManifest {
        count: n,
        seed,
        resolution,
        identity_pose,
    };
    Generator::new(manifest.clone())?;
    crate::toyset::make_toyset(out, &manifest)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchOp {
    Conv,
    Affconv,
}

impl BenchOp {
    pub fn name(self) -> &'static str {
        match self {
            BenchOp::Conv => "conv",
            BenchOp::Affconv => "affconv",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub op: &'static str,
    pub channels: usize,
    pub size: usize,
    pub output_elements: usize,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

pub const BENCH_CHANNELS: usize = 16;

/// Wall-clock forward + backward of a 3x3 stride-1 layer on `[1,C,s,s]`.
pub fn bench_op(op: BenchOp, size: usize, repeats: usize, seed: u64) -> Result<BenchRow> {
    let c = BENCH_CHANNELS;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::<f32>::from_fn([1, c, size, size], |_| rng.random_range(-1.0..1.0));
    let w = he_uniform::<f32>([c, c, 3, 3], 0.2, &mut rng);
    let b = Tensor::<f32>::zeros([c]);
    let field = Tensor::<f32>::from_fn([1, 6, size, size], |i| {
        let e = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0][i / (size * size)];
        e + rng.random_range(-0.1..0.1)
    });
    let mut times = Vec::with_capacity(repeats);
    for rep in 0..repeats + 1 {
        let started = Instant::now();
        let mut tape = Tape::<f32>::new();
        let xv = tape.leaf(x.clone());
        let wv = tape.leaf(w.clone());
        let bv = tape.leaf(b.clone());
        let y = match op {
            BenchOp::Conv => tape.conv2d(xv, wv, Some(bv), 1, 1)?,
            BenchOp::Affconv => {
                let f = tape.leaf(field.clone());
                tape.affine_conv2d(xv, wv, Some(bv), f, 1, 1)?
            }
        };
        let l = tape.sum(y)?;
        tape.backward(l)?;
        if rep > 0 {
            times.push(started.elapsed().as_secs_f64() * 1e3);
        }
    }
    times.sort_by(f64::total_cmp);
    Ok(BenchRow {
        op: op.name(),
        channels: c,
        size,
        output_elements: c * size * size,
        median_ms: times[times.len() / 2],
        min_ms: times[0],
        max_ms: times[times.len() - 1],
    })
}

/// `bench`: timing table as CSV on stdout and in `bench.csv`.
pub fn cmd_bench(ops: &[BenchOp], sizes: &[usize], repeats: usize, seed: u64, out: &Path) -> Result<Vec<BenchRow>> {
    if repeats == 0 || sizes.is_empty() {
        bail!("bench needs at least one size and one repeat");
    }
    let mut rows = Vec::new();
    for &size in sizes {
        for &op in ops {
            rows.push(bench_op(op, size, repeats, seed)?);
        }
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut csv = String::from("op,channels,size,output_elements,median_ms,min_ms,max_ms\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{:.4},{:.4},{:.4}\n",
            r.op, r.channels, r.size, r.output_elements, r.median_ms, r.min_ms, r.max_ms
        ));
    }
    fs::write(out.join("bench.csv"), &csv)?;
    std::io::stdout().write_all(csv.as_bytes())?;
    for &size in sizes {
        let t = |op: &str| rows.iter().find(|r| r.op == op && r.size == size).map(|r| r.median_ms);
        if let (Some(a), Some(c)) = (t("affconv"), t("conv")) {
            eprintln!("size {size}: affconv/conv time ratio {:.2}", a / c);
        }
    }
    Ok(rows)
}
