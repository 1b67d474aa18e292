//! Procedural training data: analytic head geometry, face-like UV textures,
//! UV light maps and posed renders, all regenerable from `(seed, index)`.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use affconv::atsr;
use affconv::geometry::{bundled_head, HeadParams, HeadShape, PositionMap, TriMesh};
use affconv::render::{overlay, render, Camera, Pose};
use affconv::{Tape, Tensor};
use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const MAX_YAW_DEG: f64 = 30.0;
pub const MAX_PITCH_DEG: f64 = 30.0;
pub const MAX_ROLL_DEG: f64 = 10.0;
pub const MAX_SHIFT: f64 = 0.08;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyManifest {
    pub count: usize,
    pub seed: u64,
    pub resolution: usize,
    pub identity_pose: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub index: usize,
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub roll_deg: f64,
    pub pose: Pose,
    pub background: [f64; 3],
    pub shape: HeadParams,
}

#[derive(Clone, Debug)]
pub struct ToySample {
    pub meta: SampleMeta,
    /// `[1,3,R,R]` posed render over the background.
    pub image: Tensor<f32>,
    /// `[1,3,R,R]` UV albedo.
    pub diffuse: Tensor<f32>,
    pub position: PositionMap,
    /// `[1,1,R/8,R/8]` UV shading.
    pub light: Tensor<f32>,
    /// `[1,1,R,R]` texels belonging to the face chart.
    pub skin_mask: Tensor<f32>,
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    std::array::from_fn(|k| a[k] + (b[k] - a[k]) * t)
}

/// Smooth inside-ness of an axis-aligned ellipse, 1 inside and 0 outside.
fn ellipse(dx: f64, dy: f64, rx: f64, ry: f64) -> f64 {
    let r = ((dx / rx).powi(2) + (dy / ry).powi(2)).sqrt();
    (1.0 - (r - 1.0) / 0.25).clamp(0.0, 1.0).min(1.0) * if r < 1.25 { 1.0 } else { 0.0 }
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Random face layout in longitude/latitude (radians).
struct FaceTexture {
    skin: [f64; 3],
    hair: [f64; 3],
    lips: [f64; 3],
    iris: [f64; 3],
    hair_lat: f64,
    hair_lon: f64,
    eye_lon: f64,
    eye_lat: f64,
    eye_r: (f64, f64),
    brow_gap: f64,
    mouth_lat: f64,
    mouth_w: f64,
    blush: f64,
}

impl FaceTexture {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let r = rng.random_range(0.55..0.9);
        let g = r * rng.random_range(0.7..0.85);
        let b = g * rng.random_range(0.75..0.9);
        let h = rng.random_range(0.05..0.35);
        Self {
            skin: [r, g, b],
            hair: [h, h * 0.8, h * 0.6],
            lips: [rng.random_range(0.55..0.8), rng.random_range(0.15..0.3), rng.random_range(0.2..0.3)],
            iris: [rng.random_range(0.05..0.4), rng.random_range(0.1..0.4), rng.random_range(0.1..0.5)],
            hair_lat: rng.random_range(0.55..0.8),
            hair_lon: rng.random_range(1.7..2.2),
            eye_lon: rng.random_range(0.28..0.4),
            eye_lat: rng.random_range(0.12..0.25),
            eye_r: (rng.random_range(0.09..0.13), rng.random_range(0.04..0.06)),
            brow_gap: rng.random_range(0.1..0.15),
            mouth_lat: rng.random_range(-0.45..-0.3),
            mouth_w: rng.random_range(0.12..0.2),
            blush: rng.random_range(0.0..0.25),
        }
    }

    fn color(&self, lon: f64, lat: f64) -> [f64; 3] {
        let mut c = self.skin;
        let nose = ellipse(lon, lat + 0.08, 0.07, 0.12);
        c = lerp3(c, c.map(|v| v * 0.85), nose);
        for side in [-1.0, 1.0] {
            let cheek = ellipse(lon - side * 0.42, lat + 0.18, 0.14, 0.1);
            c = lerp3(c, [c[0].max(0.85), c[1] * 0.8, c[2] * 0.8], cheek * self.blush);
            let (ex, ey) = (lon - side * self.eye_lon, lat - self.eye_lat);
            let white = ellipse(ex, ey, self.eye_r.0, self.eye_r.1);
            c = lerp3(c, [0.95, 0.95, 0.92], white);
            let iris = ellipse(ex, ey, self.eye_r.1 * 0.9, self.eye_r.1 * 0.9);
            c = lerp3(c, self.iris, iris);
            let brow = ellipse(ex, ey - self.brow_gap, self.eye_r.0 * 1.1, 0.025);
            c = lerp3(c, self.hair, brow);
        }
        let mouth = ellipse(lon, lat - self.mouth_lat, self.mouth_w, 0.045);
        c = lerp3(c, self.lips, mouth);
        let hair = smoothstep(self.hair_lat - 0.08, self.hair_lat + 0.08, lat)
            .max(smoothstep(self.hair_lon - 0.15, self.hair_lon + 0.15, lon.abs()));
        lerp3(c, self.hair, hair).map(|v| v.clamp(0.0, 1.0))
    }
}

/// Chart texel centres `(i, j) -> (lon, lat)` at an `n x n` UV resolution.
fn chart_angles(i: usize, j: usize, n: usize) -> Option<(f64, f64, [f64; 2])> {
    let uv = [(j as f64 + 0.5) / n as f64, (i as f64 + 0.5) / n as f64];
    HeadShape::chart(uv).map(|c| {
        let lon = 2.0 * PI * (c[0] - 0.5);
        let lat = (0.5 - c[1]) * 2.0 * affconv::geometry::MAX_LATITUDE_DEG.to_radians();
        (lon, lat, c)
    })
}

pub struct Generator {
    pub manifest: ToyManifest,
    template: TriMesh,
    camera: Camera,
}

impl Generator {
    pub fn new(manifest: ToyManifest) -> Result<Self> {
        if !manifest.resolution.is_multiple_of(8) || manifest.resolution < 16 {
            bail!("toy resolution must be a multiple of 8 and at least 16");
        }
        Ok(Self {
            camera: Camera::fit(manifest.resolution),
            template: bundled_head(),
            manifest,
        })
    }

    pub fn template(&self) -> &TriMesh {
        &self.template
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    pub fn sample(&self, index: usize) -> Result<ToySample> {
        let m = &self.manifest;
        let n = m.resolution;
        let mut rng = ChaCha8Rng::seed_from_u64(m.seed);
        rng.set_stream(index as u64);

        let radii = [0.8, 1.0, 0.9].map(|r: f64| r * rng.random_range(0.92..1.08));
        let shape = HeadParams {
            radii,
            bumps: 6,
            magnitude: 0.04,
            seed: rng.random(),
        };
        let (yaw, pitch, roll) = (
            rng.random_range(-MAX_YAW_DEG..=MAX_YAW_DEG),
            rng.random_range(-MAX_PITCH_DEG..=MAX_PITCH_DEG),
            rng.random_range(-MAX_ROLL_DEG..=MAX_ROLL_DEG),
        );
        let shift = [rng.random_range(-MAX_SHIFT..=MAX_SHIFT), rng.random_range(-MAX_SHIFT..=MAX_SHIFT), 0.0];
        let (yaw, pitch, roll, shift) = if m.identity_pose {
            (0.0, 0.0, 0.0, [0.0; 3])
        } else {
            (yaw, pitch, roll, shift)
        };
        let pose = Pose::from_euler(yaw.to_radians(), pitch.to_radians(), roll.to_radians(), shift);
        let background = std::array::from_fn(|_| rng.random_range(0.05..0.45));
        let texture = FaceTexture::draw(&mut rng);
        let light_dir = {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-0.6..0.8);
            let v = [a, b, 1.0];
            let l = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            v.map(|x| x / l)
        };
        let ambient = rng.random_range(0.35..0.55);

        let head = HeadShape::new(&shape)?;
        let position = head.position_map(n, n);

        let hw = n * n;
        let mut diffuse = vec![0f32; 3 * hw];
        let mut skin = vec![0f32; hw];
        for i in 0..n {
            for j in 0..n {
                if let Some((lon, lat, _)) = chart_angles(i, j, n) {
                    let c = texture.color(lon, lat);
                    for k in 0..3 {
                        diffuse[k * hw + i * n + j] = c[k] as f32;
                    }
                    skin[i * n + j] = 1.0;
                }
            }
        }
        let ln = n / 8;
        let mut light = vec![ambient as f32; ln * ln];
        for i in 0..ln {
            for j in 0..ln {
                if let Some((_, _, c)) = chart_angles(i, j, ln) {
                    let (_, normal) = head.ellipsoid(c);
                    let d = (0..3).map(|k| normal[k] * light_dir[k]).sum::<f64>().max(0.0);
                    light[i * ln + j] = (ambient + (1.0 - ambient) * d) as f32;
                }
            }
        }
        let diffuse = Tensor::new(vec![1, 3, n, n], diffuse)?;
        let light = Tensor::new(vec![1, 1, ln, ln], light)?;
        let skin_mask = Tensor::new(vec![1, 1, n, n], skin)?;
        let meta = SampleMeta {
            index,
            yaw_deg: yaw,
            pitch_deg: pitch,
            roll_deg: roll,
            pose,
            background,
            shape,
        };
        let image = self.render_input(&position, &diffuse, &light, &meta)?;
        Ok(ToySample {
            meta,
            image,
            diffuse,
            position,
            light,
            skin_mask,
        })
    }

    /// The input image from stored components.
    pub fn render_input(
        &self,
        position: &PositionMap,
        diffuse: &Tensor<f32>,
        light: &Tensor<f32>,
        meta: &SampleMeta,
    ) -> Result<Tensor<f32>> {
        let n = self.manifest.resolution;
        let mut tape = Tape::<f32>::new();
        let d = tape.constant(diffuse.clone());
        let l = tape.constant(light.clone());
        let r = render(&mut tape, &[position], &self.template, d, l, &[meta.pose], &self.camera, None)?;
        let bg = Tensor::from_fn([1, 3, n, n], |i| meta.background[i / (n * n)] as f32);
        let bg = tape.constant(bg);
        let img = overlay(&mut tape, r.image, &r.coverage, bg)?;
        Ok(tape.value(img).clone())
    }
}

pub fn sample_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("sample_{index:05}"))
}

/// Write `count` samples and a manifest under `root`.
pub fn make_toyset(root: &Path, manifest: &ToyManifest) -> Result<()> {
    if manifest.count == 0 {
        bail!("toy set needs at least one sample");
    }
    let generator = Generator::new(manifest.clone())?;
    fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    fs::write(root.join("manifest.json"), serde_json::to_string_pretty(manifest)?)?;
    for index in 0..manifest.count {
        let s = generator.sample(index)?;
        save_sample(&sample_dir(root, index), &s)?;
    }
    Ok(())
}

pub fn save_sample(dir: &Path, s: &ToySample) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    atsr::write(dir.join("image.atsr"), &s.image)?;
    atsr::write(dir.join("diffuse.atsr"), &s.diffuse)?;
    atsr::write(dir.join("light.atsr"), &s.light)?;
    atsr::write(dir.join("skin_mask.atsr"), &s.skin_mask)?;
    let pose = Tensor::<f64>::from_f64([6], &s.meta.pose.to_vec6())?;
    atsr::write(dir.join("pose.atsr"), &pose)?;
    s.position.save(dir, "position")?;
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&s.meta)?)?;
    Ok(())
}

pub fn load_sample(dir: &Path) -> Result<ToySample> {
    let meta: SampleMeta = serde_json::from_str(
        &fs::read_to_string(dir.join("meta.json")).with_context(|| format!("reading {}", dir.display()))?,
    )?;
    Ok(ToySample {
        meta,
        image: atsr::read(dir.join("image.atsr"))?,
        diffuse: atsr::read(dir.join("diffuse.atsr"))?,
        light: atsr::read(dir.join("light.atsr"))?,
        skin_mask: atsr::read(dir.join("skin_mask.atsr"))?,
        position: PositionMap::load(dir, "position")?,
    })
}

pub fn load_manifest(root: &Path) -> Result<ToyManifest> {
    let path = root.join("manifest.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Manifest and the first `limit` samples.
pub fn load_toyset(root: &Path, limit: usize) -> Result<(ToyManifest, Vec<ToySample>)> {
    let manifest = load_manifest(root)?;
    if limit > manifest.count {
        bail!("toy set at {} has {} samples, {} requested", root.display(), manifest.count, limit);
    }
    let samples = (0..limit)
        .map(|i| load_sample(&sample_dir(root, i)))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, samples))
}
