use std::fs;
use std::path::Path;

use image::{ImageBuffer, Rgb};
use serde::{Deserialize, Serialize};

use crate::atsr;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::mesh::TriMesh;
use super::raster::{for_each_covered, EPS_UV};

/// UV-space record of surface positions, `H x W x 3`, with a coverage mask.
/// Uncovered texels hold `(0, 0, 0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionMap {
    pub height: usize,
    pub width: usize,
    /// Row-major `[H, W, 3]`.
    pub data: Vec<f64>,
    pub valid: Vec<bool>,
}

impl PositionMap {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width * 3],
            valid: vec![false; height * width],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> [f64; 3] {
        let k = (i * self.width + j) * 3;
        [self.data[k], self.data[k + 1], self.data[k + 2]]
    }

    pub fn set(&mut self, i: usize, j: usize, p: [f64; 3]) {
        let k = (i * self.width + j) * 3;
        self.data[k..k + 3].copy_from_slice(&p);
        self.valid[i * self.width + j] = true;
    }

    pub fn covered(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn coverage_fraction(&self) -> f64 {
        self.covered() as f64 / self.valid.len() as f64
    }

    /// Channel-first `[1, 3, H, W]` tensor for the networks.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let hw = self.height * self.width;
        Tensor::from_fn([1, 3, self.height, self.width], |i| {
            let (c, p) = (i / hw, i % hw);
            T::from_f64(self.data[p * 3 + c])
        })
    }

    /// `[1, 1, H, W]` mask of ones and zeros.
    pub fn mask_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn([1, 1, self.height, self.width], |i| if self.valid[i] { T::ONE } else { T::ZERO })
    }

    /// Rebuild from a channel-first `[1|.., 3, H, W]` tensor (first sample)
    /// and a mask; masked-out texels are reset to the fill value.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, valid: Vec<bool>) -> Result<Self> {
        let (_, c, h, w) = t.dims4("position-map")?;
        if c != 3 || valid.len() != h * w {
            return Err(Error::shape("position-map", t.shape(), &[h, w]));
        }
        let hw = h * w;
        let mut data = vec![0.0; hw * 3];
        for p in 0..hw {
            if valid[p] {
                for ch in 0..3 {
                    data[p * 3 + ch] = t.data()[ch * hw + p].to_f64();
                }
            }
        }
        Ok(Self {
            height: h,
            width: w,
            data,
            valid,
        })
    }

    /// `<stem>.atsr` holds `[H, W, 3]` f64 positions, `<stem>_mask.atsr` the
    /// `[H, W]` mask as f32 zeros and ones.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let data = Tensor::new(vec![self.height, self.width, 3], self.data.clone())?;
        atsr::write(dir.join(format!("{stem}.atsr")), &data)?;
        let mask = Tensor::<f32>::from_fn([self.height, self.width], |i| if self.valid[i] { 1.0 } else { 0.0 });
        atsr::write(dir.join(format!("{stem}_mask.atsr")), &mask)
    }

    pub fn load(dir: impl AsRef<Path>, stem: &str) -> Result<Self> {
        let dir = dir.as_ref();
        let data = atsr::read_as::<f64>(dir.join(format!("{stem}.atsr")))?;
        let mask = atsr::read_as::<f64>(dir.join(format!("{stem}_mask.atsr")))?;
        let &[h, w, 3] = data.shape() else {
            return Err(Error::Format(format!("position map must be [H, W, 3], got {:?}", data.shape())));
        };
        if mask.shape() != [h, w] {
            return Err(Error::Format(format!("mask shape {:?} does not match {h}x{w}", mask.shape())));
        }
        Ok(Self {
            height: h,
            width: w,
            data: data.into_data(),
            valid: mask.data().iter().map(|&v| v != 0.0).collect(),
        })
    }

    /// 16-bit RGB preview with per-channel min-max normalisation over
    /// covered texels; the ranges go to a JSON sidecar next to the image.
    pub fn save_preview(&self, png: impl AsRef<Path>) -> Result<PreviewNormalization> {
        let png = png.as_ref();
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in 0..self.valid.len() {
            if self.valid[p] {
                for c in 0..3 {
                    lo[c] = lo[c].min(self.data[p * 3 + c]);
                    hi[c] = hi[c].max(self.data[p * 3 + c]);
                }
            }
        }
        if self.covered() == 0 {
            lo = [0.0; 3];
            hi = [0.0; 3];
        }
        let img = ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            let p = y as usize * self.width + x as usize;
            Rgb(std::array::from_fn(|c| {
                if !self.valid[p] || hi[c] <= lo[c] {
                    return 0u16;
                }
                let t = (self.data[p * 3 + c] - lo[c]) / (hi[c] - lo[c]);
                (t * 65535.0).round() as u16
            }))
        });
        img.save(png)?;
        let norm = PreviewNormalization {
            min: lo,
            max: hi,
            width: self.width,
            height: self.height,
        };
        fs::write(png.with_extension("json"), serde_json::to_string_pretty(&norm)?)?;
        Ok(norm)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreviewNormalization {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub width: usize,
    pub height: usize,
}

/// Pixel-frame UV triangle: `(u W, v H)` per vertex.
fn uv_triangle(mesh: &TriMesh, f: &[usize; 3], height: usize, width: usize) -> [[f64; 2]; 3] {
    f.map(|v| [mesh.uvs[v][0] * width as f64, mesh.uvs[v][1] * height as f64])
}

fn uv_area(mesh: &TriMesh, f: &[usize; 3]) -> f64 {
    let [a, b, c] = f.map(|v| mesh.uvs[v]);
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])).abs()
}

/// For every texel, the index of the first face whose UV triangle covers
/// its centre, with barycentric weights.
pub fn texel_owners(mesh: &TriMesh, height: usize, width: usize) -> Vec<Option<(usize, [f64; 3])>> {
    let mut owner = vec![None; height * width];
    for (fi, f) in mesh.faces.iter().enumerate() {
        if uv_area(mesh, f) <= EPS_UV {
            continue;
        }
        for_each_covered(uv_triangle(mesh, f, height, width), width, height, |i, j, w| {
            let slot = &mut owner[i * width + j];
            if slot.is_none() {
                *slot = Some((fi, w));
            }
        });
    }
    owner
}

/// Barycentric interpolation of vertex positions at every covered texel
/// centre.
pub fn rasterize_position_map(mesh: &TriMesh, height: usize, width: usize) -> Result<PositionMap> {
    mesh.validate()?;
    if height == 0 || width == 0 {
        return Err(Error::invalid("rasterize", "resolution must be positive"));
    }
    let mut pm = PositionMap::empty(height, width);
    for (t, o) in texel_owners(mesh, height, width).into_iter().enumerate() {
        if let Some((fi, w)) = o {
            let f = mesh.faces[fi];
            let p = std::array::from_fn(|k| (0..3).map(|v| w[v] * mesh.positions[f[v]][k]).sum());
            pm.set(t / width, t % width, p);
        }
    }
    Ok(pm)
}

/// Masked bilinear read at each UV. Invalid neighbours are dropped and the
/// remaining weights renormalised; a read with no valid weight returns the
/// fill value and `false`.
pub fn sample_positions(pm: &PositionMap, uvs: &[[f64; 2]]) -> (Vec<[f64; 3]>, Vec<bool>) {
    let (h, w) = (pm.height as isize, pm.width as isize);
    let mut out = Vec::with_capacity(uvs.len());
    let mut ok = Vec::with_capacity(uvs.len());
    for uv in uvs {
        let x = uv[0] * pm.width as f64 - 0.5;
        let y = uv[1] * pm.height as f64 - 0.5;
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (x0, y0) = (x0 as isize, y0 as isize);
        let taps = [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x0 + 1, y0, fx * (1.0 - fy)),
            (x0, y0 + 1, (1.0 - fx) * fy),
            (x0 + 1, y0 + 1, fx * fy),
        ];
        let mut acc = [0.0; 3];
        let mut total = 0.0;
        for (xi, yi, wt) in taps {
            if wt == 0.0 || xi < 0 || yi < 0 || xi >= w || yi >= h {
                continue;
            }
            let (i, j) = (yi as usize, xi as usize);
            if !pm.valid[i * pm.width + j] {
                continue;
            }
            let p = pm.get(i, j);
            for k in 0..3 {
                acc[k] += wt * p[k];
            }
            total += wt;
        }
        if total > 0.0 {
            out.push(acc.map(|a| a / total));
            ok.push(true);
        } else {
            out.push([0.0; 3]);
            ok.push(false);
        }
    }
    (out, ok)
}

/// Template topology with positions read back from `pm`; the flags mark
/// vertices whose read had no valid texel.
pub fn mesh_from_position_map(pm: &PositionMap, template: &TriMesh) -> Result<(TriMesh, Vec<bool>)> {
    let (positions, valid) = sample_positions(pm, &template.uvs);
    Ok((template.with_positions(positions)?, valid))
}

/// Round-trip report: rasterize `mesh`, read positions back at its UVs.
#[derive(Clone, Debug, Serialize)]
pub struct RoundTrip {
    pub resolution: usize,
    pub coverage: f64,
    pub bbox_diagonal: f64,
    pub max_error: f64,
    pub max_interior_error: f64,
    pub tolerance: f64,
    pub invalid_vertices: usize,
}

impl RoundTrip {
    pub fn passes(&self) -> bool {
        self.max_interior_error < self.tolerance && self.invalid_vertices == 0
    }
}

/// `tolerance = 2 / resolution * bbox diagonal`; interior vertices are the
/// ones off the UV layout boundary.
pub fn round_trip(mesh: &TriMesh, resolution: usize) -> Result<(PositionMap, RoundTrip)> {
    let pm = rasterize_position_map(mesh, resolution, resolution)?;
    let (back, valid) = sample_positions(&pm, &mesh.uvs);
    let boundary = mesh.uv_boundary_vertices();
    let mut max_error: f64 = 0.0;
    let mut max_interior: f64 = 0.0;
    for (v, (p, q)) in back.iter().zip(&mesh.positions).enumerate() {
        let e = (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>().sqrt();
        max_error = max_error.max(e);
        if !boundary[v] {
            max_interior = max_interior.max(e);
        }
    }
    let diag = mesh.bbox_diagonal();
    let report = RoundTrip {
        resolution,
        coverage: pm.coverage_fraction(),
        bbox_diagonal: diag,
        max_error,
        max_interior_error: max_interior,
        tolerance: 2.0 / resolution as f64 * diag,
        invalid_vertices: valid.iter().filter(|&&v| !v).count(),
    };
    Ok((pm, report))
}
