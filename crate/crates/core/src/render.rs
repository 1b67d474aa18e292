//! Orthographic z-buffered texel renderer. Pixels look up the diffuse and
//! light maps at their interpolated UV, so the image is differentiable with
//! respect to both maps; geometry and pose enter as constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::raster::for_each_covered;
use crate::geometry::{sample_positions, PositionMap, TriMesh};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Orthographic camera looking down `-z`, principal point at the image
/// centre, model `y` pointing up.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// Pixels per model unit.
    pub scale: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Square view that fits a head of unit-ish radius with some room.
    pub fn fit(resolution: usize) -> Self {
        Self {
            scale: resolution as f64 / 2.6,
            width: resolution,
            height: resolution,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) || self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera", format!("degenerate camera {self:?}")));
        }
        Ok(())
    }

    /// Pixel position `(x, y)` and depth (larger is nearer).
    pub fn project(&self, p: [f64; 3]) -> ([f64; 2], f64) {
        (
            [
                self.width as f64 / 2.0 + self.scale * p[0],
                self.height as f64 / 2.0 - self.scale * p[1],
            ],
            p[2],
        )
    }
}

/// Rigid transform: axis-angle rotation (radians) then translation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: [f64; 3],
    pub translation: [f64; 3],
}

impl Pose {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_vec6(v: [f64; 6]) -> Self {
        Self {
            rotation: [v[0], v[1], v[2]],
            translation: [v[3], v[4], v[5]],
        }
    }

    pub fn to_vec6(&self) -> [f64; 6] {
        let (r, t) = (self.rotation, self.translation);
        [r[0], r[1], r[2], t[0], t[1], t[2]]
    }

    pub fn validate(&self) -> Result<()> {
        let angle = self.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !self.to_vec6().iter().all(|v| v.is_finite()) || angle >= std::f64::consts::PI {
            return Err(Error::invalid("pose", format!("invalid pose {self:?}")));
        }
        Ok(())
    }

    /// Rodrigues rotation matrix, row-major.
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        let r = self.rotation;
        let theta = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if theta == 0.0 {
            return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        }
        let k = r.map(|v| v / theta);
        let (s, c) = theta.sin_cos();
        let v = 1.0 - c;
        [
            [c + k[0] * k[0] * v, k[0] * k[1] * v - k[2] * s, k[0] * k[2] * v + k[1] * s],
            [k[1] * k[0] * v + k[2] * s, c + k[1] * k[1] * v, k[1] * k[2] * v - k[0] * s],
            [k[2] * k[0] * v - k[1] * s, k[2] * k[1] * v + k[0] * s, c + k[2] * k[2] * v],
        ]
    }

    /// Rotation `R_y(yaw) R_x(pitch) R_z(roll)` (radians) plus translation.
    pub fn from_euler(yaw: f64, pitch: f64, roll: f64, translation: [f64; 3]) -> Self {
        let rot = |axis: usize, a: f64| Pose {
            rotation: std::array::from_fn(|k| if k == axis { a } else { 0.0 }),
            translation: [0.0; 3],
        }
        .matrix();
        let m = matmul(&matmul(&rot(1, yaw), &rot(0, pitch)), &rot(2, roll));
        Self {
            rotation: axis_angle(&m),
            translation,
        }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = self.matrix();
        std::array::from_fn(|i| m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2] + self.translation[i])
    }
}

fn matmul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

/// Axis-angle vector of a rotation matrix with angle below pi.
fn axis_angle(m: &[[f64; 3]; 3]) -> [f64; 3] {
    let cos = ((m[0][0] + m[1][1] + m[2][2] - 1.0) / 2.0).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let v = [m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]];
    if theta < 1e-12 {
        return v.map(|x| x / 2.0);
    }
    let s = theta / (2.0 * theta.sin());
    v.map(|x| x * s)
}

/// Visible surface per pixel: coverage, interpolated UV, depth and face.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewRaster {
    pub width: usize,
    pub height: usize,
    pub coverage: Vec<bool>,
    pub uv: Vec<[f64; 2]>,
    pub depth: Vec<f64>,
    pub face: Vec<Option<usize>>,
}

impl ViewRaster {
    pub fn covered(&self) -> usize {
        self.coverage.iter().filter(|&&c| c).count()
    }
}

/// Template vertices read from `pm` and moved by `pose`, with per-vertex
/// sampling validity.
pub fn posed_vertices(pm: &PositionMap, template: &TriMesh, pose: &Pose) -> (Vec<[f64; 3]>, Vec<bool>) {
    let (p, ok) = sample_positions(pm, &template.uvs);
    (p.into_iter().map(|v| pose.apply(v)).collect(), ok)
}

/// Z-buffered rasterisation of `faces` with the given camera-space
/// `vertices`. Nearer (larger `z`) wins; equal depths keep the lower face
/// index. Faces touching an invalid vertex are skipped.
pub fn rasterize_view(
    vertices: &[[f64; 3]],
    valid: &[bool],
    mesh: &TriMesh,
    cam: &Camera,
) -> Result<ViewRaster> {
    cam.validate()?;
    if mesh.faces.is_empty() || vertices.is_empty() {
        return Err(Error::invalid("render", "mesh is empty"));
    }
    if vertices.len() != mesh.uvs.len() || valid.len() != vertices.len() {
        return Err(Error::invalid("render", "vertex count does not match the template"));
    }
    let n = cam.width * cam.height;
    let mut view = ViewRaster {
        width: cam.width,
        height: cam.height,
        coverage: vec![false; n],
        uv: vec![[0.0; 2]; n],
        depth: vec![f64::NEG_INFINITY; n],
        face: vec![None; n],
    };
    let projected: Vec<([f64; 2], f64)> = vertices.iter().map(|&p| cam.project(p)).collect();
    for (fi, f) in mesh.faces.iter().enumerate() {
        if f.iter().any(|&v| !valid[v]) {
            continue;
        }
        let tri = f.map(|v| projected[v].0);
        let z = f.map(|v| projected[v].1);
        let uv = f.map(|v| mesh.uvs[v]);
        for_each_covered(tri, cam.width, cam.height, |i, j, w| {
            let p = i * cam.width + j;
            let d = w[0] * z[0] + w[1] * z[1] + w[2] * z[2];
            if d > view.depth[p] {
                view.depth[p] = d;
                view.coverage[p] = true;
                view.face[p] = Some(fi);
                view.uv[p] = std::array::from_fn(|k| w[0] * uv[0][k] + w[1] * uv[1][k] + w[2] * uv[2][k]);
            }
        });
    }
    Ok(view)
}

/// Shade rasterised views: `clamp(diffuse(uv) * light(uv), 0, 1)` on covered
/// pixels, zero elsewhere. `diffuse` is `[B,3,Hd,Wd]`, `light` `[B,1,Hl,Wl]`
/// (bilinearly resized to the diffuse size first), `tint` an optional
/// `[B,3,1,1]` colour. Returns `[B,3,H,W]`.
pub fn shade<T: Scalar>(
    tape: &mut Tape<T>,
    views: &[ViewRaster],
    diffuse: Var,
    light: Var,
    tint: Option<Var>,
) -> Result<Var> {
    let (b, c, hd, wd) = tape.value(diffuse).dims4("render")?;
    let (lb, lc, hl, wl) = tape.value(light).dims4("render")?;
    if c != 3 || lc != 1 || lb != b || views.len() != b {
        return Err(Error::invalid(
            "render",
            format!(
                "diffuse {:?}, light {:?} and {} views do not agree",
                tape.shape(diffuse),
                tape.shape(light),
                views.len()
            ),
        ));
    }
    let (h, w) = (views[0].height, views[0].width);
    if views.iter().any(|v| v.height != h || v.width != w) {
        return Err(Error::invalid("render", "views differ in size"));
    }
    let light = if (hl, wl) != (hd, wd) {
        tape.resize_bilinear(light, hd, wd)?
    } else {
        light
    };
    let k = h * w;
    // uncovered pixels read far outside the map, where zero padding gives 0
    let far = -4.0;
    let mut coords = Vec::with_capacity(b * k * 2);
    for v in views {
        for p in 0..k {
            if v.coverage[p] {
                coords.push(T::from_f64(v.uv[p][0] * wd as f64 - 0.5));
                coords.push(T::from_f64(v.uv[p][1] * hd as f64 - 0.5));
            } else {
                coords.push(T::from_f64(far));
                coords.push(T::from_f64(far));
            }
        }
    }
    let coords = tape.constant(Tensor::new(vec![b, k, 2], coords)?);
    let d = tape.bilinear_sample(diffuse, coords)?;
    let l = tape.bilinear_sample(light, coords)?;
    let l = tape.expand_channels(l, 3)?;
    let mut s = tape.mul(d, l)?;
    if let Some(t) = tint {
        s = tape.mul_channels(s, t)?;
    }
    let s = tape.clamp(s, 0.0, 1.0)?;
    tape.reshape(s, &[b, 3, h, w])
}

/// Coverage masks `[B,1,H,W]` of rasterised views.
pub fn coverage_tensor<T: Scalar>(views: &[ViewRaster]) -> Tensor<T> {
    let (h, w) = (views[0].height, views[0].width);
    let k = h * w;
    Tensor::from_fn([views.len(), 1, h, w], |i| {
        if views[i / k].coverage[i % k] {
            T::ONE
        } else {
            T::ZERO
        }
    })
}

/// Differentiable render output.
#[derive(Clone, Debug)]
pub struct Rendered<T> {
    pub image: Var,
    pub coverage: Tensor<T>,
    pub views: Vec<ViewRaster>,
}

/// Rasterise each sample's geometry under its pose and shade it.
#[allow(clippy::too_many_arguments)]
pub fn render<T: Scalar>(
    tape: &mut Tape<T>,
    position_maps: &[&PositionMap],
    template: &TriMesh,
    diffuse: Var,
    light: Var,
    poses: &[Pose],
    cam: &Camera,
    tint: Option<Var>,
) -> Result<Rendered<T>> {
    if position_maps.len() != poses.len() {
        return Err(Error::invalid("render", "one pose per position map"));
    }
    let views = position_maps
        .iter()
        .zip(poses)
        .map(|(pm, pose)| {
            let (v, ok) = posed_vertices(pm, template, pose);
            rasterize_view(&v, &ok, template, cam)
        })
        .collect::<Result<Vec<_>>>()?;
    let image = shade(tape, &views, diffuse, light, tint)?;
    Ok(Rendered {
        image,
        coverage: coverage_tensor(&views),
        views,
    })
}

/// `rendered * m + background * (1 - m)` with `coverage [B,1,H,W]`.
pub fn overlay<T: Scalar>(tape: &mut Tape<T>, rendered: Var, coverage: &Tensor<T>, background: Var) -> Result<Var> {
    let (b, c, h, w) = tape.value(rendered).dims4("overlay")?;
    if tape.shape(background) != tape.shape(rendered) || coverage.shape() != [b, 1, h, w] {
        return Err(Error::shape("overlay", tape.shape(rendered), tape.shape(background)));
    }
    let hw = h * w;
    let m = Tensor::from_fn([b, c, h, w], |i| coverage.data()[(i / (c * hw)) * hw + i % hw]);
    let inv = m.map(|v| T::ONE - v);
    let m = tape.constant(m);
    let inv = tape.constant(inv);
    let a = tape.mul(rendered, m)?;
    let bg = tape.mul(background, inv)?;
    tape.add(a, bg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rodrigues_quarter_turn() {
        let p = Pose::from_vec6([0.0, 0.0, std::f64::consts::FRAC_PI_2, 0.0, 0.0, 0.0]);
        let q = p.apply([1.0, 0.0, 0.0]);
        assert!((q[0]).abs() < 1e-15 && (q[1] - 1.0).abs() < 1e-15);
        assert!(Pose::from_vec6([4.0, 0.0, 0.0, 0.0, 0.0, 0.0]).validate().is_err());
    }

    #[test]
    fn euler_round_trips_through_axis_angle() {
        let p = Pose::from_euler(0.4, -0.3, 0.1, [0.0; 3]);
        let q = Pose::from_euler(0.4, 0.0, 0.0, [0.0; 3]);
        assert!((q.rotation[1] - 0.4).abs() < 1e-12 && q.rotation[0].abs() < 1e-12);
        // composing the matrices directly must agree with the stored vector
        let x = [0.3, -0.2, 0.9];
        let ry = Pose::from_vec6([0.0, 0.4, 0.0, 0.0, 0.0, 0.0]);
        let rx = Pose::from_vec6([-0.3, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let rz = Pose::from_vec6([0.0, 0.0, 0.1, 0.0, 0.0, 0.0]);
        let expected = ry.apply(rx.apply(rz.apply(x)));
        let got = p.apply(x);
        assert!((0..3).all(|k| (expected[k] - got[k]).abs() < 1e-12));
    }

    #[test]
    fn degenerate_camera_rejected() {
        let cam = Camera {
            scale: 0.0,
            width: 4,
            height: 4,
        };
        assert!(cam.validate().is_err());
    }
}
