//! Analytic head-like surfaces: ellipsoids with bounded Gaussian bumps,
//! laid out in UV by longitude/latitude with the seam at the back.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::mesh::TriMesh;
use super::posmap::PositionMap;

/// Empty border around the UV chart, as a fraction of the map.
pub const UV_MARGIN: f64 = 1.0 / 32.0;
/// Latitude range covered by the chart, in degrees either side of the equator.
pub const MAX_LATITUDE_DEG: f64 = 80.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadParams {
    /// Ellipsoid semi-axes along x (ear to ear), y (up) and z (towards the viewer).
    pub radii: [f64; 3],
    pub bumps: usize,
    /// Bound on the normal displacement, in model units.
    pub magnitude: f64,
    pub seed: u64,
}

impl Default for HeadParams {
    fn default() -> Self {
        Self {
            radii: [0.8, 1.0, 0.9],
            bumps: 6,
            magnitude: 0.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub u: f64,
    pub v: f64,
    pub sigma: f64,
    pub weight: f64,
}

/// A concrete surface drawn from [`HeadParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct HeadShape {
    pub radii: [f64; 3],
    pub magnitude: f64,
    pub bumps: Vec<Bump>,
}

impl HeadShape {
    pub fn new(params: &HeadParams) -> Result<Self> {
        if params.radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::invalid("synthetic-head", "radii must be positive"));
        }
        if !(params.magnitude.is_finite() && params.magnitude >= 0.0) {
            return Err(Error::invalid("synthetic-head", "magnitude must be >= 0"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut bumps: Vec<Bump> = (0..params.bumps)
            .map(|_| Bump {
                u: rng.random_range(0.25..0.75),
                v: rng.random_range(0.2..0.8),
                sigma: rng.random_range(0.04..0.12),
                weight: rng.random_range(-1.0..1.0),
            })
            .collect();
        // sum |w| = 1 keeps |displacement| <= magnitude
        let total: f64 = bumps.iter().map(|b| b.weight.abs()).sum();
        if total > 0.0 {
            for b in &mut bumps {
                b.weight /= total;
            }
        }
        Ok(Self {
            radii: params.radii,
            magnitude: params.magnitude,
            bumps,
        })
    }

    /// Chart coordinates `(u', v') in [0, 1]^2` of a map UV, if inside the chart.
    pub fn chart(uv: [f64; 2]) -> Option<[f64; 2]> {
        let m = UV_MARGIN;
        let c = uv.map(|t| (t - m) / (1.0 - 2.0 * m));
        c.iter().all(|t| (0.0..=1.0).contains(t)).then_some(c)
    }

    pub fn uv_of_chart(c: [f64; 2]) -> [f64; 2] {
        c.map(|t| UV_MARGIN + t * (1.0 - 2.0 * UV_MARGIN))
    }

    fn angles(c: [f64; 2]) -> (f64, f64) {
        let lon = 2.0 * PI * (c[0] - 0.5);
        let lat = (0.5 - c[1]) * 2.0 * MAX_LATITUDE_DEG.to_radians();
        (lon, lat)
    }

    /// Point on the undeformed ellipsoid and its unit normal.
    pub fn ellipsoid(&self, c: [f64; 2]) -> ([f64; 3], [f64; 3]) {
        let (lon, lat) = Self::angles(c);
        let s = [lat.cos() * lon.sin(), lat.sin(), lat.cos() * lon.cos()];
        let p = [self.radii[0] * s[0], self.radii[1] * s[1], self.radii[2] * s[2]];
        let n = [s[0] / self.radii[0], s[1] / self.radii[1], s[2] / self.radii[2]];
        let len = n.iter().map(|v| v * v).sum::<f64>().sqrt();
        (p, n.map(|v| v / len))
    }

    /// Signed normal displacement, periodic across the seam in `u'`.
    pub fn displacement(&self, c: [f64; 2]) -> f64 {
        if self.magnitude == 0.0 {
            return 0.0;
        }
        let d: f64 = self
            .bumps
            .iter()
            .map(|b| {
                let du = (c[0] - b.u).abs();
                let du = du.min(1.0 - du);
                let dv = c[1] - b.v;
                b.weight * (-(du * du + dv * dv) / (2.0 * b.sigma * b.sigma)).exp()
            })
            .sum();
        self.magnitude * d
    }

    pub fn surface(&self, c: [f64; 2]) -> [f64; 3] {
        let (p, n) = self.ellipsoid(c);
        let d = self.displacement(c);
        [p[0] + d * n[0], p[1] + d * n[1], p[2] + d * n[2]]
    }

    /// Implicit ellipsoid residual `sum (x_k / r_k)^2 - 1`.
    pub fn ellipsoid_residual(&self, p: [f64; 3]) -> f64 {
        (0..3).map(|k| (p[k] / self.radii[k]).powi(2)).sum::<f64>() - 1.0
    }

    /// Latitude/longitude grid mesh. The seam column shares positions with
    /// the first column but has its own UVs.
    pub fn mesh(&self, segments_u: usize, segments_v: usize) -> Result<TriMesh> {
        if segments_u < 3 || segments_v < 1 {
            return Err(Error::invalid("synthetic-head", "need at least 3x1 segments"));
        }
        let cols = segments_u + 1;
        let mut positions = Vec::with_capacity(cols * (segments_v + 1));
        let mut uvs = Vec::with_capacity(positions.capacity());
        for iv in 0..=segments_v {
            let cv = iv as f64 / segments_v as f64;
            let first = self.surface([0.0, cv]);
            for iu in 0..=segments_u {
                let cu = iu as f64 / segments_u as f64;
                positions.push(if iu == segments_u { first } else { self.surface([cu, cv]) });
                uvs.push(Self::uv_of_chart([cu, cv]));
            }
        }
        let mut faces = Vec::with_capacity(2 * segments_u * segments_v);
        for iv in 0..segments_v {
            for iu in 0..segments_u {
                let a = iv * cols + iu;
                let (b, c, d) = (a + 1, a + cols, a + cols + 1);
                faces.push([a, c, b]);
                faces.push([b, c, d]);
            }
        }
        TriMesh::new(positions, uvs, faces)
    }

    /// Analytic position map: every texel centre inside the chart holds the
    /// exact surface point.
    pub fn position_map(&self, height: usize, width: usize) -> PositionMap {
        let mut pm = PositionMap::empty(height, width);
        for i in 0..height {
            for j in 0..width {
                let uv = [(j as f64 + 0.5) / width as f64, (i as f64 + 0.5) / height as f64];
                if let Some(c) = Self::chart(uv) {
                    pm.set(i, j, self.surface(c));
                }
            }
        }
        pm
    }
}

/// Pseudo ground-truth position map for `params` at `resolution`.
pub fn make_synthetic_position_gt(params: &HeadParams, resolution: usize) -> Result<PositionMap> {
    Ok(HeadShape::new(params)?.position_map(resolution, resolution))
}

/// Segments of the bundled head mesh.
pub const BUNDLED_SEGMENTS: (usize, usize) = (64, 32);

/// Parameters the bundled head asset was generated from.
pub fn bundled_head_params() -> HeadParams {
    HeadParams {
        magnitude: 0.05,
        seed: 2024,
        ..HeadParams::default()
    }
}

const BUNDLED_HEAD_OBJ: &str = include_str!("../../assets/synthetic_head.obj");

/// The bundled synthetic head, parsed from its OBJ asset.
pub fn bundled_head() -> TriMesh {
    super::mesh::parse_obj(BUNDLED_HEAD_OBJ, std::path::Path::new("synthetic_head.obj")).expect("bundled asset parses")
}

pub fn bundled_head_obj() -> &'static str {
    BUNDLED_HEAD_OBJ
}
