use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Triangle mesh with one UV per vertex. UV `v` runs downwards, the way maps
/// are stored; OBJ `vt` values are flipped on load and save.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    pub positions: Vec<[f64; 3]>,
    pub uvs: Vec<[f64; 2]>,
    pub faces: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn new(positions: Vec<[f64; 3]>, uvs: Vec<[f64; 2]>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let m = Self { positions, uvs, faces };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.uvs.len() != self.positions.len() {
            return Err(Error::invalid(
                "mesh",
                format!("{} UVs for {} vertices", self.uvs.len(), self.positions.len()),
            ));
        }
        let n = self.positions.len();
        if let Some(f) = self.faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
            return Err(Error::invalid("mesh", format!("face {f:?} indexes past {n} vertices")));
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.positions {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bounds();
        (0..3).map(|k| (hi[k] - lo[k]).powi(2)).sum::<f64>().sqrt()
    }

    /// Vertices on the boundary of the UV layout (edges used by one face).
    pub fn uv_boundary_vertices(&self) -> Vec<bool> {
        let mut edges: HashMap<(usize, usize), u32> = HashMap::new();
        for f in &self.faces {
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let mut boundary = vec![false; self.positions.len()];
        for ((a, b), count) in edges {
            if count == 1 {
                boundary[a] = true;
                boundary[b] = true;
            }
        }
        boundary
    }

    /// Same topology and UVs, new positions.
    pub fn with_positions(&self, positions: Vec<[f64; 3]>) -> Result<Self> {
        Self::new(positions, self.uvs.clone(), self.faces.clone())
    }

    /// Wavefront OBJ text. Positions shared by several UVs are written once.
    pub fn to_obj(&self) -> String {
        let mut pos_index: HashMap<[u64; 3], usize> = HashMap::new();
        let mut positions = Vec::new();
        let remap: Vec<usize> = self
            .positions
            .iter()
            .map(|p| {
                let key = p.map(f64::to_bits);
                *pos_index.entry(key).or_insert_with(|| {
                    positions.push(*p);
                    positions.len() - 1
                })
            })
            .collect();
        let mut out = String::new();
        for p in &positions {
            let _ = writeln!(out, "v {} {} {}", p[0], p[1], p[2]);
        }
        for t in &self.uvs {
            let _ = writeln!(out, "vt {} {}", t[0], 1.0 - t[1]);
        }
        for f in &self.faces {
            let _ = writeln!(
                out,
                "f {}/{} {}/{} {}/{}",
                remap[f[0]] + 1,
                f[0] + 1,
                remap[f[1]] + 1,
                f[1] + 1,
                remap[f[2]] + 1,
                f[2] + 1
            );
        }
        out
    }

    pub fn save_obj(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_obj())?;
        Ok(())
    }
}

/// Read an OBJ file. Faces are fan-triangulated and each distinct
/// `(position, uv)` pair becomes one vertex, so seams are split.
pub fn load_obj(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_obj(&text, path)
}

pub fn parse_obj(text: &str, path: &Path) -> Result<TriMesh> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut v: Vec<[f64; 3]> = Vec::new();
    let mut vt: Vec<[f64; 2]> = Vec::new();
    let mut corners: Vec<(usize, Vec<(usize, Option<usize>)>)> = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let ln = ln + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut parts = line.split_whitespace();
        let Some(tag) = parts.next() else { continue };
        let rest: Vec<&str> = parts.collect();
        let floats = |n: usize| -> Result<Vec<f64>> {
            if rest.len() < n {
                return Err(err(ln, format!("`{tag}` needs {n} numbers")));
            }
            rest.iter()
                .map(|s| s.parse::<f64>().map_err(|_| err(ln, format!("bad number `{s}`"))))
                .collect()
        };
        match tag {
            "v" => {
                let f = floats(3)?;
                v.push([f[0], f[1], f[2]]);
            }
            "vt" => {
                let f = floats(2)?;
                vt.push([f[0], 1.0 - f[1]]);
            }
            "f" => {
                if rest.len() < 3 {
                    return Err(err(ln, "face needs at least 3 corners".into()));
                }
                let mut cs = Vec::with_capacity(rest.len());
                for c in &rest {
                    let mut it = c.split('/');
                    let resolve = |s: &str, len: usize| -> Result<usize> {
                        let i: i64 = s.parse().map_err(|_| err(ln, format!("bad index `{s}`")))?;
                        let idx = if i > 0 { i - 1 } else { len as i64 + i };
                        if i == 0 || idx < 0 || idx as usize >= len {
                            return Err(err(ln, format!("index {i} out of range")));
                        }
                        Ok(idx as usize)
                    };
                    let vi = resolve(it.next().unwrap_or(""), v.len())?;
                    let ti = match it.next() {
                        Some(s) if !s.is_empty() => Some(resolve(s, vt.len())?),
                        _ => None,
                    };
                    cs.push((vi, ti));
                }
                corners.push((ln, cs));
            }
            "vn" | "vp" | "o" | "g" | "s" | "usemtl" | "mtllib" | "l" | "p" => {}
            other => return Err(err(ln, format!("unknown record `{other}`"))),
        }
    }
    if vt.is_empty() || corners.iter().any(|(_, cs)| cs.iter().any(|c| c.1.is_none())) {
        return Err(Error::MissingUv);
    }
    let mut key_to_vertex: HashMap<(usize, usize), usize> = HashMap::new();
    let mut positions = Vec::new();
    let mut uvs = Vec::new();
    let mut faces = Vec::new();
    for (_, cs) in &corners {
        let ids: Vec<usize> = cs
            .iter()
            .map(|&(vi, ti)| {
                let ti = ti.expect("checked");
                *key_to_vertex.entry((vi, ti)).or_insert_with(|| {
                    positions.push(v[vi]);
                    uvs.push(vt[ti]);
                    positions.len() - 1
                })
            })
            .collect();
        for k in 1..ids.len() - 1 {
            faces.push([ids[0], ids[k], ids[k + 1]]);
        }
    }
    TriMesh::new(positions, uvs, faces)
}
