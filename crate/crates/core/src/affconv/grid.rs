use crate::error::{Error, Result};

/// A 3x2 affine matrix `[[a, b], [c, d], [tx, ty]]` acting on row vectors
/// `[dx, dy, 1]`.
pub type AffineMatrix = [[f64; 2]; 3];

/// Six-value encoding `(a, b, c, d, tx, ty)` that row-fills [`AffineMatrix`].
pub const IDENTITY_ENCODING: [f64; 6] = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0];

pub fn matrix_from_encoding(e: [f64; 6]) -> AffineMatrix {
    [[e[0], e[1]], [e[2], e[3]], [e[4], e[5]]]
}

/// Integer window offsets of a `k x k` kernel in row-major order:
/// `(-r,-r), (-r+1,-r), ..., (r,r)` as `(dx, dy)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KernelGrid {
    k: usize,
    offsets: Vec<[i64; 2]>,
}

impl KernelGrid {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 || k.is_multiple_of(2) {
            return Err(Error::invalid("kernel-grid", format!("kernel size {k} must be odd")));
        }
        let r = (k / 2) as i64;
        let offsets = (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| [dx, dy])).collect();
        Ok(Self { k, offsets })
    }

    pub fn size(&self) -> usize {
        self.k
    }

    pub fn offsets(&self) -> &[[i64; 2]] {
        &self.offsets
    }

    /// Absolute window coordinates around `center`.
    pub fn window(&self, center: (i64, i64)) -> Vec<[i64; 2]> {
        self.offsets
            .iter()
            .map(|&[dx, dy]| [center.0 + dx, center.1 + dy])
            .collect()
    }

    /// Homogeneous offsets `[dx, dy, 1]`, one row per tap (`k^2 x 3`).
    pub fn augmented(&self) -> Vec<[f64; 3]> {
        self.offsets
            .iter()
            .map(|&[dx, dy]| [dx as f64, dy as f64, 1.0])
            .collect()
    }
}

/// Warped sampling coordinates of one kernel window:
/// `center + [offsets 1] * A`, a `k^2 x 2` result from a `k^2 x 3` by
/// `3 x 2` product. The matrix acts on offsets about the window centre, so
/// its linear block rotates/scales the kernel in place and `(tx, ty)`
/// translates it.
pub fn transform_kernel_coords(grid: &KernelGrid, a: &AffineMatrix, center: (f64, f64)) -> Vec<[f64; 2]> {
    grid.augmented()
        .iter()
        .map(|row| {
            let mut out = [center.0, center.1];
            for (j, o) in out.iter_mut().enumerate() {
                *o += (0..3).map(|i| row[i] * a[i][j]).sum::<f64>();
            }
            out
        })
        .collect()
}

/// The same transform for a single tap, in the form the convolution kernel
/// uses.
#[inline]
pub(crate) fn warp_offset(e: &[f64; 6], dx: f64, dy: f64) -> (f64, f64) {
    (dx * e[0] + dy * e[2] + e[4], dx * e[1] + dy * e[3] + e[5])
}
