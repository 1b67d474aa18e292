//! Scanline-free triangle rasterisation by edge functions, sampling pixel
//! centres `(j + 0.5, i + 0.5)` in a y-down pixel frame.

/// Normalised-UV area below which a triangle is ignored.
pub const EPS_UV: f64 = 1e-12;

/// `(b - a) x (p - a)`.
#[inline]
pub fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Whether points exactly on directed edge `a -> b` of a positively
/// oriented triangle belong to it. Each interior edge is shared by two
/// triangles with opposite directions, so exactly one of them claims it.
#[inline]
fn owns_edge(a: [f64; 2], b: [f64; 2]) -> bool {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    dy < 0.0 || (dy == 0.0 && dx > 0.0)
}

/// Visit every pixel centre covered by triangle `tri` (pixel coordinates)
/// with its barycentric weights for the original vertex order.
pub fn for_each_covered(
    tri: [[f64; 2]; 3],
    width: usize,
    height: usize,
    mut visit: impl FnMut(usize, usize, [f64; 3]),
) {
    let [p0, mut p1, mut p2] = tri;
    let mut area = edge(p0, p1, p2);
    let flipped = area < 0.0;
    if flipped {
        std::mem::swap(&mut p1, &mut p2);
        area = -area;
    }
    if !(area > 0.0) {
        return;
    }
    let xs = [p0[0], p1[0], p2[0]];
    let ys = [p0[1], p1[1], p2[1]];
    let lo = |v: &[f64; 3]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = |v: &[f64; 3]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // centres c with lo <= c + 0.5 <= hi
    let j0 = (lo(&xs) - 0.5).ceil().max(0.0) as usize;
    let i0 = (lo(&ys) - 0.5).ceil().max(0.0) as usize;
    let j1 = ((hi(&xs) - 0.5).floor()).min(width as f64 - 1.0);
    let i1 = ((hi(&ys) - 0.5).floor()).min(height as f64 - 1.0);
    if j1 < 0.0 || i1 < 0.0 {
        return;
    }
    let (j1, i1) = (j1 as usize, i1 as usize);
    let own = [owns_edge(p1, p2), owns_edge(p2, p0), owns_edge(p0, p1)];
    for i in i0..=i1 {
        for j in j0..=j1 {
            let p = [j as f64 + 0.5, i as f64 + 0.5];
            let e = [edge(p1, p2, p), edge(p2, p0, p), edge(p0, p1, p)];
            if (0..3).all(|k| e[k] > 0.0 || (e[k] == 0.0 && own[k])) {
                let w = [e[0] / area, e[1] / area, e[2] / area];
                let w = if flipped { [w[0], w[2], w[1]] } else { w };
                visit(i, j, w);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_edge_claimed_once() {
        // square split along its diagonal, whose texel centres lie exactly on it
        let a = [[0.0, 0.0], [4.0, 0.0], [4.0, 4.0]];
        let b = [[0.0, 0.0], [4.0, 4.0], [0.0, 4.0]];
        let mut hits = vec![0; 16];
        for t in [a, b] {
            for_each_covered(t, 4, 4, |i, j, _| hits[i * 4 + j] += 1);
        }
        assert!(hits.iter().all(|&h| h == 1), "{hits:?}");
    }

    #[test]
    fn barycentrics_follow_vertex_order() {
        for tri in [[[0.0, 0.0], [8.0, 0.0], [0.0, 8.0]], [[0.0, 0.0], [0.0, 8.0], [8.0, 0.0]]] {
            for_each_covered(tri, 8, 8, |i, j, w| {
                let p = [j as f64 + 0.5, i as f64 + 0.5];
                let q = [
                    w[0] * tri[0][0] + w[1] * tri[1][0] + w[2] * tri[2][0],
                    w[0] * tri[0][1] + w[1] * tri[1][1] + w[2] * tri[2][1],
                ];
                assert!((p[0] - q[0]).abs() < 1e-12 && (p[1] - q[1]).abs() < 1e-12);
            });
        }
    }

    #[test]
    fn degenerate_and_offscreen() {
        let mut n = 0;
        for_each_covered([[0.0, 0.0], [2.0, 2.0], [4.0, 4.0]], 8, 8, |_, _, _| n += 1);
        for_each_covered([[-9.0, -9.0], [-5.0, -9.0], [-9.0, -5.0]], 8, 8, |_, _, _| n += 1);
        assert_eq!(n, 0);
    }
}
