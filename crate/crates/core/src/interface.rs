//! Zero level sets of phase fields, their discrete curvature, and the
//! pointwise Gibbs-Thomson residual `σκ - f`.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{sample, ScalarField};

/// Ordered polyline on `{u = 0}` with `{u > 0}` on its left.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterfaceCurve {
    pub vertices: Vec<[f64; 2]>,
    pub closed: bool,
    /// Signed curvature, positive where `{u > 0}` is locally convex; `None`
    /// where the fit window is incomplete (ends of open curves).
    pub curvature: Vec<Option<f64>>,
    /// Sampled potential, filled by [`gibbs_thomson_residual`].
    pub potential: Vec<Option<f64>>,
    pub arclength: f64,
}

impl InterfaceCurve {
    fn new(vertices: Vec<[f64; 2]>, closed: bool) -> Self {
        let n = vertices.len();
        let mut c = Self {
            vertices,
            closed,
            curvature: vec![None; n],
            potential: vec![None; n],
            arclength: 0.0,
        };
        c.arclength = c.segment_lengths().iter().sum();
        c
    }

    fn segment_lengths(&self) -> Vec<f64> {
        let n = self.vertices.len();
        let segs = if self.closed { n } else { n.saturating_sub(1) };
        (0..segs)
            .map(|k| dist(self.vertices[k], self.vertices[(k + 1) % n]))
            .collect()
    }

    /// Enclosed area (shoelace) of a closed curve; positive when the
    /// `{u > 0}` region is the inside.
    pub fn enclosed_area(&self) -> f64 {
        if !self.closed {
            return 0.0;
        }
        let n = self.vertices.len();
        let mut a = 0.0;
        for k in 0..n {
            let p = self.vertices[k];
            let q = self.vertices[(k + 1) % n];
            a += p[0] * q[1] - q[0] * p[1];
        }
        0.5 * a
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Lattice edge between two neighboring cell centers: `(i, j, vertical)`.
type EdgeId = (usize, usize, bool);

/// Marching squares on the cell-center lattice of a 2D field. Saddle cells
/// are resolved by the sign of the corner average.
pub fn extract_interface(u: &ScalarField) -> Result<Vec<InterfaceCurve>> {
    let grid = u.grid();
    if grid.dim() != 2 {
        return Err(Error::InvalidArgument(
            "extract_interface needs a 2D field; use extract_crossings in 1D".into(),
        ));
    }
    let (nx, ny) = (grid.cells()[0], grid.cells()[1]);
    let v = u.values();
    let at = |i: usize, j: usize| v[j * nx + i];
    let pos = |i: usize, j: usize| [grid.coord(0, i), grid.coord(1, j)];

    let mut points: BTreeMap<EdgeId, [f64; 2]> = BTreeMap::new();
    let mut crossing = |e: EdgeId| -> [f64; 2] {
        *points.entry(e).or_insert_with(|| {
            let (i, j, vertical) = e;
            let (a, b, pa, pb) = if vertical {
                (at(i, j), at(i, j + 1), pos(i, j), pos(i, j + 1))
            } else {
                (at(i, j), at(i + 1, j), pos(i, j), pos(i + 1, j))
            };
            let t = a / (a - b);
            [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]
        })
    };

    // Oriented segments keyed by their start edge.
    let mut next: BTreeMap<EdgeId, EdgeId> = BTreeMap::new();
    let mut has_incoming: BTreeMap<EdgeId, bool> = BTreeMap::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let c = [at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)];
            let s = c.map(|x| x > 0.0);
            // bottom, right, top, left
            let edges: [EdgeId; 4] = [(i, j, false), (i + 1, j, true), (i, j + 1, false), (i, j, true)];
            let cut = [s[0] != s[1], s[1] != s[2], s[3] != s[2], s[0] != s[3]];
            let ncut = cut.iter().filter(|&&x| x).count();
            let pairs: Vec<(usize, usize)> = match ncut {
                2 => {
                    let idx: Vec<usize> = (0..4).filter(|&k| cut[k]).collect();
                    vec![(idx[0], idx[1])]
                }
                4 => {
                    let center = 0.25 * (c[0] + c[1] + c[2] + c[3]) > 0.0;
                    if center == s[0] {
                        // corners 1 and 3 are isolated
                        vec![(0, 1), (2, 3)]
                    } else {
                        vec![(0, 3), (1, 2)]
                    }
                }
                _ => Vec::new(),
            };
            for (ea, eb) in pairs {
                let (a, b) = (edges[ea], edges[eb]);
                let pa = crossing(a);
                let pb = crossing(b);
                // orient with u > 0 on the left using the bilinear gradient
                let mx = ((pa[0] + pb[0]) / 2.0 - pos(i, j)[0]) / (pos(i + 1, j)[0] - pos(i, j)[0]);
                let my = ((pa[1] + pb[1]) / 2.0 - pos(i, j)[1]) / (pos(i, j + 1)[1] - pos(i, j)[1]);
                let gx = (1.0 - my) * (c[1] - c[0]) + my * (c[2] - c[3]);
                let gy = (1.0 - mx) * (c[3] - c[0]) + mx * (c[2] - c[1]);
                let hx = pos(i + 1, j)[0] - pos(i, j)[0];
                let hy = pos(i, j + 1)[1] - pos(i, j)[1];
                let (dx, dy) = (pb[0] - pa[0], pb[1] - pa[1]);
                let left = -dy * gx / hx + dx * gy / hy;
                let (from, to) = if left >= 0.0 { (a, b) } else { (b, a) };
                next.insert(from, to);
                has_incoming.insert(to, true);
            }
        }
    }

    let mut curves = Vec::new();
    let mut used: BTreeMap<EdgeId, bool> = BTreeMap::new();
    let starts: Vec<EdgeId> = next
        .keys()
        .copied()
        .filter(|e| !has_incoming.contains_key(e))
        .collect();
    let trace = |start: EdgeId, used: &mut BTreeMap<EdgeId, bool>| {
        let mut verts = vec![points[&start]];
        used.insert(start, true);
        let mut cur = start;
        let mut closed = false;
        while let Some(&nx_e) = next.get(&cur) {
            if nx_e == start {
                closed = true;
                break;
            }
            if used.contains_key(&nx_e) {
                break;
            }
            used.insert(nx_e, true);
            verts.push(points[&nx_e]);
            cur = nx_e;
        }
        InterfaceCurve::new(verts, closed)
    };
    for s in starts {
        if !used.contains_key(&s) {
            curves.push(trace(s, &mut used));
        }
    }
    let keys: Vec<EdgeId> = next.keys().copied().collect();
    for s in keys {
        if !used.contains_key(&s) {
            curves.push(trace(s, &mut used));
        }
    }
    Ok(curves)
}

/// Zero crossings of a 1D field by linear interpolation between centers.
pub fn extract_crossings(u: &ScalarField) -> Result<Vec<f64>> {
    let grid = u.grid();
    if grid.dim() != 1 {
        return Err(Error::InvalidArgument("extract_crossings needs a 1D field".into()));
    }
    let v = u.values();
    let mut out = Vec::new();
    for i in 0..v.len() - 1 {
        let (a, b) = (v[i], v[i + 1]);
        if (a > 0.0) != (b > 0.0) {
            let t = a / (a - b);
            out.push(grid.coord(0, i) + t * (grid.coord(0, i + 1) - grid.coord(0, i)));
        }
    }
    Ok(out)
}

/// Curvature of the least-squares circle `A(x²+y²) + Bx + y + D = 0` in the
/// vertex's tangent frame, or 0 when the fit is degenerate.
fn fit_curvature(local: &[[f64; 2]]) -> f64 {
    let mut m = [[0.0; 3]; 3];
    let mut rhs = [0.0; 3];
    for p in local {
        let row = [p[0] * p[0] + p[1] * p[1], p[0], 1.0];
        for a in 0..3 {
            for b in 0..3 {
                m[a][b] += row[a] * row[b];
            }
            rhs[a] -= row[a] * p[1];
        }
    }
    let Some([a, b, d]) = solve3(m, rhs) else {
        return 0.0;
    };
    let disc = b * b + 1.0 - 4.0 * a * d;
    if disc <= 0.0 {
        return 0.0;
    }
    -2.0 * a / disc.sqrt()
}

fn solve3(mut m: [[f64; 3]; 3], mut r: [f64; 3]) -> Option<[f64; 3]> {
    let scale = m.iter().flatten().fold(0.0f64, |s, x| s.max(x.abs()));
    for col in 0..3 {
        let piv = (col..3).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() <= 1e-14 * scale {
            return None;
        }
        m.swap(col, piv);
        r.swap(col, piv);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            r[row] -= f * r[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut s = r[row];
        for k in row + 1..3 {
            s -= m[row][k] * x[k];
        }
        x[row] = s / m[row][row];
    }
    Some(x)
}

/// Fills per-vertex curvature from circle fits over `window` of arclength
/// centered at each vertex. Open-curve vertices without a full window get
/// `None`.
pub fn curvature(curve: &InterfaceCurve, window: f64) -> Result<InterfaceCurve> {
    let mut out = curve.clone();
    let n = curve.vertices.len();
    if n < 3 {
        out.curvature = vec![None; n];
        return Ok(out);
    }
    let seg = curve.segment_lengths();
    let mean_seg = curve.arclength / seg.len() as f64;
    if !(window >= 3.0 * mean_seg) {
        return Err(Error::InvalidArgument(format!(
            "curvature window {window} is below three vertex spacings ({})",
            3.0 * mean_seg
        )));
    }
    let half = 0.5 * window;
    if curve.closed && curve.arclength <= window {
        return Err(Error::InvalidArgument("curvature window exceeds closed curve length".into()));
    }
    let step = |k: usize, fwd: bool| -> Option<(usize, f64)> {
        if fwd {
            if k + 1 < n {
                Some((k + 1, seg[k]))
            } else if curve.closed {
                Some((0, seg[n - 1]))
            } else {
                None
            }
        } else if k > 0 {
            Some((k - 1, seg[k - 1]))
        } else if curve.closed {
            Some((n - 1, seg[n - 1]))
        } else {
            None
        }
    };
    for i in 0..n {
        let mut idx = vec![i];
        let mut complete = true;
        for fwd in [false, true] {
            let (mut k, mut s) = (i, 0.0);
            loop {
                match step(k, fwd) {
                    Some((k2, l)) => {
                        if s + l > half {
                            break;
                        }
                        s += l;
                        k = k2;
                        idx.push(k);
                    }
                    None => {
                        complete = false;
                        break;
                    }
                }
            }
        }
        if !complete || idx.len() < 3 {
            out.curvature[i] = None;
            continue;
        }
        let back = step(i, false).map(|x| x.0).unwrap_or(i);
        let fwd = step(i, true).map(|x| x.0).unwrap_or(i);
        let p = curve.vertices[i];
        let (tx, ty) = (
            curve.vertices[fwd][0] - curve.vertices[back][0],
            curve.vertices[fwd][1] - curve.vertices[back][1],
        );
        let tn = (tx * tx + ty * ty).sqrt();
        if tn == 0.0 {
            out.curvature[i] = Some(0.0);
            continue;
        }
        let (tx, ty) = (tx / tn, ty / tn);
        let local: Vec<[f64; 2]> = idx
            .iter()
            .map(|&k| {
                let d = [curve.vertices[k][0] - p[0], curve.vertices[k][1] - p[1]];
                [(d[0] * tx + d[1] * ty) / half, (-d[0] * ty + d[1] * tx) / half]
            })
            .collect();
        out.curvature[i] = Some(fit_curvature(&local) / half);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VertexResidual {
    pub index: usize,
    pub x: f64,
    pub y: f64,
    pub kappa: f64,
    pub f: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GtReport {
    pub sup_residual: f64,
    /// `sqrt(∫ r² ds)` with arclength weights.
    pub l2_residual: f64,
    pub vertices: usize,
    pub sigma: f64,
    #[serde(skip)]
    pub per_vertex: Vec<VertexResidual>,
}

/// `r_i = σ κ_i - f(x_i)` over vertices with a curvature value.
pub fn gibbs_thomson_residual(curve: &mut InterfaceCurve, f_total: &ScalarField, sigma: f64) -> Result<GtReport> {
    let n = curve.vertices.len();
    let seg = curve.segment_lengths();
    let mut per_vertex = Vec::new();
    let (mut sup, mut l2): (f64, f64) = (0.0, 0.0);
    for i in 0..n {
        let p = curve.vertices[i];
        let f = sample(f_total, &p)?;
        curve.potential[i] = Some(f);
        let Some(k) = curve.curvature[i] else { continue };
        let r = sigma * k - f;
        let before = if i > 0 { seg[i - 1] } else if curve.closed { seg[n - 1] } else { 0.0 };
        let after = if i < seg.len() { seg[i] } else { 0.0 };
        let weight = 0.5 * (before + after);
        sup = sup.max(r.abs());
        l2 += r * r * weight;
        per_vertex.push(VertexResidual {
            index: i,
            x: p[0],
            y: p[1],
            kappa: k,
            f,
            residual: r,
        });
    }
    Ok(GtReport {
        sup_residual: sup,
        l2_residual: l2.sqrt(),
        vertices: per_vertex.len(),
        sigma,
        per_vertex,
    })
}

/// CSV rows `index,x,y,kappa,f,residual`; missing values are left empty.
pub fn write_curve_csv(curve: &InterfaceCurve, sigma: f64, mut out: impl Write) -> Result<()> {
    writeln!(out, "index,x,y,kappa,f,residual")?;
    for (i, p) in curve.vertices.iter().enumerate() {
        let k = curve.curvature[i];
        let f = curve.potential[i];
        let r = match (k, f) {
            (Some(k), Some(f)) => format!("{:e}", sigma * k - f),
            _ => String::new(),
        };
        let fmt = |x: Option<f64>| x.map(|v| format!("{v:e}")).unwrap_or_default();
        writeln!(out, "{i},{:e},{:e},{},{},{r}", p[0], p[1], fmt(k), fmt(f))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;

    fn disk(n: usize, eps: f64, r: f64) -> ScalarField {
        let g = Grid::unit(2, n).unwrap();
        ScalarField::from_fn(&g, |p| {
            let d = r - ((p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2)).sqrt();
            (d / (std::f64::consts::SQRT_2 * eps)).tanh()
        })
    }

    fn bilinear_at(u: &ScalarField, p: [f64; 2]) -> f64 {
        sample(u, &p).unwrap()
    }

    #[test]
    fn constant_field_has_no_interface() {
        let g = Grid::unit(2, 16).unwrap();
        assert!(extract_interface(&ScalarField::constant(&g, 0.5)).unwrap().is_empty());
    }

    #[test]
    fn circle_length_and_zero_set() {
        let u = disk(200, 0.02, 0.25);
        let curves = extract_interface(&u).unwrap();
        assert_eq!(curves.len(), 1);
        let c = &curves[0];
        assert!(c.closed);
        let h = 1.0 / 200.0;
        assert!((c.arclength - 2.0 * std::f64::consts::PI * 0.25).abs() <= 2.0 * h);
        assert!(c.enclosed_area() > 0.0);
        for w in c.vertices.windows(2) {
            assert!(dist(w[0], w[1]) <= 2.0 * h);
        }
        for &p in &c.vertices {
            assert!(bilinear_at(&u, p).abs() <= 1e-12);
        }
    }

    #[test]
    fn planar_open_polyline() {
        let g = Grid::unit(2, 64).unwrap();
        let u = ScalarField::from_fn(&g, |p| ((p[0] - 0.5) / (std::f64::consts::SQRT_2 * 0.02)).tanh());
        let curves = extract_interface(&u).unwrap();
        assert_eq!(curves.len(), 1);
        let c = &curves[0];
        assert!(!c.closed);
        let h = 1.0 / 64.0;
        assert!(c.vertices.iter().all(|p| (p[0] - 0.5).abs() <= h / 2.0));
        // u > 0 to the right means the curve runs downward
        assert!(c.vertices[0][1] > c.vertices[c.vertices.len() - 1][1]);
        let k = curvature(c, 0.12).unwrap();
        assert!(k.curvature.first().unwrap().is_none());
        for x in k.curvature.iter().flatten() {
            assert!(x.abs() < 1e-10);
        }
    }

    #[test]
    fn circle_curvature_and_sign() {
        let u = disk(200, 0.02, 0.25);
        let c = curvature(&extract_interface(&u).unwrap()[0], 0.12).unwrap();
        for k in &c.curvature {
            let k = k.unwrap();
            assert!((k - 4.0).abs() <= 0.2, "{k}");
        }
        let neg = u.map(|x| -x);
        let c2 = curvature(&extract_interface(&neg).unwrap()[0], 0.12).unwrap();
        for k in &c2.curvature {
            assert!((k.unwrap() + 4.0).abs() <= 0.2);
        }
    }

    #[test]
    fn curvature_converges_under_refinement() {
        let err = |n: usize| {
            let u = disk(n, 0.02, 0.25);
            let c = curvature(&extract_interface(&u).unwrap()[0], 0.12).unwrap();
            c.curvature.iter().map(|k| (k.unwrap() - 4.0).abs()).fold(0.0, f64::max)
        };
        let (coarse, fine) = (err(100), err(200));
        assert!(fine <= coarse * 0.55 || fine < 1e-3, "{coarse} -> {fine}");
    }

    #[test]
    fn gt_residual_constant_offset() {
        let u = disk(200, 0.02, 0.25);
        let sigma = std::f64::consts::SQRT_2 / 3.0;
        let mut c = curvature(&extract_interface(&u).unwrap()[0], 0.12).unwrap();
        let lam = 4.0 * sigma;
        let f = ScalarField::constant(u.grid(), lam);
        let base = gibbs_thomson_residual(&mut c, &f, sigma).unwrap();
        assert!(base.sup_residual <= 0.1 * lam);
        let f1 = ScalarField::constant(u.grid(), lam + 1.0);
        let off = gibbs_thomson_residual(&mut c, &f1, sigma).unwrap();
        assert!((off.sup_residual - 1.0).abs() <= 0.1 * lam);
        assert_eq!(off.vertices, c.vertices.len());
        let mut csv = Vec::new();
        write_curve_csv(&c, sigma, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), c.vertices.len() + 1);
    }

    #[test]
    fn crossings_in_1d() {
        let g = Grid::unit(1, 100).unwrap();
        let u = ScalarField::from_fn(&g, |p| (p[0] - 0.3) * (p[0] - 0.705));
        let x = extract_crossings(&u).unwrap();
        assert_eq!(x.len(), 2);
        assert!((x[0] - 0.3).abs() < 1e-4 && (x[1] - 0.705).abs() < 1e-4);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn residual_invariant_under_joint_shift(shift in -3.0f64..3.0) {
                let u = disk(120, 0.03, 0.3);
                let sigma = 0.5;
                let mut c = curvature(&extract_interface(&u).unwrap()[0], 0.18).unwrap();
                let f = ScalarField::from_fn(u.grid(), |p| 1.0 + p[0]);
                let base = gibbs_thomson_residual(&mut c, &f, sigma).unwrap();
                let mut shifted = c.clone();
                for k in shifted.curvature.iter_mut().flatten() {
                    *k += shift / sigma;
                }
                let f2 = f.map(|x| x + shift);
                let moved = gibbs_thomson_residual(&mut shifted, &f2, sigma).unwrap();
                prop_assert!((base.sup_residual - moved.sup_residual).abs() < 1e-10);
                prop_assert!((base.l2_residual - moved.l2_residual).abs() < 1e-10);
            }
        }
    }
}
