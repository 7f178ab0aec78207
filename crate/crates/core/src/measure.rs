//! Diffuse surface measures, multiplicity estimates and bulk deviations.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{gradient, integrate, ScalarField};
use crate::potential::{bulk_roots, DoubleWell};
use crate::solve::face_gradient_sq;

/// Density `ε|∇u|²/2 + W(u)/ε` of the diffuse surface measure, with its
/// equipartition discrepancy and normal field.
#[derive(Debug, Clone)]
pub struct DiffuseMeasure {
    pub density: ScalarField,
    /// Integral of the density; equals the discrete energy of `u`.
    pub total: f64,
    /// `ε|∇u|²/2 - W(u)/ε`.
    pub discrepancy: ScalarField,
    /// `∇u/|∇u|`, or `(1, 0, ...)` where the gradient is negligible.
    pub normal: Vec<ScalarField>,
    pub eps: f64,
}

/// `|∇u|²` uses averaged squared face differences so that the total matches
/// the discrete energy exactly; normals use centered differences.
pub fn energy_measure(u: &ScalarField, eps: f64, w: &DoubleWell) -> Result<DiffuseMeasure> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let g2 = face_gradient_sq(u);
    let grid = u.grid().clone();
    let (mut dens, mut disc) = (Vec::with_capacity(g2.len()), Vec::with_capacity(g2.len()));
    for (q, &x) in g2.iter().zip(u.values()) {
        let a = 0.5 * eps * q;
        let b = w.w(x) / eps;
        dens.push(a + b);
        disc.push(a - b);
    }
    let density = ScalarField::new(grid.clone(), dens)?;
    let discrepancy = ScalarField::new(grid.clone(), disc)?;
    let total = integrate(&density);

    let grad = gradient(u);
    let threshold = 1e-12 / eps;
    let n = u.values().len();
    let mut normal: Vec<Vec<f64>> = vec![vec![0.0; n]; grad.len()];
    for i in 0..n {
        let norm = grad.iter().map(|g| g.values()[i].powi(2)).sum::<f64>().sqrt();
        if norm > threshold {
            for (a, g) in grad.iter().enumerate() {
                normal[a][i] = g.values()[i] / norm;
            }
        } else {
            normal[0][i] = 1.0;
        }
    }
    let normal = normal
        .into_iter()
        .map(|v| ScalarField::new(grid.clone(), v))
        .collect::<Result<_>>()?;
    Ok(DiffuseMeasure {
        density,
        total,
        discrepancy,
        normal,
        eps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiplicityRow {
    pub center: Vec<f64>,
    pub radius: f64,
    pub ratio: f64,
    pub n: i64,
}

/// Mass of the density in the ball over `2σ ω_{n-1} r^{n-1}` (`ω₀ = 1`,
/// `ω₁ = 2`), and its nearest integer.
pub fn multiplicity_estimate(mu: &DiffuseMeasure, center: &[f64], radius: f64, sigma: f64) -> Result<(f64, i64)> {
    let grid = mu.density.grid();
    if center.len() != grid.dim() || !(radius > 0.0) {
        return Err(Error::InvalidArgument("ball needs a positive radius and a center of grid dimension".into()));
    }
    for a in 0..grid.dim() {
        let lo = grid.origin()[a];
        let hi = lo + grid.extent()[a];
        if center[a] - radius < lo - 1e-12 || center[a] + radius > hi + 1e-12 {
            return Err(Error::OutsideDomain { point: center.to_vec() });
        }
    }
    let r2 = radius * radius;
    let mut mass = 0.0;
    for (i, &d) in mu.density.values().iter().enumerate() {
        let c = grid.center(i);
        let dist2: f64 = (0..grid.dim()).map(|a| (c[a] - center[a]).powi(2)).sum();
        if dist2 <= r2 {
            mass += d;
        }
    }
    mass *= grid.cell_volume();
    let slice = if grid.dim() == 1 { 1.0 } else { 2.0 * radius };
    let ratio = mass / (2.0 * sigma * slice);
    Ok((ratio, ratio.round() as i64))
}

pub fn write_multiplicity_csv(rows: &[MultiplicityRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "center,radius,ratio,N")?;
    for r in rows {
        let c: Vec<String> = r.center.iter().map(|x| format!("{x}")).collect();
        writeln!(out, "{},{},{},{}", c.join(" "), r.radius, r.ratio, r.n)?;
    }
    Ok(())
}

/// One-sided deviations from the perturbed bulk values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BulkDeviation {
    /// `max (λ₊ - u)` over region cells with `u > 0`.
    pub above: Option<f64>,
    /// `max (λ₋ - u)` over region cells with `u < 0`.
    pub below: Option<f64>,
    /// `max |u - λ±|` with the root on the side of `u`.
    pub sup_abs: f64,
    pub lambda_minus: f64,
    pub lambda_plus: f64,
}

/// Meaningful only on regions at least `10ε` from the interface; inside the
/// layer the deviations are of order one.
pub fn bulk_deviation(
    u: &ScalarField,
    eps: f64,
    fy1: f64,
    w: &DoubleWell,
    region: impl Fn([f64; 2]) -> bool,
) -> Result<BulkDeviation> {
    let (lm, lp) = bulk_roots(w, eps, fy1)?;
    let grid = u.grid();
    let (mut above, mut below): (Option<f64>, Option<f64>) = (None, None);
    let mut any = false;
    let mut sup_abs: f64 = 0.0;
    for (i, &x) in u.values().iter().enumerate() {
        if !region(grid.center(i)) {
            continue;
        }
        any = true;
        sup_abs = sup_abs.max(if x >= 0.0 { (x - lp).abs() } else { (x - lm).abs() });
        if x > 0.0 {
            let d = lp - x;
            above = Some(above.map_or(d, |m| m.max(d)));
        } else if x < 0.0 {
            let d = lm - x;
            below = Some(below.map_or(d, |m| m.max(d)));
        }
    }
    if !any {
        return Err(Error::EmptyRegion);
    }
    Ok(BulkDeviation {
        above,
        below,
        sup_abs,
        lambda_minus: lm,
        lambda_plus: lp,
    })
}
