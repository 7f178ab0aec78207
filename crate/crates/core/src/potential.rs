//! Double-well potentials, surface tension, one-dimensional transition
//! profiles and the perturbed bulk values used by the comparison
//! construction.
//!
//! Wells are represented as `W(r) = (1 - r^2)^2 q(r)` with a polynomial
//! factor `q` that is strictly positive on `[-2, 2]`. This keeps the minima
//! at `±1`, non-degenerate with `W''(±1) = 8 q(±1)`, and covers the standard
//! quartic `(1 - r^2)^2 / 4` with `q = 1/4`.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::UniformSpline;
use crate::krylov::{self, thomas, KrylovSettings};

/// Which derivative of the well to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Derivative {
    Value,
    First,
    Second,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoubleWell {
    /// Ascending coefficients of the positive factor `q`.
    factor: Vec<f64>,
}

impl Default for DoubleWell {
    fn default() -> Self {
        Self::quartic()
    }
}

fn poly_derivs(coeffs: &[f64], x: f64) -> [f64; 4] {
    // Horner with derivatives up to third order.
    let mut d = [0.0; 4];
    for &c in coeffs.iter().rev() {
        d[3] = d[3] * x + 3.0 * d[2];
        d[2] = d[2] * x + 2.0 * d[1];
        d[1] = d[1] * x + d[0];
        d[0] = d[0] * x + c;
    }
    d
}

impl DoubleWell {
    /// `W(r) = (1 - r^2)^2 / 4`.
    pub fn quartic() -> Self {
        Self { factor: vec![0.25] }
    }

    /// Well `(1 - r^2)^2 q(r)` with `q` given by ascending coefficients.
    /// Rejects factors that are not strictly positive on `[-2, 2]`.
    pub fn with_factor(factor: Vec<f64>) -> Result<Self> {
        if factor.is_empty() || factor.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidWell("factor needs finite coefficients".into()));
        }
        let well = Self { factor };
        for k in 0..=4000 {
            let r = -2.0 + 4.0 * k as f64 / 4000.0;
            let q = poly_derivs(&well.factor, r)[0];
            if q <= 0.0 {
                return Err(Error::InvalidWell(format!("factor q({r}) = {q} is not positive")));
            }
        }
        Ok(well)
    }

    /// `c^2 W` for this well.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::with_factor(self.factor.iter().map(|a| a * c * c).collect())
    }

    pub fn factor(&self) -> &[f64] {
        &self.factor
    }

    /// `[W, W', W'', W''']` at `r`.
    pub fn derivs(&self, r: f64) -> [f64; 4] {
        let q = poly_derivs(&self.factor, r);
        let s = 1.0 - r * r;
        let g = [s * s, -4.0 * r * s, 12.0 * r * r - 4.0, 24.0 * r];
        [
            g[0] * q[0],
            g[1] * q[0] + g[0] * q[1],
            g[2] * q[0] + 2.0 * g[1] * q[1] + g[0] * q[2],
            g[3] * q[0] + 3.0 * g[2] * q[1] + 3.0 * g[1] * q[2] + g[0] * q[3],
        ]
    }

    pub fn eval(&self, r: f64, order: Derivative) -> f64 {
        let d = self.derivs(r);
        match order {
            Derivative::Value => d[0],
            Derivative::First => d[1],
            Derivative::Second => d[2],
        }
    }

    pub fn w(&self, r: f64) -> f64 {
        self.derivs(r)[0]
    }

    pub fn dw(&self, r: f64) -> f64 {
        self.derivs(r)[1]
    }

    pub fn d2w(&self, r: f64) -> f64 {
        self.derivs(r)[2]
    }

    /// `(W''(-1), W''(+1))`.
    pub fn well_curvatures(&self) -> (f64, f64) {
        (self.d2w(-1.0), self.d2w(1.0))
    }

    fn mean_curvature(&self) -> f64 {
        let (a, b) = self.well_curvatures();
        0.5 * (a + b)
    }

    /// Extremes of `W'` on `[-1, 1]`: `(min, argmin, max, argmax)`.
    fn derivative_extremes(&self) -> (f64, f64, f64, f64) {
        let n = 4000;
        let mut lo = (f64::INFINITY, 0.0);
        let mut hi = (f64::NEG_INFINITY, 0.0);
        for k in 0..=n {
            let r = -1.0 + 2.0 * k as f64 / n as f64;
            let d = self.dw(r);
            if d < lo.0 {
                lo = (d, r);
            }
            if d > hi.0 {
                hi = (d, r);
            }
        }
        let step = 2.0 / n as f64;
        let refine = |mut a: f64, mut b: f64, sign: f64| {
            // golden-section on sign * W'
            let g = 0.5 * (5f64.sqrt() - 1.0);
            for _ in 0..80 {
                let x1 = b - g * (b - a);
                let x2 = a + g * (b - a);
                if sign * self.dw(x1) < sign * self.dw(x2) {
                    b = x2;
                } else {
                    a = x1;
                }
            }
            let x = 0.5 * (a + b);
            (self.dw(x), x)
        };
        let lo = refine((lo.1 - step).max(-1.0), (lo.1 + step).min(1.0), 1.0);
        let hi = refine((hi.1 - step).max(-1.0), (hi.1 + step).min(1.0), -1.0);
        (lo.0, lo.1, hi.0, hi.1)
    }
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// `σ = ∫_{-1}^{1} sqrt(W(s)/2) ds` by composite 8-point Gauss-Legendre
/// quadrature with `quad_points` total nodes (rounded up to whole panels).
pub fn surface_tension(w: &DoubleWell, quad_points: usize) -> Result<f64> {
    if quad_points < 16 {
        return Err(Error::InvalidArgument(format!(
            "surface tension needs at least 16 quadrature points, got {quad_points}"
        )));
    }
    let (gx, gw) = gauss_legendre(8);
    let panels = quad_points.div_ceil(8);
    let width = 2.0 / panels as f64;
    let mut sum = 0.0;
    for p in 0..panels {
        let mid = -1.0 + (p as f64 + 0.5) * width;
        for (x, wt) in gx.iter().zip(&gw) {
            let s = mid + 0.5 * width * x;
            let value = w.w(s);
            if value < 0.0 {
                return Err(Error::NegativePotential { node: s, value });
            }
            sum += wt * (0.5 * value).sqrt();
        }
    }
    Ok(sum * 0.5 * width)
}

/// How the right-hand side of the first-order correction is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrectionRhs {
    /// Remove the component along the profile derivative (the kernel of the
    /// linearized operator) and solve with an orthogonality constraint.
    Projected,
    /// Plain Dirichlet solve of `φ₀' + σ`; no bounded solution exists on the
    /// line, so the result grows with the truncation width.
    Raw,
}

#[derive(Debug, Clone, Copy)]
pub struct ProfileSettings {
    pub max_iter: usize,
    /// Sup-norm tolerance on the discrete residual of `-φ'' + W'(φ)`.
    pub tol: f64,
    pub krylov: KrylovSettings,
}

impl Default for ProfileSettings {
    fn default() -> Self {
        Self {
            max_iter: 40,
            tol: 5e-9,
            krylov: KrylovSettings {
                tol: 1e-13,
                max_iter: 2000,
            },
        }
    }
}

/// Solution of the optimal-profile boundary value problem on `[-T, T]`.
#[derive(Debug, Clone)]
pub struct OptimalProfile {
    pub half_width: f64,
    pub spacing: f64,
    pub values: Vec<f64>,
    /// Max interior residual of the centered-difference equation.
    pub residual: f64,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
}

/// First-order correction on the same nodes as its [`OptimalProfile`].
#[derive(Debug, Clone)]
pub struct CorrectionProfile {
    pub values: Vec<f64>,
    /// `⟨φ₀' + σ, φ₀'⟩ / ⟨φ₀', φ₀'⟩`, the component removed by projection.
    pub fredholm_coefficient: f64,
    /// Multiplier of the orthogonality constraint (zero for raw mode).
    pub multiplier: f64,
    /// `⟨φ₁, φ₀'⟩` after the solve (h-weighted).
    pub orthogonality: f64,
    pub mode: CorrectionRhs,
}

fn node_count(half_width: f64, spacing: f64) -> Result<usize> {
    let cells = 2.0 * half_width / spacing;
    let rounded = cells.round();
    if (cells - rounded).abs() > 1e-6 || rounded < 4.0 {
        return Err(Error::InvalidArgument(format!(
            "2T/h = {cells} must be a whole number of at least 4"
        )));
    }
    Ok(rounded as usize + 1)
}

/// Centered first derivative at interior nodes, fourth order where the
/// stencil fits.
fn table_derivative(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let mut d = vec![0.0; n];
    for i in 0..n {
        d[i] = if i >= 2 && i + 2 < n {
            (-values[i + 2] + 8.0 * values[i + 1] - 8.0 * values[i - 1] + values[i - 2]) / (12.0 * h)
        } else if i >= 1 && i + 1 < n {
            (values[i + 1] - values[i - 1]) / (2.0 * h)
        } else if i == 0 {
            (values[1] - values[0]) / h
        } else {
            (values[n - 1] - values[n - 2]) / h
        };
    }
    d
}

/// Solves `(J + k kᵀ/|k|²) x = rhs` for the bordered elimination, with the
/// shifted second-difference operator as preconditioner.
struct BorderedSolver<'a> {
    diag: &'a [f64],
    off: f64,
    kernel: &'a [f64],
    lift: f64,
    pre_diag: Vec<f64>,
    settings: KrylovSettings,
}

impl BorderedSolver<'_> {
    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let m = rhs.len();
        let apply = |x: &[f64], y: &mut [f64]| {
            let kx = krylov::dot(self.kernel, x) * self.lift;
            for i in 0..m {
                let mut s = self.diag[i] * x[i];
                if i > 0 {
                    s += self.off * x[i - 1];
                }
                if i + 1 < m {
                    s += self.off * x[i + 1];
                }
                y[i] = s + kx * self.kernel[i];
            }
        };
        let lower = vec![self.off; m];
        let upper = vec![self.off; m];
        let precond = |r: &[f64], z: &mut [f64]| {
            let sol = thomas(&lower, &self.pre_diag, &upper, r).expect("SPD preconditioner");
            z.copy_from_slice(&sol);
        };
        let mut x = vec![0.0; m];
        let out = krylov::cg(apply, precond, |_| {}, rhs, &mut x, self.settings);
        if !out.converged && out.relative_residual > 1e-9 {
            return Err(Error::NotConverged {
                what: "profile linear solve",
                iterations: out.iterations,
                history: vec![out.relative_residual],
            });
        }
        Ok(x)
    }

    /// Solves `J x + μ k = rhs`, `kᵀ x = 0`.
    fn solve_bordered(&self, rhs: &[f64]) -> Result<(Vec<f64>, f64)> {
        let a = self.solve(rhs)?;
        let b = self.solve(self.kernel)?;
        let kb = krylov::dot(self.kernel, &b);
        if kb.abs() < 1e-300 {
            return Err(Error::Singular("bordered profile system"));
        }
        let mu = krylov::dot(self.kernel, &a) / kb;
        let x = a.iter().zip(&b).map(|(ai, bi)| ai - mu * bi).collect();
        Ok((x, mu))
    }
}

/// Solves `-φ₀'' + W'(φ₀) = 0` on `[-T, T]` with `φ₀(±T) = ±tanh(T/√2)` by
/// damped Newton on centered differences.
///
/// The truncated problem is nearly translation invariant, so each Newton step
/// carries a phase constraint orthogonal to the current profile slope.
pub fn optimal_profile(
    w: &DoubleWell,
    half_width: f64,
    spacing: f64,
    settings: &ProfileSettings,
) -> Result<OptimalProfile> {
    if half_width < 10.0 || spacing > 0.05 || spacing <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "profile needs T >= 10 and 0 < h <= 0.05 (got T = {half_width}, h = {spacing})"
        )));
    }
    let n = node_count(half_width, spacing)?;
    let h = spacing;
    let rate = (0.5 * w.mean_curvature()).sqrt();
    let mut phi: Vec<f64> = (0..n)
        .map(|i| ((-half_width + i as f64 * h) * rate).tanh())
        .collect();
    let edge = (half_width / std::f64::consts::SQRT_2).tanh();
    phi[0] = -edge;
    phi[n - 1] = edge;

    let m = n - 2;
    let h2 = h * h;
    let residual = |phi: &[f64], out: &mut [f64]| -> f64 {
        let mut sup: f64 = 0.0;
        for i in 1..n - 1 {
            let r = -(phi[i + 1] - 2.0 * phi[i] + phi[i - 1]) / h2 + w.dw(phi[i]);
            out[i - 1] = r;
            sup = sup.max(r.abs());
        }
        sup
    };
    let mut f = vec![0.0; m];
    let mut sup = residual(&phi, &mut f);
    let mut history = vec![sup];
    let pre_diag = vec![2.0 / h2 + w.mean_curvature(); m];
    let mut trial = phi.clone();
    let mut f_trial = vec![0.0; m];

    for it in 1..=settings.max_iter {
        if sup <= settings.tol {
            return Ok(OptimalProfile {
                half_width,
                spacing,
                values: phi,
                residual: sup,
                iterations: it - 1,
                residual_history: history,
            });
        }
        let diag: Vec<f64> = (1..n - 1).map(|i| 2.0 / h2 + w.d2w(phi[i])).collect();
        let kernel: Vec<f64> = (1..n - 1).map(|i| (phi[i + 1] - phi[i - 1]) / (2.0 * h)).collect();
        let kk = krylov::dot(&kernel, &kernel);
        let solver = BorderedSolver {
            diag: &diag,
            off: -1.0 / h2,
            kernel: &kernel,
            lift: 1.0 / kk,
            pre_diag: pre_diag.clone(),
            settings: settings.krylov,
        };
        let rhs: Vec<f64> = f.iter().map(|x| -x).collect();
        let (step, _) = solver.solve_bordered(&rhs)?;

        let mut t = 1.0;
        loop {
            for i in 1..n - 1 {
                trial[i] = phi[i] + t * step[i - 1];
            }
            trial[0] = phi[0];
            trial[n - 1] = phi[n - 1];
            let s = residual(&trial, &mut f_trial);
            if s < sup {
                std::mem::swap(&mut phi, &mut trial);
                std::mem::swap(&mut f, &mut f_trial);
                sup = s;
                break;
            }
            t *= 0.5;
            if t < 2f64.powi(-20) {
                if sup <= 2.0 * settings.tol {
                    // Rounding floor of the residual.
                    return Ok(OptimalProfile {
                        half_width,
                        spacing,
                        values: phi,
                        residual: sup,
                        iterations: it,
                        residual_history: history,
                    });
                }
                return Err(Error::NotConverged {
                    what: "optimal profile",
                    iterations: it,
                    history,
                });
            }
        }
        history.push(sup);
    }
    if sup <= settings.tol {
        return Ok(OptimalProfile {
            half_width,
            spacing,
            values: phi,
            residual: sup,
            iterations: settings.max_iter,
            residual_history: history,
        });
    }
    Err(Error::NotConverged {
        what: "optimal profile",
        iterations: settings.max_iter,
        history,
    })
}

/// Solves `-φ₁'' + W''(φ₀) φ₁ = g` with `φ₁(±T) = σ / W''(±1)`.
///
/// In [`CorrectionRhs::Projected`] mode `g` is `φ₀' + σ` with its component
/// along `φ₀'` removed (for the quartic well this is `σ - φ₀'`), and `φ₁` is
/// constrained to be orthogonal to `φ₀'`.
pub fn first_order_correction(
    w: &DoubleWell,
    profile: &OptimalProfile,
    sigma: f64,
    mode: CorrectionRhs,
    settings: &ProfileSettings,
) -> Result<CorrectionProfile> {
    let phi0 = &profile.values;
    let n = phi0.len();
    let h = profile.spacing;
    let h2 = h * h;
    let (wm, wp) = w.well_curvatures();
    let (left, right) = (sigma / wm, sigma / wp);

    let slope = table_derivative(phi0, h);
    let kernel: Vec<f64> = slope[1..n - 1].to_vec();
    let raw: Vec<f64> = kernel.iter().map(|d| d + sigma).collect();
    let kk = krylov::dot(&kernel, &kernel);
    let fredholm_coefficient = krylov::dot(&raw, &kernel) / kk;

    let diag: Vec<f64> = (1..n - 1).map(|i| 2.0 / h2 + w.d2w(phi0[i])).collect();
    let mut values = vec![0.0; n];
    values[0] = left;
    values[n - 1] = right;

    let (interior, multiplier) = match mode {
        CorrectionRhs::Projected => {
            let mut rhs: Vec<f64> = raw
                .iter()
                .zip(&kernel)
                .map(|(g, k)| g - fredholm_coefficient * k)
                .collect();
            rhs[0] += left / h2;
            let last = rhs.len() - 1;
            rhs[last] += right / h2;
            let solver = BorderedSolver {
                diag: &diag,
                off: -1.0 / h2,
                kernel: &kernel,
                lift: 1.0 / kk,
                pre_diag: vec![2.0 / h2 + w.mean_curvature(); n - 2],
                settings: settings.krylov,
            };
            solver.solve_bordered(&rhs)?
        }
        CorrectionRhs::Raw => {
            let mut rhs = raw.clone();
            rhs[0] += left / h2;
            let last = rhs.len() - 1;
            rhs[last] += right / h2;
            let off = vec![-1.0 / h2; n - 2];
            let x = thomas(&off, &diag, &off, &rhs).ok_or(Error::Singular("raw correction"))?;
            (x, 0.0)
        }
    };
    values[1..n - 1].copy_from_slice(&interior);
    let orthogonality = h * krylov::dot(&interior, &kernel);
    Ok(CorrectionProfile {
        values,
        fredholm_coefficient,
        multiplier,
        orthogonality,
        mode,
    })
}

/// Sampled profiles `φ₀`, `φ₁` with cubic-spline interpolation on `[-T, T]`
/// and constant tails beyond.
#[derive(Debug, Clone)]
pub struct ProfileTable {
    half_width: f64,
    spacing: f64,
    sigma: f64,
    phi0: Vec<f64>,
    phi1: Vec<f64>,
    spline0: UniformSpline,
    spline1: UniformSpline,
    pub residual_phi0: f64,
    pub fredholm_coefficient: f64,
    pub multiplier: f64,
    pub orthogonality: f64,
}

/// Header of the serialized profile table.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TableHeader {
    #[serde(rename = "T")]
    half_width: f64,
    h: f64,
    sigma: f64,
    nodes: usize,
}

/// Default truncation half-width.
pub const DEFAULT_HALF_WIDTH: f64 = 20.0;
/// Default table spacing; fine enough that the centered-difference solution
/// is within 1e-7 of the exact profile and equipartition holds to 1e-8.
pub const DEFAULT_SPACING: f64 = 2.5e-4;

impl ProfileTable {
    /// Builds both profiles with the projected correction.
    pub fn build(w: &DoubleWell, half_width: f64, spacing: f64) -> Result<Self> {
        let settings = ProfileSettings::default();
        let sigma = surface_tension(w, 256)?;
        let p0 = optimal_profile(w, half_width, spacing, &settings)?;
        let p1 = first_order_correction(w, &p0, sigma, CorrectionRhs::Projected, &settings)?;
        Ok(Self::from_parts(half_width, spacing, sigma, p0.values, p1.values)
            .with_diagnostics(p0.residual, p1.fredholm_coefficient, p1.multiplier, p1.orthogonality))
    }

    pub fn default_for(w: &DoubleWell) -> Result<Self> {
        Self::build(w, DEFAULT_HALF_WIDTH, DEFAULT_SPACING)
    }

    /// `max |φ₀'²/2 - W(φ₀)|` over nodes away from the two ends.
    pub fn equipartition_defect(&self, w: &DoubleWell) -> f64 {
        let d = self.phi0_slope();
        let v = &self.phi0;
        (2..v.len() - 2).fold(0.0f64, |m, i| m.max((0.5 * d[i] * d[i] - w.w(v[i])).abs()))
    }

    fn from_parts(half_width: f64, spacing: f64, sigma: f64, phi0: Vec<f64>, phi1: Vec<f64>) -> Self {
        let spline0 = UniformSpline::new(-half_width, spacing, phi0.clone());
        let spline1 = UniformSpline::new(-half_width, spacing, phi1.clone());
        Self {
            half_width,
            spacing,
            sigma,
            phi0,
            phi1,
            spline0,
            spline1,
            residual_phi0: f64::NAN,
            fredholm_coefficient: f64::NAN,
            multiplier: f64::NAN,
            orthogonality: f64::NAN,
        }
    }

    fn with_diagnostics(mut self, residual: f64, fredholm: f64, multiplier: f64, orth: f64) -> Self {
        self.residual_phi0 = residual;
        self.fredholm_coefficient = fredholm;
        self.multiplier = multiplier;
        self.orthogonality = orth;
        self
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.phi0.len()).map(move |i| -self.half_width + i as f64 * self.spacing)
    }

    pub fn phi0_samples(&self) -> &[f64] {
        &self.phi0
    }

    pub fn phi1_samples(&self) -> &[f64] {
        &self.phi1
    }

    /// Tail constants `(φ₀(-∞), φ₀(+∞), φ₁(-∞), φ₁(+∞))`.
    pub fn tails(&self) -> (f64, f64, f64, f64) {
        (-1.0, 1.0, self.phi1[0], self.phi1[self.phi1.len() - 1])
    }

    fn lookup(&self, spline: &UniformSpline, s: f64, minus: f64, plus: f64) -> (f64, f64, f64) {
        if s < -self.half_width {
            (minus, 0.0, 0.0)
        } else if s > self.half_width {
            (plus, 0.0, 0.0)
        } else {
            spline.eval3(s)
        }
    }

    pub fn phi0(&self, s: f64) -> f64 {
        self.phi0_d(s).0
    }

    pub fn phi1(&self, s: f64) -> f64 {
        self.phi1_d(s).0
    }

    /// `(φ₀, φ₀', φ₀'')` at `s`.
    pub fn phi0_d(&self, s: f64) -> (f64, f64, f64) {
        self.lookup(&self.spline0, s, -1.0, 1.0)
    }

    /// `(φ₁, φ₁', φ₁'')` at `s`.
    pub fn phi1_d(&self, s: f64) -> (f64, f64, f64) {
        let (_, _, a, b) = self.tails();
        self.lookup(&self.spline1, s, a, b)
    }

    /// Fourth-order centered derivative of `φ₀` at the table nodes.
    pub fn phi0_slope(&self) -> Vec<f64> {
        table_derivative(&self.phi0, self.spacing)
    }

    /// Writes a one-line JSON header `{T, h, sigma, nodes}` followed by
    /// little-endian `f64` samples of `φ₀` then `φ₁`.
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        let header = TableHeader {
            half_width: self.half_width,
            h: self.spacing,
            sigma: self.sigma,
            nodes: self.phi0.len(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for v in self.phi0.iter().chain(&self.phi1) {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(input: impl Read) -> Result<Self> {
        let mut reader = std::io::BufReader::new(input);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let header: TableHeader = serde_json::from_str(line.trim_end())?;
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        if bytes.len() != 16 * header.nodes || header.nodes < 3 {
            return Err(Error::Snapshot(format!(
                "profile table expects {} bytes, found {}",
                16 * header.nodes,
                bytes.len()
            )));
        }
        let vals: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let (phi0, phi1) = vals.split_at(header.nodes);
        Ok(Self::from_parts(
            header.half_width,
            header.h,
            header.sigma,
            phi0.to_vec(),
            phi1.to_vec(),
        ))
    }
}

/// Roots of `W'(λ) = ε (8/9) f` continued from `-1` and `+1`.
pub fn bulk_roots(w: &DoubleWell, eps: f64, fy1: f64) -> Result<(f64, f64)> {
    let target = eps * (8.0 / 9.0) * fy1;
    if target == 0.0 {
        return Ok((-1.0, 1.0));
    }
    let (lo, arg_lo, hi, arg_hi) = w.derivative_extremes();
    let critical = if target > 0.0 { hi } else { -lo };
    if target.abs() >= critical {
        return Err(Error::RootsMerge {
            scaled: target.abs(),
            critical,
            critical_eps: critical / ((8.0 / 9.0) * fy1.abs()),
        });
    }
    let g = |r: f64| w.dw(r) - target;
    // Brackets [a, b] with g(a) < 0 < g(b) on increasing branches.
    let (plus_bracket, minus_bracket) = if target > 0.0 {
        ((1.0, expand_up(&g, 1.0)?), (-1.0, arg_hi))
    } else {
        ((arg_lo, 1.0), (expand_down(&g, -1.0)?, -1.0))
    };
    let minus = safeguarded_newton(w, target, -1.0, minus_bracket)?;
    let plus = safeguarded_newton(w, target, 1.0, plus_bracket)?;
    Ok((minus, plus))
}

fn expand_up(g: &impl Fn(f64) -> f64, start: f64) -> Result<f64> {
    let mut b = start + 0.01;
    while g(b) <= 0.0 {
        b = start + 2.0 * (b - start);
        if b > 10.0 {
            return Err(Error::InvalidArgument("no bulk root above +1".into()));
        }
    }
    Ok(b)
}

fn expand_down(g: &impl Fn(f64) -> f64, start: f64) -> Result<f64> {
    let mut a = start - 0.01;
    while g(a) >= 0.0 {
        a = start - 2.0 * (start - a);
        if a < -10.0 {
            return Err(Error::InvalidArgument("no bulk root below -1".into()));
        }
    }
    Ok(a)
}

fn safeguarded_newton(w: &DoubleWell, target: f64, start: f64, bracket: (f64, f64)) -> Result<f64> {
    let (mut a, mut b) = bracket;
    let mut x = start.clamp(a, b);
    for _ in 0..200 {
        let d = w.derivs(x);
        let g = d[1] - target;
        if g == 0.0 {
            return Ok(x);
        }
        if g < 0.0 {
            a = x;
        } else {
            b = x;
        }
        let mut next = x - g / d[2];
        if !(next > a && next < b) || !next.is_finite() {
            next = 0.5 * (a + b);
        }
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

/// `(β_{ε,-}, β_{ε,+}) = φ₀(∓δ/ε) + ε φ₁(∓δ/ε) (2/(3σ)) f`.
pub fn far_field_values(profiles: &ProfileTable, eps: f64, delta: f64, fy1: f64) -> (f64, f64) {
    let s = delta / eps;
    let scale = eps * 2.0 / (3.0 * profiles.sigma()) * fy1;
    let minus = profiles.phi0(-s) + scale * profiles.phi1(-s);
    let plus = profiles.phi0(s) + scale * profiles.phi1(s);
    (minus, plus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::OnceLock;

    const SIGMA: f64 = std::f64::consts::SQRT_2 / 3.0;

    fn table() -> &'static ProfileTable {
        static TABLE: OnceLock<ProfileTable> = OnceLock::new();
        TABLE.get_or_init(|| ProfileTable::default_for(&DoubleWell::quartic()).unwrap())
    }

    #[test]
    fn quartic_values() {
        let w = DoubleWell::quartic();
        assert_eq!(w.eval(1.0, Derivative::Value), 0.0);
        assert_eq!(w.eval(0.0, Derivative::Value), 0.25);
        assert!((w.eval(0.5, Derivative::First) + 0.375).abs() < 1e-15);
        assert!((w.eval(1.0, Derivative::Second) - 2.0).abs() < 1e-15);
        for k in 0..100 {
            let r = -2.0 + 4.0 * k as f64 / 99.0;
            assert!((w.dw(r) - (r * r * r - r)).abs() < 1e-12);
            assert!((w.d2w(r) - (3.0 * r * r - 1.0)).abs() < 1e-12);
            assert!((w.derivs(r)[3] - 6.0 * r).abs() < 1e-12);
        }
    }

    #[test]
    fn well_shape_invariants() {
        for w in [
            DoubleWell::quartic(),
            DoubleWell::with_factor(vec![0.3, 0.1]).unwrap(),
        ] {
            assert_eq!(w.w(1.0), 0.0);
            assert_eq!(w.w(-1.0), 0.0);
            assert_eq!(w.dw(1.0), 0.0);
            assert_eq!(w.dw(-1.0), 0.0);
            let (a, b) = w.well_curvatures();
            assert!(a > 0.0 && b > 0.0);
            for k in 0..=2000 {
                let r = -2.0 + 4.0 * k as f64 / 2000.0;
                if (r.abs() - 1.0).abs() > 1e-9 {
                    assert!(w.w(r) > 0.0, "W({r}) = {}", w.w(r));
                }
            }
        }
    }

    #[test]
    fn rejects_nonpositive_factor() {
        assert!(DoubleWell::with_factor(vec![0.1, 0.2]).is_err());
        assert!(DoubleWell::with_factor(vec![]).is_err());
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        let integral: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((integral - 2.0 / 15.0).abs() < 1e-14);
    }

    #[test]
    fn surface_tension_of_quartic() {
        let w = DoubleWell::quartic();
        let sigma = surface_tension(&w, 64).unwrap();
        assert!((sigma - SIGMA).abs() < 1e-14);
        // c^2 W has surface tension c σ.
        let s2 = surface_tension(&w.scaled(2.0).unwrap(), 64).unwrap();
        assert!((s2 - 2.0 * sigma).abs() < 1e-13);
        assert!(surface_tension(&w, 8).is_err());
    }

    #[test]
    fn surface_tension_against_midpoint_oracle() {
        let w = DoubleWell::with_factor(vec![0.25, 0.05, 0.02]).unwrap();
        let n = 1_000_000;
        let h = 2.0 / n as f64;
        let oracle: f64 = (0..n)
            .map(|i| {
                let s = -1.0 + (i as f64 + 0.5) * h;
                (0.5 * w.w(s)).sqrt()
            })
            .sum::<f64>()
            * h;
        let sigma = surface_tension(&w, 512).unwrap();
        assert!((sigma - oracle).abs() < 1e-10, "{sigma} vs {oracle}");
    }

    #[test]
    fn negative_potential_is_reported() {
        let w = DoubleWell { factor: vec![-0.25] };
        assert!(matches!(
            surface_tension(&w, 16),
            Err(Error::NegativePotential { .. })
        ));
    }

    #[test]
    fn optimal_profile_matches_tanh() {
        let t = table();
        assert!(t.residual_phi0 < 1e-8, "residual {}", t.residual_phi0);
        assert!(t.phi0(0.0).abs() < 1e-12);
        assert!((t.phi0(1.0) - 0.60886).abs() < 1e-5);
        let mut max_err: f64 = 0.0;
        for (r, p) in t.nodes().zip(t.phi0_samples()) {
            if r.abs() <= 10.0 {
                max_err = max_err.max((p - (r / std::f64::consts::SQRT_2).tanh()).abs());
            }
        }
        assert!(max_err < 1e-7, "max error {max_err}");
        // odd symmetry and strict monotonicity
        let v = t.phi0_samples();
        let n = v.len();
        for i in 0..n {
            assert!((v[i] + v[n - 1 - i]).abs() < 1e-12);
            assert!(v[i].abs() < 1.0);
            if i > 0 {
                assert!(v[i] > v[i - 1]);
            }
        }
    }

    #[test]
    fn equipartition_and_profile_energy() {
        let t = table();
        let w = DoubleWell::quartic();
        let d = t.phi0_slope();
        let defect = t.equipartition_defect(&w);
        assert!(defect < 1e-8, "equipartition defect {defect}");
        let energy: f64 = d.iter().map(|x| x * x).sum::<f64>() * t.spacing();
        assert!((energy - 2.0 * SIGMA).abs() < 1e-6);
    }

    #[test]
    fn correction_endpoints_and_orthogonality() {
        let t = table();
        let (_, _, a, b) = t.tails();
        assert!((a - SIGMA / 2.0).abs() < 1e-6);
        assert!((b - SIGMA / 2.0).abs() < 1e-6);
        assert!((t.phi1(20.0) - 0.2357023).abs() < 1e-6);
        assert!(t.orthogonality.abs() < 1e-10, "{}", t.orthogonality);
        // ⟨φ₀'+σ, φ₀'⟩/⟨φ₀',φ₀'⟩ = (2σ + 2σ)/(2σ)
        assert!((t.fredholm_coefficient - 2.0).abs() < 1e-6);
    }

    #[test]
    fn projected_correction_solves_its_equation() {
        let t = table();
        let w = DoubleWell::quartic();
        let h = t.spacing();
        let p0 = t.phi0_samples();
        let p1 = t.phi1_samples();
        let d = t.phi0_slope();
        let mut max_res: f64 = 0.0;
        for i in 1..p1.len() - 1 {
            let lhs = -(p1[i + 1] - 2.0 * p1[i] + p1[i - 1]) / (h * h) + w.d2w(p0[i]) * p1[i];
            let rhs = SIGMA - d[i];
            max_res = max_res.max((lhs - rhs).abs());
        }
        // multiplier and slope discretization enter at the 1e-6 level
        assert!(max_res < 1e-5, "{max_res}");
        assert!(t.multiplier.abs() < 1e-6, "{}", t.multiplier);
    }

    #[test]
    fn raw_correction_blows_up() {
        let w = DoubleWell::quartic();
        let s = ProfileSettings::default();
        let p0 = optimal_profile(&w, 10.0, 0.01, &s).unwrap();
        let raw = first_order_correction(&w, &p0, SIGMA, CorrectionRhs::Raw, &s).unwrap();
        let proj = first_order_correction(&w, &p0, SIGMA, CorrectionRhs::Projected, &s).unwrap();
        let max = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(max(&proj.values) < 1.0);
        assert!(max(&raw.values) > 1e3, "raw max {}", max(&raw.values));
    }

    #[test]
    fn bulk_roots_examples() {
        let w = DoubleWell::quartic();
        assert_eq!(bulk_roots(&w, 0.3, 0.0).unwrap(), (-1.0, 1.0));
        let (_, plus) = bulk_roots(&w, 0.01, 1.0).unwrap();
        // λ³ - λ = 0.0088889 by direct scalar Newton
        let mut x: f64 = 1.0;
        for _ in 0..50 {
            x -= (x * x * x - x - 0.08 / 9.0) / (3.0 * x * x - 1.0);
        }
        assert!((plus - x).abs() < 1e-14);
        assert!((plus - 1.0044152).abs() < 1e-7);
        for eps in [1e-2, 1e-3, 1e-4] {
            let (_, p) = bulk_roots(&w, eps, 1.0).unwrap();
            assert!(((p - 1.0) / eps - 4.0 / 9.0).abs() < 2.0 * eps, "{eps}");
        }
    }

    #[test]
    fn bulk_roots_reject_merging() {
        let w = DoubleWell::quartic();
        let crit = 2.0 / (3.0 * 3f64.sqrt());
        match bulk_roots(&w, 1.0, 1.0) {
            Err(Error::RootsMerge { critical, .. }) => assert!((critical - crit).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
        assert!(bulk_roots(&w, 0.4, -1.0).is_ok());
    }

    #[test]
    fn far_field_examples() {
        let t = table();
        let (m, p) = far_field_values(t, 0.01, 1e3, 0.0);
        assert_eq!((m, p), (-1.0, 1.0));
        let eps: f64 = 0.01;
        let delta = 2.0 * eps * (1.0 / eps).ln();
        let (_, p) = far_field_values(t, eps, delta, 1.0);
        let s = delta / eps;
        let oracle = 1.0 - 2.0 * (-std::f64::consts::SQRT_2 * s).exp() + eps / 3.0;
        // the oracle drops the exponentially small tail of φ₁
        assert!((p - oracle).abs() < 1e-7, "{p} vs {oracle}");
        assert!((p - 1.0033289).abs() < 1e-7);
    }

    #[test]
    fn table_roundtrip() {
        let t = table();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let back = ProfileTable::read_from(&buf[..]).unwrap();
        assert_eq!(back.phi0_samples(), t.phi0_samples());
        assert_eq!(back.phi1_samples(), t.phi1_samples());
        assert_eq!(back.sigma(), t.sigma());
        assert_eq!(back.phi0(0.123), t.phi0(0.123));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn bulk_roots_odd_symmetry(eps in 1e-4f64..0.2, f in -1.0f64..1.0) {
                let w = DoubleWell::quartic();
                let (m, p) = bulk_roots(&w, eps, f).unwrap();
                let (m2, p2) = bulk_roots(&w, eps, -f).unwrap();
                prop_assert!((m + p2).abs() < 1e-12);
                prop_assert!((p + m2).abs() < 1e-12);
            }

            #[test]
            fn far_field_odd_symmetry(eps in 1e-3f64..0.05, f in -2.0f64..2.0) {
                let t = table();
                let delta = 2.0 * eps * (1.0 / eps).ln();
                let (m, p) = far_field_values(t, eps, delta, f);
                let (m2, p2) = far_field_values(t, eps, delta, -f);
                prop_assert!((m + p2).abs() < 1e-10);
                prop_assert!((p + m2).abs() < 1e-10);
            }

            #[test]
            fn surface_tension_monotone(a in 0.05f64..1.0, b in -0.02f64..0.02, extra in 0.0f64..0.5) {
                let small = DoubleWell::with_factor(vec![a, b]);
                let large = DoubleWell::with_factor(vec![a + extra, b]);
                if let (Ok(small), Ok(large)) = (small, large) {
                    let s1 = surface_tension(&small, 64).unwrap();
                    let s2 = surface_tension(&large, 64).unwrap();
                    prop_assert!(s2 >= s1 - 1e-15);
                }
            }
        }
    }
}
