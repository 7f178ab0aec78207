//! Krylov subspace solvers on plain slices.
//!
//! Operators and preconditioners are passed as closures `(x, y)` writing
//! `y = A x`. All reductions run sequentially in index order, so results are
//! bitwise reproducible.

use serde::{Deserialize, Serialize};

/// Outcome of one Krylov solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrylovOutcome {
    pub converged: bool,
    pub iterations: usize,
    /// Final residual relative to the initial one, in the norm the method
    /// monitors (preconditioned norm for MINRES, Euclidean for CG).
    pub relative_residual: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct KrylovSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for KrylovSettings {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 5000,
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Preconditioned conjugate gradients for symmetric positive (semi)definite
/// systems. `project`, when given, is applied to residuals and search
/// directions; pass a mean-removal for singular Neumann problems.
pub fn cg<A, M, P>(
    mut apply: A,
    mut precond: M,
    mut project: P,
    b: &[f64],
    x: &mut [f64],
    settings: KrylovSettings,
) -> KrylovOutcome
where
    A: FnMut(&[f64], &mut [f64]),
    M: FnMut(&[f64], &mut [f64]),
    P: FnMut(&mut [f64]),
{
    let n = b.len();
    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut q = vec![0.0; n];

    apply(x, &mut q);
    for i in 0..n {
        r[i] = b[i] - q[i];
    }
    project(&mut r);
    let r0 = norm2(b).max(norm2(&r));
    if r0 == 0.0 {
        return KrylovOutcome {
            converged: true,
            iterations: 0,
            relative_residual: 0.0,
        };
    }
    let mut rel = norm2(&r) / r0;
    if rel <= settings.tol {
        return KrylovOutcome {
            converged: true,
            iterations: 0,
            relative_residual: rel,
        };
    }

    precond(&r, &mut z);
    project(&mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);

    for it in 1..=settings.max_iter {
        apply(&p, &mut q);
        project(&mut q);
        let pq = dot(&p, &q);
        if pq <= 0.0 || !pq.is_finite() {
            return KrylovOutcome {
                converged: false,
                iterations: it,
                relative_residual: rel,
            };
        }
        let alpha = rz / pq;
        axpy(alpha, &p, x);
        axpy(-alpha, &q, &mut r);
        rel = norm2(&r) / r0;
        if rel <= settings.tol {
            return KrylovOutcome {
                converged: true,
                iterations: it,
                relative_residual: rel,
            };
        }
        precond(&r, &mut z);
        project(&mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    KrylovOutcome {
        converged: false,
        iterations: settings.max_iter,
        relative_residual: rel,
    }
}

/// Preconditioned MINRES for symmetric, possibly indefinite, systems.
///
/// The preconditioner must be symmetric positive definite. Convergence is
/// monitored in the `M^{-1}` norm of the residual, relative to the initial
/// residual.
pub fn minres<A, M>(
    mut apply: A,
    mut precond: M,
    b: &[f64],
    x: &mut [f64],
    settings: KrylovSettings,
) -> KrylovOutcome
where
    A: FnMut(&[f64], &mut [f64]),
    M: FnMut(&[f64], &mut [f64]),
{
    let n = b.len();
    let mut v_old = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut v_new = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut z_new = vec![0.0; n];
    let mut az = vec![0.0; n];
    let mut w_old = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut w_new = vec![0.0; n];

    apply(x, &mut az);
    for i in 0..n {
        v[i] = b[i] - az[i];
    }
    precond(&v, &mut z);
    let zv = dot(&z, &v);
    if zv <= 0.0 || !zv.is_finite() {
        return KrylovOutcome {
            converged: zv == 0.0,
            iterations: 0,
            relative_residual: 0.0,
        };
    }
    let gamma1 = zv.sqrt();
    let mut gamma = gamma1;
    let mut gamma_old = 1.0;
    let mut eta = gamma1;
    let (mut s_old, mut s) = (0.0, 0.0);
    let (mut c_old, mut c) = (1.0, 1.0);

    for it in 1..=settings.max_iter {
        for zi in z.iter_mut() {
            *zi /= gamma;
        }
        apply(&z, &mut az);
        let delta = dot(&az, &z);
        for i in 0..n {
            v_new[i] = az[i] - (delta / gamma) * v[i] - (gamma / gamma_old) * v_old[i];
        }
        precond(&v_new, &mut z_new);
        let zv = dot(&z_new, &v_new);
        let gamma_new = if zv > 0.0 { zv.sqrt() } else { 0.0 };

        let alpha0 = c * delta - c_old * s * gamma;
        let alpha1 = alpha0.hypot(gamma_new);
        let alpha2 = s * delta + c_old * c * gamma;
        let alpha3 = s_old * gamma;
        if alpha1 == 0.0 || !alpha1.is_finite() {
            return KrylovOutcome {
                converged: false,
                iterations: it,
                relative_residual: eta.abs() / gamma1,
            };
        }
        let c_new = alpha0 / alpha1;
        let s_new = gamma_new / alpha1;
        for i in 0..n {
            w_new[i] = (z[i] - alpha3 * w_old[i] - alpha2 * w[i]) / alpha1;
        }
        axpy(c_new * eta, &w_new, x);
        eta = -s_new * eta;

        let rel = eta.abs() / gamma1;
        if rel <= settings.tol || gamma_new == 0.0 {
            return KrylovOutcome {
                converged: true,
                iterations: it,
                relative_residual: rel,
            };
        }

        std::mem::swap(&mut v_old, &mut v);
        std::mem::swap(&mut v, &mut v_new);
        std::mem::swap(&mut z, &mut z_new);
        std::mem::swap(&mut w_old, &mut w);
        std::mem::swap(&mut w, &mut w_new);
        gamma_old = gamma;
        gamma = gamma_new;
        c_old = c;
        c = c_new;
        s_old = s;
        s = s_new;
    }
    KrylovOutcome {
        converged: false,
        iterations: settings.max_iter,
        relative_residual: eta.abs() / gamma1,
    }
}

/// Solves a (possibly non-symmetric) tridiagonal system by the Thomas
/// algorithm. `lower[i]` couples row `i` to `i-1`, `upper[i]` to `i+1`.
/// Returns `None` on a zero pivot.
pub fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut piv = diag[0];
    if piv == 0.0 {
        return None;
    }
    c[0] = upper[0] / piv;
    d[0] = rhs[0] / piv;
    for i in 1..n {
        piv = diag[i] - lower[i] * c[i - 1];
        if piv == 0.0 || !piv.is_finite() {
            return None;
        }
        c[i] = if i + 1 < n { upper[i] / piv } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / piv;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Some(x)
}
