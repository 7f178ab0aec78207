//! Cosine transforms that diagonalize the cell-centered Neumann Laplacian.
//!
//! Built on complex FFTs of length `2N`. The pair satisfies
//! `dct3(dct2(x)) = (N/2) x`.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// DCT-II / DCT-III pair of one length.
#[derive(Clone)]
pub struct Dct {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// `exp(-iπk/(2N))`
    twiddle: Vec<Complex64>,
}

impl std::fmt::Debug for Dct {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dct").field("n", &self.n).finish()
    }
}

impl Dct {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let twiddle = (0..n)
            .map(|k| Complex64::from_polar(1.0, -PI * k as f64 / (2 * n) as f64))
            .collect();
        Self {
            n,
            forward: planner.plan_fft_forward(2 * n),
            inverse: planner.plan_fft_inverse(2 * n),
            twiddle,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `X_k = Σ x_j cos(πk(j + 1/2)/N)`, in place.
    pub fn dct2(&self, x: &mut [f64], buf: &mut Vec<Complex64>) {
        let n = self.n;
        buf.clear();
        buf.extend(x.iter().map(|&v| Complex64::new(v, 0.0)));
        buf.extend(x.iter().rev().map(|&v| Complex64::new(v, 0.0)));
        self.forward.process(buf);
        for k in 0..n {
            x[k] = 0.5 * (self.twiddle[k] * buf[k]).re;
        }
    }

    /// `x_j = X_0/2 + Σ_{k≥1} X_k cos(πk(j + 1/2)/N)`, in place.
    pub fn dct3(&self, x: &mut [f64], buf: &mut Vec<Complex64>) {
        let n = self.n;
        buf.clear();
        buf.resize(2 * n, Complex64::new(0.0, 0.0));
        for k in 0..n {
            let w = if k == 0 { 0.5 } else { 1.0 };
            buf[k] = self.twiddle[k].conj() * (w * x[k]);
        }
        self.inverse.process(buf);
        for j in 0..n {
            x[j] = buf[j].re;
        }
    }
}

/// Eigenvalues `4 sin²(πk/(2N)) / h²` of the 1D cell-centered Neumann
/// second-difference operator `-D²`.
pub fn neumann_eigenvalues(n: usize, h: f64) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let s = (PI * k as f64 / (2 * n) as f64).sin();
            4.0 * s * s / (h * h)
        })
        .collect()
}

/// Applies functions of the discrete Neumann Laplacian on a 1D or 2D grid.
#[derive(Debug, Clone)]
pub struct NeumannSpectral {
    cells: Vec<usize>,
    dcts: Vec<Dct>,
    eig: Vec<Vec<f64>>,
}

impl NeumannSpectral {
    pub fn new(cells: &[usize], spacing: &[f64]) -> Self {
        Self {
            cells: cells.to_vec(),
            dcts: cells.iter().map(|&n| Dct::new(n)).collect(),
            eig: cells
                .iter()
                .zip(spacing)
                .map(|(&n, &h)| neumann_eigenvalues(n, h))
                .collect(),
        }
    }

    fn transform(&self, x: &mut [f64], forward: bool) {
        let nx = self.cells[0];
        let run = |dct: &Dct, line: &mut [f64], buf: &mut Vec<Complex64>| {
            if forward {
                dct.dct2(line, buf)
            } else {
                dct.dct3(line, buf)
            }
        };
        x.par_chunks_mut(nx).for_each_init(Vec::new, |buf, row| run(&self.dcts[0], row, buf));
        if self.cells.len() == 2 {
            let ny = self.cells[1];
            // Columns are strided; transpose, transform rows, transpose back.
            let mut t = vec![0.0; x.len()];
            for j in 0..ny {
                for i in 0..nx {
                    t[i * ny + j] = x[j * nx + i];
                }
            }
            t.par_chunks_mut(ny).for_each_init(Vec::new, |buf, col| run(&self.dcts[1], col, buf));
            for j in 0..ny {
                for i in 0..nx {
                    x[j * nx + i] = t[i * ny + j];
                }
            }
        }
    }

    /// `out = g(-Δ_h) x` where `symbol` maps an eigenvalue of `-Δ_h` to the
    /// multiplier. Non-finite multipliers are treated as zero (used to drop
    /// the constant mode).
    pub fn apply(&self, x: &[f64], out: &mut [f64], symbol: impl Fn(f64) -> f64 + Sync) {
        out.copy_from_slice(x);
        self.transform(out, true);
        let nx = self.cells[0];
        let mut scale = 1.0;
        for &n in &self.cells {
            scale *= 2.0 / n as f64;
        }
        for (idx, v) in out.iter_mut().enumerate() {
            let mut mu = self.eig[0][idx % nx];
            if self.cells.len() == 2 {
                mu += self.eig[1][idx / nx];
            }
            let g = symbol(mu);
            *v = if g.is_finite() { *v * g * scale } else { 0.0 };
        }
        self.transform(out, false);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dct2_matches_definition() {
        let n = 12;
        let x: Vec<f64> = (0..n).map(|i| ((i * 7 % 5) as f64).sin() + 0.1 * i as f64).collect();
        let dct = Dct::new(n);
        let mut y = x.clone();
        let mut buf = Vec::new();
        dct.dct2(&mut y, &mut buf);
        for k in 0..n {
            let direct: f64 = (0..n)
                .map(|j| x[j] * (PI * k as f64 * (j as f64 + 0.5) / n as f64).cos())
                .sum();
            assert!((y[k] - direct).abs() < 1e-12);
        }
        dct.dct3(&mut y, &mut buf);
        for j in 0..n {
            assert!((y[j] - 0.5 * n as f64 * x[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn inverts_neumann_laplacian_in_2d() {
        let (nx, ny) = (16, 10);
        let (hx, hy) = (1.0 / nx as f64, 0.7 / ny as f64);
        let sp = NeumannSpectral::new(&[nx, ny], &[hx, hy]);
        let mut v: Vec<f64> = (0..nx * ny).map(|i| ((i * 31 % 17) as f64).cos()).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter_mut().for_each(|x| *x -= mean);
        // -Δ_h v by stencil with reflection
        let at = |i: isize, j: isize| {
            let i = i.clamp(0, nx as isize - 1) as usize;
            let j = j.clamp(0, ny as isize - 1) as usize;
            v[j * nx + i]
        };
        let mut lap = vec![0.0; nx * ny];
        for j in 0..ny as isize {
            for i in 0..nx as isize {
                let c = at(i, j);
                lap[j as usize * nx + i as usize] = -(at(i + 1, j) - 2.0 * c + at(i - 1, j)) / (hx * hx)
                    - (at(i, j + 1) - 2.0 * c + at(i, j - 1)) / (hy * hy);
            }
        }
        let mut back = vec![0.0; nx * ny];
        sp.apply(&lap, &mut back, |mu| 1.0 / mu);
        for (a, b) in back.iter().zip(&v) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
