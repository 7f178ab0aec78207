//! Cell-centered uniform grids in one or two dimensions, Neumann difference
//! operators, midpoint integration, interpolation and a zero-mean Poisson
//! solver.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::krylov::{self, KrylovOutcome, KrylovSettings};
use crate::spectral::NeumannSpectral;

/// Axis-aligned box `origin + [0, extent]` split into `cells` per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    cells: Vec<usize>,
    extent: Vec<f64>,
    origin: Vec<f64>,
}

impl Grid {
    pub fn new(cells: Vec<usize>, extent: Vec<f64>) -> Result<Self> {
        let origin = vec![0.0; cells.len()];
        Self::with_origin(cells, extent, origin)
    }

    pub fn with_origin(cells: Vec<usize>, extent: Vec<f64>, origin: Vec<f64>) -> Result<Self> {
        let dim = cells.len();
        if !(1..=2).contains(&dim) || extent.len() != dim || origin.len() != dim {
            return Err(Error::InvalidArgument(format!(
                "grid needs 1 or 2 axes with matching extent/origin (cells {cells:?}, extent {extent:?})"
            )));
        }
        if cells.iter().any(|&c| c < 8) {
            return Err(Error::InvalidArgument(format!("grid needs at least 8 cells per axis, got {cells:?}")));
        }
        if extent.iter().any(|&e| !(e.is_finite() && e > 0.0)) || origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad grid extent {extent:?} or origin {origin:?}")));
        }
        Ok(Self { cells, extent, origin })
    }

    /// Unit interval or unit square with `n` cells per axis.
    pub fn unit(dim: usize, n: usize) -> Result<Self> {
        Self::new(vec![n; dim], vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn extent(&self) -> &[f64] {
        &self.extent
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn spacing(&self) -> Vec<f64> {
        self.cells.iter().zip(&self.extent).map(|(&n, &e)| e / n as f64).collect()
    }

    pub fn len(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    pub fn volume(&self) -> f64 {
        self.extent.iter().product()
    }

    /// Cell-center coordinate along `axis` of index `i`.
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        self.origin[axis] + (i as f64 + 0.5) * self.extent[axis] / self.cells[axis] as f64
    }

    /// Cell center of a flat (row-major, x fastest) index.
    pub fn center(&self, idx: usize) -> [f64; 2] {
        let nx = self.cells[0];
        if self.dim() == 1 {
            [self.coord(0, idx), 0.0]
        } else {
            [self.coord(0, idx % nx), self.coord(1, idx / nx)]
        }
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dim()
            && point
                .iter()
                .enumerate()
                .all(|(a, &p)| p >= self.origin[a] - 1e-12 && p <= self.origin[a] + self.extent[a] + 1e-12)
    }
}

/// Values on the cells of a [`Grid`], row-major with x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} cells",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value at cell {i}")));
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn constant(grid: &Grid, value: f64) -> Self {
        Self::from_raw(grid.clone(), vec![value; grid.len()])
    }

    /// Evaluates `f` at every cell center (`[x, 0]` in 1D).
    pub fn from_fn(grid: &Grid, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.center(i))).collect();
        Self::from_raw(grid.clone(), values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Writes a one-line JSON header `{dim, cells, extent, origin}` followed
    /// by little-endian `f64` values.
    pub fn write_snapshot(&self, mut out: impl Write) -> Result<()> {
        let header = SnapshotHeader {
            dim: self.grid.dim(),
            cells: self.grid.cells.clone(),
            extent: self.grid.extent.clone(),
            origin: Some(self.grid.origin.clone()),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        let mut bytes = Vec::with_capacity(8 * self.values.len());
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_snapshot(input: impl Read) -> Result<Self> {
        let mut reader = std::io::BufReader::new(input);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let header: SnapshotHeader =
            serde_json::from_str(line.trim_end()).map_err(|e| Error::Snapshot(format!("header: {e}")))?;
        if header.dim != header.cells.len() {
            return Err(Error::Snapshot(format!(
                "dim {} but {} cell counts",
                header.dim,
                header.cells.len()
            )));
        }
        let origin = header.origin.unwrap_or_else(|| vec![0.0; header.dim]);
        let grid = Grid::with_origin(header.cells, header.extent, origin)?;
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        if bytes.len() != 8 * grid.len() {
            return Err(Error::Snapshot(format!(
                "expected {} bytes of data, found {}",
                8 * grid.len(),
                bytes.len()
            )));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Self::new(grid, values)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotHeader {
    dim: usize,
    cells: Vec<usize>,
    extent: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    origin: Option<Vec<f64>>,
}

/// `out = Δ_h x` with homogeneous Neumann reflection.
pub(crate) fn laplacian_into(grid: &Grid, x: &[f64], out: &mut [f64]) {
    let h = grid.spacing();
    let nx = grid.cells[0];
    let ix2 = 1.0 / (h[0] * h[0]);
    if grid.dim() == 1 {
        for i in 0..nx {
            let l = if i > 0 { x[i - 1] } else { x[i] };
            let r = if i + 1 < nx { x[i + 1] } else { x[i] };
            out[i] = (l - 2.0 * x[i] + r) * ix2;
        }
        return;
    }
    let ny = grid.cells[1];
    let iy2 = 1.0 / (h[1] * h[1]);
    for j in 0..ny {
        let row = j * nx;
        for i in 0..nx {
            let c = x[row + i];
            let l = if i > 0 { x[row + i - 1] } else { c };
            let r = if i + 1 < nx { x[row + i + 1] } else { c };
            let d = if j > 0 { x[row + i - nx] } else { c };
            let u = if j + 1 < ny { x[row + i + nx] } else { c };
            out[row + i] = (l - 2.0 * c + r) * ix2 + (d - 2.0 * c + u) * iy2;
        }
    }
}

pub fn laplacian(phi: &ScalarField) -> ScalarField {
    let mut out = vec![0.0; phi.values.len()];
    laplacian_into(&phi.grid, &phi.values, &mut out);
    ScalarField::from_raw(phi.grid.clone(), out)
}

/// Centered differences in the interior, one-sided at the boundary cells.
pub fn gradient(phi: &ScalarField) -> Vec<ScalarField> {
    let grid = &phi.grid;
    let h = grid.spacing();
    let nx = grid.cells[0];
    let ny = if grid.dim() == 2 { grid.cells[1] } else { 1 };
    let v = &phi.values;
    let diff = |at: &dyn Fn(usize) -> f64, i: usize, n: usize, h: f64| {
        if i == 0 {
            (at(1) - at(0)) / h
        } else if i + 1 == n {
            (at(n - 1) - at(n - 2)) / h
        } else {
            (at(i + 1) - at(i - 1)) / (2.0 * h)
        }
    };
    let mut gx = vec![0.0; v.len()];
    for j in 0..ny {
        let at = |i: usize| v[j * nx + i];
        for i in 0..nx {
            gx[j * nx + i] = diff(&at, i, nx, h[0]);
        }
    }
    let mut out = vec![ScalarField::from_raw(grid.clone(), gx)];
    if grid.dim() == 2 {
        let mut gy = vec![0.0; v.len()];
        for i in 0..nx {
            let at = |j: usize| v[j * nx + i];
            for j in 0..ny {
                gy[j * nx + i] = diff(&at, j, ny, h[1]);
            }
        }
        out.push(ScalarField::from_raw(grid.clone(), gy));
    }
    out
}

/// Midpoint rule; summation order is fixed so results are reproducible.
pub fn integrate(phi: &ScalarField) -> f64 {
    phi.values.iter().sum::<f64>() * phi.grid.cell_volume()
}

/// Reusable solver for `-Δ_h v = g` with zero mean.
///
/// Conjugate gradients restricted to the zero-mean subspace, preconditioned
/// by the exact cosine-transform inverse of the Neumann Laplacian.
#[derive(Debug, Clone)]
pub struct PoissonSolver {
    grid: Grid,
    spectral: NeumannSpectral,
}

impl PoissonSolver {
    pub fn new(grid: &Grid) -> Self {
        Self {
            grid: grid.clone(),
            spectral: NeumannSpectral::new(grid.cells(), &grid.spacing()),
        }
    }

    pub fn spectral(&self) -> &NeumannSpectral {
        &self.spectral
    }

    fn check_compatible(&self, g: &[f64]) -> Result<()> {
        let integral: f64 = g.iter().sum::<f64>() * self.grid.cell_volume();
        let total: f64 = g.iter().map(|v| v.abs()).sum::<f64>() * self.grid.cell_volume();
        if integral.abs() > 1e-10 * total.max(f64::MIN_POSITIVE) {
            return Err(Error::IncompatibleSource {
                mean_defect: integral / self.grid.volume(),
                integral,
            });
        }
        Ok(())
    }

    /// Solves with `g` projected to zero mean; callers guarantee
    /// compatibility up to rounding.
    pub(crate) fn solve_raw(&self, g: &[f64], tol: f64) -> Result<(Vec<f64>, KrylovOutcome)> {
        if !(tol > 0.0) {
            return Err(Error::InvalidArgument(format!("Poisson tolerance must be positive, got {tol}")));
        }
        let n = g.len() as f64;
        let project = |x: &mut [f64]| {
            let mean = x.iter().sum::<f64>() / n;
            x.iter_mut().for_each(|v| *v -= mean);
        };
        let mut b = g.to_vec();
        project(&mut b);
        let grid = &self.grid;
        let apply = |x: &[f64], y: &mut [f64]| {
            laplacian_into(grid, x, y);
            y.iter_mut().for_each(|v| *v = -*v);
        };
        let precond = |r: &[f64], z: &mut [f64]| self.spectral.apply(r, z, |mu| 1.0 / mu);
        let mut x = vec![0.0; g.len()];
        let settings = KrylovSettings { tol, max_iter: 1000 };
        let outcome = krylov::cg(apply, precond, project, &b, &mut x, settings);
        if !outcome.converged {
            return Err(Error::NotConverged {
                what: "Neumann Poisson solve",
                iterations: outcome.iterations,
                history: vec![outcome.relative_residual],
            });
        }
        project(&mut x);
        Ok((x, outcome))
    }

    pub fn solve(&self, g: &ScalarField, tol: f64) -> Result<ScalarField> {
        if g.grid != self.grid {
            return Err(Error::GridMismatch("Poisson source on a different grid".into()));
        }
        self.check_compatible(&g.values)?;
        let (x, _) = self.solve_raw(&g.values, tol)?;
        Ok(ScalarField::from_raw(self.grid.clone(), x))
    }
}

/// Zero-mean solution of `-Δ_h v = g` under homogeneous Neumann conditions.
pub fn poisson_neumann(g: &ScalarField, tol: f64) -> Result<ScalarField> {
    PoissonSolver::new(g.grid()).solve(g, tol)
}

/// Multilinear interpolation between cell centers; points between the
/// boundary and the outermost centers take the boundary cell layer value
/// along that axis.
pub fn sample(phi: &ScalarField, point: &[f64]) -> Result<f64> {
    let grid = &phi.grid;
    if !grid.contains(point) {
        return Err(Error::OutsideDomain { point: point.to_vec() });
    }
    let h = grid.spacing();
    let locate = |axis: usize| {
        let n = grid.cells[axis];
        let t = ((point[axis] - grid.origin[axis]) / h[axis] - 0.5).clamp(0.0, (n - 1) as f64);
        let i = (t.floor() as usize).min(n - 2);
        (i, t - i as f64)
    };
    let (i, tx) = locate(0);
    let v = &phi.values;
    if grid.dim() == 1 {
        return Ok((1.0 - tx) * v[i] + tx * v[i + 1]);
    }
    let nx = grid.cells[0];
    let (j, ty) = locate(1);
    let a = v[j * nx + i];
    let b = v[j * nx + i + 1];
    let c = v[(j + 1) * nx + i];
    let d = v[(j + 1) * nx + i + 1];
    Ok((1.0 - ty) * ((1.0 - tx) * a + tx * b) + ty * ((1.0 - tx) * c + tx * d))
}
