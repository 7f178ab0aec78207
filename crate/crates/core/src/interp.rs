//! Natural cubic splines on uniform nodes.

use crate::krylov::thomas;

#[derive(Debug, Clone)]
pub struct UniformSpline {
    start: f64,
    spacing: f64,
    values: Vec<f64>,
    /// Second derivatives at the nodes.
    moments: Vec<f64>,
}

impl UniformSpline {
    /// Builds the natural spline through `values` sampled at
    /// `start + i * spacing`. Needs at least three nodes.
    pub fn new(start: f64, spacing: f64, values: Vec<f64>) -> Self {
        let n = values.len();
        assert!(n >= 3, "spline needs at least three nodes");
        let m = n - 2;
        let h2 = spacing * spacing;
        let lower = vec![1.0; m];
        let diag = vec![4.0; m];
        let upper = vec![1.0; m];
        let rhs: Vec<f64> = (1..=m)
            .map(|i| 6.0 * (values[i + 1] - 2.0 * values[i] + values[i - 1]) / h2)
            .collect();
        let inner = thomas(&lower, &diag, &upper, &rhs).expect("diagonally dominant");
        let mut moments = Vec::with_capacity(n);
        moments.push(0.0);
        moments.extend(inner);
        moments.push(0.0);
        Self {
            start,
            spacing,
            values,
            moments,
        }
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.start + self.spacing * (self.values.len() - 1) as f64
    }

    /// Value, first and second derivative at `x` (clamped to the node range).
    pub fn eval3(&self, x: f64) -> (f64, f64, f64) {
        let n = self.values.len();
        let h = self.spacing;
        let t = ((x - self.start) / h).clamp(0.0, (n - 1) as f64);
        let i = (t.floor() as usize).min(n - 2);
        let a = (i + 1) as f64 - t; // weight of the left node
        let b = 1.0 - a;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.moments[i], self.moments[i + 1]);
        let h2 = h * h;
        let value = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h2 / 6.0;
        let d1 = (y1 - y0) / h + (-(3.0 * a * a - 1.0) * m0 + (3.0 * b * b - 1.0) * m1) * h / 6.0;
        let d2 = a * m0 + b * m1;
        (value, d1, d2)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval3(x).0
    }
}
