//! Configuration-driven studies. A study runs one experiment over a list of
//! `ε`, records named metrics per `ε`, checks acceptance rules on them and
//! optionally writes fields, tables and a JSON report to an output directory.
//!
//! Reports are a pure function of the configuration. Wall-clock timings go to
//! a separate `timings.json`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::comparison::{arc_certificate, asymptotic_gap, make_schedule};
use crate::error::{Error, Result};
use crate::field::{integrate, sample, Grid, ScalarField};
use crate::interface::{curvature, extract_crossings, extract_interface, gibbs_thomson_residual, write_curve_csv, InterfaceCurve};
use crate::measure::{bulk_deviation, energy_measure, multiplicity_estimate, write_multiplicity_csv, MultiplicityRow};
use crate::potential::{surface_tension, DoubleWell, ProfileTable};
use crate::solve::{seed_from_signed_distance, solve_ohta_kawasaki, solve_stationary_ch, NewtonSettings, SolveReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    Profile,
    ChDisk,
    ChPlanar,
    OkDisk,
    OkLamellar,
    GtCheck,
    Subsolution,
    Multiplicity,
    Gap,
}

impl StudyKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Profile => "profile",
            Self::ChDisk => "ch-disk",
            Self::ChPlanar => "ch-planar",
            Self::OkDisk => "ok-disk",
            Self::OkLamellar => "ok-lamellar",
            Self::GtCheck => "gt-check",
            Self::Subsolution => "subsolution",
            Self::Multiplicity => "multiplicity",
            Self::Gap => "gap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WellConfig {
    /// Coefficients of the positive factor `q` in `W = (1-r²)² q(r)`.
    pub factor: Vec<f64>,
}

impl Default for WellConfig {
    fn default() -> Self {
        Self { factor: vec![0.25] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Geometry {
    /// Spatial dimension for planar and lamellar studies.
    pub dim: Option<usize>,
    pub radius: f64,
    pub center: [f64; 2],
    /// Prescribed `∫u`; defaults to the mass of the seed.
    pub mass: Option<f64>,
    /// Interface position for planar and lamellar seeds.
    pub interface: Option<f64>,
    /// Forcing value `f(y₁)` for subsolution and gap studies.
    pub fy1: f64,
    /// Layer counts of the synthetic multiplicity fields.
    pub layers: Vec<usize>,
    /// Layer spacing in units of `ε`.
    pub spacing: f64,
    /// Ball radius in units of `ε`.
    pub window: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            dim: None,
            radius: 0.25,
            center: [0.5, 0.5],
            mass: None,
            interface: None,
            fy1: 1.0,
            layers: vec![1, 2, 3],
            spacing: 4.0,
            window: 8.0,
        }
    }
}

/// Solver tolerances and acceptance thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub newton: f64,
    pub krylov: f64,
    /// Curvature fit window in units of `ε`.
    pub curvature_window: f64,
    /// Rules marked "fine" apply to rows with `ε` at or below this value.
    pub fine_eps: f64,
    pub sigma: f64,
    pub profile_residual: f64,
    pub profile_error: f64,
    pub correction_endpoint: f64,
    pub equipartition: f64,
    pub layer_energy: f64,
    pub planar_lambda: f64,
    pub gt_law_coarse: f64,
    pub gt_law_fine: f64,
    pub gt_pointwise: f64,
    /// Bulk rule: deviation at most `bulk_factor · ε²` at distance
    /// `bulk_distance · ε` from the interface.
    pub bulk_factor: f64,
    pub bulk_distance: f64,
    pub ok_pointwise: f64,
    pub lamellar: f64,
    pub subsolution_slack: f64,
    pub gap_range: [f64; 2],
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            newton: 1e-9,
            krylov: 1e-10,
            curvature_window: 6.0,
            fine_eps: 0.02,
            sigma: 1e-10,
            profile_residual: 1e-8,
            profile_error: 1e-7,
            correction_endpoint: 1e-6,
            equipartition: 1e-8,
            layer_energy: 1e-3,
            planar_lambda: 1e-2,
            gt_law_coarse: 0.15,
            gt_law_fine: 0.05,
            gt_pointwise: 0.1,
            bulk_factor: 1.0,
            bulk_distance: 10.0,
            ok_pointwise: 0.1,
            lamellar: 0.05,
            subsolution_slack: 0.05,
            gap_range: [0.08, 0.14],
        }
    }
}

fn default_grid_k() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub kind: StudyKind,
    #[serde(default)]
    pub eps: Vec<f64>,
    /// Grid rule `h = ε / grid_k`.
    #[serde(default = "default_grid_k")]
    pub grid_k: usize,
    #[serde(default)]
    pub well: WellConfig,
    #[serde(default)]
    pub geometry: Geometry,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Output directory; a command-line `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn config_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

impl StudyConfig {
    pub fn new(kind: StudyKind, eps: Vec<f64>) -> Self {
        Self {
            kind,
            eps,
            grid_k: default_grid_k(),
            well: WellConfig::default(),
            geometry: Geometry::default(),
            tolerances: Tolerances::default(),
            output: None,
        }
    }

    /// Parses and validates a JSON document. Unknown keys are errors.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            let key = if msg.contains("unknown variant") {
                "kind".to_string()
            } else {
                msg.split('`')
                    .nth(1)
                    .filter(|_| msg.contains("field"))
                    .unwrap_or("(document)")
                    .to_string()
            };
            Error::Config { key, message: msg }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn well(&self) -> Result<DoubleWell> {
        DoubleWell::with_factor(self.well.factor.clone()).map_err(|e| config_err("well.factor", e.to_string()))
    }

    fn dim(&self) -> usize {
        self.geometry.dim.unwrap_or(match self.kind {
            StudyKind::OkLamellar => 1,
            _ => 2,
        })
    }

    fn interface_position(&self) -> f64 {
        self.geometry.interface.unwrap_or(match self.kind {
            StudyKind::OkLamellar => 0.4,
            _ => 0.5,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let needs_eps = self.kind != StudyKind::Profile;
        if needs_eps && self.eps.is_empty() {
            return Err(config_err("eps", "at least one value is required"));
        }
        for (i, &e) in self.eps.iter().enumerate() {
            if !(e > 0.0 && e < 0.25) {
                return Err(config_err("eps", format!("entry {i} = {e} must lie in (0, 0.25)")));
            }
            if i > 0 && e >= self.eps[i - 1] {
                return Err(config_err("eps", "values must be strictly decreasing"));
            }
        }
        if self.grid_k < 4 {
            return Err(config_err("grid_k", format!("must be at least 4, got {}", self.grid_k)));
        }
        self.well()?;
        let g = &self.geometry;
        if !matches!(self.dim(), 1 | 2) {
            return Err(config_err("geometry.dim", "must be 1 or 2"));
        }
        if matches!(self.kind, StudyKind::ChDisk | StudyKind::GtCheck | StudyKind::OkDisk) {
            let [cx, cy] = g.center;
            let room = cx.min(cy).min(1.0 - cx).min(1.0 - cy);
            if !(g.radius > 0.0 && g.radius < room) {
                return Err(config_err("geometry.radius", format!("disk of radius {} must fit inside the unit square", g.radius)));
            }
        }
        if let Some(x) = g.interface {
            if !(x > 0.0 && x < 1.0) {
                return Err(config_err("geometry.interface", "must lie in (0, 1)"));
            }
        }
        if let Some(m) = g.mass {
            if !(m.abs() < 1.0) {
                return Err(config_err("geometry.mass", "must satisfy |m| < |domain| = 1"));
            }
        }
        if !(g.fy1 > 0.0) {
            return Err(config_err("geometry.fy1", "must be positive"));
        }
        if g.layers.is_empty() || g.layers.contains(&0) {
            return Err(config_err("geometry.layers", "needs positive layer counts"));
        }
        if !(g.spacing > 0.0) || !(g.window > 0.0) {
            return Err(config_err("geometry.window", "spacing and window must be positive"));
        }
        if self.kind == StudyKind::Multiplicity {
            let span = (*g.layers.iter().max().unwrap() as f64 - 1.0) * g.spacing;
            if span / 2.0 >= g.window {
                return Err(config_err("geometry.window", "window must contain every layer"));
            }
        }
        let t = &self.tolerances;
        let positive = [
            ("tolerances.newton", t.newton),
            ("tolerances.krylov", t.krylov),
            ("tolerances.curvature_window", t.curvature_window),
            ("tolerances.fine_eps", t.fine_eps),
            ("tolerances.bulk_factor", t.bulk_factor),
            ("tolerances.bulk_distance", t.bulk_distance),
        ];
        for (key, v) in positive {
            if !(v > 0.0) {
                return Err(config_err(key, "must be positive"));
            }
        }
        if !(t.gap_range[0] < t.gap_range[1]) {
            return Err(config_err("tolerances.gap_range", "needs lower < upper"));
        }
        if matches!(self.kind, StudyKind::Subsolution | StudyKind::Gap) {
            for &e in &self.eps {
                make_schedule(e).map_err(|err| config_err("eps", err.to_string()))?;
            }
        }
        Ok(())
    }

    fn newton(&self) -> NewtonSettings {
        NewtonSettings {
            tol: self.tolerances.newton,
            krylov_tol: self.tolerances.krylov,
            ..NewtonSettings::default()
        }
    }

    fn unit_grid(&self, eps: f64, dim: usize) -> Result<Grid> {
        let n = (self.grid_k as f64 / eps).round() as usize;
        Grid::unit(dim, n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    /// The statement this number checks.
    pub anchor: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub eps: Option<f64>,
    pub metrics: Vec<Metric>,
    pub error: Option<String>,
}

impl Row {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.name == name).map(|m| m.value)
    }
}

/// `log(e_prev/e) / log(ε_prev/ε)` between successive rows; `log₂` of the
/// error ratio when `ε` halves.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Order {
    pub metric: String,
    pub orders: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rule {
    pub name: String,
    pub anchor: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub kind: StudyKind,
    pub config: StudyConfig,
    pub rows: Vec<Row>,
    pub orders: Vec<Order>,
    pub rules: Vec<Rule>,
    pub pass: bool,
}

impl StudyReport {
    pub fn rule(&self, name: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub eps: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct StudyRun {
    pub report: StudyReport,
    pub timings: Vec<Timing>,
}

const A_SIGMA: &str = "surface tension sigma = int sqrt(W/2)";
const A_PROFILE: &str = "optimal profile phi0'' = W'(phi0)";
const A_CORRECTION: &str = "first-order correction phi1 endpoints sigma/W''(+-1)";
const A_LAYER: &str = "each transition layer carries energy 2 sigma";
const A_GT: &str = "Gibbs-Thomson law sigma*H = lambda";
const A_OK: &str = "Ohta-Kawasaki law sigma*H = -v + lambda";
const A_BULK: &str = "bulk values approach the perturbed equilibria lambda_eps";
const A_SUB: &str = "subsolution defect <= (7/9) f(y1)";
const A_GAP: &str = "gap lambda_eps,+ - beta_eps,+ >= gamma*eps";
const A_MULT: &str = "density limit theta = N * 2 sigma with integer N";
const A_SOLVER: &str = "solver convergence";

fn metric(name: &str, value: f64, anchor: &'static str) -> Metric {
    Metric {
        name: name.to_string(),
        value,
        anchor,
    }
}

type Artifacts = Vec<(String, Vec<u8>)>;

struct Outcome {
    metrics: Vec<Metric>,
    artifacts: Artifacts,
}

fn snapshot_bytes(u: &ScalarField) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    u.write_snapshot(&mut buf)?;
    Ok(buf)
}

fn solver_metrics(rep: &SolveReport, out: &mut Vec<Metric>) {
    out.push(metric("converged", f64::from(u8::from(rep.converged)), A_SOLVER));
    out.push(metric("newton_iterations", rep.iterations as f64, A_SOLVER));
    out.push(metric("residual", rep.residual, A_SOLVER));
    out.push(metric("krylov_iterations", rep.krylov_iterations as f64, A_SOLVER));
}

/// Distance from `p` to the nearest interface segment.
fn distance_to_curves(curves: &[InterfaceCurve], p: [f64; 2]) -> f64 {
    let mut best = f64::INFINITY;
    for c in curves {
        let n = c.vertices.len();
        let segs = if c.closed { n } else { n.saturating_sub(1) };
        for k in 0..segs {
            let a = c.vertices[k];
            let b = c.vertices[(k + 1) % n];
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len2 = dx * dx + dy * dy;
            let s = if len2 > 0.0 {
                (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            best = best.min((p[0] - a[0] - s * dx).hypot(p[1] - a[1] - s * dy));
        }
    }
    best
}

struct Context<'a> {
    cfg: &'a StudyConfig,
    w: DoubleWell,
    sigma: f64,
    table: Option<ProfileTable>,
}

fn disk_seed(ctx: &Context, eps: f64) -> Result<(ScalarField, f64)> {
    let g = ctx.cfg.unit_grid(eps, 2)?;
    let geo = &ctx.cfg.geometry;
    let [cx, cy] = geo.center;
    let d = ScalarField::from_fn(&g, |p| geo.radius - (p[0] - cx).hypot(p[1] - cy));
    let u0 = seed_from_signed_distance(&g, eps, &d)?;
    let m = geo.mass.unwrap_or_else(|| integrate(&u0));
    Ok((u0, m))
}

fn ch_disk(ctx: &Context, eps: f64) -> Result<Outcome> {
    let (u0, m) = disk_seed(ctx, eps)?;
    let (u, rep) = solve_stationary_ch(&u0, eps, m, &ctx.w, &ctx.cfg.newton())?;
    let mut metrics = Vec::new();
    solver_metrics(&rep, &mut metrics);
    let lambda = rep.lambda.unwrap_or(f64::NAN);
    metrics.push(metric("lambda", lambda, A_GT));
    metrics.push(metric("energy", rep.energy, A_LAYER));
    let curves = extract_interface(&u)?;
    let main = curves
        .iter()
        .filter(|c| c.closed)
        .max_by(|a, b| a.enclosed_area().abs().total_cmp(&b.enclosed_area().abs()))
        .ok_or_else(|| Error::InvalidArgument("no closed interface found".into()))?;
    let radius = (main.enclosed_area().abs() / std::f64::consts::PI).sqrt();
    metrics.push(metric("radius", radius, A_GT));
    metrics.push(metric("lambda_r_over_sigma", lambda * radius / ctx.sigma, A_GT));
    metrics.push(metric("gt_law_error", (lambda * radius / ctx.sigma - 1.0).abs(), A_GT));
    let mut fitted = curvature(main, ctx.cfg.tolerances.curvature_window * eps)?;
    let gt = gibbs_thomson_residual(&mut fitted, &ScalarField::constant(u.grid(), lambda), ctx.sigma)?;
    metrics.push(metric("gt_sup_residual", gt.sup_residual, A_GT));
    metrics.push(metric("gt_l2_residual", gt.l2_residual, A_GT));
    metrics.push(metric("gt_sup_over_lambda", gt.sup_residual / lambda.abs(), A_GT));
    let reach = ctx.cfg.tolerances.bulk_distance * eps;
    // W'(u) = ελ in the bulk, the perturbed equation with f = (9/8)λ
    match bulk_deviation(&u, eps, 9.0 / 8.0 * lambda, &ctx.w, |p| distance_to_curves(&curves, p) >= reach) {
        Ok(b) => {
            metrics.push(metric("bulk_deviation", b.sup_abs, A_BULK));
            metrics.push(metric("bulk_deviation_over_eps2", b.sup_abs / (eps * eps), A_BULK));
        }
        Err(Error::EmptyRegion) => {}
        Err(e) => return Err(e),
    }
    let mut csv = Vec::new();
    write_curve_csv(&fitted, ctx.sigma, &mut csv)?;
    Ok(Outcome {
        metrics,
        artifacts: vec![(format!("u_eps{eps}.bin"), snapshot_bytes(&u)?), (format!("interface_eps{eps}.csv"), csv)],
    })
}

fn ch_planar(ctx: &Context, eps: f64) -> Result<Outcome> {
    let dim = ctx.cfg.dim();
    let g = ctx.cfg.unit_grid(eps, dim)?;
    let x0 = ctx.cfg.interface_position();
    let d = ScalarField::from_fn(&g, |p| x0 - p[0]);
    let u0 = seed_from_signed_distance(&g, eps, &d)?;
    let m = ctx.cfg.geometry.mass.unwrap_or_else(|| integrate(&u0));
    let (u, rep) = solve_stationary_ch(&u0, eps, m, &ctx.w, &ctx.cfg.newton())?;
    let mut metrics = Vec::new();
    solver_metrics(&rep, &mut metrics);
    let lambda = rep.lambda.unwrap_or(f64::NAN);
    let length = if dim == 2 { g.extent()[1] } else { 1.0 };
    metrics.push(metric("lambda", lambda, A_GT));
    metrics.push(metric("abs_lambda", lambda.abs(), A_GT));
    metrics.push(metric("energy", rep.energy, A_LAYER));
    metrics.push(metric("layer_energy_error", (rep.energy - 2.0 * ctx.sigma * length).abs(), A_LAYER));
    Ok(Outcome {
        metrics,
        artifacts: vec![(format!("u_eps{eps}.bin"), snapshot_bytes(&u)?)],
    })
}

fn ok_disk(ctx: &Context, eps: f64) -> Result<Outcome> {
    let (u0, m) = disk_seed(ctx, eps)?;
    let (u, v, rep) = solve_ohta_kawasaki(&u0, eps, m, &ctx.w, &ctx.cfg.newton())?;
    let mut metrics = Vec::new();
    solver_metrics(&rep, &mut metrics);
    let lambda = rep.lambda.unwrap_or(f64::NAN);
    metrics.push(metric("lambda", lambda, A_OK));
    metrics.push(metric("energy_local", rep.energy, A_OK));
    let curves = extract_interface(&u)?;
    let f = v.map(|x| lambda - x);
    let mut sup_res: f64 = 0.0;
    let mut sup_f: f64 = 0.0;
    let mut csv = Vec::new();
    for c in curves.iter().filter(|c| c.closed) {
        let mut fitted = curvature(c, ctx.cfg.tolerances.curvature_window * eps)?;
        let gt = gibbs_thomson_residual(&mut fitted, &f, ctx.sigma)?;
        sup_res = sup_res.max(gt.sup_residual);
        for p in fitted.potential.iter().flatten() {
            sup_f = sup_f.max(p.abs());
        }
        write_curve_csv(&fitted, ctx.sigma, &mut csv)?;
    }
    metrics.push(metric("ok_sup_residual", sup_res, A_OK));
    metrics.push(metric("ok_sup_forcing", sup_f, A_OK));
    metrics.push(metric("ok_ratio", sup_res / sup_f, A_OK));
    Ok(Outcome {
        metrics,
        artifacts: vec![
            (format!("u_eps{eps}.bin"), snapshot_bytes(&u)?),
            (format!("v_eps{eps}.bin"), snapshot_bytes(&v)?),
            (format!("interface_eps{eps}.csv"), csv),
        ],
    })
}

fn ok_lamellar(ctx: &Context, eps: f64) -> Result<Outcome> {
    let dim = ctx.cfg.dim();
    let g = ctx.cfg.unit_grid(eps, dim)?;
    let x0 = ctx.cfg.interface_position();
    let d = ScalarField::from_fn(&g, |p| x0 - p[0]);
    let u0 = seed_from_signed_distance(&g, eps, &d)?;
    let m = ctx.cfg.geometry.mass.unwrap_or_else(|| integrate(&u0));
    let (u, v, rep) = solve_ohta_kawasaki(&u0, eps, m, &ctx.w, &ctx.cfg.newton())?;
    let mut metrics = Vec::new();
    solver_metrics(&rep, &mut metrics);
    let lambda = rep.lambda.unwrap_or(f64::NAN);
    metrics.push(metric("lambda", lambda, A_OK));
    let points: Vec<Vec<f64>> = if dim == 1 {
        extract_crossings(&u)?.into_iter().map(|x| vec![x]).collect()
    } else {
        extract_interface(&u)?
            .into_iter()
            .flat_map(|c| c.vertices.into_iter().map(|p| p.to_vec()))
            .collect()
    };
    if points.is_empty() {
        return Err(Error::InvalidArgument("no interface points found".into()));
    }
    let mut sup: f64 = 0.0;
    for p in &points {
        sup = sup.max((lambda - sample(&v, p)?).abs());
    }
    metrics.push(metric("interface_points", points.len() as f64, A_OK));
    metrics.push(metric("sup_lambda_minus_v", sup, A_OK));
    Ok(Outcome {
        metrics,
        artifacts: vec![(format!("u_eps{eps}.bin"), snapshot_bytes(&u)?), (format!("v_eps{eps}.bin"), snapshot_bytes(&v)?)],
    })
}

fn subsolution(ctx: &Context, eps: f64) -> Result<Outcome> {
    let table = ctx.table.as_ref().expect("profile table");
    let fy1 = ctx.cfg.geometry.fy1;
    let cert = arc_certificate(eps, fy1, table, &ctx.w, ctx.cfg.tolerances.subsolution_slack)?;
    let v = cert.verdict;
    let metrics = vec![
        metric("delta", cert.schedule.delta, A_SUB),
        metric("max_defect", v.max_defect, A_SUB),
        metric("defect_over_fy1", v.max_defect / fy1, A_SUB),
        metric("bound", v.bound, A_SUB),
        metric("slack", v.slack, A_SUB),
        metric("argmax_x", v.location[0], A_SUB),
        metric("argmax_t", v.location[1], A_SUB),
    ];
    Ok(Outcome {
        metrics,
        artifacts: vec![(format!("defect_eps{eps}.bin"), snapshot_bytes(&cert.sub.defect)?)],
    })
}

/// Alternating product of `n` profiles spaced `spacing·ε` around `center`.
pub fn synthetic_layers(grid: &Grid, eps: f64, layers: usize, spacing: f64, center: f64) -> ScalarField {
    let offset = 0.5 * (layers as f64 - 1.0);
    ScalarField::from_fn(grid, |p| {
        (0..layers)
            .map(|i| {
                let a = center + (i as f64 - offset) * spacing * eps;
                ((p[0] - a) / (std::f64::consts::SQRT_2 * eps)).tanh()
            })
            .product()
    })
}

fn multiplicity(ctx: &Context, eps: f64) -> Result<Outcome> {
    let g = ctx.cfg.unit_grid(eps, 1)?;
    let geo = &ctx.cfg.geometry;
    let center = geo.interface.unwrap_or(0.5);
    let mut metrics = Vec::new();
    let mut rows = Vec::new();
    for &n in &geo.layers {
        let u = synthetic_layers(&g, eps, n, geo.spacing, center);
        let mu = energy_measure(&u, eps, &ctx.w)?;
        let radius = geo.window * eps;
        let (ratio, est) = multiplicity_estimate(&mu, &[center], radius, ctx.sigma)?;
        metrics.push(metric(&format!("ratio_{n}"), ratio, A_MULT));
        metrics.push(metric(&format!("estimate_{n}"), est as f64, A_MULT));
        rows.push(MultiplicityRow {
            center: vec![center],
            radius,
            ratio,
            n: est,
        });
    }
    let mut csv = Vec::new();
    write_multiplicity_csv(&rows, &mut csv)?;
    Ok(Outcome {
        metrics,
        artifacts: vec![(format!("multiplicity_eps{eps}.csv"), csv)],
    })
}

fn gap(ctx: &Context, eps: f64) -> Result<Outcome> {
    let table = ctx.table.as_ref().expect("profile table");
    let fy1 = ctx.cfg.geometry.fy1;
    let r = asymptotic_gap(&ctx.w, table, fy1, &[eps])?[0];
    // λ₊ ≈ 1 + ε(8/9)f/W''(1) and β₊ ≈ 1 + ε(2/3)f/W''(1)
    let limit = 2.0 / 9.0 * fy1 / ctx.w.d2w(1.0);
    let metrics = vec![
        metric("delta", r.delta, A_GAP),
        metric("lambda_minus", r.lambda_minus, A_GAP),
        metric("lambda_plus", r.lambda_plus, A_GAP),
        metric("beta_minus", r.beta_minus, A_GAP),
        metric("beta_plus", r.beta_plus, A_GAP),
        metric("gap_plus", r.gap_plus, A_GAP),
        metric("gap_minus", r.gap_minus, A_GAP),
        metric("gap_limit", limit, A_GAP),
        metric("gap_error", (r.gap_plus - limit).abs(), A_GAP),
    ];
    Ok(Outcome {
        metrics,
        artifacts: Vec::new(),
    })
}

fn profile(ctx: &Context) -> Result<Outcome> {
    let table = ctx.table.as_ref().expect("profile table");
    let w = &ctx.w;
    let mut metrics = vec![
        metric("sigma", ctx.sigma, A_SIGMA),
        metric("phi0_residual", table.residual_phi0, A_PROFILE),
        metric("equipartition_defect", table.equipartition_defect(w), A_PROFILE),
        metric("fredholm_coefficient", table.fredholm_coefficient, A_CORRECTION),
        metric("correction_orthogonality", table.orthogonality, A_CORRECTION),
    ];
    // W = q(1-r²)² with constant q has φ₀ = tanh(√(2q) r) and σ = (4/3)√(q/2)
    if let [q] = w.factor() {
        let exact = 4.0 / 3.0 * (q / 2.0).sqrt();
        metrics.push(metric("sigma_error", (ctx.sigma - exact).abs(), A_SIGMA));
        let rate = (2.0 * q).sqrt();
        let err = table
            .nodes()
            .zip(table.phi0_samples())
            .filter(|(r, _)| r.abs() <= 10.0)
            .fold(0.0f64, |m, (r, p)| m.max((p - (rate * r).tanh()).abs()));
        metrics.push(metric("phi0_exact_error", err, A_PROFILE));
    }
    let (wm, wp) = w.well_curvatures();
    let (_, _, left, right) = table.tails();
    metrics.push(metric("phi1_minus", left, A_CORRECTION));
    metrics.push(metric("phi1_plus", right, A_CORRECTION));
    let endpoint = (left - ctx.sigma / wm).abs().max((right - ctx.sigma / wp).abs());
    metrics.push(metric("phi1_endpoint_error", endpoint, A_CORRECTION));
    let mut bin = Vec::new();
    table.write_to(&mut bin)?;
    let mut csv = Vec::new();
    writeln!(csv, "r,phi0,phi1")?;
    let stride = ((0.01 / table.spacing()).round() as usize).max(1);
    for (i, r) in table.nodes().enumerate().step_by(stride) {
        writeln!(csv, "{r:e},{:e},{:e}", table.phi0_samples()[i], table.phi1_samples()[i])?;
    }
    Ok(Outcome {
        metrics,
        artifacts: vec![("profile.bin".into(), bin), ("profile.csv".into(), csv)],
    })
}

fn rows_where<'r>(rows: &'r [Row], pred: impl Fn(f64) -> bool + 'r) -> impl Iterator<Item = &'r Row> + 'r {
    rows.iter().filter(move |r| r.eps.is_none_or(&pred))
}

/// Rule `metric ≤ bound(ε)` on every selected row; a missing metric fails.
fn bound_rule(
    rows: &[Row],
    name: &str,
    anchor: &'static str,
    metric_name: &str,
    select: impl Fn(f64) -> bool,
    bound: impl Fn(Option<f64>) -> f64,
) -> Option<Rule> {
    let selected: Vec<&Row> = rows_where(rows, select).collect();
    if selected.is_empty() {
        return None;
    }
    let mut pass = true;
    let mut parts = Vec::new();
    for r in selected {
        let b = bound(r.eps);
        match r.get(metric_name) {
            Some(v) if v <= b => parts.push(format!("{v:.4e} <= {b:.4e}")),
            Some(v) => {
                pass = false;
                parts.push(format!("{v:.4e} > {b:.4e}"));
            }
            None => {
                pass = false;
                parts.push("missing".into());
            }
        }
    }
    Some(Rule {
        name: name.into(),
        anchor,
        pass,
        detail: format!("{metric_name}: {}", parts.join("; ")),
    })
}

/// Successive values of `metric_name` must decrease as `ε` decreases
/// (strictly, unless `strict` is false).
fn monotone_rule(rows: &[Row], name: &str, anchor: &'static str, metric_name: &str, strict: bool) -> Option<Rule> {
    if rows.len() < 2 {
        return None;
    }
    let values: Vec<Option<f64>> = rows.iter().map(|r| r.get(metric_name)).collect();
    let pass = values.windows(2).all(|p| match (p[0], p[1]) {
        (Some(a), Some(b)) => {
            if strict {
                b < a
            } else {
                b <= a
            }
        }
        _ => false,
    });
    Some(Rule {
        name: name.into(),
        anchor,
        pass,
        detail: format!("{metric_name} by decreasing eps: {values:?}"),
    })
}

fn solved_rule(rows: &[Row]) -> Rule {
    let failed: Vec<String> = rows
        .iter()
        .filter(|r| r.error.is_some() || r.get("converged") == Some(0.0))
        .map(|r| format!("eps={:?}: {}", r.eps, r.error.as_deref().unwrap_or("not converged")))
        .collect();
    Rule {
        name: "all-solved".into(),
        anchor: A_SOLVER,
        pass: failed.is_empty(),
        detail: if failed.is_empty() { "every entry completed".into() } else { failed.join("; ") },
    }
}

fn rules_for(cfg: &StudyConfig, rows: &[Row]) -> Vec<Rule> {
    let t = &cfg.tolerances;
    let fine = |e: f64| e <= t.fine_eps * (1.0 + 1e-12);
    let all = |_: f64| true;
    let mut rules = vec![solved_rule(rows)];
    let mut push = |r: Option<Rule>| rules.extend(r);
    match cfg.kind {
        StudyKind::Profile => {
            push(bound_rule(rows, "sigma", A_SIGMA, "sigma_error", all, |_| t.sigma));
            push(bound_rule(rows, "phi0-residual", A_PROFILE, "phi0_residual", all, |_| t.profile_residual));
            push(bound_rule(rows, "phi0-exact", A_PROFILE, "phi0_exact_error", all, |_| t.profile_error));
            push(bound_rule(rows, "phi1-endpoints", A_CORRECTION, "phi1_endpoint_error", all, |_| t.correction_endpoint));
            push(bound_rule(rows, "equipartition", A_PROFILE, "equipartition_defect", all, |_| t.equipartition));
        }
        StudyKind::ChDisk => {
            push(bound_rule(rows, "gt-law-coarse", A_GT, "gt_law_error", all, |_| t.gt_law_coarse));
            push(bound_rule(rows, "gt-law-fine", A_GT, "gt_law_error", fine, |_| t.gt_law_fine));
            push(monotone_rule(rows, "gt-law-monotone", A_GT, "gt_law_error", true));
            push(bound_rule(rows, "bulk-estimate", A_BULK, "bulk_deviation", fine, |e| {
                t.bulk_factor * e.unwrap_or(0.0).powi(2)
            }));
        }
        StudyKind::GtCheck => {
            push(bound_rule(rows, "gt-pointwise", A_GT, "gt_sup_over_lambda", all, |_| t.gt_pointwise));
        }
        StudyKind::ChPlanar => {
            push(bound_rule(rows, "layer-energy", A_LAYER, "layer_energy_error", fine, |_| t.layer_energy));
            push(bound_rule(rows, "planar-lambda", A_GT, "abs_lambda", all, |_| t.planar_lambda));
        }
        StudyKind::OkDisk => {
            push(bound_rule(rows, "ok-pointwise", A_OK, "ok_ratio", all, |_| t.ok_pointwise));
        }
        StudyKind::OkLamellar => {
            push(bound_rule(rows, "lamellar", A_OK, "sup_lambda_minus_v", all, |_| t.lamellar));
        }
        StudyKind::Subsolution => {
            let bound = (7.0 / 9.0 + t.subsolution_slack) * cfg.geometry.fy1;
            push(bound_rule(rows, "subsolution-bound", A_SUB, "max_defect", all, |_| bound));
            push(monotone_rule(rows, "subsolution-monotone", A_SUB, "max_defect", false));
        }
        StudyKind::Multiplicity => {
            let mut pass = true;
            let mut parts = Vec::new();
            for r in rows {
                for &n in &cfg.geometry.layers {
                    let est = r.get(&format!("estimate_{n}"));
                    pass &= est == Some(n as f64);
                    parts.push(format!("eps={:?} N={n}: {est:?}", r.eps));
                }
            }
            push(Some(Rule {
                name: "multiplicity".into(),
                anchor: A_MULT,
                pass,
                detail: parts.join("; "),
            }));
        }
        StudyKind::Gap => {
            let [lo, hi] = t.gap_range;
            let mut pass = true;
            for r in rows {
                pass &= r.get("gap_plus").is_some_and(|g| g >= lo * cfg.geometry.fy1);
            }
            push(Some(Rule {
                name: "gap-lower".into(),
                anchor: A_GAP,
                pass,
                detail: format!("gap_plus >= {lo} f"),
            }));
            push(bound_rule(rows, "gap-upper", A_GAP, "gap_plus", all, |_| hi * cfg.geometry.fy1));
            let positive = rows
                .iter()
                .all(|r| r.get("gap_plus").is_some_and(|g| g > 0.0) && r.get("gap_minus").is_some_and(|g| g > 0.0));
            push(Some(Rule {
                name: "gaps-positive".into(),
                anchor: A_GAP,
                pass: positive,
                detail: "gap_plus > 0 and gap_minus > 0 for every eps".into(),
            }));
        }
    }
    rules
}

fn order_metrics(kind: StudyKind) -> &'static [&'static str] {
    match kind {
        StudyKind::ChDisk => &["gt_law_error"],
        StudyKind::GtCheck => &["gt_sup_over_lambda"],
        StudyKind::ChPlanar => &["layer_energy_error", "abs_lambda"],
        StudyKind::OkDisk => &["ok_ratio"],
        StudyKind::OkLamellar => &["sup_lambda_minus_v"],
        StudyKind::Gap => &["gap_error"],
        _ => &[],
    }
}

fn orders(kind: StudyKind, rows: &[Row]) -> Vec<Order> {
    order_metrics(kind)
        .iter()
        .map(|&name| Order {
            metric: name.into(),
            orders: rows
                .windows(2)
                .map(|p| match (p[0].eps, p[1].eps, p[0].get(name), p[1].get(name)) {
                    (Some(e0), Some(e1), Some(a), Some(b)) if a > 0.0 && b > 0.0 => {
                        Some((a / b).ln() / (e0 / e1).ln()).filter(|o| o.is_finite())
                    }
                    _ => None,
                })
                .collect(),
        })
        .collect()
}

/// Runs a validated study. With `out`, writes `report.json`,
/// `timings.json`, `rows.csv` and the per-`ε` artifacts into it.
pub fn run_study(config: &StudyConfig, out: Option<&Path>) -> Result<StudyRun> {
    config.validate()?;
    let w = config.well()?;
    let sigma = surface_tension(&w, 64)?;
    let needs_table = matches!(config.kind, StudyKind::Profile | StudyKind::Subsolution | StudyKind::Gap);
    let table = if needs_table { Some(ProfileTable::default_for(&w)?) } else { None };
    let ctx = Context {
        cfg: config,
        w,
        sigma,
        table,
    };
    let entries: Vec<Option<f64>> = if config.kind == StudyKind::Profile {
        vec![None]
    } else {
        config.eps.iter().copied().map(Some).collect()
    };
    let results: Vec<(Row, Artifacts, Timing)> = entries
        .par_iter()
        .map(|&eps| {
            let start = Instant::now();
            let res = match (config.kind, eps) {
                (StudyKind::Profile, _) => profile(&ctx),
                (_, None) => unreachable!("non-profile studies carry eps"),
                (StudyKind::ChDisk | StudyKind::GtCheck, Some(e)) => ch_disk(&ctx, e),
                (StudyKind::ChPlanar, Some(e)) => ch_planar(&ctx, e),
                (StudyKind::OkDisk, Some(e)) => ok_disk(&ctx, e),
                (StudyKind::OkLamellar, Some(e)) => ok_lamellar(&ctx, e),
                (StudyKind::Subsolution, Some(e)) => subsolution(&ctx, e),
                (StudyKind::Multiplicity, Some(e)) => multiplicity(&ctx, e),
                (StudyKind::Gap, Some(e)) => gap(&ctx, e),
            };
            let timing = Timing {
                eps,
                seconds: start.elapsed().as_secs_f64(),
            };
            match res {
                Ok(o) => (
                    Row {
                        eps,
                        metrics: o.metrics,
                        error: None,
                    },
                    o.artifacts,
                    timing,
                ),
                Err(e) => (
                    Row {
                        eps,
                        metrics: Vec::new(),
                        error: Some(e.to_string()),
                    },
                    Vec::new(),
                    timing,
                ),
            }
        })
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    let mut artifacts = Vec::new();
    let mut timings = Vec::new();
    for (r, a, t) in results {
        rows.push(r);
        artifacts.extend(a);
        timings.push(t);
    }
    let rules = rules_for(config, &rows);
    let pass = rules.iter().all(|r| r.pass);
    let mut echo = config.clone();
    echo.output = None;
    let report = StudyReport {
        kind: config.kind,
        config: echo,
        orders: orders(config.kind, &rows),
        rows,
        rules,
        pass,
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        for (name, bytes) in &artifacts {
            fs::write(dir.join(name), bytes)?;
        }
        fs::write(dir.join("rows.csv"), rows_csv(&report.rows))?;
        fs::write(dir.join("report.json"), report.to_json()?)?;
        fs::write(dir.join("timings.json"), serde_json::to_string_pretty(&timings)?)?;
    }
    Ok(StudyRun { report, timings })
}

fn rows_csv(rows: &[Row]) -> String {
    let mut names: Vec<&str> = Vec::new();
    let mut seen = BTreeMap::new();
    for r in rows {
        for m in &r.metrics {
            if seen.insert(m.name.as_str(), ()).is_none() {
                names.push(&m.name);
            }
        }
    }
    let mut s = format!("eps,{}\n", names.join(","));
    for r in rows {
        let eps = r.eps.map(|e| format!("{e}")).unwrap_or_default();
        let cells: Vec<String> = names
            .iter()
            .map(|n| r.get(n).map(|v| format!("{v:e}")).unwrap_or_default())
            .collect();
        s.push_str(&format!("{eps},{}\n", cells.join(",")));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing_and_validation() {
        let cfg = StudyConfig::from_json(r#"{"kind": "gap", "eps": [0.01, 0.005]}"#).unwrap();
        assert_eq!(cfg.kind, StudyKind::Gap);
        assert_eq!(cfg.grid_k, 4);
        let key = |text: &str| match StudyConfig::from_json(text) {
            Err(Error::Config { key, .. }) => key,
            other => panic!("expected a config error, got {other:?}"),
        };
        assert_eq!(key(r#"{"kind": "gap", "eps": [0.01], "epsilon": 1}"#), "epsilon");
        assert_eq!(key(r#"{"kind": "gap", "eps": [0.01, 0.02]}"#), "eps");
        assert_eq!(key(r#"{"kind": "ch-disk", "eps": [0.04], "grid_k": 3}"#), "grid_k");
        assert_eq!(key(r#"{"kind": "ch-disk", "eps": [0.04], "geometry": {"radius": 0.6}}"#), "geometry.radius");
        assert_eq!(key(r#"{"kind": "ch-disk", "eps": [0.04], "geometry": {"raduis": 0.2}}"#), "raduis");
        assert_eq!(key(r#"{"kind": "ch-disk", "eps": [0.04], "well": {"factor": [-1.0]}}"#), "well.factor");
        assert_eq!(key(r#"{"kind": "ch-disc", "eps": [0.04]}"#), "kind");
        assert_eq!(key("{"), "(document)");
        assert_eq!(key(r#"{"kind": "ch-disk"}"#), "eps");
        assert!(StudyConfig::from_json(r#"{"kind": "profile"}"#).is_ok());
    }

    #[test]
    fn orders_are_log_ratios() {
        let row = |eps: f64, e: f64| Row {
            eps: Some(eps),
            metrics: vec![metric("gap_error", e, A_GAP)],
            error: None,
        };
        let rows = [row(0.04, 0.4), row(0.02, 0.1), row(0.01, 0.0)];
        let o = orders(StudyKind::Gap, &rows);
        assert_eq!(o[0].orders[0], Some(2.0));
        assert_eq!(o[0].orders[1], None);
    }

    #[test]
    fn rules_fail_on_missing_metrics() {
        let cfg = StudyConfig::new(StudyKind::OkLamellar, vec![0.01]);
        let rows = [Row {
            eps: Some(0.01),
            metrics: Vec::new(),
            error: Some("boom".into()),
        }];
        let rules = rules_for(&cfg, &rows);
        assert!(rules.iter().all(|r| !r.pass));
    }

    #[test]
    fn synthetic_layers_alternate() {
        let g = Grid::unit(1, 800).unwrap();
        let u = synthetic_layers(&g, 0.01, 3, 4.0, 0.5);
        let crossings = extract_crossings(&u).unwrap();
        assert_eq!(crossings.len(), 3);
        assert!((crossings[1] - 0.5).abs() < 1e-3);
    }

    #[test]
    fn gap_study_writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = StudyConfig::new(StudyKind::Gap, vec![0.01, 0.005]);
        let run = run_study(&cfg, Some(dir.path())).unwrap();
        assert!(run.report.pass, "{:#?}", run.report.rules);
        let text = fs::read_to_string(dir.path().join("report.json")).unwrap();
        assert_eq!(text, run.report.to_json().unwrap());
        assert!(dir.path().join("timings.json").exists());
        let csv = fs::read_to_string(dir.path().join("rows.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(text.contains("gap lambda_eps,+ - beta_eps,+"));
    }
}
