use thiserror::Error;

/// Errors produced by the solvers and verification routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("double-well potential is not admissible: {0}")]
    InvalidWell(String),

    #[error("potential is negative (W = {value:e}) at quadrature node s = {node}")]
    NegativePotential { node: f64, value: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual history: {history:?})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        history: Vec<f64>,
    },

    #[error("singular linear system in {0}")]
    Singular(&'static str),

    #[error(
        "bulk roots merge: eps*(8/9)*|f| = {scaled:e} exceeds the critical value {critical:e} \
         (critical eps = {critical_eps:e})"
    )]
    RootsMerge {
        scaled: f64,
        critical: f64,
        critical_eps: f64,
    },

    #[error("Neumann source is incompatible: mean defect {mean_defect:e} (integral {integral:e})")]
    IncompatibleSource { mean_defect: f64, integral: f64 },

    #[error("point {point:?} lies outside the domain")]
    OutsideDomain { point: Vec<f64> },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("region is empty")]
    EmptyRegion,

    #[error("constant-mean-curvature problem outside its existence regime: |c|*rho = {c_rho} (need < 1)")]
    CmcRegime { c_rho: f64 },

    #[error("tube of half-width {tube} around the graph escapes the grid: {detail}")]
    TubeEscapesGrid { tube: f64, detail: String },

    #[error("cutoff construction violates its bounds: {0}")]
    CutoffBounds(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("malformed snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
