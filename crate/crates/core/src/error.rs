use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point {x} lies within one stencil of the grid edge")]
    GridBoundary { x: f64 },

    #[error("path {path_index} blew up at t = {time} (|X| = {value})")]
    Blowup {
        path_index: u64,
        time: f64,
        value: f64,
    },

    #[error("density is not normalizable on the working domain: {0}")]
    NonNormalizable(String),

    #[error("model `{0}` has no invariant-measure sampler")]
    NoInvariantSampler(String),

    #[error("flux leak: |int f dmu| = {residual:e} exceeds {tolerance:e}; enlarge the domain")]
    FluxLeak { residual: f64, tolerance: f64 },

    #[error("boundary mass {mass:e} exceeds {tolerance:e}; enlarge the domain")]
    DomainLeak { mass: f64, tolerance: f64 },

    #[error("integral diverges: fitted tail {tail} is not integrable")]
    Diverged { tail: String },

    #[error("inconclusive: {0}")]
    Inconclusive(String),

    #[error("no root: beta(s) log(1/s) exceeds {t} on the whole search interval")]
    NoRoot { t: f64 },

    #[error("1/phi is not locally integrable on [1, {upper}]")]
    NonIntegrable { upper: f64 },

    #[error("exponents out of order: p = {p} > r = {r}")]
    BadOrder { p: f64, r: f64 },

    #[error("ensemble was not started from the invariant measure")]
    OutOfEquilibrium,

    #[error("samples span {decades:.2} decades, need at least 2")]
    InsufficientRange { decades: f64 },

    #[error("step budget exceeded: {steps:e} > {budget:e}")]
    Budget { steps: f64, budget: f64 },

    #[error("no Lyapunov radius works; best margin {best_margin:e}")]
    LyapunovFails { best_margin: f64 },
}
