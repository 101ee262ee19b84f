use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidSpec(String),

    #[error("class violation: {0}")]
    ClassViolation(String),

    #[error("singular action: |m x| = {norm:e} is below the underflow threshold")]
    SingularAction { norm: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("eigen solver did not converge: {0}")]
    EigenSolver(String),

    #[error("power iteration did not converge after {iterations} iterations (last relative change {last_change:e})")]
    NonConvergence { iterations: usize, last_change: f64 },

    #[error("power iteration oscillates with period 2 (estimates {even} and {odd})")]
    Oscillation { even: f64, odd: f64 },

    #[error(
        "operator assembly rejected {fraction:.4} of the draws as singular actions (limit 0.01)"
    )]
    AssemblyRejection { fraction: f64 },

    #[error("spectral failure: {0}")]
    Spectral(String),

    #[error("no root: min m(s) = {min_value} >= 1 at s* = {s_star}")]
    NoRoot { s_star: f64, min_value: f64 },

    #[error("no second root on [0, {s_max}]: m(s_max) = {m_at_s_max}; widen s_max")]
    NoSecondRoot { s_max: f64, m_at_s_max: f64 },

    #[error("expected tree population {expected:.3e} exceeds the node cap {cap}")]
    MemoryCap { expected: f64, cap: usize },

    #[error("numeric overflow while sampling: {0}")]
    Overflow(String),

    #[error("degenerate pool: {0}")]
    Degenerate(String),

    #[error("unresolvable tail window: fewer than {min_exceedances} exceedances at t_hi = {t_hi}; largest usable t_hi is {largest_usable}")]
    UnresolvableWindow {
        t_hi: f64,
        largest_usable: f64,
        min_exceedances: usize,
    },

    #[error("cone coverage failed: {0}")]
    Coverage(String),

    #[error("nondegeneracy failed: {0}")]
    Nondegeneracy(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
