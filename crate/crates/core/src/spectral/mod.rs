//! The transfer operator `P_s f(x) = E[|M x|^s f(M.x)]` on a grid of `S`,
//! its Perron eigenvalue `k(s)`, and the roots of `m(s) = E[N] k(s)`.

mod operator;
mod roots;

pub use operator::{
    build_operator, compute_spectrum, power_iteration, sweep, write_sweep_csv, Eigen, GridOperator,
    SpectralConfig, SpectralResult, SweepRow, GRID_TOL,
};
pub use roots::{
    drift, k_by_products, m_of_s, solve_alpha_beta, solve_roots, BracketStep, DriftResult, KMethod,
    ProductsFit, RootSolution, TailIndexSolution,
};
