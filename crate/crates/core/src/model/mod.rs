//! The random input `(Q, (A_i), N)` of the smoothing transform: its
//! description, sampling, and the geometric and moment condition checks.

mod sample;
mod spec;
mod validate;

pub use sample::{
    exchangeify, sample_a, sample_family, sample_m, sample_n, sample_q, sample_rotation, Innovation,
};
pub use spec::{
    Branching, DirectionalPart, Ensemble, GeometricClass, MFactor, ModelSpec, QLaw, ZERO_TOL,
};
pub use validate::{
    check_allowable, check_proximal, find_positive_product, heuristic_nonarithmetic,
    orbit_coverage, validate, ConditionVerdict, MomentEstimate, NonArithmeticEvidence,
    RatioEvidence, ValidationReport, Verdict, Witness,
};
