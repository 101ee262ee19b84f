#![allow(dead_code)]

use fixtail::model::{Branching, Ensemble, GeometricClass, QLaw};
use fixtail::{ModelSpec, Norm};

/// `d = 1`, binary, `A = exp(-1 + sqrt(0.5) Z)`, `Q = 1`.
pub fn ref1() -> ModelSpec {
    ModelSpec {
        dimension: 1,
        branching: Branching::Fixed(2),
        ensemble: Ensemble::ScalarLognormal {
            mu: -1.0,
            sigma2: 0.5,
        },
        q_law: QLaw::Deterministic(vec![1.0]),
        class: GeometricClass::NonnegativeC,
        norm: Norm::L1,
    }
}

/// `A = W [[1, 1], [1, 2]]`, `W = exp(-1 + 0.5 Z)`.
pub fn ref2() -> ModelSpec {
    ModelSpec {
        dimension: 2,
        branching: Branching::Fixed(2),
        ensemble: Ensemble::LognormalTimesFixed {
            mu: -1.0,
            sigma2: 0.25,
            matrix: vec![vec![1.0, 1.0], vec![1.0, 2.0]],
        },
        q_law: QLaw::Deterministic(vec![1.0, 1.0]),
        class: GeometricClass::NonnegativeC,
        norm: Norm::L1,
    }
}

pub fn rotation(d: usize) -> ModelSpec {
    ModelSpec {
        dimension: d,
        branching: Branching::Fixed(2),
        ensemble: Ensemble::LognormalTimesRotation {
            mu: -1.0,
            sigma2: 0.25,
        },
        q_law: QLaw::Deterministic(vec![1.0; d]),
        class: GeometricClass::InvertibleId,
        norm: Norm::L2,
    }
}

/// Two invertible matrices with signed entries and `N` uniform on `{1, 3}`.
pub fn signed_random_n() -> ModelSpec {
    ModelSpec {
        dimension: 2,
        branching: Branching::Random {
            support: vec![1, 3],
            probs: vec![0.5, 0.5],
        },
        ensemble: Ensemble::FiniteSupport {
            matrices: vec![
                vec![vec![0.6, 0.3], vec![-0.2, 0.5]],
                vec![vec![0.4, -0.1], vec![0.3, 0.7]],
            ],
            probs: vec![0.5, 0.5],
        },
        q_law: QLaw::Deterministic(vec![1.0, 0.0]),
        class: GeometricClass::InvertibleIpo,
        norm: Norm::L2,
    }
}

/// Nonnegative finite-support model built from two `2 x 2` matrices.
pub fn nonnegative_pair(a: [f64; 4], b: [f64; 4]) -> ModelSpec {
    ModelSpec {
        dimension: 2,
        branching: Branching::Fixed(2),
        ensemble: Ensemble::FiniteSupport {
            matrices: vec![
                vec![vec![a[0], a[1]], vec![a[2], a[3]]],
                vec![vec![b[0], b[1]], vec![b[2], b[3]]],
            ],
            probs: vec![0.5, 0.5],
        },
        q_law: QLaw::Deterministic(vec![1.0, 1.0]),
        class: GeometricClass::NonnegativeC,
        norm: Norm::L1,
    }
}

/// Two-sample Kolmogorov-Smirnov statistic and its asymptotic 1% critical
/// value.
pub fn ks_two_sample(mut a: Vec<f64>, mut b: Vec<f64>) -> (f64, f64) {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let (nf, mf) = (n as f64, m as f64);
    (d, 1.628 * ((nf + mf) / (nf * mf)).sqrt())
}
