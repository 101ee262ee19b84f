use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use smallvec::SmallVec;

use super::spec::{Branching, Ensemble, ModelSpec, QLaw};
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::scalar::Real;

/// One draw of `(N, Q, A_1, ..., A_N)`.
#[derive(Debug, Clone)]
pub struct Innovation<T> {
    pub n: usize,
    pub q: Vector<T>,
    pub a: SmallVec<[Mat<T>; 4]>,
}

fn pick<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding in the cumulative sum: fall back to the last positive atom
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

pub fn sample_n<R: Rng + ?Sized>(branching: &Branching, rng: &mut R) -> usize {
    match branching {
        Branching::Fixed(n) => *n,
        Branching::Random { support, probs } => support[pick(probs, rng)],
    }
}

pub fn sample_q<T: Real, R: Rng + ?Sized>(law: &QLaw, d: usize, rng: &mut R) -> Vector<T> {
    match law {
        QLaw::Zero => smallvec::smallvec![T::zero(); d],
        QLaw::Deterministic(q) => q.iter().map(|&v| T::c(v)).collect(),
        QLaw::FiniteSupport { vectors, probs } => {
            vectors[pick(probs, rng)].iter().map(|&v| T::c(v)).collect()
        }
    }
}

/// Haar-distributed rotation (determinant +1).
pub fn sample_rotation<T: Real, R: Rng + ?Sized>(d: usize, rng: &mut R) -> Mat<T> {
    if d == 2 {
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        let (s, c) = theta.sin_cos();
        return Mat::from_fn(2, |i, j| T::c([[c, -s], [s, c]][i][j]));
    }
    // Gram-Schmidt on a Gaussian matrix gives Haar on O(d); flip one column
    // to land in SO(d).
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    while cols.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for c in &cols {
            let p: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= p * b);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-8 {
            v.iter_mut().for_each(|a| *a /= n);
            cols.push(v);
        }
    }
    let mut m = Mat::<f64>::from_fn(d, |i, j| cols[j][i]);
    if m.determinant() < 0.0 {
        for i in 0..d {
            m[(i, 0)] = -m[(i, 0)];
        }
    }
    m.cast()
}

fn lognormal<R: Rng + ?Sized>(mu: f64, sigma2: f64, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    (mu + sigma2.sqrt() * z).exp()
}

/// One matrix `A` from the ensemble.
pub fn sample_a<T: Real, R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Mat<T> {
    let d = spec.dimension;
    match &spec.ensemble {
        Ensemble::FiniteSupport { matrices, probs } => Mat::from_rows(&matrices[pick(probs, rng)]),
        Ensemble::ScalarLognormal { mu, sigma2 } => {
            Mat::scalar(1, T::c(lognormal(*mu, *sigma2, rng)))
        }
        Ensemble::LognormalTimesFixed { mu, sigma2, matrix } => {
            Mat::<T>::from_rows(matrix).scale(T::c(lognormal(*mu, *sigma2, rng)))
        }
        Ensemble::LognormalTimesRotation { mu, sigma2 } => {
            let w = T::c(lognormal(*mu, *sigma2, rng));
            sample_rotation::<T, R>(d, rng).scale(w)
        }
    }
}

/// One step matrix `M = A^T` of the multiplicative walk.
pub fn sample_m<T: Real, R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Mat<T> {
    sample_a::<T, R>(spec, rng).transpose()
}

/// Uniformly permutes the weights of a fixed-size family.
pub fn exchangeify<T, R: Rng + ?Sized>(a: &mut [Mat<T>], rng: &mut R) {
    a.shuffle(rng);
}

/// Draws one family `(N, Q, A_1..A_N)`. Fixed-size families are made
/// exchangeable; under class nonnegative-C every drawn entry is checked.
pub fn sample_family<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    rng: &mut R,
) -> Result<Innovation<T>> {
    let n = sample_n(&spec.branching, rng);
    let q = sample_q::<T, R>(&spec.q_law, spec.dimension, rng);
    let mut a: SmallVec<[Mat<T>; 4]> = (0..n).map(|_| sample_a::<T, R>(spec, rng)).collect();
    if spec.branching.is_fixed() {
        exchangeify(&mut a, rng);
    }
    if spec.class.is_cone() {
        if let Some(bad) = a.iter().position(|m| m.min_entry() < T::zero()) {
            return Err(Error::ClassViolation(format!(
                "sampled A_{} has a negative entry",
                bad + 1
            )));
        }
        if q.iter().any(|&v| v < T::zero()) {
            return Err(Error::ClassViolation(
                "sampled Q has a negative entry".into(),
            ));
        }
    }
    Ok(Innovation { n, q, a })
}
