use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Norm};
use crate::scalar::Real;

/// Entries below this are structural zeros for allowability checks.
pub const ZERO_TOL: f64 = 1e-12;

/// Minimum |det| for a matrix to count as invertible.
pub const DET_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branching {
    /// Deterministic number of children, `N >= 2`.
    Fixed(usize),
    /// Finite-support law of `N`.
    Random {
        support: Vec<usize>,
        probs: Vec<f64>,
    },
}

impl Branching {
    pub fn mean(&self) -> f64 {
        match self {
            Branching::Fixed(n) => *n as f64,
            Branching::Random { support, probs } => {
                support.iter().zip(probs).map(|(&n, &p)| n as f64 * p).sum()
            }
        }
    }

    /// `P(N >= 1)`.
    pub fn prob_nonempty(&self) -> f64 {
        match self {
            Branching::Fixed(n) => (*n >= 1) as u8 as f64,
            Branching::Random { support, probs } => support
                .iter()
                .zip(probs)
                .filter(|(&n, _)| n >= 1)
                .map(|(_, &p)| p)
                .sum(),
        }
    }

    /// `E[(N-1)^+]`.
    pub fn mean_excess(&self) -> f64 {
        match self {
            Branching::Fixed(n) => n.saturating_sub(1) as f64,
            Branching::Random { support, probs } => support
                .iter()
                .zip(probs)
                .map(|(&n, &p)| n.saturating_sub(1) as f64 * p)
                .sum(),
        }
    }

    /// `E[N(N-1)]`.
    pub fn factorial_moment2(&self) -> f64 {
        match self {
            Branching::Fixed(n) => (*n * n.saturating_sub(1)) as f64,
            Branching::Random { support, probs } => support
                .iter()
                .zip(probs)
                .map(|(&n, &p)| (n * n.saturating_sub(1)) as f64 * p)
                .sum(),
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, Branching::Fixed(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ensemble {
    /// Finitely many matrices with probabilities.
    FiniteSupport {
        matrices: Vec<Vec<Vec<f64>>>,
        probs: Vec<f64>,
    },
    /// `d = 1`: `A = exp(mu + sigma Z)`.
    ScalarLognormal { mu: f64, sigma2: f64 },
    /// `A = W P` with `W` lognormal and `P` fixed.
    LognormalTimesFixed {
        mu: f64,
        sigma2: f64,
        matrix: Vec<Vec<f64>>,
    },
    /// `A = W R` with `W` lognormal and `R` a Haar random rotation.
    LognormalTimesRotation { mu: f64, sigma2: f64 },
}

/// How the law of `M = A^T` factors into a positive scalar and a directional
/// matrix part. The scalar never changes the projective action.
#[derive(Debug, Clone)]
pub struct MFactor<T> {
    pub scalar: Option<(f64, f64)>,
    pub part: DirectionalPart<T>,
}

#[derive(Debug, Clone)]
pub enum DirectionalPart<T> {
    /// Finite support of the (transposed) matrix part.
    Discrete { mats: Vec<Mat<T>>, probs: Vec<f64> },
    /// Haar rotation in dimension `d`.
    Rotation { d: usize },
}

impl<T: Real> MFactor<T> {
    /// `E c^s` for the scalar factor (1 when absent).
    pub fn scalar_moment(&self, s: f64) -> f64 {
        match self.scalar {
            Some((mu, sigma2)) => (s * mu + 0.5 * s * s * sigma2).exp(),
            None => 1.0,
        }
    }
}

impl Ensemble {
    pub fn lognormal(&self) -> Option<(f64, f64)> {
        match *self {
            Ensemble::FiniteSupport { .. } => None,
            Ensemble::ScalarLognormal { mu, sigma2 }
            | Ensemble::LognormalTimesFixed { mu, sigma2, .. }
            | Ensemble::LognormalTimesRotation { mu, sigma2 } => Some((mu, sigma2)),
        }
    }

    pub fn is_bounded(&self) -> bool {
        match self {
            Ensemble::FiniteSupport { .. } => true,
            Ensemble::ScalarLognormal { sigma2, .. }
            | Ensemble::LognormalTimesFixed { sigma2, .. }
            | Ensemble::LognormalTimesRotation { sigma2, .. } => *sigma2 == 0.0,
        }
    }

    /// Every moment `E |A|^s`, `s >= 0`, is finite for the supported families.
    pub fn moment_finite(&self, s: f64) -> bool {
        s >= 0.0 && s.is_finite()
    }

    pub fn factor<T: Real>(&self, d: usize) -> MFactor<T> {
        match self {
            Ensemble::FiniteSupport { matrices, probs } => MFactor {
                scalar: None,
                part: DirectionalPart::Discrete {
                    mats: matrices
                        .iter()
                        .map(|m| Mat::<T>::from_rows(m).transpose())
                        .collect(),
                    probs: probs.clone(),
                },
            },
            Ensemble::ScalarLognormal { mu, sigma2 } => MFactor {
                scalar: Some((*mu, *sigma2)),
                part: DirectionalPart::Discrete {
                    mats: vec![Mat::identity(d)],
                    probs: vec![1.0],
                },
            },
            Ensemble::LognormalTimesFixed { mu, sigma2, matrix } => MFactor {
                scalar: Some((*mu, *sigma2)),
                part: DirectionalPart::Discrete {
                    mats: vec![Mat::<T>::from_rows(matrix).transpose()],
                    probs: vec![1.0],
                },
            },
            Ensemble::LognormalTimesRotation { mu, sigma2 } => MFactor {
                scalar: Some((*mu, *sigma2)),
                part: DirectionalPart::Rotation { d },
            },
        }
    }

    /// `E[A]`, when it has a closed form.
    pub fn mean_matrix(&self, d: usize) -> Mat<f64> {
        match self {
            Ensemble::FiniteSupport { matrices, probs } => {
                let mut acc = Mat::zeros(d);
                for (m, &p) in matrices.iter().zip(probs) {
                    let m = Mat::<f64>::from_rows(m);
                    for i in 0..d {
                        for j in 0..d {
                            acc[(i, j)] += p * m[(i, j)];
                        }
                    }
                }
                acc
            }
            Ensemble::ScalarLognormal { mu, sigma2 } => Mat::scalar(d, (mu + 0.5 * sigma2).exp()),
            Ensemble::LognormalTimesFixed { mu, sigma2, matrix } => {
                Mat::<f64>::from_rows(matrix).scale((mu + 0.5 * sigma2).exp())
            }
            // E[R] = 0 for Haar rotations in d >= 2
            Ensemble::LognormalTimesRotation { .. } => Mat::zeros(d),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QLaw {
    Zero,
    Deterministic(Vec<f64>),
    FiniteSupport {
        vectors: Vec<Vec<f64>>,
        probs: Vec<f64>,
    },
}

impl QLaw {
    pub fn mean(&self, d: usize) -> Vec<f64> {
        match self {
            QLaw::Zero => vec![0.0; d],
            QLaw::Deterministic(q) => q.clone(),
            QLaw::FiniteSupport { vectors, probs } => (0..d)
                .map(|i| vectors.iter().zip(probs).map(|(v, &p)| v[i] * p).sum())
                .collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            QLaw::Zero => true,
            QLaw::Deterministic(q) => q.iter().all(|&v| v == 0.0),
            QLaw::FiniteSupport { vectors, .. } => vectors.iter().flatten().all(|&v| v == 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometricClass {
    /// Nonnegative allowable matrices with a positive product.
    NonnegativeC,
    /// Invertible, strongly irreducible and proximal, no invariant cone.
    InvertibleIpo,
    /// Invertible with a density component.
    InvertibleId,
}

impl GeometricClass {
    pub fn is_cone(self) -> bool {
        self == GeometricClass::NonnegativeC
    }

    pub fn norm(self) -> Norm {
        if self.is_cone() {
            Norm::L1
        } else {
            Norm::L2
        }
    }
}

/// Full description of the law of `(Q, (A_i), N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub dimension: usize,
    pub branching: Branching,
    pub ensemble: Ensemble,
    pub q_law: QLaw,
    pub class: GeometricClass,
    pub norm: Norm,
}

fn check_probs(what: &str, probs: &[f64], len: usize) -> Result<()> {
    if probs.len() != len || len == 0 {
        return Err(Error::InvalidSpec(format!(
            "{what}: {} probabilities for {len} support points",
            probs.len()
        )));
    }
    if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::InvalidSpec(format!(
            "{what}: probabilities must lie in [0, 1]"
        )));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidSpec(format!(
            "{what}: probabilities sum to {total}, not 1"
        )));
    }
    Ok(())
}

fn check_square(what: &str, m: &[Vec<f64>], d: usize) -> Result<()> {
    if m.len() != d || m.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidSpec(format!(
            "{what}: expected a {d}x{d} matrix"
        )));
    }
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSpec(format!("{what}: non-finite entry")));
    }
    Ok(())
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_str(text)?;
        spec.check()?;
        Ok(spec)
    }

    pub fn mean_n(&self) -> f64 {
        self.branching.mean()
    }

    /// Short stable hash of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("model spec serializes");
        format!("{:016x}", fnv1a(json.as_bytes()))
    }

    /// Checks every structural invariant of the model.
    pub fn check(&self) -> Result<()> {
        let d = self.dimension;
        if d == 0 {
            return Err(Error::InvalidSpec("dimension must be positive".into()));
        }
        match &self.branching {
            Branching::Fixed(n) if *n < 2 => {
                return Err(Error::InvalidSpec(format!(
                    "fixed branching needs N >= 2, got {n}"
                )))
            }
            Branching::Fixed(_) => {}
            Branching::Random { support, probs } => {
                check_probs("branching", probs, support.len())?;
                let mean = self.branching.mean();
                if mean <= 1.0 {
                    return Err(Error::InvalidSpec(format!(
                        "random branching needs E N > 1, got {mean}"
                    )));
                }
            }
        }
        if self.norm != self.class.norm() {
            return Err(Error::InvalidSpec(format!(
                "class {:?} uses the {:?} norm, spec declares {:?}",
                self.class,
                self.class.norm(),
                self.norm
            )));
        }
        let cone = self.class.is_cone();
        let check_lognormal = |sigma2: f64, mu: f64| -> Result<()> {
            if !(sigma2 >= 0.0 && sigma2.is_finite() && mu.is_finite()) {
                return Err(Error::InvalidSpec(
                    "lognormal parameters must be finite with sigma2 >= 0".into(),
                ));
            }
            Ok(())
        };
        let check_matrix_class = |what: &str, m: &[Vec<f64>]| -> Result<()> {
            if cone && m.iter().flatten().any(|&v| v < 0.0) {
                return Err(Error::ClassViolation(format!(
                    "{what} has a negative entry under class nonnegative-C"
                )));
            }
            if !cone {
                let det = Mat::<f64>::from_rows(m).determinant();
                if det.abs() < DET_TOL {
                    return Err(Error::ClassViolation(format!(
                        "{what} is not invertible (|det| = {:e}) under an invertible class",
                        det.abs()
                    )));
                }
            }
            Ok(())
        };
        match &self.ensemble {
            Ensemble::FiniteSupport { matrices, probs } => {
                check_probs("ensemble", probs, matrices.len())?;
                for (i, m) in matrices.iter().enumerate() {
                    check_square(&format!("ensemble matrix {i}"), m, d)?;
                    check_matrix_class(&format!("ensemble matrix {i}"), m)?;
                }
            }
            Ensemble::ScalarLognormal { mu, sigma2 } => {
                if d != 1 {
                    return Err(Error::InvalidSpec(
                        "scalar_lognormal requires dimension 1".into(),
                    ));
                }
                check_lognormal(*sigma2, *mu)?;
            }
            Ensemble::LognormalTimesFixed { mu, sigma2, matrix } => {
                check_lognormal(*sigma2, *mu)?;
                check_square("fixed matrix", matrix, d)?;
                check_matrix_class("fixed matrix", matrix)?;
            }
            Ensemble::LognormalTimesRotation { mu, sigma2 } => {
                check_lognormal(*sigma2, *mu)?;
                if d < 2 {
                    return Err(Error::InvalidSpec(
                        "random rotations require dimension >= 2".into(),
                    ));
                }
                if cone {
                    return Err(Error::ClassViolation(
                        "rotations do not preserve the positive cone".into(),
                    ));
                }
            }
        }
        match &self.q_law {
            QLaw::Zero => {}
            QLaw::Deterministic(q) => {
                if q.len() != d || q.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidSpec(format!(
                        "q_law: expected a finite {d}-vector"
                    )));
                }
                if cone && q.iter().any(|&v| v < 0.0) {
                    return Err(Error::ClassViolation(
                        "Q must be nonnegative under class nonnegative-C".into(),
                    ));
                }
            }
            QLaw::FiniteSupport { vectors, probs } => {
                check_probs("q_law", probs, vectors.len())?;
                if vectors
                    .iter()
                    .any(|v| v.len() != d || v.iter().any(|x| !x.is_finite()))
                {
                    return Err(Error::InvalidSpec(format!(
                        "q_law: expected finite {d}-vectors"
                    )));
                }
                if cone && vectors.iter().flatten().any(|&v| v < 0.0) {
                    return Err(Error::ClassViolation(
                        "Q must be nonnegative under class nonnegative-C".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}
