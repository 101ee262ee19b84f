use std::collections::{HashSet, VecDeque};

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sample::{sample_a, sample_m};
use super::spec::{Ensemble, GeometricClass, ModelSpec, QLaw, ZERO_TOL};
use crate::error::{Error, Result};
use crate::linalg::{Mat, Norm};
use crate::matwalk::{iota, operator_norm};
use crate::rng::MeanAcc;
use crate::scalar::Real;
use crate::sphere::SphereGrid;

/// Ratio limit for the arithmetic heuristic: ratios are tested against
/// rationals with denominators up to this value.
const MAX_DENOMINATOR: u32 = 50;
/// Minimum distance `|q r - round(q r)|` for a ratio to count as irrational.
const RATIONAL_MARGIN: f64 = 1e-3;
/// Fraction of orbit cells that must be visited to support irreducibility.
const COVERAGE_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    HeuristicPass,
    Inconclusive,
    Inapplicable,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Witness {
    pub matrix: Vec<Vec<f64>>,
    pub word_length: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioEvidence {
    pub log_a: f64,
    pub log_b: f64,
    pub ratio: f64,
    /// `min_{q <= 50} |q r - round(q r)|`.
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NonArithmeticEvidence {
    pub verdict: Verdict,
    pub log_spectral_radii: Vec<f64>,
    pub best: Option<RatioEvidence>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionVerdict {
    pub name: String,
    pub verdict: Verdict,
    pub evidence: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub name: String,
    pub order: f64,
    pub estimate: f64,
    pub se: f64,
    pub closed_form: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub class: GeometricClass,
    pub conditions: Vec<ConditionVerdict>,
    pub positive_product: Option<Witness>,
    pub proximal: Option<Witness>,
    pub nonarithmetic: Option<NonArithmeticEvidence>,
    pub orbit_coverage: Option<f64>,
    pub moments: Vec<MomentEstimate>,
    pub notes: Vec<String>,
}

impl ValidationReport {
    pub fn has_failure(&self) -> bool {
        self.conditions.iter().any(|c| c.verdict == Verdict::Fail)
    }

    pub fn verdict(&self, name: &str) -> Option<Verdict> {
        self.conditions
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.verdict)
    }
}

/// Every row and every column has an entry above `tol`.
pub fn check_allowable<T: Real>(m: &Mat<T>, tol: f64) -> bool {
    let d = m.dim();
    let t = T::c(tol);
    let rows = (0..d).all(|i| (0..d).any(|j| m[(i, j)] > t));
    let cols = (0..d).all(|j| (0..d).any(|i| m[(i, j)] > t));
    rows && cols
}

fn is_positive<T: Real>(m: &Mat<T>) -> bool {
    let scale = m.max_abs();
    scale > T::zero() && m.as_slice().iter().all(|&v| v > T::c(ZERO_TOL) * scale)
}

fn normalised<T: Real>(m: Mat<T>) -> Mat<T> {
    let s = m.max_abs();
    if s > T::zero() && s.is_finite() {
        m.scale(T::one() / s)
    } else {
        m
    }
}

fn witness<T: Real>(m: &Mat<T>, len: usize) -> Witness {
    Witness {
        matrix: m.to_rows_f64(),
        word_length: len,
    }
}

/// Searches the semigroup generated by the support for a strictly positive
/// product, examining at most `budget` products. Finite supports are
/// explored breadth-first over zero patterns, so the returned word is
/// shortest; continuous families are sampled along one random word.
pub fn find_positive_product<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    budget: usize,
    rng: &mut R,
) -> Option<Witness> {
    match &spec.ensemble {
        Ensemble::FiniteSupport { matrices, probs } => {
            let gens: Vec<Mat<T>> = matrices
                .iter()
                .zip(probs)
                .filter(|(_, &p)| p > 0.0)
                .map(|(m, _)| Mat::from_rows(m))
                .collect();
            let pattern = |m: &Mat<T>| -> Vec<bool> {
                let s = m.max_abs();
                m.as_slice()
                    .iter()
                    .map(|&v| v > T::c(ZERO_TOL) * s)
                    .collect()
            };
            let mut seen: HashSet<Vec<bool>> = HashSet::new();
            let mut queue: VecDeque<(Mat<T>, usize)> = VecDeque::new();
            for g in &gens {
                if seen.insert(pattern(g)) {
                    queue.push_back((normalised(g.clone()), 1));
                }
            }
            let mut examined = 0;
            while let Some((m, len)) = queue.pop_front() {
                examined += 1;
                if is_positive(&m) {
                    return Some(witness(&m, len));
                }
                if examined >= budget {
                    break;
                }
                for g in &gens {
                    let next = normalised(m.mul(g));
                    if seen.insert(pattern(&next)) {
                        queue.push_back((next, len + 1));
                    }
                }
            }
            None
        }
        _ => {
            let mut m: Mat<T> = sample_a(spec, rng);
            for len in 1..=budget.max(1) {
                if len > 1 {
                    m = normalised(m.mul(&sample_a(spec, rng)));
                }
                if is_positive(&m) {
                    return Some(witness(&m, len));
                }
            }
            None
        }
    }
}

fn eigen_moduli<T: Real>(m: &Mat<T>) -> Result<Vec<(f64, f64)>> {
    let d = m.dim();
    let dm = DMatrix::<f64>::from_fn(d, d, |i, j| m[(i, j)].f64());
    if !dm.iter().all(|v| v.is_finite()) {
        return Err(Error::EigenSolver("non-finite matrix entry".into()));
    }
    let schur = nalgebra::linalg::Schur::try_new(dm, 1e-14, 10_000)
        .ok_or_else(|| Error::EigenSolver("Schur iteration did not converge".into()))?;
    let mut ev: Vec<(f64, f64)> = schur
        .complex_eigenvalues()
        .iter()
        .map(|z| (z.norm(), z.im))
        .collect();
    ev.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(ev)
}

/// Unique simple dominant eigenvalue with relative gap at least `tol`.
pub fn check_proximal<T: Real>(m: &Mat<T>, tol: f64) -> Result<bool> {
    let ev = eigen_moduli(m)?;
    let (top, im) = ev[0];
    if !(top > 0.0) {
        return Ok(false);
    }
    if ev.len() == 1 {
        return Ok(true);
    }
    let real = im.abs() <= 1e-12 * top;
    Ok(real && (top - ev[1].0) / top >= tol)
}

fn rational_margin(r: f64) -> f64 {
    (1..=MAX_DENOMINATOR)
        .map(|q| (q as f64 * r - (q as f64 * r).round()).abs())
        .fold(f64::INFINITY, f64::min)
}

/// Collects `log` spectral radii of positive products (words of length 1 to
/// 4) and looks for a pair whose ratio is far from every rational with a
/// small denominator.
pub fn heuristic_nonarithmetic<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    budget: usize,
    rng: &mut R,
) -> NonArithmeticEvidence {
    let inapplicable = |v| NonArithmeticEvidence {
        verdict: v,
        log_spectral_radii: vec![],
        best: None,
    };
    if !spec.class.is_cone() {
        return inapplicable(Verdict::Inapplicable);
    }
    let mut logs: Vec<f64> = Vec::new();
    for _ in 0..budget {
        let len = rng.random_range(1..=4usize);
        let mut m: Mat<T> = sample_a(spec, rng);
        for _ in 1..len {
            m = m.mul(&sample_a(spec, rng));
        }
        if !is_positive(&m) {
            continue;
        }
        let Ok(ev) = eigen_moduli(&m) else { continue };
        let l = ev[0].0.ln();
        if l.is_finite()
            && l.abs() > 1e-9
            && !logs.iter().any(|&x| (x - l).abs() <= 1e-12 * l.abs())
        {
            logs.push(l);
            if logs.len() >= 32 {
                break;
            }
        }
    }
    if logs.len() < 2 {
        return NonArithmeticEvidence {
            verdict: Verdict::Inconclusive,
            log_spectral_radii: logs,
            best: None,
        };
    }
    let mut best: Option<RatioEvidence> = None;
    for i in 0..logs.len() {
        for j in 0..logs.len() {
            if i == j || logs[i].abs() > logs[j].abs() {
                continue;
            }
            let ratio = logs[j] / logs[i];
            let margin = rational_margin(ratio);
            if best.as_ref().is_none_or(|b| margin > b.margin) {
                best = Some(RatioEvidence {
                    log_a: logs[j],
                    log_b: logs[i],
                    ratio,
                    margin,
                });
            }
        }
    }
    let verdict = match &best {
        Some(b) if b.margin >= RATIONAL_MARGIN => Verdict::HeuristicPass,
        _ => Verdict::Inconclusive,
    };
    NonArithmeticEvidence {
        verdict,
        log_spectral_radii: logs,
        best,
    }
}

/// Fraction of grid cells visited by the projective orbit of one walk.
pub fn orbit_coverage<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    steps: usize,
    rng: &mut R,
) -> f64 {
    let d = spec.dimension;
    let resolution = if d == 2 { 64 } else { 256 };
    let grid: SphereGrid<T> = SphereGrid::new(d, spec.class.is_cone(), spec.norm, resolution);
    let mut visited = vec![false; grid.len()];
    let mut u = spec
        .norm
        .normalize(&vec![T::one(); d])
        .expect("nonzero start");
    for _ in 0..steps {
        let m: Mat<T> = sample_m(spec, rng);
        match spec.norm.normalize(&m.mul_vec(&u)) {
            Some(v) => u = v,
            None => break,
        }
        visited[grid.nearest(&u)] = true;
    }
    visited.iter().filter(|&&v| v).count() as f64 / grid.len() as f64
}

fn q_moment(law: &QLaw, norm: Norm, p: f64) -> f64 {
    match law {
        QLaw::Zero => 0.0,
        QLaw::Deterministic(q) => norm.of(q).powf(p),
        QLaw::FiniteSupport { vectors, probs } => vectors
            .iter()
            .zip(probs)
            .map(|(v, &w)| w * norm.of(v).powf(p))
            .sum(),
    }
}

/// Closed form of `E ||A*||^{s+eps} iota(A*)^{-eps}` for the supported families.
fn a_moment_closed(spec: &ModelSpec, s: f64, eps: f64) -> Result<f64> {
    let d = spec.dimension;
    let term = |m: &Mat<f64>| -> Result<f64> {
        let mt = m.transpose();
        Ok(operator_norm(&mt, spec.norm).powf(s + eps) * iota(&mt, spec.norm)?.powf(-eps))
    };
    let ln = |mu: f64, sigma2: f64| (s * mu + 0.5 * s * s * sigma2).exp();
    Ok(match &spec.ensemble {
        Ensemble::FiniteSupport { matrices, probs } => {
            let mut acc = 0.0;
            for (m, &p) in matrices.iter().zip(probs) {
                if p > 0.0 {
                    acc += p * term(&Mat::from_rows(m))?;
                }
            }
            acc
        }
        Ensemble::ScalarLognormal { mu, sigma2 } => ln(*mu, *sigma2),
        Ensemble::LognormalTimesFixed { mu, sigma2, matrix } => {
            ln(*mu, *sigma2) * term(&Mat::from_rows(matrix))?
        }
        Ensemble::LognormalTimesRotation { mu, sigma2 } => {
            let _ = d;
            ln(*mu, *sigma2)
        }
    })
}

fn cond(name: &str, verdict: Verdict, evidence: impl Into<String>) -> ConditionVerdict {
    ConditionVerdict {
        name: name.into(),
        verdict,
        evidence: evidence.into(),
    }
}

/// Checks the class and moment hypotheses for tail index `beta_hat`.
pub fn validate<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    beta_hat: f64,
    eps: f64,
    reps: usize,
    rng: &mut R,
) -> Result<ValidationReport> {
    spec.check()?;
    let budget = 2000;
    let mut conditions = Vec::new();
    let mut notes = Vec::new();
    let mut report = ValidationReport {
        class: spec.class,
        conditions: vec![],
        positive_product: None,
        proximal: None,
        nonarithmetic: None,
        orbit_coverage: None,
        moments: vec![],
        notes: vec![],
    };

    match spec.class {
        GeometricClass::NonnegativeC => {
            let allowable = match &spec.ensemble {
                Ensemble::FiniteSupport { matrices, probs } => matrices
                    .iter()
                    .zip(probs)
                    .filter(|(_, &p)| p > 0.0)
                    .position(|(m, _)| !check_allowable(&Mat::<f64>::from_rows(m), ZERO_TOL))
                    .map_or(
                        cond(
                            "allowable",
                            Verdict::Pass,
                            "every support matrix is allowable",
                        ),
                        |i| {
                            cond(
                                "allowable",
                                Verdict::Fail,
                                format!("support matrix {i} has a zero row or column"),
                            )
                        },
                    ),
                Ensemble::LognormalTimesFixed { matrix, .. } => {
                    if check_allowable(&Mat::<f64>::from_rows(matrix), ZERO_TOL) {
                        cond("allowable", Verdict::Pass, "fixed factor is allowable")
                    } else {
                        cond(
                            "allowable",
                            Verdict::Fail,
                            "fixed factor has a zero row or column",
                        )
                    }
                }
                _ => cond("allowable", Verdict::Pass, "positive scalar weights"),
            };
            conditions.push(allowable);
            report.positive_product = find_positive_product::<T, R>(spec, budget, rng);
            conditions.push(match &report.positive_product {
                Some(w) => cond(
                    "positive_product",
                    Verdict::Pass,
                    format!("positive word of length {}", w.word_length),
                ),
                None => cond(
                    "positive_product",
                    Verdict::Fail,
                    format!("no positive product within {budget} products"),
                ),
            });
            let na = heuristic_nonarithmetic::<T, R>(spec, budget, rng);
            let evidence = match &na.best {
                Some(b) => format!("ratio {:.6} has rational margin {:.2e}", b.ratio, b.margin),
                None => "fewer than two distinct spectral radii".into(),
            };
            conditions.push(cond("non_arithmetic", na.verdict, evidence));
            report.nonarithmetic = Some(na);
        }
        GeometricClass::InvertibleIpo | GeometricClass::InvertibleId => {
            conditions.push(cond(
                "invertible",
                Verdict::Pass,
                "support matrices have nonzero determinant",
            ));
            let mut found = None;
            for _ in 0..budget {
                let len = rng.random_range(1..=4usize);
                let mut m: Mat<T> = sample_a(spec, rng);
                for _ in 1..len {
                    m = normalised(m.mul(&sample_a(spec, rng)));
                }
                if check_proximal(&m, 1e-6)? {
                    found = Some(witness(&m, len));
                    break;
                }
            }
            conditions.push(match &found {
                Some(w) => cond(
                    "proximal",
                    Verdict::Pass,
                    format!("proximal word of length {}", w.word_length),
                ),
                None => cond(
                    "proximal",
                    Verdict::Fail,
                    format!("no proximal product among {budget} sampled words"),
                ),
            });
            report.proximal = found;
            let coverage = orbit_coverage::<T, R>(spec, 20_000, rng);
            report.orbit_coverage = Some(coverage);
            let v = if coverage >= COVERAGE_THRESHOLD {
                Verdict::HeuristicPass
            } else {
                Verdict::Inconclusive
            };
            let ev = format!("orbit visits {:.1}% of projective cells", 100.0 * coverage);
            conditions.push(cond("strongly_irreducible", v, ev.clone()));
            if spec.class == GeometricClass::InvertibleIpo {
                conditions.push(cond("no_invariant_cone", v, ev));
            } else {
                let dens = matches!(spec.ensemble, Ensemble::FiniteSupport { .. });
                conditions.push(if dens {
                    cond(
                        "density",
                        Verdict::Fail,
                        "a finite support has no density component",
                    )
                } else {
                    cond(
                        "density",
                        Verdict::HeuristicPass,
                        "continuous scalar factor; density declared",
                    )
                });
            }
        }
    }

    if spec.branching.is_fixed() && !spec.ensemble.is_bounded() {
        notes.push("fixed branching with an unbounded weight law: the boundedness assumption does not hold".into());
        conditions.push(cond(
            "bounded_support",
            Verdict::Inconclusive,
            "weight law has unbounded support",
        ));
    }

    let order = beta_hat + eps;
    let closed_q = q_moment(&spec.q_law, spec.norm, order);
    let closed_a = a_moment_closed(spec, beta_hat, eps)?;
    let mut acc_q = MeanAcc::default();
    let mut acc_a = MeanAcc::default();
    for _ in 0..reps {
        let q = super::sample::sample_q::<T, R>(&spec.q_law, spec.dimension, rng);
        acc_q.push(spec.norm.of(&q).f64().powf(order));
        let m: Mat<T> = sample_m(spec, rng);
        let n = operator_norm(&m, spec.norm).f64();
        let i = iota(&m, spec.norm)?.f64();
        acc_a.push(n.powf(order) * i.powf(-eps));
    }
    report.moments = vec![
        MomentEstimate {
            name: "q_norm".into(),
            order,
            estimate: acc_q.mean(),
            se: acc_q.se(),
            closed_form: Some(closed_q),
        },
        MomentEstimate {
            name: "norm_times_inverse_iota".into(),
            order,
            estimate: acc_a.mean(),
            se: acc_a.se(),
            closed_form: Some(closed_a),
        },
    ];
    conditions.push(
        if closed_q.is_finite() && closed_a.is_finite() && spec.ensemble.moment_finite(order) {
            cond(
                "moments",
                Verdict::Pass,
                format!("moments of order {order:.4} are finite"),
            )
        } else {
            cond(
                "moments",
                Verdict::Fail,
                format!("a moment of order {order:.4} is infinite"),
            )
        },
    );
    if spec.q_law.is_zero() {
        notes.push("Q = 0: the fixed point is degenerate at the origin".into());
    }

    report.conditions = conditions;
    report.notes = notes;
    Ok(report)
}
