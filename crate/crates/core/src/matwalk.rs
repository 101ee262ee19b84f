//! The multiplicative walk `U_n = Pi*_n u / |Pi*_n u|`, `S_n = log |Pi*_n u|`
//! driven by i.i.d. copies of `M = A^T`, and its change of measure to the
//! `s`-tilted kernel.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{Mat, Norm, Vector};
use crate::model::{sample_m, sample_rotation, DirectionalPart, MFactor, ModelSpec};
use crate::rng::{chunked, merge_all, MeanAcc, StreamKey};
use crate::scalar::Real;
use crate::spectral::SpectralResult;

/// `|m x|` below this is treated as a singular action.
pub const UNDERFLOW: f64 = 1e-300;

fn underflow<T: Real>() -> T {
    T::from_f64(UNDERFLOW)
        .filter(|v| *v > T::zero())
        .unwrap_or_else(T::min_positive_value)
}

/// Normalised image `m.x` and `log |m x|`.
pub fn act_log<T: Real>(m: &Mat<T>, x: &[T], norm: Norm) -> Result<(Vector<T>, T)> {
    let y = m.mul_vec(x);
    let n = norm.of(&y);
    if !(n > underflow::<T>()) || !n.is_finite() {
        return Err(Error::SingularAction { norm: n.f64() });
    }
    Ok((y.iter().map(|&v| v / n).collect(), n.ln()))
}

/// Projective action `m.x = m x / |m x|`.
pub fn act<T: Real>(m: &Mat<T>, x: &[T], norm: Norm) -> Result<Vector<T>> {
    act_log(m, x, norm).map(|r| r.0)
}

/// `sup_{x in S} |m x|`: the induced norm (max column sum for `L1`, largest
/// singular value for `L2`).
pub fn operator_norm<T: Real>(m: &Mat<T>, norm: Norm) -> T {
    match norm {
        Norm::L1 => m.column_abs_sums().iter().copied().fold(T::zero(), T::max),
        Norm::L2 => m.singular_values()[0],
    }
}

/// `inf_{x in S} |m x|`. For `L1` this is the least column sum, which is the
/// infimum over the positive simplex for nonnegative `m`.
pub fn iota<T: Real>(m: &Mat<T>, norm: Norm) -> Result<T> {
    let v = match norm {
        Norm::L1 => m
            .column_abs_sums()
            .iter()
            .copied()
            .fold(T::infinity(), T::min),
        Norm::L2 => *m.singular_values().last().expect("nonempty"),
    };
    if v > T::zero() {
        Ok(v)
    } else {
        Err(Error::Domain("iota(m) = 0".into()))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PathState<T> {
    pub n: usize,
    pub u: Vector<T>,
    pub s: T,
    pub norm: Norm,
}

impl<T: Real> PathState<T> {
    pub fn new(u0: &[T], norm: Norm) -> Result<Self> {
        let u = norm
            .normalize(u0)
            .ok_or_else(|| Error::Domain("starting direction is zero".into()))?;
        Ok(PathState {
            n: 0,
            u,
            s: T::zero(),
            norm,
        })
    }

    pub fn step(&self, m: &Mat<T>) -> Result<Self> {
        let (u, l) = act_log(m, &self.u, self.norm)?;
        Ok(PathState {
            n: self.n + 1,
            u,
            s: self.s + l,
            norm: self.norm,
        })
    }
}

/// All states `(U_k, S_k)` for `k = 0..=n`.
pub fn simulate_path<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    u0: &[T],
    n: usize,
    rng: &mut R,
) -> Result<Vec<PathState<T>>> {
    let mut out = vec![PathState::new(u0, spec.norm)?];
    for _ in 0..n {
        let m: Mat<T> = sample_m(spec, rng);
        let next = out.last().expect("nonempty").step(&m)?;
        out.push(next);
    }
    Ok(out)
}

pub fn simulate_walk<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    u0: &[T],
    n: usize,
    rng: &mut R,
) -> Result<PathState<T>> {
    let mut st = PathState::new(u0, spec.norm)?;
    for _ in 0..n {
        let m: Mat<T> = sample_m(spec, rng);
        st = st.step(&m)?;
    }
    Ok(st)
}

pub fn write_path_csv<T: Real>(path: &Path, states: &[PathState<T>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let d = states.first().map_or(0, |s| s.u.len());
    let mut header = vec!["n".to_string(), "s".to_string()];
    header.extend((1..=d).map(|i| format!("u{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for st in states {
        let mut rec = vec![st.n.to_string(), st.s.f64().to_string()];
        rec.extend(st.u.iter().map(|v| v.f64().to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// `Pi*_k = M_k ... M_1`, stored as a rescaled matrix and a log scale so long
/// products neither overflow nor underflow.
#[derive(Debug, Clone)]
pub struct ProductTracker<T> {
    mat: Mat<T>,
    log_scale: f64,
}

impl<T: Real> ProductTracker<T> {
    pub fn new(d: usize) -> Self {
        ProductTracker {
            mat: Mat::identity(d),
            log_scale: 0.0,
        }
    }

    /// Left-multiplies by the next step matrix.
    pub fn push(&mut self, m: &Mat<T>) -> Result<()> {
        let p = m.mul(&self.mat);
        let s = p.max_abs();
        if !(s > T::zero()) || !s.is_finite() {
            return Err(Error::SingularAction { norm: s.f64() });
        }
        self.mat = p.scale(T::one() / s);
        self.log_scale += s.f64().ln();
        Ok(())
    }

    pub fn log_norm(&self, norm: Norm) -> f64 {
        self.log_scale + operator_norm(&self.mat, norm).f64().ln()
    }

    /// `log ||Pi_k||` of the untransposed product `(Pi*_k)^T`.
    pub fn log_norm_adjoint(&self, norm: Norm) -> f64 {
        self.log_scale + operator_norm(&self.mat.transpose(), norm).f64().ln()
    }
}

/// Sampling law used by the Monte Carlo estimators.
#[derive(Debug, Clone, Copy)]
pub enum Sampling<'a, T> {
    /// Nominal law; every weight is 1.
    Naive,
    /// Importance sampling under the kernel tilted by `|M u|^s e(M.u)`.
    Tilted(&'a SpectralResult<T>),
}

/// Number of candidate rotations per step in the resampling proposal.
pub const ROTATION_PROPOSALS: usize = 32;

/// One-step sampler of `M` under the nominal or tilted law.
pub struct StepSampler<'a, T> {
    spec: &'a ModelSpec,
    factor: MFactor<T>,
    tilt: Option<&'a SpectralResult<T>>,
}

impl<'a, T: Real> StepSampler<'a, T> {
    pub fn new(spec: &'a ModelSpec, sampling: Sampling<'a, T>) -> Self {
        let tilt = match sampling {
            Sampling::Tilted(e) if e.s != 0.0 => Some(e),
            _ => None,
        };
        StepSampler {
            spec,
            factor: spec.ensemble.factor(spec.dimension),
            tilt,
        }
    }

    pub fn is_tilted(&self) -> bool {
        self.tilt.is_some()
    }

    /// Draws `M` given the current direction `u`; returns the matrix and the
    /// log likelihood ratio (nominal over proposal) of the draw.
    pub fn draw<R: Rng + ?Sized>(&self, u: &[T], rng: &mut R) -> Result<(Mat<T>, f64)> {
        let Some(eig) = self.tilt else {
            return Ok((sample_m(self.spec, rng), 0.0));
        };
        let s = eig.s;
        let norm = self.spec.norm;
        let mut log_w = 0.0;
        let c = match self.factor.scalar {
            Some((mu, sigma2)) => {
                let z: f64 = rng.sample(StandardNormal);
                let log_c = mu + s * sigma2 + sigma2.sqrt() * z;
                log_w += self.factor.scalar_moment(s).ln() - s * log_c;
                log_c.exp()
            }
            None => 1.0,
        };
        let score = |b: &Mat<T>| -> f64 {
            let y = b.mul_vec(u);
            let n = norm.of(&y);
            if !(n.f64() > UNDERFLOW) {
                return 0.0;
            }
            let dir: Vector<T> = y.iter().map(|&v| v / n).collect();
            n.f64().powf(s) * eig.eigen_at(&dir).f64()
        };
        let b = match &self.factor.part {
            DirectionalPart::Discrete { mats, probs } => {
                if mats.len() == 1 {
                    mats[0].clone()
                } else {
                    let g: Vec<f64> = mats.iter().zip(probs).map(|(b, &p)| p * score(b)).collect();
                    let (k, total) = pick_weighted(&g, rng)?;
                    log_w += (total / (g[k] / probs[k])).ln();
                    mats[k].clone()
                }
            }
            DirectionalPart::Rotation { d } => {
                let cands: Vec<Mat<T>> = (0..ROTATION_PROPOSALS)
                    .map(|_| sample_rotation(*d, rng))
                    .collect();
                let g: Vec<f64> = cands.iter().map(score).collect();
                let (k, total) = pick_weighted(&g, rng)?;
                log_w += (total / ROTATION_PROPOSALS as f64 / g[k]).ln();
                cands[k].clone()
            }
        };
        Ok((b.scale(T::c(c)), log_w))
    }
}

fn pick_weighted<R: Rng + ?Sized>(g: &[f64], rng: &mut R) -> Result<(usize, f64)> {
    let total: f64 = g.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Spectral(
            "tilted proposal has zero total weight".into(),
        ));
    }
    let mut u = rng.random::<f64>() * total;
    for (k, &v) in g.iter().enumerate() {
        if u < v {
            return Ok((k, total));
        }
        u -= v;
    }
    Ok((
        g.iter().rposition(|&v| v > 0.0).expect("positive total"),
        total,
    ))
}

/// Outcome of a walk of `n` steps under some sampling law.
#[derive(Debug, Clone)]
pub struct TiltedSample<T> {
    pub state: PathState<T>,
    /// `log` of the likelihood ratio of the whole path.
    pub log_weight: f64,
    pub weight: f64,
    pub s: f64,
}

/// Tilted walk from `u0`; `exp(log_weight)` corrects expectations back to the
/// nominal law.
pub fn tilted_walk<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    u0: &[T],
    n: usize,
    sampling: Sampling<'_, T>,
    rng: &mut R,
) -> Result<TiltedSample<T>> {
    let sampler = StepSampler::new(spec, sampling);
    let s = match sampling {
        Sampling::Tilted(e) => e.s,
        Sampling::Naive => 0.0,
    };
    let mut st = PathState::new(u0, spec.norm)?;
    let mut log_w = 0.0;
    for _ in 0..n {
        let (m, lw) = sampler.draw(&st.u, rng)?;
        st = st.step(&m)?;
        log_w += lw;
    }
    Ok(TiltedSample {
        state: st,
        log_weight: log_w,
        weight: log_w.exp(),
        s,
    })
}

/// Monte Carlo mean with standard error and effective sample size.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
    pub reps: usize,
    pub hits: usize,
    pub ess: f64,
}

impl Estimate {
    pub fn from_parts(parts: &[(MeanAcc, usize)], reps: usize) -> Self {
        let acc = merge_all(parts.iter().map(|p| &p.0));
        let hits = parts.iter().map(|p| p.1).sum();
        let ess = if acc.sum_sq > 0.0 {
            acc.sum * acc.sum / acc.sum_sq
        } else {
            0.0
        };
        Estimate {
            value: acc.mean(),
            se: acc.se(),
            reps,
            hits,
            ess,
        }
    }
}

/// Default starting direction: the normalised all-ones vector.
pub fn default_start<T: Real>(d: usize, norm: Norm) -> Vector<T> {
    norm.normalize(&vec![T::one(); d]).expect("nonzero")
}

/// `E ||Pi*_n||^s`, naive or importance sampled with the tilt at `s`.
pub fn estimate_pi_norm_moment<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    n: usize,
    s: f64,
    reps: usize,
    sampling: Sampling<'_, T>,
    rng: &mut R,
) -> Result<Estimate> {
    if let Sampling::Tilted(e) = sampling {
        if (e.s - s).abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "tilt computed at s = {} but moment order is {s}",
                e.s
            )));
        }
    }
    let key = StreamKey::from_rng(rng);
    let u0: Vector<T> = default_start(spec.dimension, spec.norm);
    let parts = chunked(key, reps, |stream, count| -> Result<(MeanAcc, usize)> {
        let sampler = StepSampler::new(spec, sampling);
        let mut acc = MeanAcc::default();
        for _ in 0..count {
            let mut tr = ProductTracker::new(spec.dimension);
            let mut u = u0.clone();
            let mut log_w = 0.0;
            for _ in 0..n {
                let (m, lw) = sampler.draw(&u, stream)?;
                u = act(&m, &u, spec.norm)?;
                tr.push(&m)?;
                log_w += lw;
            }
            acc.push((s * tr.log_norm(spec.norm) + log_w).exp());
        }
        Ok((acc, count))
    });
    let parts: Vec<(MeanAcc, usize)> = parts.into_iter().collect::<Result<_>>()?;
    Ok(Estimate::from_parts(&parts, reps))
}
