use rand::Rng;
use serde::{Deserialize, Serialize};

use super::operator::{compute_spectrum, SpectralConfig, SpectralResult};
use crate::error::{Error, Result};
use crate::matwalk::{estimate_pi_norm_moment, Sampling};
use crate::model::ModelSpec;
use crate::rng::StreamKey;
use crate::scalar::Real;

const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Step used by [`drift`] for central differences.
pub const DRIFT_STEP: f64 = 1e-2;

/// How `k(s)` is evaluated.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KMethod {
    /// Perron eigenvalue of the discretised operator.
    Grid(SpectralConfig),
    /// Growth rate of `E ||Pi*_n||^s` over the given lengths (naive sampling).
    Products { n_list: Vec<usize>, reps: usize },
}

impl Default for KMethod {
    fn default() -> Self {
        KMethod::Grid(SpectralConfig::default())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProductsFit {
    pub k: f64,
    pub k_se: f64,
    /// Intercept `C(s)` of `E ||Pi*_n||^s ~ C(s) k(s)^n`.
    pub intercept: f64,
    pub points: Vec<(usize, f64, f64)>,
    pub low_confidence: bool,
}

/// Fits `log E ||Pi*_n||^s = log C + n log k` by weighted least squares.
pub fn k_by_products<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    s: f64,
    n_list: &[usize],
    reps: usize,
    sampling: Sampling<'_, T>,
    rng: &mut R,
) -> Result<ProductsFit> {
    if n_list.len() < 2 {
        return Err(Error::Domain(
            "k_by_products needs at least two lengths".into(),
        ));
    }
    let mut points = Vec::new();
    let mut low = false;
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &n in n_list {
        let est = estimate_pi_norm_moment(spec, n, s, reps, sampling, rng)?;
        points.push((n, est.value, est.se));
        if !(est.value > 0.0) {
            low = true;
            continue;
        }
        let rel = est.se / est.value;
        if !(rel < 0.5) {
            low = true;
        }
        // an exact estimate (se = 0) gets a large but finite weight
        let w = 1.0 / (rel * rel).max(1e-16);
        let (x, y) = (n as f64, est.value.ln());
        sw += w;
        sx += w * x;
        sy += w * y;
        sxx += w * x * x;
        sxy += w * x * y;
    }
    let det = sw * sxx - sx * sx;
    if !(det > 0.0) {
        return Err(Error::Spectral(
            "product fit is degenerate (need two distinct usable lengths)".into(),
        ));
    }
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    let slope_se = (sw / det).sqrt();
    let k = slope.exp();
    Ok(ProductsFit {
        k,
        k_se: k * slope_se,
        intercept: intercept.exp(),
        points,
        low_confidence: low,
    })
}

/// `m(s) = E[N] k(s)`.
pub fn m_of_s<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    s: f64,
    method: &KMethod,
    rng: &mut R,
) -> Result<f64> {
    let k = match method {
        KMethod::Grid(cfg) => compute_spectrum::<T, R>(spec, s, cfg, rng)?.k.f64(),
        KMethod::Products { n_list, reps } => {
            k_by_products::<T, R>(spec, s, n_list, *reps, Sampling::Naive, rng)?.k
        }
    };
    Ok(spec.mean_n() * k)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BracketStep {
    pub phase: String,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RootSolution {
    pub alpha: f64,
    pub beta: f64,
    pub s_star: f64,
    pub m_min: f64,
    pub history: Vec<BracketStep>,
}

/// Roots `alpha < s* < beta` of `m(s) = 1` for a convex `m` with `m(0) > 1`.
pub fn solve_roots(
    mut m: impl FnMut(f64) -> Result<f64>,
    s_max: f64,
    tol: f64,
) -> Result<RootSolution> {
    if !(s_max > 0.0) || !(tol > 0.0) {
        return Err(Error::Domain("need s_max > 0 and tol > 0".into()));
    }
    let mut history = Vec::new();
    let mut logm = |s: f64| -> Result<f64> {
        let v = m(s)?;
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Spectral(format!(
                "m({s}) = {v} is not positive and finite"
            )));
        }
        Ok(v.ln())
    };
    // golden section for the minimiser
    let (mut a, mut b) = (0.0, s_max);
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let (mut fc, mut fd) = (logm(c)?, logm(d)?);
    while b - a > tol * 0.1 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = logm(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = logm(d)?;
        }
        history.push(BracketStep {
            phase: "minimise".into(),
            lo: a,
            hi: b,
        });
    }
    let s_star = 0.5 * (a + b);
    let f_star = logm(s_star)?;
    if f_star >= 0.0 {
        return Err(Error::NoRoot {
            s_star,
            min_value: f_star.exp(),
        });
    }
    let f_max = logm(s_max)?;
    if f_max < 0.0 || s_max - s_star <= tol {
        return Err(Error::NoSecondRoot {
            s_max,
            m_at_s_max: f_max.exp(),
        });
    }
    let f0 = logm(0.0)?;
    if f0 <= 0.0 {
        return Err(Error::Spectral(format!(
            "m(0) = {} is not above 1",
            f0.exp()
        )));
    }
    let mut bisect = |mut lo: f64, mut hi: f64, decreasing: bool, phase: &str| -> Result<f64> {
        while hi - lo > tol * 0.1 {
            let mid = 0.5 * (lo + hi);
            let above = logm(mid)? > 0.0;
            if above == decreasing {
                lo = mid;
            } else {
                hi = mid;
            }
            history.push(BracketStep {
                phase: phase.into(),
                lo,
                hi,
            });
        }
        Ok(0.5 * (lo + hi))
    };
    let alpha = bisect(0.0, s_star, true, "alpha")?;
    let beta = bisect(s_star, s_max, false, "beta")?;
    Ok(RootSolution {
        alpha,
        beta,
        s_star,
        m_min: f_star.exp(),
        history,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DriftResult {
    /// `k'(s) / k(s)`, equal to `m'(s) / m(s)`.
    pub log_k_slope: f64,
    pub m_prime: f64,
    /// The two one-sided differences disagree in sign.
    pub low_confidence: bool,
}

/// Central differences of `log m` and `m` at `s` (one-sided at 0).
pub fn drift(mut m: impl FnMut(f64) -> Result<f64>, s: f64, h: f64) -> Result<DriftResult> {
    let lo = (s - h).max(0.0);
    let hi = s + h;
    let (m_lo, m_mid, m_hi) = (m(lo)?, m(s)?, m(hi)?);
    let left = m_mid - m_lo;
    let right = m_hi - m_mid;
    let low_confidence =
        lo < s && (left > 0.0) != (right > 0.0) && left.abs().max(right.abs()) > 1e-3 * m_mid * h;
    Ok(DriftResult {
        log_k_slope: (m_hi.ln() - m_lo.ln()) / (hi - lo),
        m_prime: (m_hi - m_lo) / (hi - lo),
        low_confidence,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailIndexSolution {
    pub alpha: f64,
    pub beta: f64,
    pub s_star: f64,
    pub m_min: f64,
    pub m_alpha: f64,
    pub m_beta: f64,
    /// `m'(beta)`.
    pub rho: f64,
    /// `k'(beta) / k(beta)`, the drift of the tilted walk.
    pub log_k_slope: f64,
    pub drift_low_confidence: bool,
    pub k_beta: f64,
    pub k_beta_se: f64,
    pub mean_n: f64,
    pub residual_beta: f64,
    pub history: Vec<BracketStep>,
}

/// Solves `m(alpha) = m(beta) = 1` with grid eigenvalues evaluated under
/// common random numbers.
pub fn solve_alpha_beta<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    s_max: f64,
    tol: f64,
    cfg: &SpectralConfig,
    rng: &mut R,
) -> Result<(TailIndexSolution, SpectralResult<T>)> {
    let key = StreamKey::from_rng(rng);
    let en = spec.mean_n();
    let m = |s: f64| -> Result<f64> {
        let r: SpectralResult<T> = compute_spectrum(spec, s, cfg, &mut key.stream(0))?;
        Ok(en * r.k.f64())
    };
    let roots = solve_roots(m, s_max, tol)?;
    let dr = drift(m, roots.beta, DRIFT_STEP)?;
    let at_beta: SpectralResult<T> = compute_spectrum(spec, roots.beta, cfg, &mut key.stream(0))?;
    let sol = TailIndexSolution {
        alpha: roots.alpha,
        beta: roots.beta,
        s_star: roots.s_star,
        m_min: roots.m_min,
        m_alpha: m(roots.alpha)?,
        m_beta: en * at_beta.k.f64(),
        rho: dr.m_prime,
        log_k_slope: dr.log_k_slope,
        drift_low_confidence: dr.low_confidence,
        k_beta: at_beta.k.f64(),
        k_beta_se: at_beta.k_se,
        mean_n: en,
        residual_beta: at_beta.residual,
        history: roots.history,
    };
    Ok((sol, at_beta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ref1_m(s: f64) -> Result<f64> {
        Ok(2.0 * (-s + 0.25 * s * s).exp())
    }

    #[test]
    fn closed_form_roots() {
        let r = solve_roots(ref1_m, 6.0, 1e-8).unwrap();
        let c = (1.0 - 2f64.ln()).sqrt();
        assert!((r.alpha - (2.0 - 2.0 * c)).abs() < 1e-7);
        assert!((r.beta - (2.0 + 2.0 * c)).abs() < 1e-7);
        assert!((r.s_star - 2.0).abs() < 1e-6);
    }

    #[test]
    fn no_second_root_reports_m_at_s_max() {
        match solve_roots(ref1_m, 2.5, 1e-6) {
            Err(Error::NoSecondRoot { s_max, m_at_s_max }) => {
                assert_eq!(s_max, 2.5);
                assert!((m_at_s_max - ref1_m(2.5).unwrap()).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn no_root_when_minimum_above_one() {
        let m = |s: f64| Ok(3.0 * (-s + 0.25 * s * s).exp());
        assert!(matches!(
            solve_roots(m, 6.0, 1e-6),
            Err(Error::NoRoot { .. })
        ));
    }

    #[test]
    fn drift_matches_derivative() {
        let b = 2.0 + 2.0 * (1.0 - 2f64.ln()).sqrt();
        let d = drift(ref1_m, b, DRIFT_STEP).unwrap();
        assert!((d.log_k_slope - (-1.0 + 0.5 * b)).abs() < 1e-9);
        // m(beta) = 1, so m'(beta) is the same number up to O(h^2)
        assert!((d.m_prime - (-1.0 + 0.5 * b)).abs() < 1e-3);
        assert!(!d.low_confidence);
        let at_min = drift(ref1_m, 2.0, DRIFT_STEP).unwrap();
        assert!(at_min.m_prime.abs() < 1e-6);
    }
}
