//! Empirical tail diagnostics on a pool: survival functions, the Hill
//! estimator, and flatness of `t^beta P(<u, X> > t)`.

use std::path::Path;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matwalk::csv_err;
use crate::rng::index;
use crate::scalar::Real;
use crate::wbp::FixedPointPool;

/// Minimum number of upper order statistics for the Hill estimator.
pub const HILL_MIN_K: usize = 100;

pub const HILL_FRACTIONS: [f64; 4] = [0.005, 0.01, 0.02, 0.05];

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Number of entries of the ascending slice strictly above `t`.
fn exceed(sorted: &[f64], t: f64) -> usize {
    sorted.len() - sorted.partition_point(|&x| x <= t)
}

/// Empirical quantile (nearest rank) of an ascending slice.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let k = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[k]
}

/// `P(<u, X> > t)` for each `t` in `t_grid`.
pub fn empirical_survival<T: Real>(
    pool: &FixedPointPool<T>,
    u: &[f64],
    t_grid: &[f64],
) -> Vec<f64> {
    let proj = sorted(pool.projections(u));
    let n = proj.len() as f64;
    t_grid
        .iter()
        .map(|&t| exceed(&proj, t) as f64 / n)
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HillEstimate {
    pub index: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub k: usize,
    pub threshold: f64,
}

fn hill_core(v: &mut [f64], k: usize) -> Option<(f64, f64)> {
    let n = v.len();
    // the k + 1 largest values end up at the back
    let (_, pivot, top) = v.select_nth_unstable_by(n - k - 1, f64::total_cmp);
    let thr = *pivot;
    if !(thr > 0.0) {
        return None;
    }
    let sum: f64 = top.iter().map(|&x| (x / thr).ln()).sum();
    (sum > 0.0).then(|| (k as f64 / sum, thr))
}

/// Hill estimator on the `k = floor(k_frac n)` largest samples with a
/// percentile bootstrap interval (`boot` resamples, 95%).
pub fn hill<R: Rng + ?Sized>(
    samples: &[f64],
    k_frac: f64,
    boot: usize,
    rng: &mut R,
) -> Result<HillEstimate> {
    let n = samples.len();
    let k = (k_frac * n as f64).floor() as usize;
    if k < HILL_MIN_K || k >= n {
        return Err(Error::Domain(format!(
            "Hill estimator needs at least {HILL_MIN_K} exceedances; k_frac = {k_frac} gives {k} of {n}"
        )));
    }
    let mut work = samples.to_vec();
    let (index_hat, threshold) = hill_core(&mut work, k).ok_or_else(|| {
        Error::Domain("Hill threshold is not positive or the tail is constant".into())
    })?;
    let mut reps: Vec<f64> = (0..boot)
        .filter_map(|_| {
            for w in work.iter_mut() {
                *w = samples[index(rng, n)];
            }
            hill_core(&mut work, k).map(|r| r.0)
        })
        .collect();
    let (ci_low, ci_high) = if reps.len() >= 2 {
        reps.sort_by(f64::total_cmp);
        (quantile(&reps, 0.025), quantile(&reps, 0.975))
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(HillEstimate {
        index: index_hat,
        ci_low,
        ci_high,
        k,
        threshold,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FlatnessConfig {
    pub points: usize,
    pub bootstrap: usize,
    /// Largest accepted `max / min` of the scaled tail over the window.
    pub ratio_limit: f64,
    pub min_exceedances: usize,
}

impl Default for FlatnessConfig {
    fn default() -> Self {
        FlatnessConfig {
            points: 24,
            bootstrap: 200,
            ratio_limit: 4.0,
            min_exceedances: 50,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailRow {
    pub t: f64,
    pub survival: f64,
    pub scaled: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlatnessSummary {
    pub beta: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub rows: Vec<TailRow>,
    pub min: f64,
    pub max: f64,
    pub ratio: f64,
    /// Bootstrap 95% lower confidence bound of the window minimum.
    pub min_lower_95: f64,
    pub flat: bool,
}

/// Window `[q99, q99.99]` of the projections.
pub fn default_window(projections: &[f64]) -> (f64, f64) {
    let s = sorted(projections.to_vec());
    (quantile(&s, 0.99), quantile(&s, 0.9999))
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Checks that `t^beta P(<u, X> > t)` stays bounded away from 0 and within a
/// bounded ratio over `[t_lo, t_hi]`.
pub fn scaled_tail_flatness<R: Rng + ?Sized>(
    projections: &[f64],
    beta: f64,
    t_lo: f64,
    t_hi: f64,
    cfg: &FlatnessConfig,
    rng: &mut R,
) -> Result<FlatnessSummary> {
    let s = sorted(projections.to_vec());
    let n = s.len();
    let largest_usable = if n > cfg.min_exceedances {
        s[n - cfg.min_exceedances - 1]
    } else {
        f64::NAN
    };
    if !(t_lo > 0.0 && t_hi > t_lo) || exceed(&s, t_hi) < cfg.min_exceedances {
        return Err(Error::UnresolvableWindow {
            t_hi,
            largest_usable,
            min_exceedances: cfg.min_exceedances,
        });
    }
    let grid = log_grid(t_lo, t_hi, cfg.points);
    let nf = n as f64;
    let rows: Vec<TailRow> = grid
        .iter()
        .map(|&t| {
            let p = exceed(&s, t) as f64 / nf;
            let scale = t.powf(beta);
            TailRow {
                t,
                survival: p,
                scaled: scale * p,
                se: scale * (p * (1.0 - p) / nf).sqrt(),
            }
        })
        .collect();
    let min = rows.iter().map(|r| r.scaled).fold(f64::INFINITY, f64::min);
    let max = rows.iter().map(|r| r.scaled).fold(0.0, f64::max);
    // Only members above t_lo matter: draw how many resampled members land
    // there, then which ones.
    let top = &s[n - exceed(&s, t_lo)..];
    let binom =
        Binomial::new(n as u64, top.len() as f64 / nf).map_err(|e| Error::Domain(e.to_string()))?;
    let mut mins: Vec<f64> = (0..cfg.bootstrap)
        .map(|_| {
            let kk = binom.sample(rng) as usize;
            let mut draw: Vec<f64> = (0..kk).map(|_| top[index(rng, top.len())]).collect();
            draw.sort_by(f64::total_cmp);
            grid.iter()
                .map(|&t| t.powf(beta) * exceed(&draw, t) as f64 / nf)
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    mins.sort_by(f64::total_cmp);
    let min_lower_95 = if mins.is_empty() {
        min
    } else {
        quantile(&mins, 0.05)
    };
    let ratio = max / min;
    let flat = min_lower_95 > 0.0 && ratio < cfg.ratio_limit;
    Ok(FlatnessSummary {
        beta,
        t_lo,
        t_hi,
        rows,
        min,
        max,
        ratio,
        min_lower_95,
        flat,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirectionProfile {
    pub u: Vec<f64>,
    pub t: f64,
    pub exceedances: usize,
    pub scaled: Option<f64>,
    pub se: f64,
}

/// `t^beta P(<u, X> > t)` for several directions at one level `t`.
pub fn directional_profile<T: Real>(
    pool: &FixedPointPool<T>,
    directions: &[Vec<f64>],
    t: f64,
    beta: f64,
    min_exceedances: usize,
) -> Vec<DirectionProfile> {
    let n = pool.len() as f64;
    directions
        .iter()
        .map(|u| {
            let proj = pool.projections(u);
            let hits = proj.iter().filter(|&&x| x > t).count();
            let p = hits as f64 / n;
            let scale = t.powf(beta);
            DirectionProfile {
                u: u.clone(),
                t,
                exceedances: hits,
                scaled: (hits >= min_exceedances).then_some(scale * p),
                se: scale * (p * (1.0 - p) / n).sqrt(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailReport {
    pub u: Vec<f64>,
    pub pool_size: usize,
    pub flatness: FlatnessSummary,
    pub hill: Option<HillEstimate>,
    /// Point estimates (no interval) at the fractions [`HILL_FRACTIONS`] that
    /// have enough exceedances.
    pub hill_profile: Vec<HillEstimate>,
    /// Least-squares slope of `log P` against `log t` over the window.
    pub loglog_slope: f64,
    pub loglog_slope_se: f64,
}

fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - my - slope * (x - mx)).powi(2))
        .sum();
    let se = if n > 2.0 {
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    (slope, se)
}

/// Flatness, Hill and log-log slope for direction `u`; the window defaults
/// to `[q99, q99.99]` of the projections.
pub fn tail_report<T: Real, R: Rng + ?Sized>(
    pool: &FixedPointPool<T>,
    u: &[f64],
    beta: f64,
    window: Option<(f64, f64)>,
    cfg: &FlatnessConfig,
    rng: &mut R,
) -> Result<TailReport> {
    let proj = pool.projections(u);
    let (t_lo, t_hi) = window.unwrap_or_else(|| default_window(&proj));
    let flatness = scaled_tail_flatness(&proj, beta, t_lo, t_hi, cfg, rng)?;
    let hill_main = hill(&proj, 0.01, cfg.bootstrap, rng).ok();
    let hill_profile: Vec<HillEstimate> = HILL_FRACTIONS
        .iter()
        .filter_map(|&f| hill(&proj, f, 0, rng).ok())
        .collect();
    let pts: Vec<(f64, f64)> = flatness
        .rows
        .iter()
        .filter(|r| r.survival > 0.0)
        .map(|r| (r.t.ln(), r.survival.ln()))
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let (loglog_slope, loglog_slope_se) = ols(&xs, &ys);
    Ok(TailReport {
        u: u.to_vec(),
        pool_size: pool.len(),
        flatness,
        hill: hill_main,
        hill_profile,
        loglog_slope,
        loglog_slope_se,
    })
}

/// Columns `t,survival,scaled,se`.
pub fn write_tail_csv(path: &Path, rows: &[TailRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
