use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Norm, Vector};
use crate::matwalk::csv_err;
use crate::model::{sample_family, ModelSpec};
use crate::rng::{chunked, index, StreamKey};
use crate::scalar::Real;

/// Initial value of every pool member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    Zero,
    /// The mean of the fixed point when it is finite, else zero.
    Mean,
    Point(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolConfig {
    pub generations: usize,
    pub pool_size: usize,
    pub start: Start,
    /// Decile drift (relative to the inter-decile range, or to the median
    /// for a collapsed pool) below which a generation counts as settled.
    pub tol: f64,
    /// Consecutive settled generations needed to declare convergence.
    pub patience: usize,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            generations: 60,
            pool_size: 100_000,
            start: Start::Mean,
            tol: 0.02,
            patience: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: u64,
    pub mean: Vec<f64>,
    /// Deciles 1..9 of `x` (`d = 1`) or of `|x|`.
    pub deciles: Vec<f64>,
    pub drift: f64,
}

/// Empirical approximation of the fixed-point law: `len()` points of `R^d`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedPointPool<T> {
    pub d: usize,
    pub data: Vec<T>,
    pub generation: u64,
    pub model: String,
    pub history: Vec<GenerationStats>,
    pub converged_at: Option<u64>,
    pub degenerate: bool,
}

impl<T: Real> FixedPointPool<T> {
    pub fn constant(d: usize, count: usize, x0: &[T]) -> Self {
        FixedPointPool {
            d,
            data: x0.iter().copied().cycle().take(d * count).collect(),
            generation: 0,
            model: String::new(),
            history: Vec::new(),
            converged_at: None,
            degenerate: false,
        }
    }

    pub fn from_rows(d: usize, rows: &[Vec<f64>]) -> Self {
        let mut p = Self::constant(d, 0, &[]);
        p.data = rows.iter().flatten().map(|&v| T::c(v)).collect();
        p
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.d).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> + '_ {
        self.data.chunks(self.d)
    }

    /// Uniformly chosen member.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> &[T] {
        self.row(index(rng, self.len()))
    }

    pub fn projections(&self, u: &[f64]) -> Vec<f64> {
        self.rows()
            .map(|x| x.iter().zip(u).map(|(a, b)| a.f64() * b).sum())
            .collect()
    }

    pub fn norms(&self, norm: Norm) -> Vec<f64> {
        self.rows().map(|x| norm.of(x).f64()).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.len() as f64;
        (0..self.d)
            .map(|j| self.rows().map(|x| x[j].f64()).sum::<f64>() / n)
            .collect()
    }

    /// True when every member equals the first one.
    pub fn is_point_mass(&self) -> bool {
        let Some(first) = self.rows().next() else {
            return true;
        };
        self.rows().all(|x| {
            x.iter()
                .zip(first)
                .all(|(a, b)| (a.f64() - b.f64()).abs() <= 1e-12 * (1.0 + b.f64().abs()))
        })
    }

    fn summary_values(&self) -> Vec<f64> {
        if self.d == 1 {
            self.data.iter().map(|v| v.f64()).collect()
        } else {
            self.norms(Norm::L2)
        }
    }
}

fn deciles(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    (1..10).map(|k| v[((k * n) / 10).min(n - 1)]).collect()
}

/// One generation: every new member is `sum_{i <= N} A_i X_{(i)} + Q` with
/// the `X_{(i)}` drawn uniformly from the current pool.
pub fn population_iterate<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    pool: &FixedPointPool<T>,
    rng: &mut R,
) -> Result<FixedPointPool<T>> {
    if pool.is_empty() {
        return Err(Error::Domain("empty pool".into()));
    }
    let key = StreamKey::from_rng(rng);
    let d = spec.dimension;
    let chunks = chunked(key, pool.len(), |s, count| -> Result<Vec<T>> {
        let mut out = Vec::with_capacity(count * d);
        for _ in 0..count {
            let mut attempt = 0;
            loop {
                let fam = sample_family::<T, _>(spec, s)?;
                let mut x: Vector<T> = fam.q.clone();
                for a in &fam.a {
                    let y = a.mul_vec(pool.draw(s));
                    x.iter_mut().zip(&y).for_each(|(p, &q)| *p = *p + q);
                }
                if x.iter().all(|v| v.is_finite()) {
                    out.extend_from_slice(&x);
                    break;
                }
                attempt += 1;
                if attempt >= 2 {
                    return Err(Error::Overflow(format!(
                        "non-finite pool member in generation {}",
                        pool.generation + 1
                    )));
                }
            }
        }
        Ok(out)
    });
    let mut data = Vec::with_capacity(pool.data.len());
    for c in chunks {
        data.extend(c?);
    }
    Ok(FixedPointPool {
        d,
        data,
        generation: pool.generation + 1,
        model: pool.model.clone(),
        history: pool.history.clone(),
        converged_at: pool.converged_at,
        degenerate: false,
    })
}

/// `(I - E[N] E[A])^{-1} E[Q]` when the spectral radius of `E[N] E[A]` is below 1.
pub fn mean_matched_start(spec: &ModelSpec) -> Option<Vec<f64>> {
    let d = spec.dimension;
    let ea = spec.ensemble.mean_matrix(d);
    let en = spec.mean_n();
    let m = DMatrix::<f64>::from_fn(d, d, |i, j| en * ea[(i, j)]);
    let radius = m
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    if !(radius < 1.0) {
        return None;
    }
    let lhs = DMatrix::<f64>::identity(d, d) - m;
    let q = DVector::from_vec(spec.q_law.mean(d));
    lhs.lu().solve(&q).map(|x| x.iter().copied().collect())
}

/// Runs the population algorithm for `cfg.generations` generations and
/// records decile drift, convergence and degeneracy.
pub fn sample_fixed_point<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    cfg: &PoolConfig,
    rng: &mut R,
) -> Result<FixedPointPool<T>> {
    let d = spec.dimension;
    if cfg.pool_size == 0 {
        return Err(Error::Domain("pool_size must be positive".into()));
    }
    let x0: Vec<f64> = match &cfg.start {
        Start::Zero => vec![0.0; d],
        Start::Mean => mean_matched_start(spec).unwrap_or_else(|| vec![0.0; d]),
        Start::Point(p) if p.len() == d => p.clone(),
        Start::Point(p) => {
            return Err(Error::Domain(format!(
                "start point has {} coordinates, expected {d}",
                p.len()
            )))
        }
    };
    let x0t: Vec<T> = x0.iter().map(|&v| T::c(v)).collect();
    let mut pool = FixedPointPool::constant(d, cfg.pool_size, &x0t);
    pool.model = spec.fingerprint();
    let mut prev = deciles(pool.summary_values());
    let mut settled = 0;
    for _ in 0..cfg.generations {
        pool = population_iterate(spec, &pool, rng)?;
        let dec = deciles(pool.summary_values());
        // a collapsed pool has no spread; fall back to a relative scale
        let range = (dec[8] - dec[0]).max(1e-3 * dec[4].abs()).max(1e-12);
        let drift = dec
            .iter()
            .zip(&prev)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            / range;
        pool.history.push(GenerationStats {
            generation: pool.generation,
            mean: pool.mean(),
            deciles: dec.clone(),
            drift,
        });
        settled = if drift < cfg.tol { settled + 1 } else { 0 };
        if settled >= cfg.patience && pool.converged_at.is_none() {
            pool.converged_at = Some(pool.generation);
        }
        prev = dec;
    }
    pool.degenerate = pool.is_point_mass();
    Ok(pool)
}

/// Independent pools with the same configuration.
pub fn replicate_pools<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    cfg: &PoolConfig,
    replicates: usize,
    rng: &mut R,
) -> Result<Vec<FixedPointPool<T>>> {
    let key = StreamKey::from_rng(rng);
    (0..replicates)
        .map(|r| sample_fixed_point(spec, cfg, &mut key.stream(r as u64)))
        .collect()
}

/// Grand mean of coordinate `j` over pools and its standard error from the
/// spread between pools.
pub fn between_replicate_mean<T: Real>(pools: &[FixedPointPool<T>], j: usize) -> (f64, f64) {
    let means: Vec<f64> = pools.iter().map(|p| p.mean()[j]).collect();
    let r = means.len() as f64;
    let m = means.iter().sum::<f64>() / r;
    let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (r - 1.0);
    (m, (var / r).sqrt())
}

/// Binary layout: little-endian `u64` dimension, count and generation, then
/// the members row by row as little-endian `f64`.
pub fn write_pool_bin<T: Real>(path: &Path, pool: &FixedPointPool<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for h in [pool.d as u64, pool.len() as u64, pool.generation] {
        w.write_all(&h.to_le_bytes())?;
    }
    for v in &pool.data {
        w.write_all(&v.f64().to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pool_bin<T: Real>(path: &Path) -> Result<FixedPointPool<T>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut word = [0u8; 8];
    let mut header = [0u64; 3];
    for h in header.iter_mut() {
        r.read_exact(&mut word)?;
        *h = u64::from_le_bytes(word);
    }
    let [d, count, generation] = header;
    if d == 0 {
        return Err(Error::Domain("pool file has dimension 0".into()));
    }
    let total = (d as usize)
        .checked_mul(count as usize)
        .ok_or_else(|| Error::Domain("pool file header is too large".into()))?;
    let mut data = Vec::with_capacity(total);
    for _ in 0..total {
        r.read_exact(&mut word)?;
        data.push(T::c(f64::from_le_bytes(word)));
    }
    let mut pool = FixedPointPool::constant(d as usize, 0, &[]);
    pool.data = data;
    pool.generation = generation;
    Ok(pool)
}

/// CSV with header `x1,...,xd` and one member per row.
pub fn write_pool_csv<T: Real>(path: &Path, pool: &FixedPointPool<T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record((1..=pool.d).map(|i| format!("x{i}")))
        .map_err(csv_err)?;
    for x in pool.rows() {
        w.write_record(x.iter().map(|v| v.f64().to_string()))
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pool_csv<T: Real>(path: &Path) -> Result<FixedPointPool<T>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let d = r.headers().map_err(csv_err)?.len();
    let mut data = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        for f in rec.iter() {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| Error::Domain(format!("bad pool value '{f}'")))?;
            data.push(T::c(v));
        }
    }
    let mut pool = FixedPointPool::constant(d, 0, &[]);
    pool.data = data;
    Ok(pool)
}
