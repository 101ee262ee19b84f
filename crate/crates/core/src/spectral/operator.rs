use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::matwalk::{csv_err, UNDERFLOW};
use crate::model::{sample_rotation, DirectionalPart, ModelSpec};
use crate::rng::StreamKey;
use crate::scalar::Real;
use crate::sphere::SphereGrid;

/// Largest fraction of operator mass allowed to fall on singular actions.
const MAX_REJECTION: f64 = 0.01;

/// Relative discretisation error of `k(s)` at the default resolution on the
/// reference families (checked by halving the grid spacing).
pub const GRID_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralConfig {
    /// Grid size; 0 picks 256 for `d = 2` and 512 for `d >= 3`.
    pub resolution: usize,
    /// Monte Carlo rotations per assembly (only for rotation ensembles).
    pub mc_reps: usize,
    /// Independent batches used for the standard error of `k`.
    pub batches: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            resolution: 0,
            mc_reps: 2048,
            batches: 4,
            max_iter: 100_000,
            tol: 1e-10,
        }
    }
}

impl SpectralConfig {
    pub fn grid<T: Real>(&self, spec: &ModelSpec) -> SphereGrid<T> {
        let d = spec.dimension;
        let res = match (self.resolution, d) {
            (0, 2) => 256,
            (0, _) => 512,
            (r, _) => r,
        };
        SphereGrid::new(d, spec.class.is_cone(), spec.norm, res)
    }
}

/// Dense discretisation of `P_s`, row `i` acting at grid point `x_i`.
#[derive(Debug, Clone)]
pub struct GridOperator<T> {
    pub n: usize,
    pub data: Vec<T>,
    /// Fraction of the transition mass lost to singular actions.
    pub rejected: f64,
}

impl<T: Real> GridOperator<T> {
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        GridOperator {
            n,
            data: rows.iter().flatten().map(|&v| T::c(v)).collect(),
            rejected: 0.0,
        }
    }

    fn apply(&self, f: &[T]) -> Vec<T> {
        self.data
            .chunks(self.n)
            .map(|row| row.iter().zip(f).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    fn apply_left(&self, nu: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.n];
        for (row, &w) in self.data.chunks(self.n).zip(nu) {
            if w != T::zero() {
                out.iter_mut().zip(row).for_each(|(o, &a)| *o = *o + w * a);
            }
        }
        out
    }
}

/// Assembles `P_s` on `grid`. The scalar factor enters through its exact
/// moment; discrete directional parts are summed exactly; rotations use
/// `mc_reps` draws shared by all rows.
pub fn build_operator<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    s: f64,
    grid: &SphereGrid<T>,
    mc_reps: usize,
    rng: &mut R,
) -> Result<GridOperator<T>> {
    let factor = spec.ensemble.factor::<T>(spec.dimension);
    let scale = factor.scalar_moment(s);
    let n = grid.len();
    let mut data = vec![0.0f64; n * n];
    let mut rejected = 0.0;
    let (mats, probs): (Vec<_>, Vec<f64>) = match &factor.part {
        DirectionalPart::Discrete { mats, probs } => (mats.clone(), probs.clone()),
        DirectionalPart::Rotation { d } => {
            let reps = mc_reps.max(1);
            (
                (0..reps).map(|_| sample_rotation(*d, rng)).collect(),
                vec![1.0 / reps as f64; reps],
            )
        }
    };
    for (i, x) in grid.points.iter().enumerate() {
        let row = &mut data[i * n..(i + 1) * n];
        for (b, &p) in mats.iter().zip(&probs) {
            if p == 0.0 {
                continue;
            }
            let y = b.mul_vec(x);
            let len = spec.norm.of(&y);
            if !(len.f64() > UNDERFLOW) {
                rejected += p;
                continue;
            }
            let dir: Vector<T> = y.iter().map(|&v| v / len).collect();
            let w = p * len.f64().powf(s) * scale;
            for (j, c) in grid.locate(&dir) {
                row[j] += w * c;
            }
        }
    }
    let rejected = rejected / n as f64;
    if rejected > MAX_REJECTION {
        return Err(Error::AssemblyRejection { fraction: rejected });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Spectral(format!(
            "operator at s = {s} has non-finite entries"
        )));
    }
    Ok(GridOperator {
        n,
        data: data.into_iter().map(T::c).collect(),
        rejected,
    })
}

#[derive(Debug, Clone)]
pub struct Eigen<T> {
    pub k: T,
    pub e: Vec<T>,
    pub nu: Vec<T>,
    pub iterations: usize,
    pub residual: f64,
}

fn l1_normalise<T: Real>(v: &mut [T]) -> Result<T> {
    let s: T = v.iter().map(|x| x.abs()).sum();
    if !(s > T::zero()) || !s.is_finite() {
        return Err(Error::Spectral("iterate collapsed to zero".into()));
    }
    v.iter_mut().for_each(|x| *x = *x / s);
    Ok(s)
}

fn iterate<T: Real>(
    op: &GridOperator<T>,
    apply: impl Fn(&[T]) -> Vec<T>,
    tol: f64,
    max_iter: usize,
) -> Result<(T, Vec<T>, usize)> {
    let n = op.n;
    let mut v = vec![T::one() / T::from_usize_lossy(n); n];
    let mut history: Vec<f64> = Vec::new();
    for it in 1..=max_iter {
        let mut w = apply(&v);
        let k = l1_normalise(&mut w)?;
        let change = history
            .last()
            .map_or(f64::INFINITY, |&prev| (k.f64() - prev).abs() / k.f64());
        let vec_change: f64 = w
            .iter()
            .zip(&v)
            .map(|(a, b)| (*a - *b).abs().f64())
            .fold(0.0, f64::max);
        history.push(k.f64());
        v = w;
        if change < tol && vec_change < tol.sqrt() {
            return Ok((k, v, it));
        }
        let h = history.len();
        if h >= 64 {
            let even = history[h - 1];
            let odd = history[h - 2];
            let two_back = history[h - 3];
            if (even - two_back).abs() <= tol * even && (even - odd).abs() > 1e-6 * even {
                return Err(Error::Oscillation { even, odd });
            }
        }
    }
    let h = history.len();
    let last_change = if h >= 2 {
        (history[h - 1] - history[h - 2]).abs() / history[h - 1]
    } else {
        f64::NAN
    };
    Err(Error::NonConvergence {
        iterations: max_iter,
        last_change,
    })
}

/// Right eigenvector `e`, left eigenmeasure `nu` and eigenvalue `k` of a
/// nonnegative operator, normalised so that `sum nu = 1` and `<nu, e> = 1`.
pub fn power_iteration<T: Real>(
    op: &GridOperator<T>,
    tol: f64,
    max_iter: usize,
) -> Result<Eigen<T>> {
    let (k, mut e, it_r) = iterate(op, |v| op.apply(v), tol, max_iter)?;
    let (_, nu, it_l) = iterate(op, |v| op.apply_left(v), tol, max_iter)?;
    if let Some(bad) = e.iter().position(|&x| !(x > T::zero())) {
        return Err(Error::Spectral(format!(
            "eigenfunction vanishes at grid point {bad}"
        )));
    }
    let pair: T = nu.iter().zip(&e).map(|(&a, &b)| a * b).sum();
    e.iter_mut().for_each(|x| *x = *x / pair);
    let pe = op.apply(&e);
    let residual = pe
        .iter()
        .zip(&e)
        .map(|(&a, &b)| (a - k * b).abs().f64())
        .fold(0.0, f64::max)
        / (k.f64() * e.iter().map(|x| x.f64()).fold(0.0, f64::max));
    Ok(Eigen {
        k,
        e,
        nu,
        iterations: it_r.max(it_l),
        residual,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralResult<T> {
    pub s: f64,
    pub k: T,
    /// Monte Carlo standard error of `k` (0 when assembly is exact).
    pub k_se: f64,
    pub e: Vec<T>,
    pub nu: Vec<T>,
    pub residual: f64,
    pub iterations: usize,
    pub rejected: f64,
    pub grid: SphereGrid<T>,
}

impl<T: Real> SpectralResult<T> {
    /// Interpolated eigenfunction at direction `x`.
    pub fn eigen_at(&self, x: &[T]) -> T {
        self.grid.interpolate(&self.e, x)
    }
}

/// Perron data of `P_s`. Rotation ensembles are assembled from `batches`
/// independent blocks of rotations; their spread gives `k_se`.
pub fn compute_spectrum<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    s: f64,
    cfg: &SpectralConfig,
    rng: &mut R,
) -> Result<SpectralResult<T>> {
    if !(s >= 0.0) || !s.is_finite() {
        return Err(Error::Domain(format!(
            "s must be finite and nonnegative, got {s}"
        )));
    }
    let grid: SphereGrid<T> = cfg.grid(spec);
    let mc = matches!(
        spec.ensemble.factor::<T>(spec.dimension).part,
        DirectionalPart::Rotation { .. }
    );
    let (op, k_se) = if mc && cfg.batches > 1 {
        let key = StreamKey::from_rng(rng);
        let per = (cfg.mc_reps / cfg.batches).max(1);
        let ops: Vec<GridOperator<T>> = (0..cfg.batches)
            .map(|b| build_operator(spec, s, &grid, per, &mut key.stream(b as u64)))
            .collect::<Result<_>>()?;
        let ks: Vec<f64> = ops
            .iter()
            .map(|o| power_iteration(o, cfg.tol, cfg.max_iter).map(|e| e.k.f64()))
            .collect::<Result<_>>()?;
        let nb = ks.len() as f64;
        let mean = ks.iter().sum::<f64>() / nb;
        let var = ks.iter().map(|k| (k - mean).powi(2)).sum::<f64>() / (nb - 1.0);
        let n = grid.len();
        let mut data = vec![T::zero(); n * n];
        for o in &ops {
            data.iter_mut()
                .zip(&o.data)
                .for_each(|(a, &b)| *a = *a + b / T::c(nb));
        }
        let rejected = ops.iter().map(|o| o.rejected).sum::<f64>() / nb;
        (GridOperator { n, data, rejected }, (var / nb).sqrt())
    } else {
        (build_operator(spec, s, &grid, cfg.mc_reps, rng)?, 0.0)
    };
    let eig = power_iteration(&op, cfg.tol, cfg.max_iter)?;
    Ok(SpectralResult {
        s,
        k: eig.k,
        k_se,
        e: eig.e,
        nu: eig.nu,
        residual: eig.residual,
        iterations: eig.iterations,
        rejected: op.rejected,
        grid,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub s: f64,
    pub k: f64,
    pub m: f64,
    pub se: f64,
}

/// `k(s)` and `m(s)` along `s_values`, with common random numbers.
pub fn sweep<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    s_values: &[f64],
    cfg: &SpectralConfig,
    rng: &mut R,
) -> Result<Vec<SweepRow>> {
    let key = StreamKey::from_rng(rng);
    s_values
        .iter()
        .map(|&s| {
            let r: SpectralResult<T> = compute_spectrum(spec, s, cfg, &mut key.stream(0))?;
            let k = r.k.f64();
            Ok(SweepRow {
                s,
                k,
                m: spec.mean_n() * k,
                se: spec.mean_n() * r.k_se,
            })
        })
        .collect()
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_iteration_on_known_matrix() {
        // eigenvalues 3 and 1, Perron vector (1, 1)
        let op: GridOperator<f64> = GridOperator::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let e = power_iteration(&op, 1e-12, 10_000).unwrap();
        assert!((e.k - 3.0).abs() < 1e-10);
        assert!((e.e[0] - e.e[1]).abs() < 1e-8);
        assert!((e.nu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let pair: f64 = e.nu.iter().zip(&e.e).map(|(a, b)| a * b).sum();
        assert!((pair - 1.0).abs() < 1e-12);
        assert!(e.residual < 1e-8);
    }

    #[test]
    fn period_two_is_reported() {
        let op: GridOperator<f64> = GridOperator::from_rows(&[vec![0.0, 2.0], vec![1.0, 0.0]]);
        match power_iteration(&op, 1e-10, 10_000) {
            Err(Error::Oscillation { even, odd }) => {
                let mut v = [even, odd];
                v.sort_by(f64::total_cmp);
                assert!((v[0] - 4.0 / 3.0).abs() < 1e-12);
                assert!((v[1] - 1.5).abs() < 1e-12);
            }
            other => panic!("expected oscillation, got {other:?}"),
        }
    }

    #[test]
    fn non_convergence_is_reported() {
        let op: GridOperator<f64> = GridOperator::from_rows(&[vec![1.0, 1e-3], vec![0.0, 0.999]]);
        assert!(matches!(
            power_iteration(&op, 1e-14, 5),
            Err(Error::NonConvergence { .. })
        ));
    }
}
