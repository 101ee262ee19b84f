//! One-path events `V` and two-path events `W`, with their Monte Carlo
//! estimators.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::matwalk::{Estimate, PathState, ProductTracker, Sampling, StepSampler};
use crate::model::{sample_a, sample_n, sample_q, ModelSpec};
use crate::rng::{chunked, MeanAcc, StreamKey};
use crate::scalar::Real;
use crate::wbp::FixedPointPool;

/// Smallest `n_t` accepted by [`EventParams::require_min_level`] by default.
pub const MIN_LEVEL: usize = 16;

/// Estimates with fewer effective samples than this are flagged.
pub const MIN_ESS: f64 = 30.0;

pub const DEFAULT_C0_GRID: [f64; 5] = [0.5, 1.0, 2.0, 5.0, 10.0];
pub const DEFAULT_DELTA_GRID: [f64; 4] = [0.05, 0.1, 0.25, 0.5];

/// Threshold `t`, the constants `C0`, `delta` of the events and the rate `rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventParams {
    pub t: f64,
    pub c0: f64,
    pub delta: f64,
    pub rho: f64,
    /// `ceil(log t / rho)`, at least 1.
    pub n_t: usize,
}

impl EventParams {
    pub fn new(t: f64, c0: f64, delta: f64, rho: f64) -> Result<Self> {
        for (name, v) in [("t", t), ("C0", c0), ("delta", delta), ("rho", rho)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        let n_t = ((t.ln() / rho).ceil().max(1.0)) as usize;
        Ok(EventParams {
            t,
            c0,
            delta,
            rho,
            n_t,
        })
    }

    pub fn with_constants(&self, c0: f64, delta: f64) -> Result<Self> {
        EventParams::new(self.t, c0, delta, self.rho)
    }

    pub fn log_t(&self) -> f64 {
        self.t.ln()
    }

    /// `[n_t - sqrt(n_t), n_t - sqrt(n_t)/2]`.
    pub fn window(&self) -> (f64, f64) {
        let n = self.n_t as f64;
        (n - n.sqrt(), n - n.sqrt() / 2.0)
    }

    /// Positive integer levels inside the closed window.
    pub fn window_levels(&self) -> Vec<usize> {
        let (lo, hi) = self.window();
        (lo.ceil().max(1.0) as usize..=hi.floor() as usize).collect()
    }

    /// `D = 1 + C0 / (1 - e^{-delta})`.
    pub fn d_const(&self) -> f64 {
        1.0 + self.c0 / (1.0 - (-self.delta).exp())
    }

    pub fn require_min_level(&self, min: usize) -> Result<()> {
        if self.n_t < min {
            return Err(Error::Domain(format!(
                "t = {} gives n_t = {} below the minimum {min}; raise t",
                self.t, self.n_t
            )));
        }
        Ok(())
    }
}

/// Marks along one path of length `n`: `log ||Pi*_k||` and `log |Z_{k+1}|`
/// for `k < n`, and `log |Pi*_n u|`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathMarks {
    pub log_norms: Vec<f64>,
    pub log_z: Vec<f64>,
    pub log_end: f64,
}

impl PathMarks {
    pub fn from_linear(norms: &[f64], z: &[f64], end: f64) -> Self {
        PathMarks {
            log_norms: norms.iter().map(|v| v.ln()).collect(),
            log_z: z.iter().map(|v| v.ln()).collect(),
            log_end: end.ln(),
        }
    }
}

pub(crate) fn v_holds(log_norms: &[f64], log_z: &[f64], log_end: f64, p: &EventParams) -> bool {
    let log_t = p.log_t();
    if !(log_end >= log_t) {
        return false;
    }
    let cap = p.c0.ln() + log_t;
    let n = log_norms.len();
    (0..n).all(|k| log_norms[k] + log_z[k].max(0.0) <= cap - (n - k) as f64 * p.delta)
}

/// Indicator of `V_{n,t}` on a marked path.
pub fn indicator_v(marks: &PathMarks, params: &EventParams, n: usize) -> Result<bool> {
    if marks.log_norms.len() < n || marks.log_z.len() < n {
        return Err(Error::Domain(format!(
            "path carries {} norm marks and {} Z marks; level {n} needs {n} of each",
            marks.log_norms.len(),
            marks.log_z.len()
        )));
    }
    Ok(v_holds(
        &marks.log_norms[..n],
        &marks.log_z[..n],
        marks.log_end,
        params,
    ))
}

/// `Z = Q + sum_{j=2}^N A_j X_j` for a node on the path, with `N >= 1`
/// (the path child exists) and `X_j` drawn from the pool.
pub fn sample_z<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    pool: &FixedPointPool<T>,
    rng: &mut R,
) -> Vector<T> {
    let n = loop {
        let n = sample_n(&spec.branching, rng);
        if n >= 1 {
            break n;
        }
    };
    let mut z = sample_q::<T, R>(&spec.q_law, spec.dimension, rng);
    for _ in 1..n {
        let a = sample_a::<T, R>(spec, rng);
        let y = a.mul_vec(pool.draw(rng));
        for (zi, yi) in z.iter_mut().zip(y) {
            *zi = *zi + yi;
        }
    }
    z
}

/// Marks of a simulated path with the running log likelihood ratio.
struct Trajectory {
    log_norms: Vec<f64>,
    log_z: Vec<f64>,
    s: Vec<f64>,
    log_w: Vec<f64>,
}

impl Trajectory {
    fn with_len(n: usize) -> Self {
        Trajectory {
            log_norms: vec![0.0; n + 1],
            log_z: vec![0.0; n],
            s: vec![0.0; n + 1],
            log_w: vec![0.0; n + 1],
        }
    }

    fn fill<T: Real, R: Rng + ?Sized>(
        &mut self,
        spec: &ModelSpec,
        sampler: &StepSampler<'_, T>,
        pool: &FixedPointPool<T>,
        u0: &[T],
        rng: &mut R,
    ) -> Result<()> {
        let n = self.log_z.len();
        let mut st = PathState::new(u0, spec.norm)?;
        let mut tr = ProductTracker::new(spec.dimension);
        for k in 0..n {
            let (m, lw) = sampler.draw(&st.u, rng)?;
            let z = sample_z(spec, pool, rng);
            self.log_z[k] = spec.norm.of(&z).f64().ln();
            st = st.step(&m)?;
            tr.push(&m)?;
            self.log_norms[k + 1] = tr.log_norm(spec.norm);
            self.s[k + 1] = st.s.f64();
            self.log_w[k + 1] = self.log_w[k] + lw;
        }
        Ok(())
    }

    fn v_at(&self, n: usize, p: &EventParams) -> bool {
        v_holds(&self.log_norms[..n], &self.log_z[..n], self.s[n], p)
    }
}

/// Estimates of `P(V_{n,t})` and `P(|Pi*_n u| >= t)` from the same paths.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct VEstimate {
    pub level: usize,
    pub v: Estimate,
    pub tail: Estimate,
    pub low_confidence: bool,
}

/// `P(V_{n,t})` for every `(params, level)` pair under common random numbers.
/// Result is indexed `[param][level]`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_v_table<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    u0: &[T],
    levels: &[usize],
    params: &[EventParams],
    reps: usize,
    sampling: Sampling<'_, T>,
    pool: &FixedPointPool<T>,
    rng: &mut R,
) -> Result<Vec<Vec<VEstimate>>> {
    let n_max = levels.iter().copied().max().unwrap_or(0);
    if levels.contains(&0) {
        return Err(Error::Domain("levels must be positive".into()));
    }
    if pool.d != spec.dimension {
        return Err(Error::Domain(format!(
            "pool dimension {} differs from model dimension {}",
            pool.d, spec.dimension
        )));
    }
    let cells = params.len() * levels.len();
    let key = StreamKey::from_rng(rng);
    let parts = chunked(
        key,
        reps,
        |stream, count| -> Result<Vec<[(MeanAcc, usize); 2]>> {
            let sampler = StepSampler::new(spec, sampling);
            let mut acc = vec![[(MeanAcc::default(), 0usize); 2]; cells];
            let mut path = Trajectory::with_len(n_max);
            for _ in 0..count {
                path.fill(spec, &sampler, pool, u0, stream)?;
                for (i, p) in params.iter().enumerate() {
                    for (j, &n) in levels.iter().enumerate() {
                        let w = path.log_w[n].exp();
                        let cell = &mut acc[i * levels.len() + j];
                        let v = path.v_at(n, p);
                        let tail = path.s[n] >= p.log_t();
                        cell[0].0.push(if v { w } else { 0.0 });
                        cell[0].1 += v as usize;
                        cell[1].0.push(if tail { w } else { 0.0 });
                        cell[1].1 += tail as usize;
                    }
                }
            }
            Ok(acc)
        },
    );
    let parts: Vec<Vec<[(MeanAcc, usize); 2]>> = parts.into_iter().collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let mut row = Vec::with_capacity(levels.len());
        for (j, &level) in levels.iter().enumerate() {
            let c = i * levels.len() + j;
            let v_parts: Vec<(MeanAcc, usize)> = parts.iter().map(|p| p[c][0]).collect();
            let t_parts: Vec<(MeanAcc, usize)> = parts.iter().map(|p| p[c][1]).collect();
            let v = Estimate::from_parts(&v_parts, reps);
            row.push(VEstimate {
                level,
                v,
                tail: Estimate::from_parts(&t_parts, reps),
                low_confidence: v.ess < MIN_ESS,
            });
        }
        out.push(row);
    }
    Ok(out)
}

/// `P(V_{n,t})`, naive or importance sampled; Z-marks come from `pool`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_pv<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    u0: &[T],
    n: usize,
    params: &EventParams,
    reps: usize,
    sampling: Sampling<'_, T>,
    pool: &FixedPointPool<T>,
    rng: &mut R,
) -> Result<VEstimate> {
    let t = estimate_v_table(spec, u0, &[n], &[*params], reps, sampling, pool, rng)?;
    Ok(t[0][0])
}

/// `P(S_n > log t)` for the walk started at `u0`.
pub fn estimate_walk_exceedance<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    u0: &[T],
    n: usize,
    log_t: f64,
    reps: usize,
    sampling: Sampling<'_, T>,
    rng: &mut R,
) -> Result<Estimate> {
    let key = StreamKey::from_rng(rng);
    let parts = chunked(key, reps, |stream, count| -> Result<(MeanAcc, usize)> {
        let sampler = StepSampler::new(spec, sampling);
        let mut acc = MeanAcc::default();
        let mut hits = 0;
        for _ in 0..count {
            let mut st = PathState::new(u0, spec.norm)?;
            let mut lw = 0.0;
            for _ in 0..n {
                let (m, w) = sampler.draw(&st.u, stream)?;
                st = st.step(&m)?;
                lw += w;
            }
            let hit = st.s.f64() > log_t;
            hits += hit as usize;
            acc.push(if hit { lw.exp() } else { 0.0 });
        }
        Ok((acc, hits))
    });
    let parts: Vec<(MeanAcc, usize)> = parts.into_iter().collect::<Result<_>>()?;
    Ok(Estimate::from_parts(&parts, reps))
}

/// Lengths of a pair of nodes: `p = |i|`, `q = |i'|`, `m = |i ^ i'|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairGeometry {
    pub p: usize,
    pub q: usize,
    pub m: usize,
}

impl PairGeometry {
    pub fn new(p: usize, q: usize, m: usize) -> Result<Self> {
        if !(m <= q && q <= p && m < p) {
            return Err(Error::Domain(format!(
                "pair geometry needs m <= q <= p and m < p, got p = {p}, q = {q}, m = {m}"
            )));
        }
        Ok(PairGeometry { p, q, m })
    }

    /// `q = m`: the shorter node is an ancestor of the longer one.
    pub fn is_ancestral(&self) -> bool {
        self.q == self.m
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct WEstimate {
    pub geometry: PairGeometry,
    pub estimate: Estimate,
    /// No hits: `upper` is a one-sided 95% bound and `estimate.value` is 0.
    pub one_sided: bool,
    pub upper: f64,
    pub low_confidence: bool,
}

impl WEstimate {
    /// Value entering the bound: the one-sided bound when there were no hits.
    pub fn conservative(&self) -> f64 {
        if self.one_sided {
            self.upper
        } else {
            self.estimate.value
        }
    }
}

fn walk<T: Real, R: Rng + ?Sized>(
    sampler: &StepSampler<'_, T>,
    mut st: PathState<T>,
    steps: usize,
    log_w: &mut f64,
    rng: &mut R,
) -> Result<PathState<T>> {
    for _ in 0..steps {
        let (m, w) = sampler.draw(&st.u, rng)?;
        st = st.step(&m)?;
        *log_w += w;
    }
    Ok(st)
}

/// `P(W_{i,i',t})` for nodes of the given geometry: a shared prefix of `m`
/// steps followed by independent continuations to lengths `p` and `q`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_pw<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    u0: &[T],
    geometry: PairGeometry,
    params: &EventParams,
    reps: usize,
    sampling: Sampling<'_, T>,
    rng: &mut R,
) -> Result<WEstimate> {
    let PairGeometry { p, q, m } = PairGeometry::new(geometry.p, geometry.q, geometry.m)?;
    let log_t = params.log_t();
    let cap = params.c0.ln() + log_t - params.delta * (p - m) as f64;
    let key = StreamKey::from_rng(rng);
    let parts = chunked(key, reps, |stream, count| -> Result<(MeanAcc, usize)> {
        let sampler = StepSampler::new(spec, sampling);
        let mut acc = MeanAcc::default();
        let mut hits = 0;
        for _ in 0..count {
            let mut lw = 0.0;
            let mut st = PathState::new(u0, spec.norm)?;
            let mut tr = ProductTracker::new(spec.dimension);
            for _ in 0..m {
                let (mat, w) = sampler.draw(&st.u, stream)?;
                st = st.step(&mat)?;
                tr.push(&mat)?;
                lw += w;
            }
            if tr.log_norm_adjoint(spec.norm) > cap {
                acc.push(0.0);
                continue;
            }
            let end_p = walk(&sampler, st.clone(), p - m, &mut lw, stream)?;
            let end_q = walk(&sampler, st, q - m, &mut lw, stream)?;
            let hit = end_p.s.f64() > log_t && end_q.s.f64() > log_t;
            hits += hit as usize;
            acc.push(if hit { lw.exp() } else { 0.0 });
        }
        Ok((acc, hits))
    });
    let parts: Vec<(MeanAcc, usize)> = parts.into_iter().collect::<Result<_>>()?;
    let estimate = Estimate::from_parts(&parts, reps);
    let one_sided = estimate.hits == 0;
    Ok(WEstimate {
        geometry: PairGeometry { p, q, m },
        estimate,
        one_sided,
        upper: if one_sided {
            3.0 / reps as f64
        } else {
            estimate.value + 1.645 * estimate.se
        },
        low_confidence: estimate.ess < MIN_ESS,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstantsRow {
    pub c0: f64,
    pub delta: f64,
    /// Range of `log(P(V_n) / k(beta)^n)` over the window levels.
    pub spread: f64,
    pub min_pv: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstantsChoice {
    pub params: EventParams,
    pub spread: f64,
    pub table: Vec<ConstantsRow>,
}

/// Grid search for `(C0, delta)` making `P(V_n) / k(beta)^n` most nearly
/// constant across the window levels. All candidates share the same paths.
#[allow(clippy::too_many_arguments)]
pub fn choose_c0_delta<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    u0: &[T],
    base: &EventParams,
    k_beta: f64,
    c0_grid: &[f64],
    delta_grid: &[f64],
    reps: usize,
    sampling: Sampling<'_, T>,
    pool: &FixedPointPool<T>,
    rng: &mut R,
) -> Result<ConstantsChoice> {
    let levels = base.window_levels();
    if levels.is_empty() {
        return Err(Error::Domain(format!(
            "level window of n_t = {} holds no positive level",
            base.n_t
        )));
    }
    let mut cands = Vec::new();
    for &c0 in c0_grid {
        for &delta in delta_grid {
            cands.push(base.with_constants(c0, delta)?);
        }
    }
    let table = estimate_v_table(spec, u0, &levels, &cands, reps, sampling, pool, rng)?;
    let mut rows = Vec::with_capacity(cands.len());
    let mut best: Option<(usize, f64)> = None;
    for (i, (cand, ests)) in cands.iter().zip(&table).enumerate() {
        let logs: Vec<f64> = ests
            .iter()
            .map(|e| e.v.value.ln() - e.level as f64 * k_beta.ln())
            .collect();
        let spread = if logs.iter().all(|v| v.is_finite()) {
            let hi = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = logs.iter().cloned().fold(f64::INFINITY, f64::min);
            hi - lo
        } else {
            f64::INFINITY
        };
        let min_pv = ests.iter().map(|e| e.v.value).fold(f64::INFINITY, f64::min);
        if spread.is_finite() && best.is_none_or(|(_, b)| spread < b) {
            best = Some((i, spread));
        }
        rows.push(ConstantsRow {
            c0: cand.c0,
            delta: cand.delta,
            spread,
            min_pv,
        });
    }
    let (i, spread) = best.ok_or_else(|| {
        Error::Domain("every (C0, delta) candidate has a level with no V hits".into())
    })?;
    Ok(ConstantsChoice {
        params: cands[i],
        spread,
        table: rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Norm;
    use crate::model::{Branching, Ensemble, GeometricClass, QLaw};
    use crate::rng::seeded;

    fn ref1() -> ModelSpec {
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

    #[test]
    fn indicator_matches_direct_evaluation() {
        let p = EventParams::new(1.0, 10.0, 0.1, 0.5).unwrap();
        let m = PathMarks::from_linear(&[1.0], &[0.3], 1.5);
        assert!(indicator_v(&m, &p, 1).unwrap());
        let m = PathMarks::from_linear(&[1.0], &[0.3], 0.5);
        assert!(!indicator_v(&m, &p, 1).unwrap());
        let tiny = EventParams::new(1.0, 1e-9, 0.1, 0.5).unwrap();
        let m = PathMarks::from_linear(&[1.0], &[0.3], 1.5);
        assert!(!indicator_v(&m, &tiny, 1).unwrap());
        assert!(matches!(indicator_v(&m, &p, 2), Err(Error::Domain(_))));
    }

    #[test]
    fn window_and_constants() {
        let p = EventParams::new((25.0f64 * 0.5).exp(), 1.0, 0.25, 0.5).unwrap();
        assert_eq!(p.n_t, 25);
        assert_eq!(p.window_levels(), vec![20, 21, 22]);
        assert!((p.d_const() - (1.0 + 1.0 / (1.0 - (-0.25f64).exp()))).abs() < 1e-15);
        assert!(p.require_min_level(MIN_LEVEL).is_ok());
        assert!(EventParams::new(10.0, 1.0, 0.1, 0.5)
            .unwrap()
            .require_min_level(MIN_LEVEL)
            .is_err());
        assert!(EventParams::new(10.0, 0.0, 0.1, 0.5).is_err());
    }

    #[test]
    fn v_is_contained_in_the_tail_event() {
        let spec = ref1();
        let pool = FixedPointPool::constant(1, 16, &[18.0]);
        let p = EventParams::new(3.0, 5.0, 0.1, 0.55).unwrap();
        let t = estimate_v_table(
            &spec,
            &[1.0],
            &[2, 4],
            &[p],
            4000,
            Sampling::Naive,
            &pool,
            &mut seeded(1),
        )
        .unwrap();
        for e in &t[0] {
            assert!(e.v.value <= e.tail.value);
            assert!(e.v.hits <= e.tail.hits);
        }
    }

    #[test]
    fn vacuous_w_constraints_give_probability_one() {
        let spec = ref1();
        let p = EventParams::new(1e-6, 1e12, 0.01, 0.55).unwrap();
        let g = PairGeometry::new(4, 3, 1).unwrap();
        let w = estimate_pw(&spec, &[1.0], g, &p, 500, Sampling::Naive, &mut seeded(2)).unwrap();
        assert_eq!(w.estimate.value, 1.0);
        assert!(!w.one_sided);
    }

    #[test]
    fn zero_hits_report_a_one_sided_bound() {
        let spec = ref1();
        let p = EventParams::new(1e12, 1.0, 0.1, 0.55).unwrap();
        let g = PairGeometry::new(3, 2, 1).unwrap();
        let w = estimate_pw(&spec, &[1.0], g, &p, 300, Sampling::Naive, &mut seeded(3)).unwrap();
        assert!(w.one_sided);
        assert_eq!(w.conservative(), 0.01);
        assert!(PairGeometry::new(3, 4, 1).is_err());
        assert!(PairGeometry::new(3, 3, 3).is_err());
    }
}
