//! Assembly of the lower bound `kappa * sum P(V) - sum P(W)` over the sparse
//! subtree, and a direct simulation of the union it bounds.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cones::ConeFamily;
use super::events::{
    estimate_pw, estimate_v_table, v_holds, EventParams, PairGeometry, VEstimate, WEstimate,
    MIN_ESS,
};
use super::subtree::{
    build_sparse_subtree, expected_w_count, pair_count, pair_geometries, SubtreeParams,
};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::matwalk::{csv_err, Estimate, PathState, ProductTracker, Sampling};
use crate::model::ModelSpec;
use crate::rng::{chunked, MeanAcc, StreamKey};
use crate::scalar::Real;
use crate::spectral::SpectralResult;
use crate::wbp::{grow_tree, FixedPointPool, NodeId, WeightedTree};

/// One-sided normal quantile for the positivity verdict.
const Z95: f64 = 1.645;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budgets {
    pub v_reps: usize,
    pub w_reps: usize,
    pub tilted: bool,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            v_reps: 20_000,
            w_reps: 4_000,
            tilted: true,
        }
    }
}

/// Where `kappa` comes from.
#[derive(Debug, Clone, Copy)]
pub enum Kappa<'a> {
    Cones(&'a ConeFamily),
    Fixed(f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct VRow {
    pub level: usize,
    /// `(E N)^{k - C1} P(N >= 1)^{C1}`.
    pub expected_count: f64,
    /// `(E N)^{k - C1}`.
    pub tree_count: f64,
    pub estimate: VEstimate,
    pub term: f64,
    pub term_se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct WRow {
    pub p: usize,
    pub q: usize,
    pub m: usize,
    pub pair_count: f64,
    pub estimate: WEstimate,
    pub term: f64,
    pub term_se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertVerdict {
    Positive,
    NotPositive,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    pub t: f64,
    pub u: Vec<f64>,
    pub c0: f64,
    pub delta: f64,
    pub c1: usize,
    pub rho: f64,
    pub beta: f64,
    pub k_beta: f64,
    pub n_t: usize,
    pub window: (f64, f64),
    pub levels: Vec<usize>,
    pub nominal_level_count: f64,
    pub method: String,
    pub d_const: f64,
    pub kappa: f64,
    pub kappa_se: f64,
    pub v_rows: Vec<VRow>,
    pub v_term: f64,
    pub v_term_se: f64,
    pub w_rows: Vec<WRow>,
    pub w_term: f64,
    pub w_term_se: f64,
    pub bound: f64,
    pub bound_se: f64,
    pub verdict: CertVerdict,
    pub low_confidence: bool,
    pub flags: Vec<String>,
    /// Window extremes of `P(V_n) sqrt(n_t) t^beta / k(beta)^n`.
    pub d1: Option<f64>,
    pub d2: Option<f64>,
    /// Fit of `P(W) t^beta sqrt(n_t) / k(beta)^{p+q-m} = C2 e^{-chi (p-m)}`.
    pub c2: Option<f64>,
    pub chi: Option<f64>,
    /// `t^beta` times the V-term.
    pub scaled_v_term: f64,
    /// `k(beta)^{C1} / (2 C1)`.
    pub shape: f64,
    /// `scaled_v_term / shape`.
    pub d1_fit: f64,
}

fn fit_line(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Some((my - slope * mx, slope))
}

/// Evaluates the bound at fixed `(t, C0, delta, C1)`. The V-term uses the
/// exact expected subtree counts; the W-term sums exact pair counts times
/// per-geometry estimates, using the one-sided bound where no hits occurred.
#[allow(clippy::too_many_arguments)]
pub fn lower_bound<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    u0: &[T],
    ep: &EventParams,
    sp: &SubtreeParams,
    budgets: &Budgets,
    spectral: &SpectralResult<T>,
    pool: &FixedPointPool<T>,
    kappa: Kappa<'_>,
    rng: &mut R,
) -> Result<CertificateReport> {
    if sp.levels.is_empty() {
        return Err(Error::Domain(format!(
            "no multiple of C1 = {} lies in the level window of n_t = {}",
            sp.c1, ep.n_t
        )));
    }
    sp.check_window(ep)?;
    let (kappa, kappa_se) = match kappa {
        Kappa::Cones(c) => {
            if (c.d_const - ep.d_const()).abs() > 1e-12 * ep.d_const() {
                return Err(Error::Domain(
                    "cone family was built for different (C0, delta)".into(),
                ));
            }
            (c.kappa, c.kappa_se)
        }
        Kappa::Fixed(k) => (k, 0.0),
    };
    let beta = spectral.s;
    let k_beta = spectral.k.f64();
    let sampling = if budgets.tilted {
        Sampling::Tilted(spectral)
    } else {
        Sampling::Naive
    };
    let t_beta = ep.t.powf(beta);
    let sqrt_nt = (ep.n_t as f64).sqrt();
    let mut flags = Vec::new();

    let levels = ep.window_levels();
    let table = estimate_v_table(
        spec,
        u0,
        &levels,
        &[*ep],
        budgets.v_reps,
        sampling,
        pool,
        rng,
    )?;
    let by_level: HashMap<usize, VEstimate> = table[0].iter().map(|e| (e.level, *e)).collect();
    let mut v_rows = Vec::new();
    for &l in &sp.levels {
        let e = by_level[&l];
        let (tree_count, expected_count) = expected_w_count(&spec.branching, sp.c1, l);
        if e.low_confidence {
            flags.push(format!(
                "P(V) at level {l}: effective sample size {:.1}",
                e.v.ess
            ));
        }
        v_rows.push(VRow {
            level: l,
            expected_count,
            tree_count,
            estimate: e,
            term: expected_count * e.v.value,
            term_se: expected_count * e.v.se,
        });
    }
    let v_term: f64 = v_rows.iter().map(|r| r.term).sum();
    // Levels share paths, so their errors are summed rather than pooled.
    let v_term_se: f64 = v_rows.iter().map(|r| r.term_se).sum();

    let mut w_rows = Vec::new();
    for g in pair_geometries(&spec.branching, sp) {
        let count = pair_count(&spec.branching, sp.c1, g);
        let e = estimate_pw(spec, u0, g, ep, budgets.w_reps, sampling, rng)?;
        let se = if e.one_sided { e.upper } else { e.estimate.se };
        w_rows.push(WRow {
            p: g.p,
            q: g.q,
            m: g.m,
            pair_count: count,
            estimate: e,
            term: count * e.conservative(),
            term_se: count * se,
        });
    }
    let weak = w_rows
        .iter()
        .filter(|r| r.estimate.low_confidence && !r.estimate.one_sided)
        .count();
    if weak > 0 {
        flags.push(format!(
            "P(W): {weak} of {} geometries have effective sample size below {MIN_ESS}",
            w_rows.len()
        ));
    }
    let one_sided = w_rows.iter().filter(|r| r.estimate.one_sided).count();
    if one_sided > 0 {
        flags.push(format!(
            "P(W): {one_sided} geometries had no hits and enter at their one-sided bound"
        ));
    }
    let w_term: f64 = w_rows.iter().map(|r| r.term).sum();
    let w_term_se = w_rows.iter().map(|r| r.term_se.powi(2)).sum::<f64>().sqrt();

    let bound = kappa * v_term - w_term;
    let bound_se =
        ((kappa * v_term_se).powi(2) + (v_term * kappa_se).powi(2) + w_term_se.powi(2)).sqrt();
    let verdict = if bound - Z95 * bound_se > 0.0 {
        CertVerdict::Positive
    } else {
        CertVerdict::NotPositive
    };

    let ds: Vec<f64> = table[0]
        .iter()
        .filter(|e| e.v.value > 0.0)
        .map(|e| e.v.value * sqrt_nt * t_beta / k_beta.powi(e.level as i32))
        .collect();
    let d1 = ds.iter().cloned().reduce(f64::min);
    let d2 = ds.iter().cloned().reduce(f64::max);
    let (xs, ys): (Vec<f64>, Vec<f64>) = w_rows
        .iter()
        .filter(|r| !r.estimate.one_sided && r.estimate.estimate.value > 0.0)
        .map(|r| {
            let scale = k_beta.powi((r.p + r.q - r.m) as i32);
            (
                (r.p - r.m) as f64,
                (r.estimate.estimate.value * t_beta * sqrt_nt / scale).ln(),
            )
        })
        .unzip();
    let (c2, chi) = match fit_line(&xs, &ys) {
        Some((a, b)) => (Some(a.exp()), Some(-b)),
        None => (None, None),
    };
    let scaled_v_term = t_beta * v_term;
    let shape = k_beta.powi(sp.c1 as i32) / (2.0 * sp.c1 as f64);
    Ok(CertificateReport {
        t: ep.t,
        u: u0.iter().map(|v| v.f64()).collect(),
        c0: ep.c0,
        delta: ep.delta,
        c1: sp.c1,
        rho: ep.rho,
        beta,
        k_beta,
        n_t: ep.n_t,
        window: ep.window(),
        levels: sp.levels.clone(),
        nominal_level_count: sp.nominal_count(ep),
        method: if budgets.tilted { "tilted" } else { "naive" }.into(),
        d_const: ep.d_const(),
        kappa,
        kappa_se,
        v_rows,
        v_term,
        v_term_se,
        w_rows,
        w_term,
        w_term_se,
        bound,
        bound_se,
        verdict,
        low_confidence: !flags.is_empty(),
        flags,
        d1,
        d2,
        c2,
        chi,
        scaled_v_term,
        shape,
        d1_fit: scaled_v_term / shape,
    })
}

/// Whether the event `V~_i` holds on a materialised tree: `V_i` together with
/// `X_i` in some cap `Omega_j`, `|X_i| > D / eps_j` and `Pi*_i u` in `Omega_j*`.
#[allow(clippy::too_many_arguments)]
fn tilde_v<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    tree: &WeightedTree<T>,
    id: &NodeId,
    u0: &[T],
    ep: &EventParams,
    cones: &ConeFamily,
    xs: &mut HashMap<NodeId, Vector<T>>,
    pool: &FixedPointPool<T>,
    rng: &mut R,
) -> Result<bool> {
    let mut x_of = |v: NodeId, rng: &mut R| -> Vector<T> {
        xs.entry(v)
            .or_insert_with(|| pool.draw(rng).iter().copied().collect())
            .clone()
    };
    let n = id.len();
    let mut st = PathState::new(u0, spec.norm)?;
    let mut tr = ProductTracker::new(spec.dimension);
    let mut log_norms = Vec::with_capacity(n);
    let mut log_z = Vec::with_capacity(n);
    for k in 0..n {
        let node = id.prefix(k);
        let fam = tree.require(&node)?;
        let next = id.0[k];
        let mut z = fam.q.clone();
        for j in 1..=fam.n as u32 {
            if j == next {
                continue;
            }
            let y = fam.a[j as usize - 1].mul_vec(&x_of(node.child(j), rng));
            for (zi, yi) in z.iter_mut().zip(y) {
                *zi = *zi + yi;
            }
        }
        log_norms.push(tr.log_norm(spec.norm));
        log_z.push(spec.norm.of(&z).f64().ln());
        let m = fam.a[next as usize - 1].transpose();
        st = st.step(&m)?;
        tr.push(&m)?;
    }
    if !v_holds(&log_norms, &log_z, st.s.f64(), ep) {
        return Ok(false);
    }
    let x = x_of(id.clone(), rng);
    let Some(cap) = cones.locate(&x) else {
        return Ok(false);
    };
    let c = &cones.caps[cap];
    if c.assigned == 0 || !(spec.norm.of(&x).f64() > cones.d_const / c.epsilon) {
        return Ok(false);
    }
    let z: Vec<f64> = st.u.iter().map(|v| v.f64()).collect();
    Ok(cones.dual_contains(cap, &z))
}

/// `P(union of V~_i over the sparse subtree)` by growing whole trees to the
/// deepest level of `L_t`; every node receives its own pool draw for `X`.
#[allow(clippy::too_many_arguments)]
pub fn direct_union_probability<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    u0: &[T],
    ep: &EventParams,
    sp: &SubtreeParams,
    cones: &ConeFamily,
    pool: &FixedPointPool<T>,
    reps: usize,
    rng: &mut R,
) -> Result<Estimate> {
    let key = StreamKey::from_rng(rng);
    let parts = chunked(key, reps, |stream, count| -> Result<(MeanAcc, usize)> {
        let mut acc = MeanAcc::default();
        let mut hits = 0;
        for _ in 0..count {
            let tree: WeightedTree<T> = grow_tree(spec, sp.max_level(), stream)?;
            let nodes = build_sparse_subtree(&tree.shape, sp)?;
            let mut xs = HashMap::new();
            let mut hit = false;
            for id in &nodes {
                if tilde_v(spec, &tree, id, u0, ep, cones, &mut xs, pool, stream)? {
                    hit = true;
                    break;
                }
            }
            hits += hit as usize;
            acc.push(hit as u8 as f64);
        }
        Ok((acc, hits))
    });
    let parts: Vec<(MeanAcc, usize)> = parts.into_iter().collect::<Result<_>>()?;
    Ok(Estimate::from_parts(&parts, reps))
}

pub fn write_v_csv(path: &Path, report: &CertificateReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["level", "estimate", "se", "method"])
        .map_err(csv_err)?;
    for r in &report.v_rows {
        w.write_record([
            r.level.to_string(),
            format!("{:e}", r.estimate.v.value),
            format!("{:e}", r.estimate.v.se),
            report.method.clone(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_w_csv(path: &Path, report: &CertificateReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["p", "q", "m", "estimate", "se", "method"])
        .map_err(csv_err)?;
    for r in &report.w_rows {
        let (est, se, method) = if r.estimate.one_sided {
            (
                r.estimate.upper,
                f64::NAN,
                format!("{}-upper", report.method),
            )
        } else {
            (
                r.estimate.estimate.value,
                r.estimate.estimate.se,
                report.method.clone(),
            )
        };
        w.write_record([
            r.p.to_string(),
            r.q.to_string(),
            r.m.to_string(),
            format!("{est:e}"),
            format!("{se:e}"),
            method,
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Pair geometry of a report row.
impl WRow {
    pub fn geometry(&self) -> PairGeometry {
        PairGeometry {
            p: self.p,
            q: self.q,
            m: self.m,
        }
    }
}
