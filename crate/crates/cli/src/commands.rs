use std::fs;
use std::path::PathBuf;

use fixtail::certificate::{
    choose_c0_delta, cone_family, lower_bound, write_v_csv, write_w_csv, CertVerdict,
    CertificateReport, ConeFamily, ConstantsChoice, EventParams, Kappa, SubtreeParams,
};
use fixtail::matwalk::Sampling;
use fixtail::model::{validate, ValidationReport};
use fixtail::rng::{Stream, StreamKey};
use fixtail::spectral::{compute_spectrum, solve_alpha_beta, SpectralResult, TailIndexSolution};
use fixtail::tails::{quantile, tail_report, write_tail_csv, TailReport};
use fixtail::wbp::{read_pool_bin, sample_fixed_point, write_pool_bin, FixedPointPool};
use fixtail::{Error, ModelSpec};
use serde::{Deserialize, Serialize};

use crate::config::Loaded;
use crate::output::{read_json, stamp_csv, write_csv, write_json, Meta};
use crate::{CliError, Command, VERSION};

// Stream kinds. Commands that solve for the tail index share one kind so
// they agree with `solve-index`.
const KIND_VALIDATE: u64 = 1;
const KIND_SPECTRUM: u64 = 2;
const KIND_SOLVE: u64 = 3;
const KIND_SIMULATE: u64 = 4;
const KIND_TAILS: u64 = 5;
const KIND_CERTIFICATE: u64 = 6;

/// Tail index used by `validate` when none is configured and solving fails.
const FALLBACK_BETA: f64 = 2.0;

pub const SOLVE_JSON: &str = "solve_index.json";
pub const SPECTRAL_JSON: &str = "spectral_beta.json";
pub const POOL_BIN: &str = "pool.bin";
pub const POOL_META: &str = "pool.meta.json";

struct Ctx<'a> {
    loaded: &'a Loaded,
    spec: &'a ModelSpec,
    out: PathBuf,
    meta: Meta,
}

impl Ctx<'_> {
    fn stream(&self, kind: u64) -> Stream {
        StreamKey::new(self.loaded.config.seed, kind).stream(0)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

pub fn dispatch(cmd: Command, loaded: &Loaded) -> Result<(), CliError> {
    let out = loaded.out_dir();
    fs::create_dir_all(&out).map_err(Error::from)?;
    let ctx = Ctx {
        loaded,
        spec: &loaded.spec,
        out,
        meta: Meta {
            version: VERSION.to_string(),
            config_sha256: loaded.sha256.clone(),
            model_fingerprint: loaded.spec.fingerprint(),
            seed: loaded.config.seed,
            command: cmd.name().to_string(),
        },
    };
    match cmd {
        Command::Validate => cmd_validate(&ctx),
        Command::Spectrum => cmd_spectrum(&ctx),
        Command::SolveIndex => cmd_solve_index(&ctx),
        Command::Simulate => cmd_simulate(&ctx),
        Command::Tails => cmd_tails(&ctx),
        Command::Certificate => cmd_certificate(&ctx),
    }
}

fn solve(ctx: &Ctx) -> Result<(TailIndexSolution, SpectralResult<f64>), Error> {
    let c = &ctx.loaded.config;
    solve_alpha_beta::<f64, _>(
        ctx.spec,
        c.solve_index.s_max,
        c.solve_index.tol,
        &c.spectral,
        &mut ctx.stream(KIND_SOLVE),
    )
}

/// Solver output from a previous `solve-index` run on the same model, if any.
fn stored_solution(ctx: &Ctx) -> Option<(TailIndexSolution, SpectralResult<f64>)> {
    let sol = read_json::<TailIndexSolution>(&ctx.path(SOLVE_JSON)).ok()?;
    let spec = read_json::<SpectralResult<f64>>(&ctx.path(SPECTRAL_JSON)).ok()?;
    let fp = &ctx.meta.model_fingerprint;
    (&sol.meta.model_fingerprint == fp && &spec.meta.model_fingerprint == fp)
        .then_some((sol.result, spec.result))
}

fn direction(u: &Option<Vec<f64>>, d: usize) -> Result<Vec<f64>, CliError> {
    match u {
        Some(u) if u.len() != d => Err(CliError::Config(format!(
            "direction u has {} coordinates, the model has dimension {d}",
            u.len()
        ))),
        Some(u) if u.iter().all(|&v| v == 0.0) => {
            Err(CliError::Config("direction u must be nonzero".into()))
        }
        Some(u) => Ok(u.clone()),
        None => {
            let mut e = vec![0.0; d];
            e[0] = 1.0;
            Ok(e)
        }
    }
}

fn load_pool(ctx: &Ctx, configured: &Option<PathBuf>) -> Result<FixedPointPool<f64>, CliError> {
    let path = match configured {
        Some(p) => ctx.loaded.resolve(p),
        None => ctx.path(POOL_BIN),
    };
    if !path.exists() {
        return Err(CliError::Config(format!(
            "pool file {} does not exist",
            path.display()
        )));
    }
    let pool = read_pool_bin::<f64>(&path)?;
    if pool.d != ctx.spec.dimension {
        return Err(CliError::Config(format!(
            "pool {} has dimension {}, the model has {}",
            path.display(),
            pool.d,
            ctx.spec.dimension
        )));
    }
    let sidecar = path.with_file_name(
        path.file_stem()
            .map(|s| format!("{}.meta.json", s.to_string_lossy()))
            .unwrap_or_else(|| POOL_META.into()),
    );
    if let Ok(env) = read_json::<serde_json::Value>(&sidecar) {
        if env.meta.model_fingerprint != ctx.meta.model_fingerprint {
            return Err(CliError::Config(format!(
                "pool {} was simulated from model {}, not {}",
                path.display(),
                env.meta.model_fingerprint,
                ctx.meta.model_fingerprint
            )));
        }
    }
    Ok(pool)
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

#[derive(Serialize)]
struct ValidateResult<'a> {
    beta_hat: f64,
    beta_hat_source: &'a str,
    report: ValidationReport,
}

fn cmd_validate(ctx: &Ctx) -> Result<(), CliError> {
    let v = &ctx.loaded.config.validate;
    let (beta_hat, source) = match v.beta_hat {
        Some(b) => (b, "config"),
        None => match stored_solution(ctx) {
            Some((sol, _)) => (sol.beta, SOLVE_JSON),
            None => match solve(ctx) {
                Ok((sol, _)) => (sol.beta, "solved"),
                Err(_) => (FALLBACK_BETA, "fallback"),
            },
        },
    };
    let report = match validate::<f64, _>(
        ctx.spec,
        beta_hat,
        v.eps,
        v.reps,
        &mut ctx.stream(KIND_VALIDATE),
    ) {
        Ok(r) => r,
        Err(Error::ClassViolation(msg)) => return Err(CliError::ValidationFailed(msg)),
        Err(e) => return Err(e.into()),
    };
    let failed: Vec<String> = report
        .conditions
        .iter()
        .filter(|c| c.verdict == fixtail::model::Verdict::Fail)
        .map(|c| format!("{}: {}", c.name, c.evidence))
        .collect();
    write_json(
        &ctx.path("validate.json"),
        &ctx.meta,
        &ValidateResult {
            beta_hat,
            beta_hat_source: source,
            report,
        },
    )?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::ValidationFailed(failed.join("; ")))
    }
}

#[derive(Serialize)]
struct SpectrumRow {
    s: f64,
    /// `None` where the family has no finite moment of order `s`.
    k: Option<f64>,
    m: Option<f64>,
    se: Option<f64>,
}

#[derive(Serialize)]
struct SpectrumResult {
    rows: Vec<SpectrumRow>,
    spectra: Vec<SpectralResult<f64>>,
}

fn cmd_spectrum(ctx: &Ctx) -> Result<(), CliError> {
    let c = &ctx.loaded.config;
    let key = StreamKey::new(c.seed, KIND_SPECTRUM);
    let en = ctx.spec.mean_n();
    let detail = |s: f64| c.spectrum.detail.is_empty() || c.spectrum.detail.contains(&s);
    let mut rows = Vec::new();
    let mut spectra = Vec::new();
    for &s in &c.spectrum.s_grid {
        if !ctx.spec.ensemble.moment_finite(s) {
            rows.push(SpectrumRow {
                s,
                k: None,
                m: None,
                se: None,
            });
            continue;
        }
        // same stream at every s: common random numbers along the grid
        let r: SpectralResult<f64> =
            compute_spectrum(ctx.spec, s, &c.spectral, &mut key.stream(0))?;
        rows.push(SpectrumRow {
            s,
            k: Some(r.k),
            m: Some(en * r.k),
            se: Some(en * r.k_se),
        });
        if detail(s) {
            spectra.push(r);
        }
    }
    let opt = |x: Option<f64>| x.map_or_else(|| "NA".to_string(), num);
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![num(r.s), opt(r.k), opt(r.m), opt(r.se)])
        .collect();
    let header = ["s", "k", "m", "se"].map(String::from);
    write_csv(&ctx.path("spectrum.csv"), &ctx.meta, &header, &table)?;
    write_json(
        &ctx.path("spectrum.json"),
        &ctx.meta,
        &SpectrumResult { rows, spectra },
    )
}

fn cmd_solve_index(ctx: &Ctx) -> Result<(), CliError> {
    let (sol, at_beta) = solve(ctx)?;
    write_json(&ctx.path(SOLVE_JSON), &ctx.meta, &sol)?;
    write_json(&ctx.path(SPECTRAL_JSON), &ctx.meta, &at_beta)
}

#[derive(Serialize, Deserialize)]
pub struct PoolSummary {
    pub d: usize,
    pub count: usize,
    pub generation: u64,
    pub converged_at: Option<u64>,
    pub degenerate: bool,
    pub mean: Vec<f64>,
}

fn cmd_simulate(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.loaded.config.simulate;
    let pool: FixedPointPool<f64> =
        sample_fixed_point(ctx.spec, cfg, &mut ctx.stream(KIND_SIMULATE))?;
    write_pool_bin(&ctx.path(POOL_BIN), &pool)?;
    let summary = PoolSummary {
        d: pool.d,
        count: pool.len(),
        generation: pool.generation,
        converged_at: pool.converged_at,
        degenerate: pool.degenerate,
        mean: pool.mean(),
    };
    write_json(&ctx.path(POOL_META), &ctx.meta, &summary)?;
    let mut header = vec!["generation".to_string(), "drift".to_string()];
    header.extend((1..=pool.d).map(|i| format!("mean{i}")));
    header.extend((1..=9).map(|i| format!("decile{i}")));
    let rows: Vec<Vec<String>> = pool
        .history
        .iter()
        .map(|g| {
            let mut r = vec![g.generation.to_string(), num(g.drift)];
            r.extend(g.mean.iter().map(|&v| num(v)));
            r.extend(g.deciles.iter().map(|&v| num(v)));
            r
        })
        .collect();
    write_csv(&ctx.path("simulate.csv"), &ctx.meta, &header, &rows)?;
    if pool.degenerate {
        return Err(Error::Degenerate(format!(
            "after {} generations every pool member equals {:?}; the fixed point is a point mass",
            pool.generation,
            pool.row(0)
        ))
        .into());
    }
    Ok(())
}

#[derive(Serialize)]
struct TailsResult<'a> {
    beta: f64,
    beta_source: &'a str,
    verdict: &'a str,
    report: TailReport,
}

fn cmd_tails(ctx: &Ctx) -> Result<(), CliError> {
    let c = &ctx.loaded.config.tails;
    let pool = load_pool(ctx, &c.pool)?;
    let (beta, source) = match c.beta {
        Some(b) => (b, "config"),
        None => match read_json::<TailIndexSolution>(&ctx.path(SOLVE_JSON)) {
            Ok(env) if env.meta.model_fingerprint == ctx.meta.model_fingerprint => {
                (env.result.beta, SOLVE_JSON)
            }
            _ => {
                return Err(CliError::Config(
                    "tails needs `beta` in the config or a solve_index.json for this model".into(),
                ))
            }
        },
    };
    let u = direction(&c.u, pool.d)?;
    let window = match (c.t_lo, c.t_hi) {
        (Some(lo), Some(hi)) => (lo, hi),
        (None, None) => {
            if !(0.0 < c.q_lo && c.q_lo < c.q_hi && c.q_hi < 1.0) {
                return Err(CliError::Config(format!(
                    "need 0 < q_lo < q_hi < 1, got {} and {}",
                    c.q_lo, c.q_hi
                )));
            }
            let mut proj = pool.projections(&u);
            proj.sort_by(f64::total_cmp);
            (quantile(&proj, c.q_lo), quantile(&proj, c.q_hi))
        }
        _ => {
            return Err(CliError::Config(
                "set both t_lo and t_hi, or neither".into(),
            ))
        }
    };
    let report = tail_report(
        &pool,
        &u,
        beta,
        Some(window),
        &c.flatness,
        &mut ctx.stream(KIND_TAILS),
    )?;
    let supported = report.flatness.flat && report.flatness.min_lower_95 > 0.0;
    let verdict = if supported {
        "positivity supported"
    } else {
        "positivity not supported"
    };
    let csv = ctx.path("tails.csv");
    write_tail_csv(&csv, &report.flatness.rows)?;
    stamp_csv(&csv, &ctx.meta)?;
    write_json(
        &ctx.path("tails.json"),
        &ctx.meta,
        &TailsResult {
            beta,
            beta_source: source,
            verdict,
            report,
        },
    )
}

#[derive(Serialize)]
struct Skipped {
    c1: usize,
    reason: String,
}

#[derive(Serialize)]
struct CertificateResult<'a> {
    t: f64,
    t_source: &'a str,
    u: Vec<f64>,
    empirical_tail: f64,
    empirical_tail_se: f64,
    spectral_source: &'a str,
    alpha: f64,
    beta: f64,
    rho: f64,
    k_beta: f64,
    c0: f64,
    delta: f64,
    /// `C1` of the report with the largest one-sided lower confidence bound.
    chosen_c1: Option<usize>,
    verdict: Option<CertVerdict>,
    constants: Option<ConstantsChoice>,
    cones: Option<ConeFamily>,
    reports: Vec<CertificateReport>,
    skipped: Vec<Skipped>,
}

fn cmd_certificate(ctx: &Ctx) -> Result<(), CliError> {
    let c = &ctx.loaded.config.certificate;
    let pool = load_pool(ctx, &c.pool)?;
    let u = direction(&c.u, pool.d)?;
    let (sol, spectral, spectral_source) = match stored_solution(ctx) {
        Some((s, r)) => (s, r, SOLVE_JSON),
        None => {
            let (s, r) = solve(ctx)?;
            (s, r, "solved")
        }
    };
    let mut proj = pool.projections(&u);
    proj.sort_by(f64::total_cmp);
    let (t, t_source) = match c.t {
        Some(t) => (t, "config"),
        None => (quantile(&proj, c.t_quantile), "pool quantile"),
    };
    let n = proj.len() as f64;
    let p_hat = proj.iter().filter(|&&x| x > t).count() as f64 / n;
    let empirical_tail_se = (p_hat * (1.0 - p_hat) / n).sqrt();

    let base = EventParams::new(t, c.c0.unwrap_or(1.0), c.delta.unwrap_or(0.1), sol.rho)?;
    base.require_min_level(c.min_level)?;
    let key = StreamKey::new(ctx.loaded.config.seed, KIND_CERTIFICATE);
    let sampling = if c.budgets.tilted {
        Sampling::Tilted(&spectral)
    } else {
        Sampling::Naive
    };
    let (ep, constants) = match (c.c0, c.delta) {
        (Some(_), Some(_)) => (base, None),
        _ => {
            let c0_grid = c.c0.map_or_else(|| c.c0_grid.clone(), |v| vec![v]);
            let delta_grid = c.delta.map_or_else(|| c.delta_grid.clone(), |v| vec![v]);
            let choice = choose_c0_delta(
                ctx.spec,
                &u,
                &base,
                sol.k_beta,
                &c0_grid,
                &delta_grid,
                c.constants_reps,
                sampling,
                &pool,
                &mut key.child(0).stream(0),
            )?;
            (choice.params, Some(choice))
        }
    };
    let cones = match c.kappa {
        Some(_) => None,
        None => Some(cone_family(&pool, c.cones, ctx.spec.class, &ep)?),
    };
    let kappa = match (&cones, c.kappa) {
        (Some(f), _) => Kappa::Cones(f),
        (None, k) => Kappa::Fixed(k.unwrap_or(0.0)),
    };
    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    for &c1 in &c.c1 {
        let sp = SubtreeParams::new(c1, &ep)?;
        if sp.levels.is_empty() {
            let (lo, hi) = ep.window();
            skipped.push(Skipped {
                c1,
                reason: format!("no multiple of {c1} in the level window [{lo:.3}, {hi:.3})"),
            });
            continue;
        }
        reports.push(lower_bound(
            ctx.spec,
            &u,
            &ep,
            &sp,
            &c.budgets,
            &spectral,
            &pool,
            kappa,
            &mut key.child(1 + c1 as u64).stream(0),
        )?);
    }
    let best = reports
        .iter()
        .max_by(|a, b| (a.bound - 1.645 * a.bound_se).total_cmp(&(b.bound - 1.645 * b.bound_se)));
    let chosen_c1 = best.map(|r| r.c1);
    let verdict = best.map(|r| r.verdict);
    for r in &reports {
        let v = ctx.path(&format!("certificate_v_c{}.csv", r.c1));
        write_v_csv(&v, r)?;
        stamp_csv(&v, &ctx.meta)?;
        let w = ctx.path(&format!("certificate_w_c{}.csv", r.c1));
        write_w_csv(&w, r)?;
        stamp_csv(&w, &ctx.meta)?;
    }
    write_json(
        &ctx.path("certificate.json"),
        &ctx.meta,
        &CertificateResult {
            t,
            t_source,
            u,
            empirical_tail: p_hat,
            empirical_tail_se,
            spectral_source,
            alpha: sol.alpha,
            beta: sol.beta,
            rho: sol.rho,
            k_beta: sol.k_beta,
            c0: ep.c0,
            delta: ep.delta,
            chosen_c1,
            verdict,
            constants,
            cones,
            reports,
            skipped,
        },
    )?;
    if chosen_c1.is_none() {
        return Err(CliError::Config(format!(
            "no C1 in {:?} has a level in the window; raise t or add smaller C1",
            c.c1
        )));
    }
    Ok(())
}
