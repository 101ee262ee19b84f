//! Closed-form checks on the lognormal reference models.

mod common;

use fixtail::certificate::{
    cone_family, estimate_pw, estimate_walk_exceedance, lower_bound, Budgets, EventParams, Kappa,
    PairGeometry, SubtreeParams,
};
use fixtail::matwalk::{act, estimate_pi_norm_moment, simulate_walk, tilted_walk, Sampling};
use fixtail::model::{Branching, Ensemble, GeometricClass, QLaw};
use fixtail::rng::seeded;
use fixtail::spectral::{m_of_s, solve_alpha_beta, KMethod, SpectralConfig, SpectralResult};
use fixtail::tails::directional_profile;
use fixtail::wbp::{replicate_pools, sample_fixed_point, FixedPointPool, PoolConfig, Start};
use fixtail::{Mat, ModelSpec, Norm};

fn beta() -> f64 {
    2.0 + 2.0 * (1.0 - 2f64.ln()).sqrt()
}

fn solved() -> (f64, SpectralResult<f64>) {
    let (sol, at_beta) = solve_alpha_beta::<f64, _>(
        &common::ref1(),
        8.0,
        1e-8,
        &SpectralConfig::default(),
        &mut seeded(1),
    )
    .unwrap();
    (sol.rho, at_beta)
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

#[test]
fn repeated_action_finds_the_perron_direction() {
    let m = Mat::<f64>::from_rows(&[vec![1.0, 1.0], vec![1.0, 2.0]]);
    let mut x = vec![1.0, 0.0];
    for _ in 0..60 {
        x = act(&m, &x, Norm::L1).unwrap().to_vec();
    }
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    assert!((x[0] - 1.0 / (1.0 + phi)).abs() < 1e-12);
    assert!((x[1] - phi / (1.0 + phi)).abs() < 1e-12);
}

#[test]
fn ref1_walk_drifts_at_the_log_mean() {
    let spec = common::ref1();
    let mut rng = seeded(2);
    let rates: Vec<f64> = (0..1000)
        .map(|_| {
            simulate_walk::<f64, _>(&spec, &[1.0], 200, &mut rng)
                .unwrap()
                .s
                / 200.0
        })
        .collect();
    let (m, se) = mean_se(&rates);
    assert!((m + 1.0).abs() <= 3.0 * se, "{m} +- {se}");
}

#[test]
fn tilted_walk_drifts_at_the_cumulant_derivative() {
    let spec = common::ref1();
    let (_, at_beta) = solved();
    let mut rng = seeded(3);
    let n = 200;
    let rates: Vec<f64> = (0..1000)
        .map(|_| {
            tilted_walk(&spec, &[1.0], n, Sampling::Tilted(&at_beta), &mut rng)
                .unwrap()
                .state
                .s
                / n as f64
        })
        .collect();
    let (m, se) = mean_se(&rates);
    let target = -1.0 + 0.5 * beta();
    assert!((m - target).abs() <= 3.0 * se, "{m} +- {se} vs {target}");
}

#[test]
fn moment_at_beta_halves_every_step() {
    let spec = common::ref1();
    let (_, at_beta) = solved();
    // in d = 1 the tilted estimator has zero variance: every weighted sample
    // equals k(beta)^n
    let e = estimate_pi_norm_moment(
        &spec,
        10,
        at_beta.s,
        20_000,
        Sampling::Tilted(&at_beta),
        &mut seeded(4),
    )
    .unwrap();
    let target = 0.5f64.powi(10);
    assert!(
        (e.value - target).abs() <= (3.0 * e.se).max(1e-9 * target),
        "{} +- {}",
        e.value,
        e.se
    );
}

#[test]
fn m_matches_the_lognormal_moment() {
    let spec = common::ref1();
    let method = KMethod::default();
    let mut rng = seeded(5);
    let m1 = m_of_s::<f64, _>(&spec, 1.0, &method, &mut rng).unwrap();
    assert!((m1 - 2.0 * (-0.75f64).exp()).abs() < 1e-9);
    let mb = m_of_s::<f64, _>(&spec, beta(), &method, &mut rng).unwrap();
    assert!((mb - 1.0).abs() < 1e-9);
}

#[test]
fn naive_and_tilted_agree_at_eight_steps() {
    let spec = common::ref1();
    let (_, at_beta) = solved();
    let log_t = -2.0;
    let naive = estimate_walk_exceedance::<f64, _>(
        &spec,
        &[1.0],
        8,
        log_t,
        1_000_000,
        Sampling::Naive,
        &mut seeded(6),
    )
    .unwrap();
    let tilted = estimate_walk_exceedance(
        &spec,
        &[1.0],
        8,
        log_t,
        200_000,
        Sampling::Tilted(&at_beta),
        &mut seeded(7),
    )
    .unwrap();
    let se = naive.se.hypot(tilted.se);
    assert!((naive.value - tilted.value).abs() <= 3.0 * se);
}

fn pool(spec: &ModelSpec, size: usize, seed: u64) -> FixedPointPool<f64> {
    let cfg = PoolConfig {
        generations: 40,
        pool_size: size,
        start: Start::Mean,
        ..PoolConfig::default()
    };
    sample_fixed_point(spec, &cfg, &mut seeded(seed)).unwrap()
}

#[test]
fn rotation_invariant_model_has_a_flat_directional_profile() {
    // Haar rotations and a Q law invariant under quarter turns make the fixed
    // point invariant under quarter turns
    let spec = ModelSpec {
        q_law: QLaw::FiniteSupport {
            vectors: vec![
                vec![1.0, 0.0],
                vec![0.0, 1.0],
                vec![-1.0, 0.0],
                vec![0.0, -1.0],
            ],
            probs: vec![0.25; 4],
        },
        ..common::rotation(2)
    };
    let cfg = PoolConfig {
        generations: 40,
        pool_size: 50_000,
        start: Start::Mean,
        ..PoolConfig::default()
    };
    let pools = replicate_pools::<f64, _>(&spec, &cfg, 8, &mut seeded(8)).unwrap();
    let dirs: Vec<Vec<f64>> = (0..4)
        .map(|k| {
            let a = k as f64 * std::f64::consts::FRAC_PI_2 + 0.3;
            vec![a.cos(), a.sin()]
        })
        .collect();
    let mut proj = pools[0].projections(&dirs[0]);
    proj.sort_by(f64::total_cmp);
    let t = fixtail::tails::quantile(&proj, 0.99);
    // pool members are dependent, so the spread comes from replicate pools
    let profiles: Vec<Vec<f64>> = pools
        .iter()
        .map(|p| {
            directional_profile(p, &dirs, t, 2.0, 50)
                .iter()
                .map(|r| r.scaled.unwrap())
                .collect()
        })
        .collect();
    for k in 1..dirs.len() {
        let diffs: Vec<f64> = profiles.iter().map(|v| v[k] - v[0]).collect();
        let (m, se) = mean_se(&diffs);
        assert!(m.abs() <= 3.0 * se, "direction {k}: difference {m} +- {se}");
    }
}

#[test]
fn boundary_and_interior_directions_are_both_positive() {
    let spec = ModelSpec {
        dimension: 2,
        branching: Branching::Fixed(2),
        ensemble: Ensemble::LognormalTimesFixed {
            mu: -1.5,
            sigma2: 0.5,
            matrix: vec![vec![1.0, 0.5], vec![0.5, 1.0]],
        },
        q_law: QLaw::Deterministic(vec![1.0, 1.0]),
        class: GeometricClass::NonnegativeC,
        norm: Norm::L1,
    };
    let p = pool(&spec, 100_000, 9);
    let dirs = vec![vec![1.0, 0.0], vec![0.5, 0.5]];
    let mut proj = p.projections(&dirs[0]);
    proj.sort_by(f64::total_cmp);
    let t = fixtail::tails::quantile(&proj, 0.995);
    for r in directional_profile(&p, &dirs, t, 2.0, 50) {
        assert!(r.scaled.unwrap() > 3.0 * r.se, "{:?}", r);
    }
}

#[test]
fn pair_event_probability_falls_as_the_paths_split_earlier() {
    let spec = common::ref1();
    let (rho, at_beta) = solved();
    let ep = EventParams::new((14.5 * rho).exp(), 1.0, 0.1, rho).unwrap();
    let ests: Vec<_> = [10, 8, 6]
        .into_iter()
        .map(|m| {
            let g = PairGeometry::new(12, 12, m).unwrap();
            estimate_pw(
                &spec,
                &[1.0],
                g,
                &ep,
                40_000,
                Sampling::Tilted(&at_beta),
                &mut seeded(10),
            )
            .unwrap()
        })
        .collect();
    for w in ests.windows(2) {
        let (a, b) = (w[0].conservative(), w[1].conservative());
        let se = w[0].estimate.se.hypot(w[1].estimate.se);
        assert!(b <= a + 3.0 * se, "{b} after {a}");
    }
}

#[test]
fn pair_term_falls_with_the_spacing() {
    let spec = common::ref1();
    let (rho, at_beta) = solved();
    let p = pool(&spec, 20_000, 11);
    let ep = EventParams::new((39.5 * rho).exp(), 1.0, 0.1, rho).unwrap();
    let cones = cone_family(&p, 8, spec.class, &ep).unwrap();
    let budgets = Budgets {
        v_reps: 4000,
        w_reps: 4000,
        tilted: true,
    };
    let reports: Vec<_> = [2, 4, 6]
        .into_iter()
        .map(|c1| {
            let sp = SubtreeParams::new(c1, &ep).unwrap();
            lower_bound(
                &spec,
                &[1.0],
                &ep,
                &sp,
                &budgets,
                &at_beta,
                &p,
                Kappa::Cones(&cones),
                &mut seeded(12),
            )
            .unwrap()
        })
        .collect();
    for w in reports.windows(2) {
        let se = w[0].w_term_se.hypot(w[1].w_term_se);
        assert!(
            w[1].w_term <= w[0].w_term + 3.0 * se,
            "C1 {} -> {}: {} -> {}",
            w[0].c1,
            w[1].c1,
            w[0].w_term,
            w[1].w_term
        );
    }
}
