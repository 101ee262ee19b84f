//! Finite cone families: caps `Omega_j` of directions, their dual cones
//! `Omega_j* = {z : <z, x> >= eps_j |z| |x| for x in Omega_j}`, and the mass
//! constant `kappa`.

use std::f64::consts::{FRAC_PI_2, TAU};

use serde::Serialize;

use super::events::EventParams;
use crate::error::{Error, Result};
use crate::linalg::{planar_angle, Norm};
use crate::model::GeometricClass;
use crate::scalar::Real;
use crate::sphere::SphereGrid;
use crate::wbp::FixedPointPool;

/// Test directions used for the coverage check.
pub const TEST_DIRECTIONS: usize = 2048;

/// Pool directions kept per cap to represent it in dimension 3 and above.
const CAP_SAMPLES: usize = 256;

#[derive(Debug, Clone, Serialize)]
pub struct Cap {
    pub center: Vec<f64>,
    /// Angular half-width in radians (0 in dimension 1).
    pub aperture: f64,
    /// `P(X in Omega_j)` in the pool.
    pub mass: f64,
    pub epsilon: f64,
    /// `P(X in Omega_j, |X| > D / eps_j)` and its standard error.
    pub exceed: f64,
    pub exceed_se: f64,
    /// Number of test directions assigned to this cap's dual cone.
    pub assigned: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConeFamily {
    pub d: usize,
    pub cone: bool,
    pub norm: Norm,
    pub caps: Vec<Cap>,
    pub d_const: f64,
    pub kappa: f64,
    pub kappa_se: f64,
    pub test_directions: usize,
    #[serde(skip)]
    geometry: Geometry,
}

#[derive(Debug, Clone)]
enum Geometry {
    Line,
    Arc {
        lo: f64,
        width: f64,
    },
    Cells {
        grid: SphereGrid<f64>,
        samples: Vec<Vec<Vec<f64>>>,
    },
}

fn ratio(z: &[f64], x: &[f64], norm: Norm) -> f64 {
    let ip: f64 = z.iter().zip(x).map(|(a, b)| a * b).sum();
    ip / (norm.of(z) * norm.of(x))
}

fn unit_at(theta: f64) -> [f64; 2] {
    [theta.cos(), theta.sin()]
}

impl ConeFamily {
    /// Cap containing the direction of `x`, if any.
    pub fn locate<T: Real>(&self, x: &[T]) -> Option<usize> {
        let xv: Vec<f64> = x.iter().map(|v| v.f64()).collect();
        if self.norm.of(&xv) <= 0.0 {
            return None;
        }
        if self.cone && xv.iter().any(|&v| v < 0.0) {
            return None;
        }
        match &self.geometry {
            Geometry::Line => {
                if xv[0] > 0.0 {
                    Some(0)
                } else if self.cone {
                    None
                } else {
                    Some(1)
                }
            }
            Geometry::Arc { lo, width } => {
                let a = planar_angle(&xv);
                let j = ((a - lo) / width).floor().max(0.0) as usize;
                Some(j.min(self.caps.len() - 1))
            }
            Geometry::Cells { grid, .. } => Some(grid.nearest(&xv)),
        }
    }

    /// `min_{x in Omega_j} <z, x> / (|z| |x|)`.
    pub fn inner(&self, j: usize, z: &[f64]) -> f64 {
        match &self.geometry {
            Geometry::Line => {
                let s = if j == 0 { 1.0 } else { -1.0 };
                (z[0] * s).signum()
            }
            Geometry::Arc { lo, width } => {
                let a = lo + j as f64 * width;
                ratio(z, &unit_at(a), self.norm).min(ratio(z, &unit_at(a + width), self.norm))
            }
            Geometry::Cells { samples, .. } => samples[j]
                .iter()
                .map(|x| ratio(z, x, self.norm))
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// `z in Omega_j*`.
    pub fn dual_contains(&self, j: usize, z: &[f64]) -> bool {
        self.inner(j, z) >= self.caps[j].epsilon
    }
}

/// Builds `J` equal caps over the sphere (the nonnegative part for cones),
/// keeps the caps the pool charges, assigns each test direction to the kept
/// cap with the largest inner bound, and estimates `kappa`.
pub fn cone_family<T: Real>(
    pool: &FixedPointPool<T>,
    j: usize,
    class: GeometricClass,
    ep: &EventParams,
) -> Result<ConeFamily> {
    let d = pool.d;
    let cone = class.is_cone();
    let norm = class.norm();
    if pool.is_empty() {
        return Err(Error::Nondegeneracy("empty pool".into()));
    }
    let (geometry, centers, aperture, tests): (Geometry, Vec<Vec<f64>>, f64, Vec<Vec<f64>>) =
        if d == 1 {
            let centers = if cone {
                vec![vec![1.0]]
            } else {
                vec![vec![1.0], vec![-1.0]]
            };
            let tests = centers.clone();
            (Geometry::Line, centers, 0.0, tests)
        } else if d == 2 {
            if j == 0 || (!cone && j < 3) {
                return Err(Error::Coverage(format!(
                    "J = {j} caps cannot cover the {}; use J >= {}",
                    if cone { "quarter circle" } else { "circle" },
                    if cone { 1 } else { 3 }
                )));
            }
            let span = if cone { FRAC_PI_2 } else { TAU };
            let width = span / j as f64;
            let centers = (0..j)
                .map(|i| unit_at((i as f64 + 0.5) * width).to_vec())
                .collect();
            let tests = (0..TEST_DIRECTIONS)
                .map(|i| {
                    let a = if cone {
                        span * i as f64 / (TEST_DIRECTIONS - 1) as f64
                    } else {
                        span * i as f64 / TEST_DIRECTIONS as f64
                    };
                    unit_at(a).to_vec()
                })
                .collect();
            (
                Geometry::Arc { lo: 0.0, width },
                centers,
                width / 2.0,
                tests,
            )
        } else {
            let grid: SphereGrid<f64> = SphereGrid::new(d, cone, norm, j.max(1));
            let centers: Vec<Vec<f64>> = grid.points.iter().map(|p| p.to_vec()).collect();
            let mut samples = vec![Vec::new(); centers.len()];
            for x in pool.rows() {
                let xv: Vec<f64> = x.iter().map(|v| v.f64()).collect();
                if norm.of(&xv) > 0.0 && (!cone || xv.iter().all(|&v| v >= 0.0)) {
                    let c = grid.nearest(&xv);
                    if samples[c].len() < CAP_SAMPLES {
                        samples[c].push(xv);
                    }
                }
            }
            let tests: Vec<Vec<f64>> = SphereGrid::<f64>::new(d, cone, norm, TEST_DIRECTIONS)
                .points
                .iter()
                .map(|p| p.to_vec())
                .collect();
            let aperture = centers
                .iter()
                .enumerate()
                .map(|(c, ctr)| {
                    samples[c]
                        .iter()
                        .map(|x| ratio(ctr, x, Norm::L2).clamp(-1.0, 1.0).acos())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            (Geometry::Cells { grid, samples }, centers, aperture, tests)
        };
    let mut fam = ConeFamily {
        d,
        cone,
        norm,
        caps: centers
            .into_iter()
            .map(|center| Cap {
                center,
                aperture,
                mass: 0.0,
                epsilon: 0.0,
                exceed: 0.0,
                exceed_se: 0.0,
                assigned: 0,
            })
            .collect(),
        d_const: ep.d_const(),
        kappa: 0.0,
        kappa_se: 0.0,
        test_directions: tests.len(),
        geometry,
    };
    let total = pool.len() as f64;
    let located: Vec<(Option<usize>, f64)> = pool
        .rows()
        .map(|x| (fam.locate(x), norm.of(x).f64()))
        .collect();
    for (c, _) in &located {
        if let Some(c) = c {
            fam.caps[*c].mass += 1.0 / total;
        }
    }
    let kept: Vec<usize> = (0..fam.caps.len())
        .filter(|&c| fam.caps[c].mass > 0.0)
        .collect();
    if kept.is_empty() {
        return Err(Error::Nondegeneracy(
            "the pool puts no mass on any cap".into(),
        ));
    }
    let mut eps = vec![f64::INFINITY; fam.caps.len()];
    for z in &tests {
        let (best, value) = kept.iter().map(|&c| (c, fam.inner(c, z))).fold(
            (usize::MAX, f64::NEG_INFINITY),
            |a, b| if b.1 > a.1 { b } else { a },
        );
        if !(value > 0.0) {
            return Err(Error::Coverage(format!(
                "direction {z:?} lies in no dual cone (best inner bound {value:.3e}); \
                 increase J or widen the pool's directional support"
            )));
        }
        eps[best] = eps[best].min(value);
        fam.caps[best].assigned += 1;
    }
    for &c in &kept {
        let cap = &mut fam.caps[c];
        if cap.assigned == 0 {
            continue;
        }
        cap.epsilon = eps[c];
        let radius = fam.d_const / cap.epsilon;
        let hits = located
            .iter()
            .filter(|(l, r)| *l == Some(c) && *r > radius)
            .count() as f64;
        let p = hits / total;
        cap.exceed = p;
        cap.exceed_se = (p * (1.0 - p) / total).sqrt();
    }
    let (kc, kappa) = kept
        .iter()
        .filter(|&&c| fam.caps[c].assigned > 0)
        .map(|&c| (c, fam.caps[c].exceed))
        .fold(
            (usize::MAX, f64::INFINITY),
            |a, b| if b.1 < a.1 { b } else { a },
        );
    if !(kappa > 0.0) {
        return Err(Error::Nondegeneracy(format!(
            "cap {kc} has no pool mass beyond D / eps = {:.4}",
            fam.d_const / fam.caps[kc].epsilon
        )));
    }
    fam.kappa = kappa;
    fam.kappa_se = fam.caps[kc].exceed_se;
    Ok(fam)
}
