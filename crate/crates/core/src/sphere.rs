//! Discretisation of the projective space `S` (unit sphere, or its positive
//! part `S_+` on the cone).

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::linalg::{planar_angle, Norm, Vector};
use crate::scalar::Real;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// `d = 1` on the cone: the single point `+1`.
    Single,
    /// `d = 1`: the points `+1` and `-1`.
    Signs,
    /// `d = 2` on the cone: angles `0..=pi/2` including both endpoints.
    Arc { step: f64 },
    /// `d = 2`: equally spaced angles on the full circle.
    Circle { step: f64 },
    /// `d >= 3`: quasi-random points; lookup is nearest neighbour.
    Scattered,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SphereGrid<T> {
    pub d: usize,
    pub cone: bool,
    pub norm: Norm,
    pub layout: Layout,
    pub points: Vec<Vector<T>>,
    pub weights: Vec<T>,
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

fn first_primes(n: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(n);
    let mut k = 2u64;
    while out.len() < n {
        if (2..k).take_while(|p| p * p <= k).all(|p| k % p != 0) {
            out.push(k);
        }
        k += 1;
    }
    out
}

fn unit_l2(x: &[f64]) -> Vec<f64> {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    x.iter().map(|v| v / n).collect()
}

impl<T: Real> SphereGrid<T> {
    /// Builds a grid with `resolution` points (ignored for `d = 1`).
    pub fn new(d: usize, cone: bool, norm: Norm, resolution: usize) -> Self {
        let to_t = |v: &[f64]| -> Vector<T> {
            let n = norm.of(v);
            v.iter().map(|&x| T::c(x / n)).collect()
        };
        let (layout, points): (Layout, Vec<Vector<T>>) = match d {
            1 if cone => (Layout::Single, vec![to_t(&[1.0])]),
            1 => (Layout::Signs, vec![to_t(&[1.0]), to_t(&[-1.0])]),
            2 if cone => {
                let n = resolution.max(2);
                let step = std::f64::consts::FRAC_PI_2 / (n - 1) as f64;
                let pts = (0..n)
                    .map(|i| {
                        let (s, c) = (i as f64 * step).sin_cos();
                        to_t(&[c.max(0.0), s.max(0.0)])
                    })
                    .collect();
                (Layout::Arc { step }, pts)
            }
            2 => {
                let n = resolution.max(3);
                let step = std::f64::consts::TAU / n as f64;
                let pts = (0..n)
                    .map(|i| {
                        let (s, c) = (i as f64 * step).sin_cos();
                        to_t(&[c, s])
                    })
                    .collect();
                (Layout::Circle { step }, pts)
            }
            _ => {
                let primes = first_primes(d);
                let normal = Normal::new(0.0, 1.0).expect("standard normal");
                let pts = (1..=resolution.max(d + 1) as u64)
                    .map(|i| {
                        let g: Vec<f64> = primes
                            .iter()
                            .map(|&p| {
                                let z = normal.inverse_cdf(radical_inverse(i, p));
                                if cone {
                                    z.abs()
                                } else {
                                    z
                                }
                            })
                            .collect();
                        to_t(&g)
                    })
                    .collect();
                (Layout::Scattered, pts)
            }
        };
        let w = T::one() / T::from_usize_lossy(points.len());
        let weights = vec![w; points.len()];
        SphereGrid {
            d,
            cone,
            norm,
            layout,
            points,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Interpolation stencil of a direction: grid indices with weights summing to 1.
    pub fn locate(&self, x: &[T]) -> SmallVec<[(usize, f64); 2]> {
        let mut out = SmallVec::new();
        match self.layout {
            Layout::Single => out.push((0, 1.0)),
            Layout::Signs => out.push((if x[0] >= T::zero() { 0 } else { 1 }, 1.0)),
            Layout::Arc { step } => {
                let theta = x[1]
                    .f64()
                    .atan2(x[0].f64())
                    .clamp(0.0, std::f64::consts::FRAC_PI_2);
                let pos = theta / step;
                let i = (pos.floor() as usize).min(self.points.len() - 2);
                let frac = (pos - i as f64).clamp(0.0, 1.0);
                out.push((i, 1.0 - frac));
                out.push((i + 1, frac));
            }
            Layout::Circle { step } => {
                let n = self.points.len();
                let pos = planar_angle(x) / step;
                let i = (pos.floor() as usize) % n;
                let frac = (pos - pos.floor()).clamp(0.0, 1.0);
                out.push((i, 1.0 - frac));
                out.push(((i + 1) % n, frac));
            }
            Layout::Scattered => out.push((self.nearest(x), 1.0)),
        }
        out
    }

    /// Index of the closest grid point.
    pub fn nearest(&self, x: &[T]) -> usize {
        match self.layout {
            Layout::Scattered => {
                let xv: Vec<f64> = unit_l2(&x.iter().map(|v| v.f64()).collect::<Vec<_>>());
                let mut best = (f64::NEG_INFINITY, 0);
                for (k, p) in self.points.iter().enumerate() {
                    let pv = unit_l2(&p.iter().map(|v| v.f64()).collect::<Vec<_>>());
                    let c: f64 = xv.iter().zip(&pv).map(|(a, b)| a * b).sum();
                    if c > best.0 {
                        best = (c, k);
                    }
                }
                best.1
            }
            _ => {
                let st = self.locate(x);
                st.iter()
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|p| p.0)
                    .unwrap_or(0)
            }
        }
    }

    /// Value at `x` of the grid function `values`.
    pub fn interpolate(&self, values: &[T], x: &[T]) -> T {
        self.locate(x)
            .iter()
            .map(|&(i, w)| values[i] * T::c(w))
            .sum()
    }
}
