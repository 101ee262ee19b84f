//! Small dense square matrices and vectors.
//!
//! Dimensions in this crate are tiny (d is typically 1 to 4), so matrices are
//! stored inline in a `SmallVec` and all routines are direct loops.

use std::fmt;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::scalar::Real;

pub type Vector<T> = SmallVec<[T; 4]>;

/// Vector norm convention on `R^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    /// Sum of absolute values; used on the positive cone.
    L1,
    /// Euclidean norm.
    L2,
}

impl Norm {
    pub fn of<T: Real>(self, x: &[T]) -> T {
        match self {
            Norm::L1 => x.iter().map(|v| v.abs()).sum(),
            Norm::L2 => x.iter().map(|&v| v * v).sum::<T>().sqrt(),
        }
    }

    /// Returns `x / |x|`, or `None` when `|x|` is zero or not finite.
    pub fn normalize<T: Real>(self, x: &[T]) -> Option<Vector<T>> {
        let n = self.of(x);
        if n > T::zero() && n.is_finite() {
            Some(x.iter().map(|&v| v / n).collect())
        } else {
            None
        }
    }
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Square `d x d` matrix in row-major order.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat<T> {
    d: usize,
    data: SmallVec<[T; 9]>,
}

impl<T: fmt::Debug> fmt::Debug for Mat<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list()
            .entries(self.data.chunks(self.d.max(1)))
            .finish()
    }
}

impl<T: Real> Mat<T> {
    pub fn zeros(d: usize) -> Self {
        Mat {
            d,
            data: smallvec::smallvec![T::zero(); d * d],
        }
    }

    pub fn identity(d: usize) -> Self {
        let mut m = Self::zeros(d);
        for i in 0..d {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn scalar(d: usize, c: T) -> Self {
        let mut m = Self::zeros(d);
        for i in 0..d {
            m[(i, i)] = c;
        }
        m
    }

    /// Builds a matrix from rows; panics if the rows are not square.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let d = rows.len();
        assert!(
            rows.iter().all(|r| r.len() == d),
            "matrix rows must form a square"
        );
        Mat {
            d,
            data: rows.iter().flatten().map(|&v| T::c(v)).collect(),
        }
    }

    pub fn from_fn(d: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = SmallVec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                data.push(f(i, j));
            }
        }
        Mat { d, data }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> + '_ {
        self.data.chunks(self.d.max(1))
    }

    pub fn to_rows_f64(&self) -> Vec<Vec<f64>> {
        self.rows()
            .map(|r| r.iter().map(|v| v.f64()).collect())
            .collect()
    }

    pub fn cast<U: Real>(&self) -> Mat<U> {
        Mat {
            d: self.d,
            data: self.data.iter().map(|v| U::c(v.f64())).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.d, |i, j| self[(j, i)])
    }

    pub fn scale(&self, c: T) -> Self {
        Mat {
            d: self.d,
            data: self.data.iter().map(|&v| v * c).collect(),
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        debug_assert_eq!(self.d, other.d);
        let d = self.d;
        Self::from_fn(d, |i, j| (0..d).map(|k| self[(i, k)] * other[(k, j)]).sum())
    }

    pub fn mul_vec(&self, x: &[T]) -> Vector<T> {
        debug_assert_eq!(self.d, x.len());
        self.rows().map(|r| dot(r, x)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn min_entry(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |a, v| a.max(v.abs()))
    }

    pub fn column_abs_sums(&self) -> Vector<T> {
        (0..self.d)
            .map(|j| (0..self.d).map(|i| self[(i, j)].abs()).sum())
            .collect()
    }

    /// Determinant by Gaussian elimination with partial pivoting.
    pub fn determinant(&self) -> T {
        let d = self.d;
        let mut a = self.data.clone();
        let mut det = T::one();
        for col in 0..d {
            let pivot = (col..d)
                .max_by(|&x, &y| {
                    a[x * d + col]
                        .abs()
                        .partial_cmp(&a[y * d + col].abs())
                        .unwrap()
                })
                .unwrap();
            if a[pivot * d + col] == T::zero() {
                return T::zero();
            }
            if pivot != col {
                for k in 0..d {
                    a.swap(pivot * d + k, col * d + k);
                }
                det = -det;
            }
            let p = a[col * d + col];
            det = det * p;
            for r in col + 1..d {
                let f = a[r * d + col] / p;
                for k in col..d {
                    let v = a[col * d + k];
                    a[r * d + k] = a[r * d + k] - f * v;
                }
            }
        }
        det
    }

    /// Singular values in decreasing order (one-sided Jacobi).
    pub fn singular_values(&self) -> Vector<T> {
        let d = self.d;
        // columns of the working copy, stored column-major
        let mut cols: Vec<Vector<T>> = (0..d)
            .map(|j| (0..d).map(|i| self[(i, j)]).collect())
            .collect();
        let eps = T::epsilon();
        for _sweep in 0..60 {
            let mut rotated = false;
            for p in 0..d {
                for q in p + 1..d {
                    let alpha = dot(&cols[p], &cols[p]);
                    let beta = dot(&cols[q], &cols[q]);
                    let gamma = dot(&cols[p], &cols[q]);
                    if gamma.abs() <= eps * (alpha * beta).sqrt() || gamma == T::zero() {
                        continue;
                    }
                    rotated = true;
                    let zeta = (beta - alpha) / (T::c(2.0) * gamma);
                    let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                    let c = T::one() / (T::one() + t * t).sqrt();
                    let s = c * t;
                    for i in 0..d {
                        let x = cols[p][i];
                        let y = cols[q][i];
                        cols[p][i] = c * x - s * y;
                        cols[q][i] = s * x + c * y;
                    }
                }
            }
            if !rotated {
                break;
            }
        }
        let mut sv: Vector<T> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        sv
    }
}

impl<T> std::ops::Index<(usize, usize)> for Mat<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.d + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Mat<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.d + j]
    }
}

/// Angle of a planar direction in `[0, 2pi)`.
pub fn planar_angle<T: Real>(x: &[T]) -> f64 {
    let a = x[1].f64().atan2(x[0].f64());
    if a < 0.0 {
        a + std::f64::consts::TAU
    } else {
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn singular_values_of_diagonal() {
        let m: Mat<f64> = Mat::from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0 / 3.0]]);
        let sv = m.singular_values();
        assert_relative_eq!(sv[0], 3.0, epsilon = 1e-14);
        assert_relative_eq!(sv[1], 1.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn singular_values_match_gram_eigenvalues() {
        // [[1,2],[3,4]]: M^T M = [[10,14],[14,20]], eigenvalues 15 +- sqrt(221)
        let m: Mat<f64> = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let sv = m.singular_values();
        assert_relative_eq!(sv[0] * sv[0], 15.0 + 221f64.sqrt(), epsilon = 1e-10);
        assert_relative_eq!(sv[1] * sv[1], 15.0 - 221f64.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn determinant_and_product() {
        let a: Mat<f64> = Mat::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]);
        let b: Mat<f64> = Mat::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]);
        assert_eq!(
            a.mul(&b).to_rows_f64(),
            vec![vec![2.0, 1.0], vec![1.0, 1.0]]
        );
        assert_relative_eq!(a.mul(&b).determinant(), 1.0);
        let p: Mat<f64> = Mat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_relative_eq!(p.determinant(), -1.0);
    }

    #[test]
    fn norms() {
        let x = [3.0f64, -4.0];
        assert_eq!(Norm::L1.of(&x), 7.0);
        assert_eq!(Norm::L2.of(&x), 5.0);
        assert!(Norm::L2.normalize(&[0.0f64, 0.0]).is_none());
    }
}
