//! Dense row-major matrices and the handful of numeric primitives the crate
//! needs: deterministic pairwise summation, outer products, and a Jacobi
//! eigenvalue sweep for symmetric matrices (used to verify positive
//! semi-definiteness of covariance explanations).
//!
//! Everything here is desk scale (d up to a few thousand); there is no
//! sparse or blocked path.

use alloc::vec;
use alloc::vec::Vec;

use crate::fmath;
use crate::{Error, Result};

/// Dense row-major `rows x cols` matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from a flat row-major buffer.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "Matrix::from_vec",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    context: "Matrix::from_rows",
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: n,
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Flat row-major view of all entries.
    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    /// `self * x` for a column vector `x`.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                context: "Matrix::mul_vec",
                expected: self.cols,
                got: x.len(),
            });
        }
        Ok(self.iter_rows().map(|row| dot(row, x)).collect())
    }

    /// `selfᵀ * x`, without materializing the transpose.
    pub fn mul_vec_transposed(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::DimensionMismatch {
                context: "Matrix::mul_vec_transposed",
                expected: self.rows,
                got: x.len(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (row, &xi) in self.iter_rows().zip(x) {
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * xi;
            }
        }
        Ok(out)
    }

    /// Sum of all entries (pairwise).
    pub fn total(&self) -> f64 {
        pairwise_sum(&self.data)
    }

    /// Largest absolute asymmetry `max |A_ij - A_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols.min(self.rows) {
                worst = worst.max(fmath::abs(self.get(i, j) - self.get(j, i)));
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Pairwise (cascade) summation.
///
/// Deterministic for a given slice and numerically stabler than a running
/// sum; used for covariance reductions so results do not depend on how work
/// was chunked.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 16 {
        let mut acc = 0.0;
        for v in values {
            acc += v;
        }
        return acc;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Outer product `a bᵀ`.
pub fn outer(a: &[f64], b: &[f64]) -> Matrix {
    let mut out = Matrix::zeros(a.len(), b.len());
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out.set(i, j, ai * bj);
        }
    }
    out
}

/// Eigenvalues of a symmetric matrix via cyclic Jacobi rotations.
///
/// Returns them in ascending order. Intended for moderate `d` (validation of
/// covariance explanations), not large-scale spectral work.
pub fn symmetric_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    if m.rows() != m.cols() {
        return Err(Error::DimensionMismatch {
            context: "symmetric_eigenvalues",
            expected: m.rows(),
            got: m.cols(),
        });
    }
    let n = m.rows();
    let mut a = m.clone();
    // Scale-aware convergence threshold.
    let norm: f64 = a.as_slice().iter().map(|v| v * v).sum::<f64>();
    let tol = (norm.max(f64::MIN_POSITIVE) * 1e-30).max(1e-300);

    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a.get(i, j) * a.get(i, j);
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + fmath::hypot(1.0, theta))
                } else {
                    1.0 / (theta - fmath::hypot(1.0, theta))
                };
                let c = 1.0 / fmath::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    eigs.sort_by(f64::total_cmp);
    Ok(eigs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mul_vec_matches_hand_result() {
        let m = Matrix::from_rows(&[vec![2.0, -1.0], vec![0.0, 3.0]]).unwrap();
        assert_eq!(m.mul_vec(&[3.0, 4.0]).unwrap(), vec![2.0, 12.0]);
        assert_eq!(m.mul_vec_transposed(&[1.0, 1.0]).unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn pairwise_sum_matches_sequential_on_benign_data() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64) * 0.25).collect();
        let seq: f64 = v.iter().sum();
        assert!((pairwise_sum(&v) - seq).abs() < 1e-9 * seq.abs());
    }

    #[test]
    fn outer_product_basis_vectors() {
        let m = outer(&[1.0, 0.0], &[0.0, 1.0]);
        assert_eq!(m.get(0, 1), 1.0);
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.get(1, 0), 0.0);
        assert_eq!(m.get(1, 1), 0.0);
    }

    #[test]
    fn jacobi_recovers_known_spectrum() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3.
        let m = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let e = symmetric_eigenvalues(&m).unwrap();
        assert!((e[0] - 1.0).abs() < 1e-12);
        assert!((e[1] - 3.0).abs() < 1e-12);

        // diag(5, -2, 0) permuted by a rotation-free case: plain diagonal.
        let d = Matrix::from_rows(&[
            vec![5.0, 0.0, 0.0],
            vec![0.0, -2.0, 0.0],
            vec![0.0, 0.0, 0.0],
        ])
        .unwrap();
        let e = symmetric_eigenvalues(&d).unwrap();
        assert_eq!(e, vec![-2.0, 0.0, 5.0]);
    }

    #[test]
    fn jacobi_handles_rank_one_covariance() {
        // v vᵀ with v = [3, 4] has eigenvalues {0, 25}.
        let v = [3.0, 4.0];
        let m = outer(&v, &v);
        let e = symmetric_eigenvalues(&m).unwrap();
        assert!(e[0].abs() < 1e-12);
        assert!((e[1] - 25.0).abs() < 1e-10);
    }
}
