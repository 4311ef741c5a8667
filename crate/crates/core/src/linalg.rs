// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense linear algebra used by the direction fit.
//!
//! The first principal component is the top right-singular vector of the
//! (already centered) data matrix. It is obtained from whichever Gram matrix
//! is smaller, `X Xᵀ` (n×n) or `Xᵀ X` (d×d), diagonalized with cyclic Jacobi
//! rotations. Jacobi is slow for large matrices but exact to rounding and
//! fully deterministic, which keeps fitted readers bit-reproducible.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.iter().flatten().copied().collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn column_means(&self) -> Vec<T> {
        let mut mean = vec![T::zero(); self.cols];
        for r in self.iter_rows() {
            for (m, &x) in mean.iter_mut().zip(r) {
                *m = *m + x;
            }
        }
        let n = T::lit(self.rows as f64);
        mean.iter_mut().for_each(|m| *m = *m / n);
        mean
    }

    /// Copy with `mean` subtracted from every row.
    pub fn centered_by(&self, mean: &[T]) -> Self {
        let mut out = self.clone();
        for i in 0..out.rows {
            for (x, &m) in out.row_mut(i).iter_mut().zip(mean) {
                *x = *x - m;
            }
        }
        out
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, x| acc.max(x.abs()))
    }
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Dot product of a scalar-typed direction with a stored activation row.
pub fn dot_f32<T: Real>(a: &[T], b: &[f32]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * T::of_f32(y))
}

/// Eigen-decomposition of a symmetric `n×n` matrix (row-major).
///
/// Returns eigenvalues and the matrix of eigenvectors, stored so that
/// eigenvector `k` is column `k`.
pub fn symmetric_eigen<T: Real>(a: &[T], n: usize) -> (Vec<T>, Matrix<T>) {
    const MAX_SWEEPS: usize = 100;
    let mut a = a.to_vec();
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    let total: T = a.iter().map(|&x| x * x).sum();
    let tol = T::epsilon() * T::epsilon() * total;

    for _ in 0..MAX_SWEEPS {
        let mut off = T::zero();
        for p in 0..n {
            for q in p + 1..n {
                off = off + a[p * n + q] * a[p * n + q];
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let values = (0..n).map(|i| a[i * n + i]).collect();
    (values, Matrix { rows: n, cols: n, data: v })
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_first<T: PartialOrd>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate().skip(1) {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Flips `v` so its largest-magnitude entry (lowest index on ties) is positive.
pub fn canonical_sign<T: Real>(v: &mut [T]) {
    let abs: Vec<T> = v.iter().map(|x| x.abs()).collect();
    if v[argmax_first(&abs)] < T::zero() {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Unit-norm top right-singular direction of a centered `n×d` matrix.
pub fn first_principal_component<T: Real>(centered: &Matrix<T>) -> Result<Vec<T>> {
    let (n, d) = (centered.rows(), centered.cols());
    if n < 2 {
        return Err(Error::TooFewPairs { needed: 2, got: n });
    }
    if d == 0 {
        return Err(Error::DimensionMismatch("zero-width matrix".into()));
    }
    if centered.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("matrix contains NaN or infinite entries".into()));
    }
    let first = centered.row(0);
    if centered.iter_rows().all(|r| r == first) {
        return Err(Error::DegenerateFit("all rows identical (zero variance)".into()));
    }

    let mut v = if n <= d {
        // Left singular vector from X Xᵀ, mapped back through Xᵀ.
        let mut gram = vec![T::zero(); n * n];
        for i in 0..n {
            for j in i..n {
                let g = dot(centered.row(i), centered.row(j));
                gram[i * n + j] = g;
                gram[j * n + i] = g;
            }
        }
        let (values, vectors) = symmetric_eigen(&gram, n);
        let k = argmax_first(&values);
        if values[k] <= T::zero() {
            return Err(Error::DegenerateFit("no positive variance".into()));
        }
        let mut v = vec![T::zero(); d];
        for i in 0..n {
            let u = vectors.get(i, k);
            for (vj, &x) in v.iter_mut().zip(centered.row(i)) {
                *vj = *vj + u * x;
            }
        }
        v
    } else {
        let mut cov = vec![T::zero(); d * d];
        for r in centered.iter_rows() {
            for i in 0..d {
                for j in i..d {
                    cov[i * d + j] = cov[i * d + j] + r[i] * r[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                cov[i * d + j] = cov[j * d + i];
            }
        }
        let (values, vectors) = symmetric_eigen(&cov, d);
        let k = argmax_first(&values);
        if values[k] <= T::zero() {
            return Err(Error::DegenerateFit("no positive variance".into()));
        }
        (0..d).map(|i| vectors.get(i, k)).collect()
    };

    let len = norm(&v);
    if len <= T::zero() || !len.is_finite() {
        return Err(Error::DegenerateFit("principal direction has zero length".into()));
    }
    v.iter_mut().for_each(|x| *x = *x / len);
    canonical_sign(&mut v);
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_diagonalizes() {
        let a = [4.0f64, 1.0, 2.0, 1.0, 3.0, 0.5, 2.0, 0.5, 1.0];
        let (vals, vecs) = symmetric_eigen(&a, 3);
        for (k, &lambda) in vals.iter().enumerate() {
            let v: Vec<f64> = (0..3).map(|i| vecs.get(i, k)).collect();
            for i in 0..3 {
                let av: f64 = (0..3).map(|j| a[i * 3 + j] * v[j]).sum();
                assert!((av - lambda * v[i]).abs() < 1e-12);
            }
        }
        let trace: f64 = vals.iter().sum();
        assert!((trace - 8.0).abs() < 1e-12);
    }

    #[test]
    fn axis_aligned_rows() {
        let m = Matrix::from_rows(&[vec![-1.0f64, 0.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(first_principal_component(&m).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn degenerate_and_non_finite() {
        let z = Matrix::<f64>::zeros(4, 3);
        assert!(matches!(first_principal_component(&z), Err(Error::DegenerateFit(_))));
        let m = Matrix::from_rows(&[vec![f64::NAN, 0.0], vec![1.0, 0.0]]).unwrap();
        assert!(matches!(first_principal_component(&m), Err(Error::NonFinite(_))));
        let one = Matrix::from_rows(&[vec![1.0f64, 0.0]]).unwrap();
        assert!(matches!(first_principal_component(&one), Err(Error::TooFewPairs { .. })));
    }

    #[test]
    fn sign_convention_is_deterministic() {
        let m = Matrix::from_rows(&[vec![0.5f64, -3.0], vec![-0.5, 3.0], vec![0.1, -2.9]]).unwrap();
        let v = first_principal_component(&m).unwrap();
        assert!(v[1] > 0.0);
        assert!((norm(&v) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wide_and_tall_routes_agree() {
        // Same data, transposed roles: 3x5 (Gram route) against its 5-column
        // embedding in a tall matrix (covariance route).
        let rows = vec![
            vec![1.0f64, 2.0, -1.0, 0.5, 0.0],
            vec![-2.0, 0.3, 1.5, -0.5, 1.0],
            vec![0.7, -1.1, 0.2, 2.0, -0.4],
        ];
        let wide = Matrix::from_rows(&rows).unwrap();
        let mut tall_rows = rows.clone();
        tall_rows.extend(std::iter::repeat_n(vec![0.0; 5], 3));
        let tall = Matrix::from_rows(&tall_rows).unwrap();
        let a = first_principal_component(&wide).unwrap();
        let b = first_principal_component(&tall).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn works_in_f32() {
        let m = Matrix::from_rows(&[vec![-1.0f32, 0.1], vec![1.0, -0.1], vec![2.0, 0.0]]).unwrap();
        let v = first_principal_component(&m).unwrap();
        assert!((norm(&v) - 1.0).abs() < 1e-6);
        assert!(v[0] > 0.9);
    }
}
