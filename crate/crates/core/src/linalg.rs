//! Small dense linear algebra: a row-major matrix, Householder QR least
//! squares, and a cyclic Jacobi eigensolver for symmetric matrices.
//!
//! Sizes in this crate are modest (a few hundred rows/columns), so the
//! routines favour clarity and numerical stability over blocking.

use serde::Serialize;

use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major buffer has wrong length");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
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
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len(), "matvec shape mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    /// Subtracts each column's mean; returns the means.
    pub fn center_columns(&mut self) -> Vec<T> {
        let n = T::from_usize_lossy(self.rows.max(1));
        let mut means = vec![T::zero(); self.cols];
        for i in 0..self.rows {
            for (m, &x) in means.iter_mut().zip(self.row(i)) {
                *m += x;
            }
        }
        for m in &mut means {
            *m /= n;
        }
        for i in 0..self.rows {
            for (x, &m) in self.row_mut(i).iter_mut().zip(&means) {
                *x -= m;
            }
        }
        means
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Householder QR factorisation of an `n × p` matrix with `n ≥ p`.
///
/// The reflectors are kept implicitly so `Qᵀ b` can be applied without
/// forming `Q`.
#[derive(Debug, Clone)]
pub struct HouseholderQr<T> {
    /// Upper triangle holds R; below-diagonal entries hold reflector tails.
    qr: Matrix<T>,
    r_diag: Vec<T>,
}

impl<T: Scalar> HouseholderQr<T> {
    pub fn new(a: &Matrix<T>) -> Self {
        let (n, p) = (a.rows(), a.cols());
        assert!(n >= p, "QR needs at least as many rows as columns");
        let mut qr = a.clone();
        let mut r_diag = vec![T::zero(); p];
        for k in 0..p {
            let norm = (k..n)
                .map(|i| qr[(i, k)] * qr[(i, k)])
                .fold(T::zero(), |acc, x| acc + x)
                .sqrt();
            if norm == T::zero() {
                r_diag[k] = T::zero();
                continue;
            }
            let alpha = if qr[(k, k)] > T::zero() { -norm } else { norm };
            // v = x - alpha e1, stored in column k from row k down.
            let head = qr[(k, k)] - alpha;
            qr[(k, k)] = head;
            let vnorm2 = (k..n)
                .map(|i| qr[(i, k)] * qr[(i, k)])
                .fold(T::zero(), |acc, x| acc + x);
            for j in k + 1..p {
                let dot = (k..n)
                    .map(|i| qr[(i, k)] * qr[(i, j)])
                    .fold(T::zero(), |acc, x| acc + x);
                let f = T::lit(2.0) * dot / vnorm2;
                for i in k..n {
                    let vik = qr[(i, k)];
                    qr[(i, j)] -= f * vik;
                }
            }
            r_diag[k] = alpha;
        }
        Self { qr, r_diag }
    }

    pub fn r_diagonal(&self) -> &[T] {
        &self.r_diag
    }

    /// Applies Qᵀ to `b` in place.
    pub fn apply_qt(&self, b: &mut [T]) {
        let (n, p) = (self.qr.rows(), self.qr.cols());
        assert_eq!(b.len(), n);
        for k in 0..p {
            if self.r_diag[k] == T::zero() {
                continue;
            }
            let vnorm2 = (k..n)
                .map(|i| self.qr[(i, k)] * self.qr[(i, k)])
                .fold(T::zero(), |acc, x| acc + x);
            let dot = (k..n).map(|i| self.qr[(i, k)] * b[i]).fold(T::zero(), |acc, x| acc + x);
            let f = T::lit(2.0) * dot / vnorm2;
            for (i, bi) in b.iter_mut().enumerate().take(n).skip(k) {
                *bi -= f * self.qr[(i, k)];
            }
        }
    }

    /// Upper-triangular R (`p × p`).
    pub fn r(&self) -> Matrix<T> {
        let p = self.qr.cols();
        let mut r = Matrix::zeros(p, p);
        for i in 0..p {
            r[(i, i)] = self.r_diag[i];
            for j in i + 1..p {
                r[(i, j)] = self.qr[(i, j)];
            }
        }
        r
    }

    /// Least-squares solution of `A x ≈ b`. Caller must check rank first.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut qtb = b.to_vec();
        self.apply_qt(&mut qtb);
        let p = self.qr.cols();
        back_substitute(&self.r(), &qtb[..p])
    }

    /// Index of the first column whose |R_kk| falls below `rel_tol · max|R_jj|`.
    pub fn first_deficient_column(&self, rel_tol: T) -> Option<usize> {
        let max = self.r_diag.iter().fold(T::zero(), |acc, &d| acc.max(d.abs()));
        if max == T::zero() {
            return if self.r_diag.is_empty() { None } else { Some(0) };
        }
        self.r_diag.iter().position(|&d| d.abs() <= rel_tol * max)
    }
}

/// Solves `R x = b` for upper-triangular `R`.
pub fn back_substitute<T: Scalar>(r: &Matrix<T>, b: &[T]) -> Vec<T> {
    let p = r.cols();
    let mut x = vec![T::zero(); p];
    for i in (0..p).rev() {
        let mut s = b[i];
        for j in i + 1..p {
            s -= r[(i, j)] * x[j];
        }
        x[i] = s / r[(i, i)];
    }
    x
}

/// Inverse of an upper-triangular matrix.
pub fn upper_triangular_inverse<T: Scalar>(r: &Matrix<T>) -> Matrix<T> {
    let p = r.cols();
    let mut inv = Matrix::zeros(p, p);
    for col in 0..p {
        let mut e = vec![T::zero(); p];
        e[col] = T::one();
        let x = back_substitute(r, &e);
        for i in 0..p {
            inv[(i, col)] = x[i];
        }
    }
    inv
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<T> {
    /// Eigenvalues in descending order.
    pub values: Vec<T>,
    /// Column `k` is the unit eigenvector for `values[k]`.
    pub vectors: Matrix<T>,
}

/// Cyclic Jacobi rotations until the off-diagonal mass is negligible.
pub fn symmetric_eigen<T: Scalar>(a: &Matrix<T>) -> SymmetricEigen<T> {
    let n = a.rows();
    assert_eq!(n, a.cols(), "eigen-decomposition needs a square matrix");
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let scale = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .fold(T::zero(), |acc, (i, j)| acc + a[(i, j)] * a[(i, j)])
        .sqrt();
    let threshold = T::epsilon() * T::epsilon() * scale * scale;

    for _sweep in 0..100 {
        let mut off = T::zero();
        for i in 0..n {
            for j in i + 1..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off <= threshold {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[(j, j)]
            .partial_cmp(&m[(i, i)])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, dst)] = v[(k, src)];
        }
    }
    SymmetricEigen { values, vectors }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn qr_solves_square_system() {
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]);
        let qr = HouseholderQr::new(&a);
        let x = qr.solve(&[3.0, 5.0]);
        assert!(approx(x[0], 0.8, 1e-14) && approx(x[1], 1.4, 1e-14));
    }

    #[test]
    fn qr_least_squares_line() {
        // y = 1 + 2x exactly
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0], vec![1.0, 3.0]]);
        let qr = HouseholderQr::new(&a);
        let x = qr.solve(&[1.0, 3.0, 5.0, 7.0]);
        assert!(approx(x[0], 1.0, 1e-13) && approx(x[1], 2.0, 1e-13));
    }

    #[test]
    fn qr_flags_collinear_columns() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]);
        let qr = HouseholderQr::new(&a);
        assert_eq!(qr.first_deficient_column(1e-10), Some(1));
    }

    #[test]
    fn triangular_inverse_round_trips() {
        let r = Matrix::from_rows(&[vec![2.0, 1.0, 0.5], vec![0.0, 3.0, -1.0], vec![0.0, 0.0, 4.0]]);
        let prod = r.matmul(&upper_triangular_inverse(&r));
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!(approx(prod[(i, j)], want, 1e-14));
            }
        }
    }

    #[test]
    fn jacobi_diagonalises_known_matrix() {
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let eig = symmetric_eigen(&a);
        assert!(approx(eig.values[0], 3.0, 1e-14));
        assert!(approx(eig.values[1], 1.0, 1e-14));
        // A v = λ v
        for k in 0..2 {
            let v = eig.vectors.column(k);
            let av = a.matvec(&v);
            for i in 0..2 {
                assert!(approx(av[i], eig.values[k] * v[i], 1e-13));
            }
        }
    }

    #[test]
    fn jacobi_works_in_single_precision() {
        let a = Matrix::from_rows(&[vec![4.0_f32, 1.0], vec![1.0, 3.0]]);
        let eig = symmetric_eigen(&a);
        let trace: f32 = eig.values.iter().sum();
        assert!((trace - 7.0).abs() < 1e-5);
    }
}
