//! Dense real matrices, symmetric eigendecomposition and the SPD matrix
//! functions used by the Gaussian-embedding metrics.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::{gemm, Operand, Scalar};

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    /// Builds a matrix from row-major data, rejecting length mismatches and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::dim(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "matrix entry ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
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

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_diag(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Stacks equal-length rows into a matrix.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dim(format!("row {i} has {} values, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn diag(&self) -> Vec<T> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn trace(&self) -> T {
        self.diag().into_iter().sum()
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::dim(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        gemm(
            T::one(),
            Operand::new(&self.data, self.rows, self.cols),
            Operand::new(&rhs.data, rhs.rows, rhs.cols),
            T::zero(),
            &mut out.data,
        );
        Ok(out)
    }

    /// `selfᵀ · self`, the Gram matrix of the columns.
    pub fn gram(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.cols);
        let a = Operand::new(&self.data[..], self.rows, self.cols);
        gemm(T::one(), a.t(), a, T::zero(), &mut out.data);
        out.symmetrize_upper();
        out
    }

    pub fn mat_vec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.cols {
            return Err(Error::dim(format!(
                "cannot apply {}x{} matrix to vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok(self
            .row_iter()
            .map(|r| r.iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect())
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    fn zip_with(&self, rhs: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(Error::dim(format!(
                "shape {}x{} vs {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn max_asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// Replaces the matrix by `(A + Aᵀ) / 2`.
    pub fn symmetrize(&mut self) {
        let half = T::of(0.5);
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = (self[(i, j)] + self[(j, i)]) * half;
                self[(i, j)] = v;
                self[(j, i)] = v;
            }
        }
    }

    fn symmetrize_upper(&mut self) {
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                self[(j, i)] = self[(i, j)];
            }
        }
    }

    pub fn add_to_diag(&mut self, v: T) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += v;
        }
    }

    fn check_symmetric(&self) -> Result<()> {
        if !self.is_square() {
            return Err(Error::dim(format!(
                "expected a square matrix, got {}x{}",
                self.rows, self.cols
            )));
        }
        let tol = symmetry_tolerance::<T>() * self.frobenius_norm();
        let asym = self.max_asymmetry();
        if asym > tol {
            return Err(Error::NotSymmetric {
                asymmetry: asym.to_f64_lossy(),
                tolerance: tol.to_f64_lossy(),
            });
        }
        Ok(())
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

impl<T: fmt::Debug> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut list = f.debug_list();
        for r in self.data.chunks(self.cols.max(1)).take(self.rows) {
            list.entry(&r);
        }
        list.finish()
    }
}

fn symmetry_tolerance<T: Scalar>() -> T {
    T::of(1e-8).max(T::epsilon() * T::of(1e3))
}

/// Eigenvalue clip threshold: `1e-10 · trace`, floored at the rounding
/// level of the working precision.
fn clip_threshold<T: Scalar>(a: &Matrix<T>) -> T {
    let n = T::of(a.rows() as f64);
    (T::of(1e-10) * a.trace().abs()).max(T::of(16.0) * n * T::epsilon() * a.frobenius_norm())
}

/// Eigendecomposition of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymEig<T> {
    /// Eigenvalues in descending order.
    pub values: Vec<T>,
    /// Orthonormal eigenvectors stored as columns, in the order of `values`.
    pub vectors: Matrix<T>,
}

impl<T: Scalar> SymEig<T> {
    /// `V · diag(f(λ)) · Vᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(T) -> T) -> Matrix<T> {
        let n = self.values.len();
        let v = &self.vectors;
        let scaled = Matrix::from_fn(n, n, |i, j| v[(i, j)] * f(self.values[j]));
        let mut out = Matrix::zeros(n, n);
        gemm(
            T::one(),
            Operand::new(scaled.as_slice(), n, n),
            Operand::new(v.as_slice(), n, n).t(),
            T::zero(),
            &mut out.data,
        );
        out.symmetrize();
        out
    }
}

/// Symmetric eigendecomposition by Householder tridiagonalization followed by
/// the implicit QL algorithm.
pub fn sym_eig<T: Scalar>(a: &Matrix<T>) -> Result<SymEig<T>> {
    a.check_symmetric()?;
    let n = a.rows();
    if n == 0 {
        return Err(Error::Empty("eigendecomposition of a 0x0 matrix".into()));
    }
    let mut v = a.clone();
    v.symmetrize();
    let mut d = vec![T::zero(); n];
    let mut e = vec![T::zero(); n];
    tridiagonalize(&mut v, &mut d, &mut e);
    tridiagonal_ql(&mut v, &mut d, &mut e)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].partial_cmp(&d[i]).unwrap_or(Ordering::Equal));
    let values = order.iter().map(|&i| d[i]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymEig { values, vectors })
}

// Householder reduction to tridiagonal form (EISPACK tred2). On exit `v`
// holds the accumulated orthogonal transform, `d` the diagonal and `e` the
// subdiagonal in e[1..n].
fn tridiagonalize<T: Scalar>(v: &mut Matrix<T>, d: &mut [T], e: &mut [T]) {
    let n = d.len();
    for j in 0..n {
        d[j] = v[(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = T::zero();
        let mut h = T::zero();
        for dk in d.iter().take(i) {
            scale += dk.abs();
        }
        if scale == T::zero() {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[(i - 1, j)];
                v[(i, j)] = T::zero();
                v[(j, i)] = T::zero();
            }
        } else {
            for dk in d.iter_mut().take(i) {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > T::zero() {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = T::zero();
            }
            for j in 0..i {
                f = d[j];
                v[(j, i)] = f;
                g = e[j] + v[(j, j)] * f;
                for k in (j + 1)..i {
                    g += v[(k, j)] * d[k];
                    e[k] += v[(k, j)] * f;
                }
                e[j] = g;
            }
            f = T::zero();
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    let delta = f * e[k] + g * d[k];
                    v[(k, j)] -= delta;
                }
                d[j] = v[(i - 1, j)];
                v[(i, j)] = T::zero();
            }
        }
        d[i] = h;
    }

    for i in 0..n.saturating_sub(1) {
        v[(n - 1, i)] = v[(i, i)];
        v[(i, i)] = T::one();
        let h = d[i + 1];
        if h != T::zero() {
            for k in 0..=i {
                d[k] = v[(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = T::zero();
                for k in 0..=i {
                    g += v[(k, i + 1)] * v[(k, j)];
                }
                for k in 0..=i {
                    let delta = g * d[k];
                    v[(k, j)] -= delta;
                }
            }
        }
        for k in 0..=i {
            v[(k, i + 1)] = T::zero();
        }
    }
    for j in 0..n {
        d[j] = v[(n - 1, j)];
        v[(n - 1, j)] = T::zero();
    }
    v[(n - 1, n - 1)] = T::one();
    e[0] = T::zero();
}

// Implicit QL iterations on the tridiagonal form (EISPACK tql2).
fn tridiagonal_ql<T: Scalar>(v: &mut Matrix<T>, d: &mut [T], e: &mut [T]) -> Result<()> {
    let n = d.len();
    let max_iter = 60 * n.max(1);
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = T::zero();

    let two = T::of(2.0);
    let eps = T::epsilon();
    let mut f = T::zero();
    let mut tst1 = T::zero();
    let mut total_iter = 0usize;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            loop {
                total_iter += 1;
                if total_iter > max_iter {
                    return Err(Error::NoConvergence(max_iter));
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (two * e[l]);
                let mut r = p.hypot(T::one());
                if p < T::zero() {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = T::one();
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = T::zero();
                let mut s2 = T::zero();
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        let hk = v[(k, i + 1)];
                        let vk = v[(k, i)];
                        v[(k, i + 1)] = s * vk + c * hk;
                        v[(k, i)] = c * vk - s * hk;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = T::zero();
    }
    Ok(())
}

/// Principal square root of a symmetric positive semidefinite matrix.
///
/// Eigenvalues within `1e-10·trace` of zero are treated as rounding noise
/// and set to zero; anything more negative is rejected.
pub fn spd_sqrt<T: Scalar>(a: &Matrix<T>) -> Result<Matrix<T>> {
    let eig = sym_eig(a)?;
    let clip = clip_threshold(a);
    check_psd(&eig, clip)?;
    Ok(eig.reconstruct_with(|l| if l <= clip { T::zero() } else { l.sqrt() }))
}

fn check_psd<T: Scalar>(eig: &SymEig<T>, clip: T) -> Result<()> {
    // values are sorted descending
    let min = *eig.values.last().expect("nonempty spectrum");
    if min < -clip {
        return Err(Error::NotPsd {
            eigenvalue: min.to_f64_lossy(),
            tolerance: clip.to_f64_lossy(),
        });
    }
    Ok(())
}

/// `Tr((Σ₁Σ₂)^{1/2})`, evaluated through the symmetric conjugate
/// `Σ₁^{1/2} Σ₂ Σ₁^{1/2}` which has the same spectrum.
pub fn cross_sqrt_trace<T: Scalar>(s1: &Matrix<T>, s2: &Matrix<T>) -> Result<T> {
    if s1.rows() != s2.rows() || s1.cols() != s2.cols() {
        return Err(Error::dim(format!(
            "covariances are {}x{} and {}x{}",
            s1.rows(),
            s1.cols(),
            s2.rows(),
            s2.cols()
        )));
    }
    s2.check_symmetric()?;
    let root = spd_sqrt(s1)?;
    let mut inner = root.matmul(s2)?.matmul(&root)?;
    inner.symmetrize();
    let eig = sym_eig(&inner)?;
    let clip = clip_threshold(&inner);
    check_psd(&eig, clip)?;
    Ok(eig.values.iter().filter(|&&l| l > clip).map(|&l| l.sqrt()).sum())
}

/// Cholesky factor `L` with `A = L Lᵀ`; `None` when `A` is not positive
/// definite.
pub fn cholesky<T: Scalar>(a: &Matrix<T>) -> Option<Matrix<T>> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if diag <= T::zero() || !diag.is_finite() {
            return None;
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Some(l)
}

/// Solves `L Lᵀ x = b` given the Cholesky factor.
pub fn cholesky_solve<T: Scalar>(l: &Matrix<T>, b: &[T]) -> Vec<T> {
    let n = l.rows();
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// Inverse of an SPD matrix from its Cholesky factor.
pub fn cholesky_inverse<T: Scalar>(l: &Matrix<T>) -> Matrix<T> {
    let n = l.rows();
    let mut inv = Matrix::zeros(n, n);
    let mut e = vec![T::zero(); n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = T::zero());
        e[j] = T::one();
        let col = cholesky_solve(l, &e);
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
    }
    inv.symmetrize();
    inv
}

/// `log det A` from the Cholesky factor.
pub fn cholesky_log_det<T: Scalar>(l: &Matrix<T>) -> T {
    l.diag().into_iter().map(|v| v.ln()).sum::<T>() * T::of(2.0)
}

/// Rows of `z` reordered lexicographically (total order on floats), so that
/// downstream reductions do not depend on the input row order.
fn canonical_row_order<T: Scalar>(z: &Matrix<T>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..z.rows()).collect();
    order.sort_by(|&a, &b| {
        z.row(a)
            .iter()
            .zip(z.row(b))
            .map(|(x, y)| x.partial_cmp(y).unwrap_or(Ordering::Equal))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    order
}

/// Column means of the feature rows, `m = (1/N) Σ zᵢ`.
pub fn batch_mean<T: Scalar>(z: &Matrix<T>) -> Result<Vec<T>> {
    if z.rows() == 0 {
        return Err(Error::Empty("batch mean of zero rows".into()));
    }
    let mut sum = vec![T::zero(); z.cols()];
    for i in canonical_row_order(z) {
        for (s, &v) in sum.iter_mut().zip(z.row(i)) {
            *s += v;
        }
    }
    let n = T::of(z.rows() as f64);
    Ok(sum.into_iter().map(|s| s / n).collect())
}

/// Population covariance `Σ = (1/N) Σ (zᵢ − m)(zᵢ − m)ᵀ`.
pub fn batch_cov<T: Scalar>(z: &Matrix<T>) -> Result<Matrix<T>> {
    if z.rows() < 2 {
        return Err(Error::Empty(format!(
            "covariance needs at least 2 rows, got {}",
            z.rows()
        )));
    }
    let mean = batch_mean(z)?;
    let d = z.cols();
    let mut centered = Vec::with_capacity(z.rows() * d);
    for i in canonical_row_order(z) {
        centered.extend(z.row(i).iter().zip(&mean).map(|(&v, &m)| v - m));
    }
    let centered = Matrix {
        rows: z.rows(),
        cols: d,
        data: centered,
    };
    Ok(centered.gram().scale(T::one() / T::of(z.rows() as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
        let b = Matrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut a = b.gram();
        a.add_to_diag(1.0);
        a
    }

    fn frob_diff(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
        a.sub(b).unwrap().frobenius_norm()
    }

    #[test]
    fn eig_identity() {
        let eig = sym_eig(&Matrix::<f64>::identity(3)).unwrap();
        for v in &eig.values {
            assert!((v - 1.0).abs() < 1e-14);
        }
        let vtv = eig.vectors.gram();
        assert!(frob_diff(&vtv, &Matrix::identity(3)) < 1e-12);
    }

    #[test]
    fn eig_diagonal_sorted_descending() {
        let eig = sym_eig(&Matrix::<f64>::from_diag(&[1.0, 4.0])).unwrap();
        assert_eq!(eig.values, vec![4.0, 1.0]);
        assert!((eig.vectors[(1, 0)].abs() - 1.0_f64).abs() < 1e-14);
        assert!((eig.vectors[(0, 1)].abs() - 1.0_f64).abs() < 1e-14);
    }

    #[test]
    fn eig_reconstructs_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [1, 2, 5, 8, 17] {
            let a = random_spd(n, &mut rng);
            let eig = sym_eig(&a).unwrap();
            let back = eig.reconstruct_with(|l| l);
            assert!(frob_diff(&back, &a) <= 1e-8 * a.frobenius_norm(), "n={n}");
            assert!(frob_diff(&eig.vectors.gram(), &Matrix::identity(n)) < 1e-10);
            assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn eig_rejects_bad_input() {
        let rect = Matrix::<f64>::zeros(2, 3);
        assert!(matches!(sym_eig(&rect), Err(Error::Dimension(_))));
        let asym = Matrix::new(2, 2, vec![1.0, 2.0, 0.0, 1.0]).unwrap();
        assert!(matches!(sym_eig(&asym), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn sqrt_closed_forms() {
        let s = spd_sqrt(&Matrix::<f64>::identity(4)).unwrap();
        assert!(frob_diff(&s, &Matrix::identity(4)) < 1e-14);
        let s = spd_sqrt(&Matrix::from_diag(&[9.0, 4.0])).unwrap();
        assert!(frob_diff(&s, &Matrix::from_diag(&[3.0, 2.0])) < 1e-14);
    }

    #[test]
    fn sqrt_multiplies_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_spd(12, &mut rng);
        let s = spd_sqrt(&a).unwrap();
        assert!(s.max_asymmetry() == 0.0);
        assert!(frob_diff(&s.matmul(&s).unwrap(), &a) <= 1e-7 * a.frobenius_norm());
    }

    #[test]
    fn sqrt_clamps_rounding_negatives_but_rejects_real_ones() {
        let a = Matrix::from_diag(&[1.0, -1e-13]);
        let s = spd_sqrt(&a).unwrap();
        assert_eq!(s[(1, 1)], 0.0);
        let b = Matrix::from_diag(&[1.0, -1e-3]);
        match spd_sqrt(&b) {
            Err(Error::NotPsd { eigenvalue, .. }) => assert_eq!(eigenvalue, -1e-3),
            other => panic!("expected NotPsd, got {other:?}"),
        }
    }

    #[test]
    fn cross_trace_closed_forms() {
        let i3 = Matrix::<f64>::identity(3);
        assert!((cross_sqrt_trace(&i3, &i3).unwrap() - 3.0).abs() < 1e-14);
        let a = Matrix::<f64>::from_diag(&[4.0]);
        let b = Matrix::from_diag(&[9.0]);
        assert!((cross_sqrt_trace(&a, &b).unwrap() - 6.0).abs() < 1e-14);
        assert!(cross_sqrt_trace(&i3, &Matrix::identity(2)).is_err());
    }

    #[test]
    fn cross_trace_commuting_pair() {
        // Oracle: shared eigenbasis Q, so the trace is Σ sqrt(λ1ᵢ λ2ᵢ).
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = sym_eig(&random_spd(6, &mut rng)).unwrap().vectors;
        let l1: Vec<f64> = (0..6).map(|_| rng.random_range(0.1..5.0)).collect();
        let l2: Vec<f64> = (0..6).map(|_| rng.random_range(0.1..5.0)).collect();
        let build = |l: &[f64]| {
            let mut m = q.matmul(&Matrix::from_diag(l)).unwrap().matmul(&q.transpose()).unwrap();
            m.symmetrize();
            m
        };
        let expected: f64 = l1.iter().zip(&l2).map(|(a, b)| (a * b).sqrt()).sum();
        let got = cross_sqrt_trace(&build(&l1), &build(&l2)).unwrap();
        assert!((got - expected).abs() < 1e-10 * expected);
    }

    #[test]
    fn cholesky_inverse_and_logdet() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_spd(7, &mut rng);
        let l = cholesky(&a).unwrap();
        let inv = cholesky_inverse(&l);
        assert!(frob_diff(&inv.matmul(&a).unwrap(), &Matrix::identity(7)) < 1e-10);
        let eig = sym_eig(&a).unwrap();
        let logdet: f64 = eig.values.iter().map(|v| v.ln()).sum();
        assert!((cholesky_log_det(&l) - logdet).abs() < 1e-10);
        assert!(cholesky(&Matrix::from_diag(&[1.0, 0.0])).is_none());
    }

    #[test]
    fn moments_hand_cases() {
        let z = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(batch_mean(&z).unwrap(), vec![2.0, 3.0]);
        let z = Matrix::from_rows(&[[5.0, -1.0]]).unwrap();
        assert_eq!(batch_mean(&z).unwrap(), vec![5.0, -1.0]);
        let z = Matrix::from_rows(&[[0.0, 0.0], [2.0, 0.0]]).unwrap();
        let cov = batch_cov(&z).unwrap();
        assert_eq!(cov.as_slice(), &[1.0, 0.0, 0.0, 0.0]);
        let z = Matrix::from_rows(&[[1.5, 2.5], [1.5, 2.5], [1.5, 2.5]]).unwrap();
        assert!(batch_cov(&z).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn moments_reject_small_batches() {
        let empty = Matrix::<f64>::zeros(0, 3);
        assert!(matches!(batch_mean(&empty), Err(Error::Empty(_))));
        let one = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert!(matches!(batch_cov(&one), Err(Error::Empty(_))));
    }

    #[test]
    fn mean_of_standard_normal_rows_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = Matrix::from_fn(1000, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
        // CLT: sd of each mean is 1/sqrt(1000) ≈ 0.032.
        assert!(batch_mean(&z).unwrap().iter().all(|m| m.abs() < 0.15));
    }

    #[test]
    fn cov_of_known_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        // x = (g1, 0.5 g1 + g2): Σ = [[1, .5], [.5, 1.25]]
        let mut rows = Vec::new();
        for _ in 0..5000 {
            let g1: f64 = rng.sample(StandardNormal);
            let g2: f64 = rng.sample(StandardNormal);
            rows.push([g1, 0.5 * g1 + g2]);
        }
        let cov = batch_cov(&Matrix::from_rows(&rows).unwrap()).unwrap();
        let truth = [1.0, 0.5, 0.5, 1.25];
        for (c, t) in cov.as_slice().iter().zip(truth) {
            assert!((c - t).abs() < 0.1);
        }
    }

    #[test]
    fn f32_path_works() {
        let a = Matrix::<f32>::from_diag(&[9.0, 4.0, 1.0]);
        let s = spd_sqrt(&a).unwrap();
        assert!((s[(0, 0)] - 3.0).abs() < 1e-5);
        assert!((cross_sqrt_trace(&a, &a).unwrap() - 14.0).abs() < 1e-4);
    }
}
