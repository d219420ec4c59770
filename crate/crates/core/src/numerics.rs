//! Dense matrices and LU solves.
//!
//! Systems in this crate have a handful of states, so everything is dense
//! and row-major. The LU routines also expose slice-level entry points that
//! the simulator uses in its inner loop without allocating.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Relative pivot threshold used by [`lu_factor`].
pub const PIVOT_RTOL: f64 = 1e-12;

/// Dense real matrix stored row-major.
#[derive(Clone, PartialEq)]
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

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input, so it is
    /// meant for literals; use [`Matrix::try_from_rows`] for external data.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Self {
        Self::try_from_rows(rows).expect("ragged rows")
    }

    pub fn try_from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dims(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Column vector.
    pub fn column(values: &[T]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn diag(values: &[T]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
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

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::dims(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] = out.data[i * rhs.cols + j] + a * rhs[(k, j)];
                }
            }
        }
        Ok(out)
    }

    /// `self * x` for a vector given as a slice.
    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.cols {
            return Err(Error::dims(format!(
                "matvec {}x{} by vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut out = vec![T::zero(); self.rows];
        self.matvec_into(x, &mut out);
        Ok(out)
    }

    /// Unchecked `out = self * x`; lengths are asserted in debug builds.
    pub fn matvec_into(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), x);
        }
    }

    /// Unchecked `out = selfᵀ * x`.
    pub fn matvec_t_into(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        out.iter_mut().for_each(|o| *o = T::zero());
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o = *o + a * xi;
            }
        }
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    fn zip_with(&self, rhs: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape() != rhs.shape() {
            return Err(Error::dims(format!(
                "elementwise {}x{} with {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Adds `alpha * a bᵀ` in place.
    pub fn add_outer(&mut self, alpha: T, a: &[T], b: &[T]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (i, &ai) in a.iter().enumerate() {
            let s = alpha * ai;
            if s == T::zero() {
                continue;
            }
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (r, &bj) in row.iter_mut().zip(b) {
                *r = *r + s * bj;
            }
        }
    }

    /// Euclidean norm for vectors, Frobenius norm for matrices.
    pub fn norm2(&self) -> T {
        norm2(&self.data)
    }

    /// Largest Euclidean row norm.
    pub fn max_row_norm(&self) -> T {
        (0..self.rows)
            .map(|i| norm2(self.row(i)))
            .fold(T::zero(), T::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl<T: Scalar> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

// Matrices travel as nested arrays of rows.
impl<T: Scalar> Serialize for Matrix<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.as_f64()).collect())
            .collect();
        rows.serialize(s)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for Matrix<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let rows: Vec<Vec<T>> = rows
            .into_iter()
            .map(|r| r.into_iter().map(T::lit).collect())
            .collect();
        Matrix::try_from_rows(&rows).map_err(D::Error::custom)
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm2<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
}

/// Partial-pivot LU factors, `P A = L U` with unit-diagonal `L`.
#[derive(Debug, Clone)]
pub struct LuFactors<T: Scalar> {
    lu: Matrix<T>,
    /// `perm[i]` is the row of `A` that ended up in row `i`.
    perm: Vec<usize>,
}

/// Factorizes a square matrix with partial pivoting.
///
/// A pivot whose magnitude does not exceed `1e-12 * max_row_norm(a)` is
/// reported as [`Error::SingularMatrix`].
pub fn lu_factor<T: Scalar>(a: &Matrix<T>) -> Result<LuFactors<T>> {
    if !a.is_square() {
        return Err(Error::dims(format!(
            "LU of a non-square {}x{} matrix",
            a.rows, a.cols
        )));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("LU input".into()));
    }
    let n = a.rows;
    let threshold = T::lit(PIVOT_RTOL) * a.max_row_norm();
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let (p, pivot) = (k..n)
            .map(|i| (i, lu[(i, k)].abs()))
            .fold((k, -T::one()), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pivot <= threshold {
            return Err(Error::SingularMatrix {
                column: k,
                pivot: pivot.as_f64(),
                threshold: threshold.as_f64(),
            });
        }
        if p != k {
            for j in 0..n {
                lu.data.swap(k * n + j, p * n + j);
            }
            perm.swap(k, p);
        }
        let d = lu[(k, k)];
        for i in k + 1..n {
            let f = lu[(i, k)] / d;
            lu[(i, k)] = f;
            if f == T::zero() {
                continue;
            }
            for j in k + 1..n {
                lu.data[i * n + j] = lu.data[i * n + j] - f * lu.data[k * n + j];
            }
        }
    }
    Ok(LuFactors { lu, perm })
}

/// Solves `A x = b` for a column `b`.
pub fn lu_solve<T: Scalar>(f: &LuFactors<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    f.check_rhs(b)?;
    let mut x = vec![T::zero(); b.rows];
    f.solve_into(b.as_slice(), &mut x);
    Ok(Matrix::column(&x))
}

/// Solves `Aᵀ x = b` for a column `b`.
pub fn lu_solve_transposed<T: Scalar>(f: &LuFactors<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    f.check_rhs(b)?;
    let mut x = vec![T::zero(); b.rows];
    f.solve_transposed_into(b.as_slice(), &mut x);
    Ok(Matrix::column(&x))
}

impl<T: Scalar> LuFactors<T> {
    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn combined(&self) -> &Matrix<T> {
        &self.lu
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Unit lower-triangular factor.
    pub fn l(&self) -> Matrix<T> {
        let n = self.dim();
        let mut l = Matrix::identity(n);
        for i in 0..n {
            for j in 0..i {
                l[(i, j)] = self.lu[(i, j)];
            }
        }
        l
    }

    pub fn u(&self) -> Matrix<T> {
        let n = self.dim();
        let mut u = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                u[(i, j)] = self.lu[(i, j)];
            }
        }
        u
    }

    /// `P A` reassembled from the factors, with rows put back in place.
    pub fn reconstruct(&self) -> Matrix<T> {
        let pa = self.l().matmul(&self.u()).expect("square factors");
        let n = self.dim();
        let mut a = Matrix::zeros(n, n);
        for (i, &p) in self.perm.iter().enumerate() {
            for j in 0..n {
                a[(p, j)] = pa[(i, j)];
            }
        }
        a
    }

    fn check_rhs(&self, b: &Matrix<T>) -> Result<()> {
        if b.cols != 1 || b.rows != self.dim() {
            return Err(Error::dims(format!(
                "right-hand side {}x{} for a system of size {}",
                b.rows,
                b.cols,
                self.dim()
            )));
        }
        Ok(())
    }

    /// Slice form of [`lu_solve`]; `b` and `x` must have length `dim()`.
    pub fn solve_into(&self, b: &[T], x: &mut [T]) {
        let n = self.dim();
        debug_assert!(b.len() == n && x.len() == n);
        for i in 0..n {
            let mut s = b[self.perm[i]];
            for j in 0..i {
                s = s - self.lu.data[i * n + j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s = s - self.lu.data[i * n + j] * x[j];
            }
            x[i] = s / self.lu.data[i * n + i];
        }
    }

    /// Slice form of [`lu_solve_transposed`].
    pub fn solve_transposed_into(&self, b: &[T], x: &mut [T]) {
        let mut work = vec![T::zero(); self.dim()];
        self.solve_transposed_with(b, &mut work, x);
    }

    /// [`solve_transposed_into`](Self::solve_transposed_into) with a
    /// caller-provided work vector of length `n`.
    pub fn solve_transposed_with(&self, b: &[T], w: &mut [T], x: &mut [T]) {
        // Aᵀ = Uᵀ Lᵀ P, so solve Uᵀ w = b, Lᵀ z = w, then x = Pᵀ z.
        let n = self.dim();
        debug_assert!(b.len() == n && x.len() == n && w.len() == n);
        w.copy_from_slice(b);
        for i in 0..n {
            let mut s = w[i];
            for j in 0..i {
                s = s - self.lu.data[j * n + i] * w[j];
            }
            w[i] = s / self.lu.data[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = w[i];
            for j in i + 1..n {
                s = s - self.lu.data[j * n + i] * w[j];
            }
            w[i] = s;
        }
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = w[i];
        }
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
///
/// Only the symmetric part of `a` is used.
pub fn symmetric_eigenvalues<T: Scalar>(a: &Matrix<T>) -> Result<Vec<T>> {
    if !a.is_square() {
        return Err(Error::dims("eigenvalues of a non-square matrix"));
    }
    let n = a.rows;
    let half = T::lit(0.5);
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = half * (a[(i, j)] + a[(j, i)]);
        }
    }
    let scale = m.norm2();
    for _sweep in 0..100 {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off.sqrt() <= T::epsilon() * scale || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<T> = (0..n).map(|i| m[(i, i)]).collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Ok(ev)
}
