//! Small dense linear algebra over `f64`.
//!
//! Everything here is sized for the problems this crate solves: LSTM gate
//! matrices of a few dozen rows, AR normal equations of a few hundred rows and
//! Kalman covariances of a handful of states. No BLAS, no SIMD.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense column vector. Entries are finite when built through [`Vector::new`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::DimensionMismatch(
                "vector must have length >= 1".into(),
            ));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("vector"));
        }
        Ok(Self(data))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    /// Wraps data produced by arithmetic on already validated values.
    pub(crate) fn from_raw(data: Vec<f64>) -> Self {
        Self(data)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        check_len(self.len(), other.len(), "dot")?;
        Ok(dot(&self.0, &other.0))
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    pub fn sub(&self, other: &Vector) -> Result<Vector> {
        check_len(self.len(), other.len(), "sub")?;
        Ok(Self(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn add(&self, other: &Vector) -> Result<Vector> {
        check_len(self.len(), other.len(), "add")?;
        Ok(Self(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("matrix"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diag(&vec![1.0; n])
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    /// `(A + Aᵀ) / 2` for square matrices.
    pub fn symmetrize(&self) -> Result<Matrix> {
        self.add(&self.transpose()).map(|m| m.scale(0.5))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }
}

pub fn matvec(m: &Matrix, v: &Vector) -> Result<Vector> {
    if m.cols != v.len() {
        return Err(Error::DimensionMismatch(format!(
            "matvec {}x{} by vector of length {}",
            m.rows,
            m.cols,
            v.len()
        )));
    }
    Ok(Vector(
        (0..m.rows).map(|i| dot(m.row(i), v.as_slice())).collect(),
    ))
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Factorizes a symmetric positive definite matrix. Only the lower triangle
    /// of `a` is read. A pivot that is non-positive, or negligible relative to
    /// the largest diagonal entry, is reported as a singular system.
    pub fn factor(a: &Matrix) -> Result<Self> {
        if a.rows != a.cols {
            return Err(Error::DimensionMismatch(format!(
                "cholesky of non-square {}x{}",
                a.rows, a.cols
            )));
        }
        let n = a.rows;
        let max_diag = (0..n).map(|i| a.get(i, i).abs()).fold(0.0_f64, f64::max);
        let tol = max_diag * 1e-13;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a.get(j, j);
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if d.is_nan() || d <= tol {
                return Err(Error::SingularSystem { row: j, pivot: d });
            }
            let djj = d.sqrt();
            l[j * n + j] = djj;
            for i in (j + 1)..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / djj;
            }
        }
        Ok(Self { n, l })
    }

    #[allow(clippy::needless_range_loop)]
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        check_len(n, b.len(), "cholesky solve")?;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[k * n + i] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        Ok(y)
    }
}

/// Solves `a x = b` for symmetric positive definite `a` via Cholesky.
pub fn solve_spd(a: &Matrix, b: &Vector) -> Result<Vector> {
    let chol = Cholesky::factor(a)?;
    chol.solve(b.as_slice()).map(Vector)
}

pub fn sigmoid(v: &Vector) -> Vector {
    Vector(v.0.iter().map(|&x| sigmoid_scalar(x)).collect())
}

pub fn tanh_ew(v: &Vector) -> Vector {
    Vector(v.0.iter().map(|&x| tanh_scalar(x)).collect())
}

pub fn hadamard(u: &Vector, v: &Vector) -> Result<Vector> {
    check_len(u.len(), v.len(), "hadamard")?;
    Ok(Vector(u.0.iter().zip(&v.0).map(|(a, b)| a * b).collect()))
}

/// Largest `f64` strictly below one.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic function, evaluated without overflow for large negative inputs.
/// The result is kept strictly inside (0, 1): for x above ~37 the exact value
/// rounds to 1.0, so it is pinned to the largest double below one instead.
#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        (1.0 / (1.0 + (-x).exp())).min(BELOW_ONE)
    } else {
        let e = x.exp();
        (e / (1.0 + e)).max(f64::MIN_POSITIVE)
    }
}

/// `tanh` kept strictly inside (-1, 1) for the same reason as [`sigmoid_scalar`].
#[inline]
pub fn tanh_scalar(x: f64) -> f64 {
    x.tanh().clamp(-BELOW_ONE, BELOW_ONE)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!(
            "{what}: length {a} vs {b}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Vector {
        Vector::new(x.to_vec()).unwrap()
    }

    fn random_spd(n: usize, rng: &mut SeededRng) -> Matrix {
        let b = Matrix::new(n, n, (0..n * n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        let mut a = b.matmul(&b.transpose()).unwrap();
        for i in 0..n {
            a.set(i, i, a.get(i, i) + n as f64 * 0.1);
        }
        a
    }

    #[test]
    fn matvec_cases() {
        assert_eq!(
            matvec(&Matrix::identity(3), &v(&[1., 2., 3.])).unwrap(),
            v(&[1., 2., 3.])
        );
        assert_eq!(
            matvec(&Matrix::zeros(2, 2), &v(&[5., 7.])).unwrap(),
            v(&[0., 0.])
        );
        let m = Matrix::from_rows(&[vec![1., 2.], vec![3., 4.]]).unwrap();
        assert_eq!(matvec(&m, &v(&[1., 1.])).unwrap(), v(&[3., 7.]));
        assert!(matches!(
            matvec(&m, &v(&[1.])),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(Vector::new(vec![]).is_err());
        assert!(Vector::new(vec![f64::NAN]).is_err());
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::new(1, 1, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn solve_spd_cases() {
        assert_eq!(
            solve_spd(&Matrix::identity(2), &v(&[4., 9.])).unwrap(),
            v(&[4., 9.])
        );
        let d = Matrix::diag(&[2., 4.]);
        let x = solve_spd(&d, &v(&[2., 8.])).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn solve_spd_rejects_indefinite() {
        let a = Matrix::from_rows(&[vec![1., 2.], vec![2., 1.]]).unwrap();
        assert!(matches!(
            solve_spd(&a, &v(&[1., 1.])),
            Err(Error::SingularSystem { .. })
        ));
        let singular = Matrix::from_rows(&[vec![1., 1.], vec![1., 1.]]).unwrap();
        assert!(solve_spd(&singular, &v(&[1., 1.])).is_err());
    }

    #[test]
    fn solve_spd_random_8x8_residual() {
        let mut rng = SeededRng::new(11);
        let a = random_spd(8, &mut rng);
        let b = Vector::new((0..8).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        let x = solve_spd(&a, &b).unwrap();
        let r = matvec(&a, &x).unwrap().sub(&b).unwrap();
        assert!(r.norm() / b.norm() < 1e-10);
    }

    #[test]
    fn elementwise_ops() {
        assert_eq!(sigmoid(&v(&[0.])), v(&[0.5]));
        assert_eq!(tanh_ew(&v(&[0.])), v(&[0.]));
        assert_eq!(
            hadamard(&v(&[2., 3.]), &v(&[4., 5.])).unwrap(),
            v(&[8., 15.])
        );
        assert!(hadamard(&v(&[2.]), &v(&[4., 5.])).is_err());
    }

    proptest! {
        #[test]
        fn solve_spd_is_inverse_of_multiplication(n in 1usize..=50, seed in any::<u64>()) {
            let mut rng = SeededRng::new(seed);
            let a = random_spd(n, &mut rng);
            let b = Vector::new((0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
            let x = solve_spd(&a, &b).unwrap();
            let r = matvec(&a, &x).unwrap().sub(&b).unwrap();
            prop_assert!(r.norm() / b.norm() < 1e-10);
        }

        #[test]
        fn activations_stay_in_open_ranges(xs in prop::collection::vec(-50.0f64..50.0, 1..64)) {
            let x = Vector::new(xs).unwrap();
            prop_assert!(sigmoid(&x).iter().all(|&s| s > 0.0 && s < 1.0));
            prop_assert!(tanh_ew(&x).iter().all(|&t| t > -1.0 && t < 1.0));
        }
    }
}
