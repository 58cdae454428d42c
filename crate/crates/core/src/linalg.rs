//! Dense value types, inter-layer projections and the seeded random source.

use std::ops::{Deref, DerefMut};

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{invalid, shape, Result};

/// Dense `f64` column vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn from_fn(len: usize, f: impl FnMut(usize) -> f64) -> Self {
        Self((0..len).map(f).collect())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    pub fn norm(&self) -> f64 {
        self.dot(&self.0).sqrt()
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &[f64]) {
        debug_assert_eq!(self.len(), other.len());
        for (s, o) in self.0.iter_mut().zip(other) {
            *s += alpha * o;
        }
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl From<&[f64]> for Vector {
    fn from(v: &[f64]) -> Self {
        Self(v.to_vec())
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-major dense matrix with fixed dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(shape("ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `A x`.
    pub fn matvec(&self, x: &[f64]) -> Vector {
        let mut out = Vector::zeros(self.rows);
        self.matvec_into(x, &mut out);
        out
    }

    pub(crate) fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o = dot(row, x);
        }
    }

    /// `Aᵀ x`.
    pub fn matvec_t(&self, x: &[f64]) -> Vector {
        assert_eq!(x.len(), self.rows, "matvec_t dimension mismatch");
        let mut out = Vector::zeros(self.cols);
        for (xi, row) in x.iter().zip(self.data.chunks_exact(self.cols)) {
            if *xi != 0.0 {
                for (o, a) in out.iter_mut().zip(row) {
                    *o += xi * a;
                }
            }
        }
        out
    }

    /// `A B`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                for (o, b) in out.row_mut(i).iter_mut().zip(src) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `self += alpha * u vᵀ`.
    pub fn add_outer(&mut self, alpha: f64, u: &[f64], v: &[f64]) {
        assert_eq!((u.len(), v.len()), (self.rows, self.cols));
        for (ui, row) in u.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            let s = alpha * ui;
            if s != 0.0 {
                for (r, vj) in row.iter_mut().zip(v) {
                    *r += s * vj;
                }
            }
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) {
        assert_eq!(self.shape(), other.shape());
        for (s, o) in self.data.iter_mut().zip(&other.data) {
            *s += alpha * o;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|x| *x *= alpha);
    }

    pub fn frobenius_norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Largest singular value.
    pub fn spectral_norm(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        let m = nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.data);
        m.singular_values().max()
    }

    /// Truncates or zero-pads every column to `to_rows` rows.
    pub fn project_rows(&self, to_rows: usize) -> Matrix {
        if to_rows == self.rows {
            return self.clone();
        }
        let mut out = Matrix::zeros(to_rows, self.cols);
        for i in 0..to_rows.min(self.rows) {
            out.row_mut(i).copy_from_slice(self.row(i));
        }
        out
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Projection between layers of different width: keeps the leading
/// `to_width` entries and zero-pads when widening.
///
/// As a matrix this is the rectangular identity, so its transpose is again
/// `project` back to the source width.
pub fn project(v: &[f64], to_width: usize) -> Vector {
    let mut out = Vector::zeros(to_width);
    let n = to_width.min(v.len());
    out[..n].copy_from_slice(&v[..n]);
    out
}

/// `out += alpha * P v` without materializing `P v`.
pub(crate) fn add_projected(out: &mut [f64], alpha: f64, v: &[f64]) {
    for (o, x) in out.iter_mut().zip(v) {
        *o += alpha * x;
    }
}

/// Seeded counter-based random stream (ChaCha8).
///
/// Streams are identical across platforms for the same seed. The state is an
/// explicit value; nothing here touches global state.
#[derive(Debug, Clone)]
pub struct RngState {
    inner: ChaCha8Rng,
}

impl RngState {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream `stream` derived from the same seed.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    /// Uniform draw in `[0, 1)` with 53 random mantissa bits.
    pub fn next_unit(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> Result<f64> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(invalid(format!("uniform range [{lo}, {hi}) is empty")));
        }
        let x = lo + (hi - lo) * self.next_unit();
        // rounding can land exactly on hi for tiny ranges
        Ok(if x < hi { x } else { lo })
    }
}

/// Value-passing form of [`RngState::uniform`].
pub fn rng_uniform(mut state: RngState, lo: f64, hi: f64) -> Result<(f64, RngState)> {
    let x = state.uniform(lo, hi)?;
    Ok((x, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn project_cases() {
        assert_eq!(&*project(&[1.0, 2.0, 3.0], 2), &[1.0, 2.0]);
        assert_eq!(&*project(&[1.0, 2.0, 3.0], 3), &[1.0, 2.0, 3.0]);
        assert_eq!(&*project(&[1.0, 2.0], 4), &[1.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn project_same_width_is_bitwise_identity() {
        let v = [0.1f64, -3.7e-300, f64::MIN_POSITIVE, 1.0 / 3.0];
        let p = project(&v, 4);
        for (a, b) in v.iter().zip(p.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rng_range_and_determinism() {
        let (a, s) = rng_uniform(RngState::from_seed(0), 0.0, 1.0).unwrap();
        let (b, _) = rng_uniform(s, 0.0, 1.0).unwrap();
        assert!((0.0..1.0).contains(&a) && (0.0..1.0).contains(&b));
        assert_ne!(a, b);

        let mut r1 = RngState::from_seed(42);
        let mut r2 = RngState::from_seed(42);
        for _ in 0..100 {
            assert_eq!(
                r1.uniform(-2.0, 5.0).unwrap().to_bits(),
                r2.uniform(-2.0, 5.0).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn rng_rejects_empty_range() {
        assert!(RngState::from_seed(0).uniform(1.0, 1.0).is_err());
        assert!(RngState::from_seed(0).uniform(2.0, 1.0).is_err());
    }

    #[test]
    fn streams_are_independent() {
        let mut a = RngState::with_stream(7, 0);
        let mut b = RngState::with_stream(7, 1);
        assert_ne!(a.next_unit(), b.next_unit());
    }

    #[test]
    fn matvec_and_transpose_agree() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(&*a.matvec(&[1.0, 0.0, -1.0]), &[-2.0, -2.0]);
        assert_eq!(&*a.matvec_t(&[1.0, 1.0]), &[5.0, 7.0, 9.0]);
        assert_eq!(a.transpose().matvec(&[1.0, 1.0]), a.matvec_t(&[1.0, 1.0]));
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let mut d = Matrix::zeros(3, 3);
        d[(0, 0)] = 1.0;
        d[(1, 1)] = -4.0;
        d[(2, 2)] = 2.0;
        assert!((d.spectral_norm() - 4.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn project_is_linear(
            u in proptest::collection::vec(-10.0f64..10.0, 1..8),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
            to in 1usize..10,
        ) {
            let v: Vec<f64> = u.iter().map(|x| x * 0.5 - 1.0).collect();
            let combo: Vec<f64> = u.iter().zip(&v).map(|(a, b)| alpha * a + beta * b).collect();
            let lhs = project(&combo, to);
            let pu = project(&u, to);
            let pv = project(&v, to);
            for i in 0..to {
                let rhs = alpha * pu[i] + beta * pv[i];
                prop_assert!((lhs[i] - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
            }
        }
    }
}
