//! Dense row-major kernels and elementwise nonlinearities.
//!
//! Everything is `f64`. The checked functions return [`Error::Shape`] on a
//! dimension mismatch; the `*_acc` kernels used on hot paths assume
//! shapes were validated by the caller and only `debug_assert!` them.

use std::fmt;
use std::ops::{Deref, DerefMut};

use rand::Rng;

use crate::error::{Error, Result};

/// A dense vector. Diagonal peephole weights are stored as vectors too.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn ones(len: usize) -> Self {
        Vector(vec![1.0; len])
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Vector(vec![value; len])
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Vector(data)
    }

    pub fn random_uniform<R: Rng + ?Sized>(len: usize, bound: f64, rng: &mut R) -> Self {
        Vector((0..len).map(|_| rng.gen_range(-bound..=bound)).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        check_len("dot", self, other)?;
        Ok(dot(&self.0, &other.0))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn slice(&self, start: usize, len: usize) -> Vector {
        Vector(self.0[start..start + len].to_vec())
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Vector(data)
    }
}

impl AsRef<[f64]> for Vector {
    fn as_ref(&self) -> &[f64] {
        &self.0
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

impl FromIterator<f64> for Vector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Vector(iter.into_iter().collect())
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
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

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{rows}x{cols}"),
                format!("len {}", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for row in rows {
            if row.len() != n_cols {
                return Err(Error::shape("Matrix::from_rows", n_cols, row.len()));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: n_rows,
            cols: n_cols,
            data,
        })
    }

    pub fn random_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Matrix { rows, cols, data }
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copies `block` into this matrix with its top-left corner at `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Matrix) -> Result<()> {
        if r0 + block.rows > self.rows || c0 + block.cols > self.cols {
            return Err(Error::shape(
                "Matrix::set_block",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{} at ({r0},{c0})", block.rows, block.cols),
            ));
        }
        for r in 0..block.rows {
            let dst = (r0 + r) * self.cols + c0;
            self.data[dst..dst + block.cols].copy_from_slice(block.row(r));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl fmt::Display for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

fn check_len(op: &'static str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(op, format!("len {}", a.len()), format!("len {}", b.len())));
    }
    Ok(())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn matvec(m: &Matrix, v: &[f64]) -> Result<Vector> {
    if m.cols != v.len() {
        return Err(Error::shape(
            "matvec",
            format!("matrix {}x{}", m.rows, m.cols),
            format!("vector len {}", v.len()),
        ));
    }
    let mut out = Vector::zeros(m.rows);
    matvec_acc(m, v, &mut out);
    Ok(out)
}

/// `out += m · v`.
#[inline]
pub(crate) fn matvec_acc(m: &Matrix, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.cols, v.len());
    debug_assert_eq!(m.rows, out.len());
    for (o, row) in out.iter_mut().zip(m.data.chunks_exact(m.cols.max(1))) {
        *o += dot(row, v);
    }
}

/// `out += mᵀ · v`.
#[inline]
pub(crate) fn matvec_t_acc(m: &Matrix, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.rows, v.len());
    debug_assert_eq!(m.cols, out.len());
    if m.cols == 0 {
        return;
    }
    for (&vi, row) in v.iter().zip(m.data.chunks_exact(m.cols)) {
        if vi == 0.0 {
            continue;
        }
        for (o, w) in out.iter_mut().zip(row) {
            *o += vi * w;
        }
    }
}

/// `m += a · bᵀ`.
#[inline]
pub(crate) fn outer_acc(m: &mut Matrix, a: &[f64], b: &[f64]) {
    debug_assert_eq!(m.rows, a.len());
    debug_assert_eq!(m.cols, b.len());
    if m.cols == 0 {
        return;
    }
    for (&ai, row) in a.iter().zip(m.data.chunks_exact_mut(m.cols)) {
        if ai == 0.0 {
            continue;
        }
        for (r, bj) in row.iter_mut().zip(b) {
            *r += ai * bj;
        }
    }
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Result<Vector> {
    check_len("hadamard", a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| x * y).collect())
}

pub fn add(a: &[f64], b: &[f64]) -> Result<Vector> {
    check_len("add", a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| x + y).collect())
}

pub fn scale(alpha: f64, v: &[f64]) -> Vector {
    v.iter().map(|x| alpha * x).collect()
}

/// `y += alpha · x`.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) -> Result<()> {
    check_len("axpy", x, y)?;
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
    Ok(())
}

/// Stacks the arguments end to end, preserving argument order.
pub fn concat<V: AsRef<[f64]>>(parts: &[V]) -> Vector {
    let total = parts.iter().map(|p| p.as_ref().len()).sum();
    let mut out = Vec::with_capacity(total);
    for p in parts {
        out.extend_from_slice(p.as_ref());
    }
    Vector(out)
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    // Branching keeps exp() from overflowing for large |x|.
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(v: &[f64]) -> Vector {
    v.iter().map(|&x| sigmoid_scalar(x)).collect()
}

pub fn tanh(v: &[f64]) -> Vector {
    v.iter().map(|x| x.tanh()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matvec_examples() {
        let v = [1.0, 2.0, 3.0];
        assert_eq!(matvec(&Matrix::identity(3), &v).unwrap().as_slice(), &v);
        assert_eq!(
            matvec(&Matrix::zeros(2, 3), &[5.0, 5.0, 5.0]).unwrap().as_slice(),
            &[0.0, 0.0]
        );
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(matvec(&m, &[1.0, 1.0]).unwrap().as_slice(), &[3.0, 7.0]);
    }

    #[test]
    fn matvec_shape_error_names_both_shapes() {
        let err = matvec(&Matrix::zeros(2, 3), &[1.0, 2.0]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("len 2"), "{msg}");
    }

    #[test]
    fn hadamard_examples() {
        assert_eq!(hadamard(&[1.0, 2.0], &[3.0, 4.0]).unwrap().as_slice(), &[3.0, 8.0]);
        let v = [0.3, -1.2, 7.0];
        assert_eq!(hadamard(&v, &Vector::ones(3)).unwrap().as_slice(), &v);
        assert_eq!(hadamard(&v, &Vector::zeros(3)).unwrap().as_slice(), &[0.0; 3]);
        assert!(hadamard(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn nonlinearity_examples() {
        assert_eq!(sigmoid(&[0.0]).as_slice(), &[0.5]);
        assert_eq!(tanh(&[0.0]).as_slice(), &[0.0]);
        let s = sigmoid(&[1.7, -1.7]);
        assert!((s[0] + s[1] - 1.0).abs() < 1e-15);
        // saturates without NaN
        let s = sigmoid(&[-1000.0, 1000.0]);
        assert_eq!(s.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn plumbing_examples() {
        assert_eq!(concat(&[vec![1.0], vec![2.0, 3.0]]).as_slice(), &[1.0, 2.0, 3.0]);
        assert_eq!(concat(&[vec![4.0, 5.0]]).as_slice(), &[4.0, 5.0]);
        assert_eq!(scale(2.0, &[1.0, -1.0]).as_slice(), &[2.0, -2.0]);
        assert_eq!(add(&[1.0, 2.0], &[3.0, 4.0]).unwrap().as_slice(), &[4.0, 6.0]);
        let mut y = vec![1.0, 1.0];
        axpy(2.0, &[1.0, 2.0], &mut y).unwrap();
        assert_eq!(y, vec![3.0, 5.0]);
        assert!(axpy(1.0, &[1.0], &mut y).is_err());
    }

    #[test]
    fn transpose_and_outer_kernels() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let mut out = vec![0.0; 3];
        matvec_t_acc(&m, &[1.0, -1.0], &mut out);
        assert_eq!(out, vec![-3.0, -3.0, -3.0]);
        let mut acc = Matrix::zeros(2, 3);
        outer_acc(&mut acc, &[1.0, 2.0], &[1.0, 0.0, -1.0]);
        assert_eq!(acc.as_slice(), &[1.0, 0.0, -1.0, 2.0, 0.0, -2.0]);
    }

    #[test]
    fn set_block_bounds() {
        let mut m = Matrix::zeros(3, 3);
        m.set_block(1, 1, &Matrix::identity(2)).unwrap();
        assert_eq!(m.get(2, 2), 1.0);
        assert_eq!(m.get(0, 0), 0.0);
        assert!(m.set_block(2, 2, &Matrix::identity(2)).is_err());
    }

    fn vec_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-100.0..100.0f64, len)
    }

    proptest! {
        #[test]
        fn identity_matvec_is_identity(v in proptest::collection::vec(-1e6..1e6f64, 0..16)) {
            let out = matvec(&Matrix::identity(v.len()), &v).unwrap();
            prop_assert_eq!(out.as_slice(), v.as_slice());
        }

        #[test]
        fn matvec_distributes((rows, a, b, m) in (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
            (Just(r), vec_strategy(c), vec_strategy(c), vec_strategy(r * c))
        })) {
            let cols = a.len();
            let m = Matrix::from_vec(rows, cols, m).unwrap();
            let lhs = matvec(&m, &add(&a, &b).unwrap()).unwrap();
            let rhs = add(&matvec(&m, &a).unwrap(), &matvec(&m, &b).unwrap()).unwrap();
            for (x, y) in lhs.iter().zip(rhs.iter()) {
                let denom = x.abs().max(y.abs()).max(1.0);
                prop_assert!((x - y).abs() / denom < 1e-12);
            }
        }

        #[test]
        fn concat_len_and_associativity(a in vec_strategy(3), b in vec_strategy(2), c in vec_strategy(4)) {
            let ab = concat(&[a.clone(), b.clone()]);
            prop_assert_eq!(ab.len(), a.len() + b.len());
            let left = concat(&[ab.into_vec(), c.clone()]);
            let right = concat(&[a, concat(&[b, c]).into_vec()]);
            prop_assert_eq!(left, right);
        }

        #[test]
        fn nonlinearities_monotone(start in -30.0..30.0f64, step in 1e-3..1.0f64) {
            let grid: Vec<f64> = (0..20).map(|i| start + step * i as f64).collect();
            let s = sigmoid(&grid);
            let t = tanh(&grid);
            for w in s.windows(2) { prop_assert!(w[1] >= w[0]); }
            for w in t.windows(2) { prop_assert!(w[1] >= w[0]); }
            prop_assert!(s.iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert!(t.iter().all(|&x| (-1.0..=1.0).contains(&x)));
        }
    }
}
