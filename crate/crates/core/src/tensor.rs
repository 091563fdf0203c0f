//! Dense `f64` vectors and row-major matrices, plus the handful of
//! elementwise kernels the recurrent cells need.
//!
//! Shape mismatches and non-finite results are programming errors here and
//! abort with a message naming the operation and the offending shapes.

use std::fmt;
use std::ops::{Deref, DerefMut};

#[derive(Clone, PartialEq, Default)]
pub struct Vector {
    data: Vec<f64>,
}

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[track_caller]
pub(crate) fn assert_finite(op: &str, xs: &[f64]) {
    if let Some(i) = xs.iter().position(|x| !x.is_finite()) {
        panic!("{op}: non-finite value {} at index {i}", xs[i]);
    }
}

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![0.0; len],
        }
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Self {
            data: vec![value; len],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        assert_finite("Vector::from_vec", &data);
        Self { data }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn add(&self, other: &Vector) -> Vector {
        check_len("add", self.len(), other.len());
        Vector::from_vec(self.iter().zip(other.iter()).map(|(a, b)| a + b).collect())
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Vector::from_vec(data)
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.data
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.data.iter()).finish()
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "Matrix::zeros: empty shape {rows}x{cols}");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert!(rows > 0 && cols > 0, "Matrix::from_vec: empty shape {rows}x{cols}");
        assert_eq!(
            data.len(),
            rows * cols,
            "Matrix::from_vec: {} values for a {rows}x{cols} matrix",
            data.len()
        );
        assert_finite("Matrix::from_vec", &data);
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(
            rows.iter().all(|r| r.len() == cols),
            "Matrix::from_rows: ragged rows"
        );
        Self::from_vec(rows.len(), cols, rows.concat())
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

    /// Column `c` as a vector; this is the product of the matrix with the
    /// `c`-th one-hot vector.
    pub fn column(&self, c: usize) -> Vector {
        assert!(c < self.cols, "Matrix::column: index {c} out of {} columns", self.cols);
        Vector {
            data: (0..self.rows).map(|r| self.data[r * self.cols + c]).collect(),
        }
    }

    pub fn add_to_column(&mut self, c: usize, v: &[f64]) {
        assert!(c < self.cols, "Matrix::add_to_column: index {c} out of {} columns", self.cols);
        check_len("add_to_column", self.rows, v.len());
        for (r, x) in v.iter().enumerate() {
            self.data[r * self.cols + c] += x;
        }
    }

    /// `out += self · v`
    #[track_caller]
    pub fn matvec_acc(&self, v: &[f64], out: &mut [f64]) {
        if v.len() != self.cols || out.len() != self.rows {
            panic!(
                "matvec: matrix {}x{} with vector of length {} into length {}",
                self.rows,
                self.cols,
                v.len(),
                out.len()
            );
        }
        for (row, o) in self.data.chunks_exact(self.cols).zip(out.iter_mut()) {
            *o += dot(row, v);
        }
    }

    /// `out += selfᵀ · v`
    #[track_caller]
    pub fn matvec_t_acc(&self, v: &[f64], out: &mut [f64]) {
        if v.len() != self.rows || out.len() != self.cols {
            panic!(
                "matvec_t: matrix {}x{} transposed with vector of length {} into length {}",
                self.rows,
                self.cols,
                v.len(),
                out.len()
            );
        }
        for (row, &a) in self.data.chunks_exact(self.cols).zip(v) {
            if a != 0.0 {
                axpy(a, row, out);
            }
        }
    }

    /// `self += a · bᵀ`
    #[track_caller]
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        if a.len() != self.rows || b.len() != self.cols {
            panic!(
                "add_outer: matrix {}x{} with outer product {}x{}",
                self.rows,
                self.cols,
                a.len(),
                b.len()
            );
        }
        for (row, &x) in self.data.chunks_exact_mut(self.cols).zip(a) {
            if x != 0.0 {
                axpy(x, b, row);
            }
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

#[track_caller]
fn check_len(op: &str, a: usize, b: usize) {
    if a != b {
        panic!("{op}: length {a} vs length {b}");
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators let the compiler vectorize the loop.
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `m · v`
#[track_caller]
pub fn matvec(m: &Matrix, v: &Vector) -> Vector {
    let mut out = Vector::zeros(m.rows());
    m.matvec_acc(v, &mut out);
    assert_finite("matvec", &out);
    out
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(v: &Vector) -> Vector {
    Vector::from_vec(v.iter().map(|&x| sigmoid_scalar(x)).collect())
}

pub fn tanh_v(v: &Vector) -> Vector {
    Vector::from_vec(v.iter().map(|x| x.tanh()).collect())
}

pub fn relu_v(v: &Vector) -> Vector {
    Vector::from_vec(v.iter().map(|&x| x.max(0.0)).collect())
}

#[track_caller]
pub fn hadamard(a: &Vector, b: &Vector) -> Vector {
    check_len("hadamard", a.len(), b.len());
    Vector::from_vec(a.iter().zip(b.iter()).map(|(x, y)| x * y).collect())
}

pub fn concat(a: &Vector, b: &Vector) -> Vector {
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a);
    data.extend_from_slice(b);
    Vector { data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matvec_examples() {
        let v = Vector::from(vec![1.0, 2.0, 3.0]);
        assert_eq!(matvec(&Matrix::identity(3), &v).as_slice(), &[1.0, 2.0, 3.0]);
        assert_eq!(matvec(&Matrix::zeros(2, 3), &v).as_slice(), &[0.0, 0.0]);
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matvec(&m, &Vector::from(vec![1.0, 1.0])).as_slice(), &[3.0, 7.0]);
    }

    #[test]
    #[should_panic(expected = "matrix 2x2 with vector of length 3")]
    fn matvec_names_both_shapes() {
        let m = Matrix::identity(2);
        matvec(&m, &Vector::zeros(3));
    }

    #[test]
    #[should_panic(expected = "non-finite")]
    fn non_finite_aborts() {
        let m = Matrix::from_rows(&[&[1e308, 1e308]]);
        matvec(&m, &Vector::from(vec![10.0, 10.0]));
    }

    #[test]
    fn activations() {
        let zero = Vector::zeros(1);
        assert_eq!(sigmoid(&zero)[0], 0.5);
        assert_eq!(tanh_v(&zero)[0], 0.0);
        assert_eq!(relu_v(&Vector::from(vec![-1.0, 2.0])).as_slice(), &[0.0, 2.0]);
        // 1 / (1 + e^-1) evaluated to 30 digits.
        let s1 = sigmoid(&Vector::from(vec![1.0]))[0];
        assert!((s1 - 0.731058578630004879251159261327).abs() < 1e-9);
    }

    #[test]
    fn hadamard_and_concat() {
        let a = Vector::from(vec![1.0, 2.0]);
        assert_eq!(hadamard(&a, &Vector::from(vec![3.0, 4.0])).as_slice(), &[3.0, 8.0]);
        assert_eq!(hadamard(&a, &Vector::filled(2, 1.0)), a);
        assert_eq!(hadamard(&a, &Vector::zeros(2)), Vector::zeros(2));
        let b = Vector::from(vec![2.0, 3.0]);
        assert_eq!(concat(&Vector::from(vec![1.0]), &b).as_slice(), &[1.0, 2.0, 3.0]);
        assert_eq!(concat(&Vector::zeros(0), &b), b);
        assert_eq!(concat(&Vector::zeros(256), &Vector::zeros(256)).len(), 512);
    }

    #[test]
    #[should_panic(expected = "hadamard")]
    fn hadamard_length_mismatch() {
        hadamard(&Vector::zeros(2), &Vector::zeros(3));
    }

    #[test]
    fn transposed_and_outer() {
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        let mut out = vec![0.0; 2];
        m.matvec_t_acc(&[1.0, 0.0, 1.0], &mut out);
        assert_eq!(out, vec![6.0, 8.0]);
        let mut z = Matrix::zeros(2, 3);
        z.add_outer(&[1.0, 2.0], &[1.0, 0.0, -1.0]);
        assert_eq!(z.as_slice(), &[1.0, 0.0, -1.0, 2.0, 0.0, -2.0]);
    }

    fn small_finite() -> impl Strategy<Value = f64> {
        -50.0f64..50.0
    }

    proptest! {
        #[test]
        fn activation_ranges(xs in prop::collection::vec(small_finite(), 1..20)) {
            let v = Vector::from(xs);
            // Beyond |x| ~ 37 the open interval is not representable in f64.
            prop_assert!(sigmoid(&v).iter().all(|&s| (0.0..=1.0).contains(&s)));
            prop_assert!(tanh_v(&v).iter().all(|&t| (-1.0..=1.0).contains(&t)));
            prop_assert!(relu_v(&v).iter().all(|&r| r >= 0.0));
        }

        #[test]
        fn activation_strict_ranges(xs in prop::collection::vec(-15.0f64..15.0, 1..20)) {
            let v = Vector::from(xs);
            prop_assert!(sigmoid(&v).iter().all(|&s| s > 0.0 && s < 1.0));
            prop_assert!(tanh_v(&v).iter().all(|&t| t > -1.0 && t < 1.0));
        }

        #[test]
        fn matvec_distributes(
            (rows, cols, m, a, b) in (1usize..6, 1usize..6).prop_flat_map(|(r, c)| (
                Just(r), Just(c),
                prop::collection::vec(-3.0f64..3.0, r * c),
                prop::collection::vec(-3.0f64..3.0, c),
                prop::collection::vec(-3.0f64..3.0, c),
            ))
        ) {
            let m = Matrix::from_vec(rows, cols, m);
            let (a, b) = (Vector::from(a), Vector::from(b));
            let lhs = matvec(&m, &a.add(&b));
            let rhs = matvec(&m, &a).add(&matvec(&m, &b));
            for (x, y) in lhs.iter().zip(rhs.iter()) {
                let scale = x.abs().max(y.abs()).max(1.0);
                prop_assert!((x - y).abs() <= 1e-12 * scale);
            }
        }

        #[test]
        fn concat_length(a in prop::collection::vec(-1.0f64..1.0, 0..10), b in prop::collection::vec(-1.0f64..1.0, 0..10)) {
            let (la, lb) = (a.len(), b.len());
            prop_assert_eq!(concat(&Vector::from(a), &Vector::from(b)).len(), la + lb);
        }
    }
}
