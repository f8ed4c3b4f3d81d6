//! Dense row-major matrices and the floating-point abstraction shared by the
//! model, the tape and the losses.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type. `f64` is used for gradient checks, `f32` for training.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    /// `c = alpha * a * b + beta * c` with explicit strides, `a` is m×k, `b` is k×n.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn from_f32_lossy(v: f32) -> Self;
    fn to_f32_lossy(self) -> f32;

    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite constant")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                assert!(a.len() >= if k == 0 { 0 } else { m * k });
                assert!(b.len() >= k * n);
                assert!(c.len() >= m * n);
                // SAFETY: slice lengths checked above; strides describe dense views inside them.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }

            #[inline]
            fn from_f32_lossy(v: f32) -> Self {
                v as $t
            }

            #[inline]
            fn to_f32_lossy(self) -> f32 {
                self as f32
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: S) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn scalar(value: S) -> Self {
        Self::from_vec(1, 1, vec![value])
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    pub fn item(&self) -> S {
        assert_eq!(self.data.len(), 1, "item() on non-scalar matrix");
        self.data[0]
    }

    pub fn add_assign(&mut self, other: &Matrix<S>) {
        assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: S) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn cast<T: Scalar>(&self) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|v| T::from_f64(v.as_f64()).unwrap_or_else(T::nan))
                .collect(),
        }
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix<S>) -> Matrix<S> {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = Matrix::zeros(self.rows, other.cols);
        S::gemm(
            self.rows,
            self.cols,
            other.cols,
            S::one(),
            &self.data,
            self.cols as isize,
            1,
            &other.data,
            other.cols as isize,
            1,
            S::zero(),
            &mut out.data,
            other.cols as isize,
            1,
        );
        out
    }

    /// `acc += selfᵀ * other`.
    pub fn matmul_tn_into(&self, other: &Matrix<S>, acc: &mut Matrix<S>) {
        assert_eq!(self.rows, other.rows, "matmul_tn inner dimension");
        assert_eq!(acc.shape(), (self.cols, other.cols));
        S::gemm(
            self.cols,
            self.rows,
            other.cols,
            S::one(),
            &self.data,
            1,
            self.cols as isize,
            &other.data,
            other.cols as isize,
            1,
            S::one(),
            &mut acc.data,
            acc.cols as isize,
            1,
        );
    }

    /// `acc += self * otherᵀ`.
    pub fn matmul_nt_into(&self, other: &Matrix<S>, acc: &mut Matrix<S>) {
        assert_eq!(self.cols, other.cols, "matmul_nt inner dimension");
        assert_eq!(acc.shape(), (self.rows, other.rows));
        S::gemm(
            self.rows,
            self.cols,
            other.rows,
            S::one(),
            &self.data,
            self.cols as isize,
            1,
            &other.data,
            1,
            other.cols as isize,
            S::one(),
            &mut acc.data,
            acc.cols as isize,
            1,
        );
    }
}

/// Numerically stable in-place softmax of one row, scaled by `1 / temperature`.
pub fn softmax_row<S: Scalar>(logits: &[S], temperature: S, out: &mut [S]) {
    let max = logits
        .iter()
        .fold(S::neg_infinity(), |m, &v| if v > m { v } else { m });
    let mut total = S::zero();
    for (o, &v) in out.iter_mut().zip(logits) {
        *o = ((v - max) / temperature).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o = *o / total;
    }
}

/// `log_softmax` of one row at the given temperature.
pub fn log_softmax_row<S: Scalar>(logits: &[S], temperature: S, out: &mut [S]) {
    let max = logits
        .iter()
        .fold(S::neg_infinity(), |m, &v| if v > m { v } else { m });
    let mut total = S::zero();
    for &v in logits {
        total += ((v - max) / temperature).exp();
    }
    let log_z = total.ln();
    for (o, &v) in out.iter_mut().zip(logits) {
        *o = (v - max) / temperature - log_z;
    }
}
