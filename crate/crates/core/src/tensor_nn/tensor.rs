use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::{Error, Result};

/// Element type of the engine. Training runs in `f32`, gradient checks in
/// `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    /// Raw GEMM: `C = alpha * A * B + beta * C` with element strides.
    ///
    /// # Safety
    /// Every addressed element of `a`, `b` and `c` must be in bounds, and `c`
    /// must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal fits the scalar type")
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Strided read-only matrix view.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rs: usize,
    pub cs: usize,
}

/// Strided writable matrix view.
pub(crate) struct MatMut<'a, T> {
    pub data: &'a mut [T],
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> MatRef<'a, T> {
    /// Row-major `rows x cols` matrix.
    pub fn rows(data: &'a [T], cols: usize) -> Self {
        MatRef { data, rs: cols, cs: 1 }
    }

    /// Transpose of a row-major matrix with `cols` columns.
    pub fn rows_t(data: &'a [T], cols: usize) -> Self {
        MatRef { data, rs: 1, cs: cols }
    }
}

impl<'a, T> MatMut<'a, T> {
    pub fn rows(data: &'a mut [T], cols: usize) -> Self {
        MatMut { data, rs: cols, cs: 1 }
    }
}

fn last_index(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    (rows - 1) * rs + (cols - 1) * cs
}

/// `C[m x n] = alpha * A[m x k] * B[k x n] + beta * C`, bounds-checked.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: MatRef<'_, T>,
    b: MatRef<'_, T>,
    beta: T,
    c: MatMut<'_, T>,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(last_index(m, n, c.rs, c.cs) < c.data.len(), "gemm: C out of bounds");
    if k > 0 {
        assert!(last_index(m, k, a.rs, a.cs) < a.data.len(), "gemm: A out of bounds");
        assert!(last_index(k, n, b.rs, b.cs) < b.data.len(), "gemm: B out of bounds");
    }
    // SAFETY: bounds checked above; `c` is a unique borrow so it cannot alias.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr(),
            c.rs as isize,
            c.cs as isize,
        )
    }
}

/// Shape-tagged dense array, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape(format!("tensor dimensions must be positive, got {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape(format!("shape {shape:?} needs {len} values, got {}", data.len())));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape, values.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::shape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_shape_checks() {
        assert!(Tensor::<f64>::new(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(Tensor::<f64>::new(&[2, 3], vec![0.0; 5]), Err(Error::Shape(_))));
        assert!(matches!(Tensor::<f64>::new(&[0, 3], vec![]), Err(Error::Shape(_))));
        let t = Tensor::<f32>::zeros(&[2, 3]).reshape(&[6]).unwrap();
        assert_eq!(t.shape(), &[6]);
        assert!(t.reshape(&[4]).is_err());
    }

    #[test]
    fn gemm_with_transposed_views() {
        // A = [[1,2],[3,4]], B = [[5,6],[7,8]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        gemm(2, 2, 2, 1.0, MatRef::rows(&a, 2), MatRef::rows(&b, 2), 0.0, MatMut::rows(&mut c, 2));
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        // A^T B
        gemm(2, 2, 2, 1.0, MatRef::rows_t(&a, 2), MatRef::rows(&b, 2), 0.0, MatMut::rows(&mut c, 2));
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        // accumulate A B^T onto it
        gemm(2, 2, 2, 1.0, MatRef::rows(&a, 2), MatRef::rows_t(&b, 2), 1.0, MatMut::rows(&mut c, 2));
        assert_eq!(c, [26.0 + 17.0, 30.0 + 23.0, 38.0 + 39.0, 44.0 + 53.0]);
    }

    #[test]
    #[should_panic(expected = "out of bounds")]
    fn gemm_rejects_short_buffers() {
        let a = [1.0f32; 3];
        let b = [1.0f32; 4];
        let mut c = [0.0f32; 4];
        gemm(2, 2, 2, 1.0, MatRef::rows(&a, 2), MatRef::rows(&b, 2), 0.0, MatMut::rows(&mut c, 2));
    }
}
