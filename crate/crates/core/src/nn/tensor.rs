use std::fmt::Debug;

use num_traits::Float;

use crate::error::{Error, Result};

/// Element type of the differentiation engine: `f32` for training and
/// inference, `f64` for gradient checking.
pub trait Scalar: Float + Default + Debug + Send + Sync + std::iter::Sum + 'static {
    const BITS: u32;

    fn from_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` on strided row/column views.
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
}

macro_rules! impl_scalar {
    ($t:ty, $bits:expr, $gemm:path) => {
        impl Scalar for $t {
            const BITS: u32 = $bits;

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

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
                check_extent(a.len(), m, k, rsa, csa);
                check_extent(b.len(), k, n, rsb, csb);
                check_extent(c.len(), m, n, rsc, csc);
                // SAFETY: extents were checked against the slice lengths above
                // and `c` does not alias `a` or `b` (distinct borrows).
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
                    )
                }
            }
        }
    };
}

impl_scalar!(f32, 32, matrixmultiply::sgemm);
impl_scalar!(f64, 64, matrixmultiply::dgemm);

fn check_extent(len: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    assert!(rs >= 0 && cs >= 0, "negative strides are not used");
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows - 1) * rs as usize + (cols - 1) * cs as usize;
    assert!(last < len, "gemm operand out of bounds");
}

/// Row-major n-dimensional array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(Error::invalid(format!("tensor shape {shape:?} has a zero dimension")));
        }
        if expected != data.len() {
            return Err(Error::invalid(format!(
                "tensor shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), data.iter().map(|&v| T::from_f64(v)).collect())
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

    /// Size of the leading (batch) axis.
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Elements per entry of the leading axis.
    pub fn sample_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::invalid(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Gathers entries of the leading axis, in the given order.
    pub fn select(&self, indices: &[usize]) -> Tensor<T> {
        let s = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * s);
        for &i in indices {
            data.extend_from_slice(&self.data[i * s..(i + 1) * s]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor { shape, data }
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let s = self.sample_len();
        &self.data[i * s..(i + 1) * s]
    }

    /// Concatenates along the leading axis.
    pub fn concat_batches(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("no tensors to concatenate"))?;
        let tail = &first.shape[1..];
        let mut data = Vec::new();
        let mut batch = 0;
        for p in parts {
            if &p.shape[1..] != tail {
                return Err(Error::invalid("batch concatenation with mismatched sample shapes"));
            }
            batch += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = batch;
        Ok(Tensor { shape, data })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
