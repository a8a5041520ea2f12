//! Dense tensors in sample × channel × height × width layout.

use std::fmt;

use crate::error::{Error, Result};
use crate::memory::Buffer;

/// Element type of a [`Tensor`]: `f32` for training, `f64` for gradient checks.
pub trait Real:
    num_traits::Float
    + num_traits::NumAssign
    + std::iter::Sum
    + Default
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + 'static
{
    const DTYPE: &'static str;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    /// `C ← α·A·B + β·C` on strided row/column views.
    ///
    /// # Safety
    /// Every index reachable through the given extents and strides must lie
    /// inside the backing slices.
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
}

impl Real for f32 {
    const DTYPE: &'static str = "real32";
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
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
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    const DTYPE: &'static str = "real64";
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
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
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// A strided matrix view over a slice: `(rows, cols, row_stride, col_stride)`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MatLayout {
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl MatLayout {
    pub fn row_major(rows: usize, cols: usize) -> Self {
        MatLayout {
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        MatLayout {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn span(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
        }
    }
}

/// `c ← a·b` (or `c += a·b` when `accumulate`).
pub(crate) fn gemm<T: Real>(
    a: &[T],
    la: MatLayout,
    b: &[T],
    lb: MatLayout,
    c: &mut [T],
    lc: MatLayout,
    accumulate: bool,
) {
    assert_eq!(la.cols, lb.rows, "gemm inner dimension");
    assert_eq!((la.rows, lb.cols), (lc.rows, lc.cols), "gemm output shape");
    assert!(la.span() <= a.len() && lb.span() <= b.len() && lc.span() <= c.len());
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: spans checked above.
    unsafe {
        T::gemm_raw(
            la.rows,
            la.cols,
            lb.cols,
            T::one(),
            a.as_ptr(),
            la.rs as isize,
            la.cs as isize,
            b.as_ptr(),
            lb.rs as isize,
            lb.cs as isize,
            beta,
            c.as_mut_ptr(),
            lc.rs as isize,
            lc.cs as isize,
        );
    }
}

#[derive(Clone)]
pub struct Tensor<T: Real> {
    shape: Vec<usize>,
    data: Buffer<T>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > 4 {
        return Err(Error::shape(format!("rank must be 1..=4, got {shape:?}")));
    }
    if shape.contains(&0) {
        return Err(Error::shape(format!("extents must be >= 1, got {shape:?}")));
    }
    Ok(shape.iter().product())
}

impl<T: Real> Tensor<T> {
    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Buffer::filled(len, value),
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len = check_shape(shape)?;
        if data.len() != len {
            return Err(Error::shape(format!(
                "data length {} does not match shape {shape:?} ({len} elements)",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Buffer::from_vec(data),
        })
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: Buffer::filled(1, value),
        }
    }

    pub fn zeros_like(other: &Tensor<T>) -> Self {
        Tensor {
            shape: other.shape.clone(),
            data: Buffer::filled(other.len(), T::zero()),
        }
    }

    /// Same shape as `self`, new contents. Panics on length mismatch.
    pub(crate) fn with_data(&self, data: Vec<T>) -> Self {
        assert_eq!(data.len(), self.len());
        Tensor {
            shape: self.shape.clone(),
            data: Buffer::from_vec(data),
        }
    }

    pub(crate) fn from_buffer(shape: Vec<usize>, data: Buffer<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data.into_vec()
    }

    pub fn is_scalar(&self) -> bool {
        self.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::shape(format!(
                "expected a scalar, got shape {:?}",
                self.shape
            )))
        }
    }

    /// `(samples, channels, height, width)` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [s, c, h, w] => Ok((s, c, h, w)),
            _ => Err(Error::shape(format!(
                "expected rank 4, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} to {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: Buffer::from_vec(self.data.iter().map(|&x| U::from_f64(x.to_f64())).collect()),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        self.with_data(self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn zip_map(&self, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other)?;
        Ok(self.with_data(
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|x| x * c)
    }

    /// `self += other`, shapes must match.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        self.expect_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_f64(self.len() as f64)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub(crate) fn expect_same_shape(&self, other: &Tensor<T>) -> Result<()> {
        if self.shape == other.shape {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )))
        }
    }

    /// Arithmetic mean over `axes`, keeping reduced axes with extent 1 so the
    /// result broadcasts back against `self`.
    pub fn reduce_mean(&self, axes: &[usize]) -> Result<Self> {
        let rank = self.rank();
        let mut reduced = vec![false; rank];
        for &a in axes {
            if a >= rank {
                return Err(Error::shape(format!(
                    "axis {a} out of range for rank {rank}"
                )));
            }
            if reduced[a] {
                return Err(Error::shape(format!("axis {a} repeated")));
            }
            reduced[a] = true;
        }
        if axes.is_empty() {
            return Err(Error::shape("empty reduction axis set"));
        }
        let out_shape: Vec<usize> = self
            .shape
            .iter()
            .zip(&reduced)
            .map(|(&e, &r)| if r { 1 } else { e })
            .collect();
        let count: usize = self
            .shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| r)
            .map(|(&e, _)| e)
            .product();
        let mut out = vec![T::zero(); out_shape.iter().product()];
        for (flat, &x) in self.data.iter().enumerate() {
            out[self.reduced_index(flat, &out_shape)] += x;
        }
        let inv = T::one() / T::from_f64(count as f64);
        for v in &mut out {
            *v *= inv;
        }
        Tensor::from_vec(&out_shape, out)
    }

    /// Map a flat index of `self` to the flat index of a kept-dims reduction
    /// with shape `out_shape`.
    pub(crate) fn reduced_index(&self, mut flat: usize, out_shape: &[usize]) -> usize {
        let mut out_flat = 0;
        let mut out_stride = 1;
        for d in (0..self.rank()).rev() {
            let coord = flat % self.shape[d];
            flat /= self.shape[d];
            if out_shape[d] != 1 {
                out_flat += coord * out_stride;
            }
            out_stride *= out_shape[d];
        }
        out_flat
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("dtype", &T::DTYPE)
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl<T: Real> PartialEq for Tensor<T> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data[..] == other.data[..]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn construct_fill_and_data() {
        let z = Tensor::<f64>::zeros(&[2, 2]).unwrap();
        assert_eq!(z.data(), &[0.0; 4]);
        let r = Tensor::<f64>::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.shape(), &[1, 3]);
        assert_eq!(r.data(), &[1.0, 2.0, 3.0]);
        assert!(Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0]).is_err());
        assert!(Tensor::<f32>::zeros(&[2, 0]).is_err());
        assert!(Tensor::<f32>::zeros(&[]).is_err());
    }

    #[test]
    fn reduce_mean_examples() {
        let t = Tensor::<f64>::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.reduce_mean(&[0]).unwrap().item().unwrap(), 2.5);

        let c = Tensor::<f64>::full(&[2, 3, 2, 2], 1.75).unwrap();
        let m = c.reduce_mean(&[0, 1, 2, 3]).unwrap();
        assert_eq!(m.shape(), &[1, 1, 1, 1]);
        assert_eq!(m.item().unwrap(), 1.75);

        let t =
            Tensor::<f64>::from_vec(&[2, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0])
                .unwrap();
        let m = t.reduce_mean(&[2, 3]).unwrap();
        assert_eq!(m.shape(), &[2, 1, 1, 1]);
        assert_eq!(m.data(), &[2.5, 2.5]);
    }

    #[test]
    fn reduce_mean_rejects_bad_axes() {
        let t = Tensor::<f64>::zeros(&[2, 2]).unwrap();
        assert!(t.reduce_mean(&[2]).is_err());
        assert!(t.reduce_mean(&[]).is_err());
        assert!(t.reduce_mean(&[0, 0]).is_err());
    }

    #[test]
    fn reduce_mean_middle_axis() {
        let t = Tensor::<f64>::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(t.reduce_mean(&[1]).unwrap().data(), &[2.0, 5.0]);
        assert_eq!(t.reduce_mean(&[0]).unwrap().data(), &[2.5, 3.5, 4.5]);
    }

    proptest! {
        #[test]
        fn reduce_mean_is_linear(
            xs in proptest::collection::vec(-10.0f64..10.0, 24),
            ys in proptest::collection::vec(-10.0f64..10.0, 24),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let x = Tensor::from_vec(&[2, 3, 2, 2], xs).unwrap();
            let y = Tensor::from_vec(&[2, 3, 2, 2], ys).unwrap();
            let lhs = x.scale(a).add(&y.scale(b)).unwrap().reduce_mean(&[2, 3]).unwrap();
            let rhs = x.reduce_mean(&[2, 3]).unwrap().scale(a)
                .add(&y.reduce_mean(&[2, 3]).unwrap().scale(b)).unwrap();
            for (l, r) in lhs.data().iter().zip(rhs.data()) {
                prop_assert!((l - r).abs() <= 1e-12);
            }
        }
    }
}
