//! Dense row-major tensors over `f32` (training) or `f64` (gradient checks).

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating-point element type of a [`Tensor`].
pub trait Scalar:
    Float
    + Default
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    fn lit(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = alpha * a · b + beta * c` on strided row/column layouts.
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

impl Scalar for f32 {
    fn lit(x: f64) -> Self {
        x as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: &[f32],
        rsa: isize,
        csa: isize,
        b: &[f32],
        rsb: isize,
        csb: isize,
        beta: f32,
        c: &mut [f32],
        rsc: isize,
        csc: isize,
    ) {
        if m == 0 || n == 0 {
            return;
        }
        // SAFETY: callers pass slices covering the full strided extents.
        unsafe {
            matrixmultiply::sgemm(
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
}

impl Scalar for f64 {
    fn lit(x: f64) -> Self {
        x
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: &[f64],
        rsa: isize,
        csa: isize,
        b: &[f64],
        rsb: isize,
        csb: isize,
        beta: f64,
        c: &mut [f64],
        rsc: isize,
        csc: isize,
    ) {
        if m == 0 || n == 0 {
            return;
        }
        // SAFETY: callers pass slices covering the full strided extents.
        unsafe {
            matrixmultiply::dgemm(
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
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("tensor", format!("zero-sized dimension in {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let len: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
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

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_shape("zip_map", other.shape())?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_shape("add_assign", other.shape())?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for x in &mut self.data {
            *x *= factor;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum()
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &x| if x.abs() > acc { x.abs() } else { acc })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Size of the trailing axis.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("tensor has at least one axis")
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::lit(x.as_f64())).collect(),
        }
    }

    /// Slice `[start, start+len)` along the last axis.
    pub fn slice_last(&self, start: usize, len: usize) -> Result<Self> {
        let d = self.last_dim();
        if len == 0 || start + len > d {
            return Err(Error::shape(
                "slice_last",
                format!("range {start}..{} outside trailing axis {d}", start + len),
            ));
        }
        let rows = self.data.len() / d;
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&self.data[r * d + start..r * d + start + len]);
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = len;
        Ok(Self { shape, data })
    }

    /// Concatenate along the last axis; leading axes must agree.
    pub fn concat_last(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::arg("concat_last", "no tensors given"))?;
        let lead = &first.shape[..first.ndim() - 1];
        for p in parts {
            if &p.shape[..p.ndim() - 1] != lead {
                return Err(Error::shape(
                    "concat_last",
                    format!("leading axes {:?} vs {:?}", p.shape, first.shape),
                ));
            }
        }
        let rows: usize = lead.iter().product();
        let total: usize = parts.iter().map(|p| p.last_dim()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                let d = p.last_dim();
                data.extend_from_slice(&p.data[r * d..(r + 1) * d]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        Ok(Self { shape, data })
    }

    /// Row `i` of the leading axis as an owned tensor.
    pub fn index_first(&self, i: usize) -> Result<Self> {
        let n = self.shape[0];
        if i >= n || self.ndim() < 2 {
            return Err(Error::shape(
                "index_first",
                format!("index {i} into {:?}", self.shape),
            ));
        }
        let stride = self.data.len() / n;
        Ok(Self {
            shape: self.shape[1..].to_vec(),
            data: self.data[i * stride..(i + 1) * stride].to_vec(),
        })
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::arg("stack", "no tensors given"))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            t.expect_shape("stack", first.shape())?;
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Self { shape, data })
    }

    pub(crate) fn expect_shape(&self, op: &'static str, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::shape(
                op,
                format!("expected {shape:?}, got {:?}", self.shape),
            ));
        }
        Ok(())
    }

    pub(crate) fn expect_rank(&self, op: &'static str, rank: usize) -> Result<()> {
        if self.ndim() != rank {
            return Err(Error::shape(
                op,
                format!("expected rank {rank}, got shape {:?}", self.shape),
            ));
        }
        Ok(())
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?} [", self.shape)?;
        for (i, x) in self.data.iter().take(PREVIEW).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{x:?}")?;
        }
        if self.data.len() > PREVIEW {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

/// An `[H, W, D]` activation map tagged with the layer that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T = f32> {
    pub tensor: Tensor<T>,
    pub layer_index: usize,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(tensor: Tensor<T>, layer_index: usize) -> Result<Self> {
        tensor.expect_rank("feature_map", 3)?;
        Ok(Self {
            tensor,
            layer_index,
        })
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn depth(&self) -> usize {
        self.tensor.shape()[2]
    }
}
