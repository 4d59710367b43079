//! 2-D cross-correlation over NHWC batches, lowered to GEMM via per-sample im2col.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn new(stride: usize, pad: usize) -> Self {
        Self { stride, pad }
    }

    /// Padding that keeps the spatial size for odd kernels at stride 1.
    pub fn same(kernel: usize) -> Self {
        Self {
            stride: 1,
            pad: kernel / 2,
        }
    }
}

impl Default for ConvGeometry {
    fn default() -> Self {
        Self { stride: 1, pad: 0 }
    }
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub filters: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Copy)]
struct Dims {
    n: usize,
    h: usize,
    w: usize,
    din: usize,
    kh: usize,
    kw: usize,
    dout: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl Dims {
    fn patch(&self) -> usize {
        self.kh * self.kw * self.din
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }
}

fn check<T: Scalar>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    bias: &Tensor<T>,
    geom: ConvGeometry,
) -> Result<Dims> {
    input.expect_rank("conv2d", 4)?;
    filters.expect_rank("conv2d", 4)?;
    let (n, h, w, din) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (kh, kw, fdin, dout) = (
        filters.shape()[0],
        filters.shape()[1],
        filters.shape()[2],
        filters.shape()[3],
    );
    if fdin != din {
        return Err(Error::shape(
            "conv2d",
            format!("input has {din} channels but filters expect {fdin}"),
        ));
    }
    bias.expect_shape("conv2d bias", &[dout])?;
    if geom.stride == 0 {
        return Err(Error::arg("conv2d", "stride must be at least 1"));
    }
    if kh > h + 2 * geom.pad || kw > w + 2 * geom.pad {
        return Err(Error::shape(
            "conv2d",
            format!(
                "kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * geom.pad,
                w + 2 * geom.pad
            ),
        ));
    }
    Ok(Dims {
        n,
        h,
        w,
        din,
        kh,
        kw,
        dout,
        ho: (h + 2 * geom.pad - kh) / geom.stride + 1,
        wo: (w + 2 * geom.pad - kw) / geom.stride + 1,
        stride: geom.stride,
        pad: geom.pad,
    })
}

/// Gathers one sample's receptive fields into `cols[positions, kh*kw*din]`,
/// column order (ky, kx, c) to match the filter layout.
fn im2col<T: Scalar>(sample: &[T], d: &Dims, cols: &mut [T]) {
    let patch = d.patch();
    for oy in 0..d.ho {
        for ox in 0..d.wo {
            let row = &mut cols[(oy * d.wo + ox) * patch..][..patch];
            for ky in 0..d.kh {
                let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                for kx in 0..d.kw {
                    let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                    let dst = &mut row[(ky * d.kw + kx) * d.din..][..d.din];
                    if iy < 0 || ix < 0 || iy >= d.h as isize || ix >= d.w as isize {
                        dst.fill(T::zero());
                    } else {
                        let src = (iy as usize * d.w + ix as usize) * d.din;
                        dst.copy_from_slice(&sample[src..src + d.din]);
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], d: &Dims, sample_grad: &mut [T]) {
    let patch = d.patch();
    for oy in 0..d.ho {
        for ox in 0..d.wo {
            let row = &cols[(oy * d.wo + ox) * patch..][..patch];
            for ky in 0..d.kh {
                let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                if iy < 0 || iy >= d.h as isize {
                    continue;
                }
                for kx in 0..d.kw {
                    let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                    if ix < 0 || ix >= d.w as isize {
                        continue;
                    }
                    let src = &row[(ky * d.kw + kx) * d.din..][..d.din];
                    let dst = (iy as usize * d.w + ix as usize) * d.din;
                    for (g, &v) in sample_grad[dst..dst + d.din].iter_mut().zip(src) {
                        *g += v;
                    }
                }
            }
        }
    }
}

/// `input[N,H,W,Din] ⋆ filters[kh,kw,Din,Dout] + bias` (no kernel flip).
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    bias: &Tensor<T>,
    geom: ConvGeometry,
) -> Result<Tensor<T>> {
    let d = check(input, filters, bias, geom)?;
    let (patch, positions) = (d.patch(), d.positions());
    let in_stride = d.h * d.w * d.din;
    let out_stride = positions * d.dout;
    let mut out = vec![T::zero(); d.n * out_stride];
    let mut cols = vec![T::zero(); positions * patch];
    for s in 0..d.n {
        im2col(&input.data()[s * in_stride..][..in_stride], &d, &mut cols);
        let dst = &mut out[s * out_stride..][..out_stride];
        for row in dst.chunks_exact_mut(d.dout) {
            row.copy_from_slice(bias.data());
        }
        T::gemm(
            positions,
            patch,
            d.dout,
            T::one(),
            &cols,
            patch as isize,
            1,
            filters.data(),
            d.dout as isize,
            1,
            T::one(),
            dst,
            d.dout as isize,
            1,
        );
    }
    Tensor::from_vec(&[d.n, d.ho, d.wo, d.dout], out)
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    geom: ConvGeometry,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    backward_impl(input, filters, geom, grad_out, true)
}

/// As [`conv2d_backward`] but leaves `input` gradient zero (first layer of a network).
pub fn conv2d_backward_params<T: Scalar>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    geom: ConvGeometry,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    backward_impl(input, filters, geom, grad_out, false)
}

fn backward_impl<T: Scalar>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    geom: ConvGeometry,
    grad_out: &Tensor<T>,
    with_input: bool,
) -> Result<ConvGrads<T>> {
    let dout = filters.shape().get(3).copied().unwrap_or(0);
    let d = check(input, filters, &Tensor::zeros(&[dout.max(1)]), geom)?;
    grad_out.expect_shape("conv2d backward", &[d.n, d.ho, d.wo, d.dout])?;
    let (patch, positions) = (d.patch(), d.positions());
    let in_stride = d.h * d.w * d.din;
    let out_stride = positions * d.dout;

    let mut d_input = vec![T::zero(); input.len()];
    let mut d_filters = vec![T::zero(); filters.len()];
    let mut d_bias = vec![T::zero(); d.dout];
    let mut cols = vec![T::zero(); positions * patch];
    let mut d_cols = vec![T::zero(); positions * patch];

    for s in 0..d.n {
        let gy = &grad_out.data()[s * out_stride..][..out_stride];
        for row in gy.chunks_exact(d.dout) {
            for (b, &g) in d_bias.iter_mut().zip(row) {
                *b += g;
            }
        }
        im2col(&input.data()[s * in_stride..][..in_stride], &d, &mut cols);
        // dW[patch, dout] += cols^T · gy
        T::gemm(
            patch,
            positions,
            d.dout,
            T::one(),
            &cols,
            1,
            patch as isize,
            gy,
            d.dout as isize,
            1,
            T::one(),
            &mut d_filters,
            d.dout as isize,
            1,
        );
        if !with_input {
            continue;
        }
        // dcols[positions, patch] = gy · W^T
        T::gemm(
            positions,
            d.dout,
            patch,
            T::one(),
            gy,
            d.dout as isize,
            1,
            filters.data(),
            1,
            d.dout as isize,
            T::zero(),
            &mut d_cols,
            patch as isize,
            1,
        );
        col2im(&d_cols, &d, &mut d_input[s * in_stride..][..in_stride]);
    }

    Ok(ConvGrads {
        input: Tensor::from_vec(input.shape(), d_input)?,
        filters: Tensor::from_vec(filters.shape(), d_filters)?,
        bias: Tensor::from_vec(&[d.dout], d_bias)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_is_identity() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 4, 1], |i| (i as f64).sin());
        let f = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::zeros(&[1]);
        let y = conv2d(&x, &f, &b, ConvGeometry::default()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn all_ones_three_by_three() {
        let x = Tensor::<f64>::full(&[1, 4, 4, 1], 1.0);
        let f = Tensor::full(&[3, 3, 1, 1], 1.0);
        let y = conv2d(&x, &f, &Tensor::zeros(&[1]), ConvGeometry::default()).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 1]);
        assert!(y.data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn output_size_with_stride_and_padding() {
        let x = Tensor::<f32>::zeros(&[1, 7, 6, 2]);
        let f = Tensor::zeros(&[3, 3, 2, 4]);
        let y = conv2d(&x, &f, &Tensor::zeros(&[4]), ConvGeometry::new(2, 1)).unwrap();
        assert_eq!(y.shape(), &[1, 4, 3, 4]);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 4, 4, 3]);
        let f = Tensor::zeros(&[3, 3, 2, 4]);
        let err = conv2d(&x, &f, &Tensor::zeros(&[4]), ConvGeometry::default()).unwrap_err();
        assert!(err.to_string().contains("3 channels"), "{err}");
    }

    #[test]
    fn oversized_kernel_is_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 2, 2, 1]);
        let f = Tensor::zeros(&[5, 5, 1, 1]);
        assert!(conv2d(&x, &f, &Tensor::zeros(&[1]), ConvGeometry::default()).is_err());
        assert!(conv2d(&x, &f, &Tensor::zeros(&[1]), ConvGeometry::new(1, 2)).is_ok());
    }
}
