use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub struct LinearGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

fn dims<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>) -> Result<(usize, usize, usize)> {
    input.expect_rank("linear", 2)?;
    weights.expect_rank("linear", 2)?;
    let (n, din) = (input.shape()[0], input.shape()[1]);
    let (wdin, dout) = (weights.shape()[0], weights.shape()[1]);
    if din != wdin {
        return Err(Error::shape(
            "linear",
            format!("input width {din} does not match weight rows {wdin}"),
        ));
    }
    Ok((n, din, dout))
}

/// `y = x·W + b` for `x[N,Din]`, `W[Din,Dout]`.
pub fn linear<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, din, dout) = dims(input, weights)?;
    bias.expect_shape("linear bias", &[dout])?;
    let mut y = Vec::with_capacity(n * dout);
    for _ in 0..n {
        y.extend_from_slice(bias.data());
    }
    T::gemm(
        n,
        din,
        dout,
        T::one(),
        input.data(),
        din as isize,
        1,
        weights.data(),
        dout as isize,
        1,
        T::one(),
        &mut y,
        dout as isize,
        1,
    );
    Tensor::from_vec(&[n, dout], y)
}

pub fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let (n, din, dout) = dims(input, weights)?;
    grad_out.expect_shape("linear backward", &[n, dout])?;
    let g = grad_out.data();

    let mut d_input = vec![T::zero(); n * din];
    T::gemm(
        n,
        dout,
        din,
        T::one(),
        g,
        dout as isize,
        1,
        weights.data(),
        1,
        dout as isize,
        T::zero(),
        &mut d_input,
        din as isize,
        1,
    );
    let mut d_weights = vec![T::zero(); din * dout];
    T::gemm(
        din,
        n,
        dout,
        T::one(),
        input.data(),
        1,
        din as isize,
        g,
        dout as isize,
        1,
        T::zero(),
        &mut d_weights,
        dout as isize,
        1,
    );
    let mut d_bias = vec![T::zero(); dout];
    for row in g.chunks_exact(dout) {
        for (b, &v) in d_bias.iter_mut().zip(row) {
            *b += v;
        }
    }
    Ok(LinearGrads {
        input: Tensor::from_vec(&[n, din], d_input)?,
        weights: Tensor::from_vec(&[din, dout], d_weights)?,
        bias: Tensor::from_vec(&[dout], d_bias)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights() {
        let x = Tensor::<f64>::from_fn(&[3, 4], |i| i as f64 - 5.0);
        let w = Tensor::from_fn(&[4, 4], |i| if i % 5 == 0 { 1.0 } else { 0.0 });
        let y = linear(&x, &w, &Tensor::zeros(&[4])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn forced_arithmetic() {
        let x = Tensor::<f64>::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![1.0, 1.0]).unwrap();
        assert_eq!(linear(&x, &w, &b).unwrap().data(), &[2.0, 3.0]);
    }

    #[test]
    fn mismatch_rejected() {
        let x = Tensor::<f64>::zeros(&[2, 3]);
        let w = Tensor::zeros(&[4, 2]);
        assert!(linear(&x, &w, &Tensor::zeros(&[2])).is_err());
    }
}
