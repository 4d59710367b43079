use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Flat input offsets of each output cell's maximum, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct PoolIndices {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

/// 2×2 max pooling with stride 2 over `[N,H,W,D]`.
pub fn max_pool<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    input.expect_rank("max_pool", 4)?;
    let s = input.shape();
    let (n, h, w, d) = (s[0], s[1], s[2], s[3]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(
            "max_pool",
            format!("spatial dims must be even, got {h}x{w}"),
        ));
    }
    let (ho, wo) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * ho * wo * d);
    let mut argmax = Vec::with_capacity(n * ho * wo * d);
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                for c in 0..d {
                    // row-major scan; strict > keeps the first occurrence on ties
                    let mut best = ((b * h + 2 * oy) * w + 2 * ox) * d + c;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * d + c;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(&[n, ho, wo, d], out)?,
        PoolIndices {
            input_shape: s.to_vec(),
            argmax,
        },
    ))
}

pub fn max_pool_backward<T: Scalar>(
    indices: &PoolIndices,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if grad_out.len() != indices.argmax.len() {
        return Err(Error::shape(
            "max_pool backward",
            format!(
                "gradient has {} values, pooled output had {}",
                grad_out.len(),
                indices.argmax.len()
            ),
        ));
    }
    let mut grad = Tensor::zeros(&indices.input_shape);
    let g = grad.data_mut();
    for (&idx, &v) in indices.argmax.iter().zip(grad_out.data()) {
        g[idx] += v;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forced_maximum() {
        let x = Tensor::<f32>::from_vec(&[1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = max_pool(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn constant_map_quarters() {
        let x = Tensor::<f32>::full(&[2, 6, 4, 3], 0.5);
        let (y, _) = max_pool(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3, 2, 3]);
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn ties_route_to_first_in_scan_order() {
        let x = Tensor::<f32>::full(&[1, 2, 2, 1], 1.0);
        let (_, idx) = max_pool(&x).unwrap();
        let g = max_pool_backward(&idx, &Tensor::full(&[1, 1, 1, 1], 1.0)).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn odd_dims_rejected() {
        assert!(max_pool(&Tensor::<f32>::zeros(&[1, 3, 4, 1])).is_err());
        assert!(max_pool(&Tensor::<f32>::zeros(&[1, 4, 5, 1])).is_err());
    }
}
