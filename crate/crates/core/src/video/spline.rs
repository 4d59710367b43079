//! Temporal resampling with natural cubic splines.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Row `k` holds the weights that evaluate the natural spline through `n`
/// unit-spaced knots at position `k·(n−1)/(target−1)`.
pub fn spline_weights(n: usize, target: usize) -> Result<Vec<Vec<f64>>> {
    if n < 2 || target < 2 {
        return Err(Error::arg(
            "resize_temporal_spline",
            format!("need at least 2 source and target frames, got {n} -> {target}"),
        ));
    }
    // Second derivatives of the spline through each unit vector.
    let curvature: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let mut y = vec![0.0; n];
            y[k] = 1.0;
            natural_second_derivatives(&y)
        })
        .collect();
    let mut rows = Vec::with_capacity(target);
    for k in 0..target {
        let x = (k * (n - 1)) as f64 / (target - 1) as f64;
        let i = (x.floor() as usize).min(n - 2);
        let s = x - i as f64;
        let r = 1.0 - s;
        let row = (0..n)
            .map(|j| {
                let m = &curvature[j];
                let yi = f64::from(u8::from(j == i));
                let yj = f64::from(u8::from(j == i + 1));
                r * yi + s * yj + ((r * r * r - r) * m[i] + (s * s * s - s) * m[i + 1]) / 6.0
            })
            .collect();
        rows.push(row);
    }
    Ok(rows)
}

fn natural_second_derivatives(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // Thomas algorithm on the interior system M[i-1] + 4 M[i] + M[i+1] = 6 Δ²y.
    let k = n - 2;
    let mut c = vec![0.0; k];
    let mut d = vec![0.0; k];
    for r in 0..k {
        let rhs = 6.0 * (y[r + 2] - 2.0 * y[r + 1] + y[r]);
        let denom = if r == 0 { 4.0 } else { 4.0 - c[r - 1] };
        c[r] = 1.0 / denom;
        d[r] = if r == 0 { rhs / denom } else { (rhs - d[r - 1]) / denom };
    }
    m[k] = d[k - 1];
    for r in (0..k - 1).rev() {
        m[r + 1] = d[r] - c[r] * m[r + 2];
    }
    m
}

/// Resample a `[T, H, W, C]` clip to `target` frames along time.
pub fn resize_temporal_spline<T: Scalar>(frames: &Tensor<T>, target: usize) -> Result<Tensor<T>> {
    frames.expect_rank("resize_temporal_spline", 4)?;
    let n = frames.shape()[0];
    let weights = spline_weights(n, target)?;
    let frame = frames.len() / n;
    let src = frames.data();
    let mut data = Vec::with_capacity(target * frame);
    for row in &weights {
        let mut acc = vec![0.0; frame];
        for (j, &w) in row.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (a, x) in acc.iter_mut().zip(&src[j * frame..(j + 1) * frame]) {
                *a += w * x.as_f64();
            }
        }
        data.extend(acc.into_iter().map(T::lit));
    }
    let mut shape = frames.shape().to_vec();
    shape[0] = target;
    Tensor::from_vec(&shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_knots() {
        let y = [0.3, -1.0, 2.5, 0.0, 4.0];
        let w = spline_weights(5, 9).unwrap();
        for (k, &yk) in y.iter().enumerate() {
            let v: f64 = w[2 * k].iter().zip(&y).map(|(a, b)| a * b).sum();
            assert!((v - yk).abs() < 1e-12);
        }
    }

    #[test]
    fn natural_boundary_has_zero_curvature() {
        let m = natural_second_derivatives(&[1.0, 0.0, 3.0, 2.0, 5.0]);
        assert_eq!(m[0], 0.0);
        assert_eq!(m[4], 0.0);
        // Interior equations hold.
        let y = [1.0, 0.0, 3.0, 2.0, 5.0];
        for i in 1..4 {
            let lhs = m[i - 1] + 4.0 * m[i] + m[i + 1];
            assert!((lhs - 6.0 * (y[i + 1] - 2.0 * y[i] + y[i - 1])).abs() < 1e-12);
        }
    }

    #[test]
    fn single_frame_rejected() {
        assert!(resize_temporal_spline(&Tensor::<f64>::zeros(&[1, 2, 2, 1]), 100).is_err());
    }
}
