//! Per-channel batch normalization over `[N, H, W, D]` (channel-last) activations.

use crate::error::{Error, Result};
use crate::ops::Mode;
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// Exponential moving averages used in eval mode.
///
/// `running = momentum * running + (1 - momentum) * batch`, with the batch
/// variance in its unbiased form.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T = f32> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
    pub momentum: T,
    pub epsilon: T,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::full(&[channels], T::one()),
            momentum: T::lit(DEFAULT_MOMENTUM),
            epsilon: T::lit(DEFAULT_EPSILON),
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// Affine parameters together with running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T = f32> {
    pub scale: Tensor<T>,
    pub shift: Tensor<T>,
    pub running: RunningStats<T>,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            scale: Tensor::full(&[channels], T::one()),
            shift: Tensor::zeros(&[channels]),
            running: RunningStats::new(channels),
        }
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        batch_norm(input, &self.scale, &self.shift, &mut self.running, mode)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub scale: Tensor<T>,
    pub shift: Tensor<T>,
}

pub fn batch_norm<T: Scalar>(
    input: &Tensor<T>,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
    running: &mut RunningStats<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    input.expect_rank("batch_norm", 4)?;
    let d = input.last_dim();
    scale.expect_shape("batch_norm scale", &[d])?;
    shift.expect_shape("batch_norm shift", &[d])?;
    if running.channels() != d {
        return Err(Error::shape(
            "batch_norm",
            format!("running stats for {} channels, input has {d}", running.channels()),
        ));
    }
    let count = input.len() / d;
    let x = input.data();

    let (mean, var) = match mode {
        Mode::Train => {
            if count < 2 {
                return Err(Error::arg(
                    "batch_norm",
                    "train mode needs at least two values per channel",
                ));
            }
            let mut mean = vec![T::zero(); d];
            for row in x.chunks_exact(d) {
                for (m, &v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            let n = T::lit(count as f64);
            mean.iter_mut().for_each(|m| *m = *m / n);
            let mut var = vec![T::zero(); d];
            for row in x.chunks_exact(d) {
                for c in 0..d {
                    let z = row[c] - mean[c];
                    var[c] += z * z;
                }
            }
            var.iter_mut().for_each(|v| *v = *v / n);

            let m = running.momentum;
            let unbias = n / (n - T::one());
            for c in 0..d {
                let rm = &mut running.mean.data_mut()[c];
                *rm = m * *rm + (T::one() - m) * mean[c];
                let rv = &mut running.var.data_mut()[c];
                *rv = m * *rv + (T::one() - m) * var[c] * unbias;
            }
            (mean, var)
        }
        Mode::Eval => (running.mean.data().to_vec(), running.var.data().to_vec()),
    };

    let inv_std: Vec<T> = var
        .iter()
        .map(|&v| T::one() / (v + running.epsilon).sqrt())
        .collect();
    let mut normalized = Vec::with_capacity(x.len());
    let mut out = Vec::with_capacity(x.len());
    let (g, b) = (scale.data(), shift.data());
    for row in x.chunks_exact(d) {
        for c in 0..d {
            let xh = (row[c] - mean[c]) * inv_std[c];
            normalized.push(xh);
            out.push(g[c] * xh + b[c]);
        }
    }
    Ok((
        Tensor::from_vec(input.shape(), out)?,
        BatchNormCache {
            normalized: Tensor::from_vec(input.shape(), normalized)?,
            inv_std,
            mode,
        },
    ))
}

pub fn batch_norm_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    scale: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    grad_out.expect_shape("batch_norm backward", cache.normalized.shape())?;
    let d = grad_out.last_dim();
    scale.expect_shape("batch_norm backward scale", &[d])?;
    let count = grad_out.len() / d;
    let (dy, xh, g) = (grad_out.data(), cache.normalized.data(), scale.data());

    let mut d_scale = vec![T::zero(); d];
    let mut d_shift = vec![T::zero(); d];
    for (dy_row, xh_row) in dy.chunks_exact(d).zip(xh.chunks_exact(d)) {
        for c in 0..d {
            d_shift[c] += dy_row[c];
            d_scale[c] += dy_row[c] * xh_row[c];
        }
    }

    let mut dx = Vec::with_capacity(dy.len());
    match cache.mode {
        Mode::Train => {
            // dx = inv_std / n * (n*dxh - sum(dxh) - xh * sum(dxh*xh)), with dxh = dy*g
            let n = T::lit(count as f64);
            for (dy_row, xh_row) in dy.chunks_exact(d).zip(xh.chunks_exact(d)) {
                for c in 0..d {
                    let dxh = dy_row[c] * g[c];
                    let v = n * dxh - d_shift[c] * g[c] - xh_row[c] * d_scale[c] * g[c];
                    dx.push(v * cache.inv_std[c] / n);
                }
            }
        }
        Mode::Eval => {
            for dy_row in dy.chunks_exact(d) {
                for c in 0..d {
                    dx.push(dy_row[c] * g[c] * cache.inv_std[c]);
                }
            }
        }
    }

    Ok(BatchNormGrads {
        input: Tensor::from_vec(grad_out.shape(), dx)?,
        scale: Tensor::from_vec(&[d], d_scale)?,
        shift: Tensor::from_vec(&[d], d_shift)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_input_maps_to_shift() {
        let mut state = BatchNormState::<f64>::new(2);
        state.shift = Tensor::from_vec(&[2], vec![0.3, -1.2]).unwrap();
        let x = Tensor::from_fn(&[3, 2, 2, 2], |i| if i % 2 == 0 { 5.0 } else { -7.0 });
        let (y, _) = state.forward(&x, Mode::Train).unwrap();
        for row in y.data().chunks(2) {
            assert!((row[0] - 0.3).abs() < 1e-12);
            assert!((row[1] + 1.2).abs() < 1e-12);
        }
    }

    #[test]
    fn train_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::<f64>::from_fn(&[4, 5, 5, 3], |_| rng.random_range(-3.0..8.0));
        let mut state = BatchNormState::new(3);
        let (y, _) = state.forward(&x, Mode::Train).unwrap();
        let n = (y.len() / 3) as f64;
        for c in 0..3 {
            let vals: Vec<f64> = y.data().iter().skip(c).step_by(3).copied().collect();
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn running_stats_track_batches() {
        let mut state = BatchNormState::<f64>::new(1);
        let x = Tensor::from_vec(&[1, 1, 2, 1], vec![1.0, 3.0]).unwrap();
        state.forward(&x, Mode::Train).unwrap();
        // mean 2, unbiased var 2
        assert!((state.running.mean.data()[0] - 0.2).abs() < 1e-12);
        assert!((state.running.var.data()[0] - (0.9 + 0.2)).abs() < 1e-12);
        assert!(state.running.var.data()[0] >= 0.0);
    }

    #[test]
    fn train_mode_needs_two_values() {
        let mut state = BatchNormState::<f64>::new(2);
        assert!(state
            .forward(&Tensor::zeros(&[1, 1, 1, 2]), Mode::Train)
            .is_err());
        assert!(state
            .forward(&Tensor::zeros(&[1, 1, 1, 2]), Mode::Eval)
            .is_ok());
    }
}
