//! Per-pixel temporal mean removal with a single per-video scale.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationStats {
    /// Temporal mean of every `(i, j, c)` entry, shape `[H, W, C]`.
    pub mean: Tensor<f64>,
    /// Standard deviation of all mean-subtracted values, floored at [`STD_FLOOR`].
    pub std: f64,
}

/// `v̂[t] = (v[t] − μ) / σ` for a `[T, H, W, C]` clip.
pub fn normalize_video<T: Scalar>(frames: &Tensor<T>) -> Result<(Tensor<T>, NormalizationStats)> {
    frames.expect_rank("normalize_video", 4)?;
    let t = frames.shape()[0];
    if t < 2 {
        return Err(Error::arg("normalize_video", format!("need at least 2 frames, got {t}")));
    }
    let frame = frames.len() / t;
    let mut mean = vec![0.0; frame];
    for f in frames.data().chunks_exact(frame) {
        for (m, x) in mean.iter_mut().zip(f) {
            *m += x.as_f64();
        }
    }
    let first = &frames.data()[..frame];
    for (i, m) in mean.iter_mut().enumerate() {
        let constant = frames.data().chunks_exact(frame).all(|f| f[i] == first[i]);
        *m = if constant { first[i].as_f64() } else { *m / t as f64 };
    }
    let centered: Vec<f64> = frames
        .data()
        .chunks_exact(frame)
        .flat_map(|f| f.iter().zip(&mean).map(|(x, m)| x.as_f64() - m))
        .collect();
    let var = centered.iter().map(|x| x * x).sum::<f64>() / centered.len() as f64;
    let std = var.sqrt().max(STD_FLOOR);
    let data = centered.iter().map(|x| T::lit(x / std)).collect();
    let out = Tensor::from_vec(frames.shape(), data)?;
    let stats = NormalizationStats {
        mean: Tensor::from_vec(&frames.shape()[1..], mean)?,
        std,
    };
    Ok((out, stats))
}
