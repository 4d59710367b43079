//! Separable Catmull-Rom resampling with half-pixel centers.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

const A: f64 = -0.5;

fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x < 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// For every output index, `(source index, weight)` pairs summing to one.
///
/// When shrinking, the kernel is stretched by the decimation factor.
pub(crate) fn resample_taps(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    let stretch = scale.max(1.0);
    let support = 2.0 * stretch;
    (0..dst)
        .map(|o| {
            let center = (o as f64 + 0.5) * scale - 0.5;
            let lo = (center - support).floor() as isize;
            let hi = (center + support).ceil() as isize;
            let mut taps: Vec<(usize, f64)> = Vec::new();
            for j in lo..=hi {
                let w = cubic((j as f64 - center) / stretch);
                if w == 0.0 {
                    continue;
                }
                let idx = j.clamp(0, src as isize - 1) as usize;
                match taps.iter_mut().find(|(i, _)| *i == idx) {
                    Some(t) => t.1 += w,
                    None => taps.push((idx, w)),
                }
            }
            let total: f64 = taps.iter().map(|t| t.1).sum();
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

/// Resize an `[H, W, C]` image to `[target.0, target.1, C]`.
pub fn bicubic_resize<T: Scalar>(image: &Tensor<T>, target: (usize, usize)) -> Result<Tensor<T>> {
    image.expect_rank("bicubic_resize", 3)?;
    let (h, w, c) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let (th, tw) = target;
    if h < 2 || w < 2 || th < 2 || tw < 2 {
        return Err(Error::arg(
            "bicubic_resize",
            format!("source {h}x{w} and target {th}x{tw} must both be at least 2x2"),
        ));
    }
    if (th, tw) == (h, w) {
        return Ok(image.clone());
    }
    let src: Vec<f64> = image.data().iter().map(|x| x.as_f64()).collect();

    let col_taps = resample_taps(w, tw);
    let mut rows = vec![0.0; h * tw * c];
    for y in 0..h {
        for (x, taps) in col_taps.iter().enumerate() {
            let out = &mut rows[(y * tw + x) * c..(y * tw + x + 1) * c];
            for &(sx, wt) in taps {
                let inp = &src[(y * w + sx) * c..(y * w + sx + 1) * c];
                for (o, &i) in out.iter_mut().zip(inp) {
                    *o += wt * i;
                }
            }
        }
    }

    let row_taps = resample_taps(h, th);
    let mut data = vec![T::zero(); th * tw * c];
    let stride = tw * c;
    for (y, taps) in row_taps.iter().enumerate() {
        let mut acc = vec![0.0; stride];
        for &(sy, wt) in taps {
            for (a, &r) in acc.iter_mut().zip(&rows[sy * stride..(sy + 1) * stride]) {
                *a += wt * r;
            }
        }
        for (d, a) in data[y * stride..(y + 1) * stride].iter_mut().zip(acc) {
            *d = T::lit(a);
        }
    }
    Tensor::from_vec(&[th, tw, c], data)
}

/// Resize every frame of a `[T, H, W, C]` clip.
pub fn resize_frames<T: Scalar>(frames: &Tensor<T>, target: (usize, usize)) -> Result<Tensor<T>> {
    frames.expect_rank("resize_frames", 4)?;
    let out = (0..frames.shape()[0])
        .map(|t| bicubic_resize(&frames.index_first(t)?, target))
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taps_are_a_partition_of_unity() {
        for (s, d) in [(32, 12), (12, 32), (7, 5), (5, 9)] {
            for taps in resample_taps(s, d) {
                let total: f64 = taps.iter().map(|t| t.1).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_and_constant() {
        let img = Tensor::<f64>::from_fn(&[6, 5, 2], |i| (i as f64 * 0.37).sin());
        let same = bicubic_resize(&img, (6, 5)).unwrap();
        assert_eq!(same, img);
        let flat = Tensor::<f64>::full(&[9, 7, 3], 0.25);
        for target in [(32, 32), (3, 2), (12, 16)] {
            let out = bicubic_resize(&flat, target).unwrap();
            assert!(out.data().iter().all(|&x| (x - 0.25).abs() < 1e-12));
        }
    }

    #[test]
    fn degenerate_sizes_rejected() {
        let img = Tensor::<f64>::zeros(&[4, 4, 1]);
        assert!(bicubic_resize(&img, (1, 4)).is_err());
        assert!(bicubic_resize(&Tensor::<f64>::zeros(&[1, 4, 1]), (4, 4)).is_err());
    }
}
