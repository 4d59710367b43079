//! Dense optical flow with Horn–Schunck.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const HS_ALPHA: f64 = 10.0;
pub const HS_ITERATIONS: usize = 200;

/// ITU-R 601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Displacement field: the pixel at `(i, j)` moves to `(i + v, j + u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    /// Horizontal displacement, `[H, W]`.
    pub u: Tensor<f32>,
    /// Vertical displacement, `[H, W]`.
    pub v: Tensor<f32>,
}

impl FlowField {
    pub fn new(u: Tensor<f32>, v: Tensor<f32>) -> Result<Self> {
        u.expect_rank("flow_field", 2)?;
        v.expect_shape("flow_field", u.shape())?;
        if !u.all_finite() || !v.all_finite() {
            return Err(Error::arg("flow_field", "non-finite displacement"));
        }
        Ok(Self { u, v })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            u: Tensor::zeros(&[height, width]),
            v: Tensor::zeros(&[height, width]),
        }
    }

    pub fn height(&self) -> usize {
        self.u.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.u.shape()[1]
    }

    /// Mean `(u, v)` over all pixels.
    pub fn mean(&self) -> (f64, f64) {
        let n = self.u.len() as f64;
        let mu = self.u.data().iter().map(|&x| f64::from(x)).sum::<f64>() / n;
        let mv = self.v.data().iter().map(|&x| f64::from(x)).sum::<f64>() / n;
        (mu, mv)
    }

    /// Subtract a constant displacement from every pixel.
    pub fn offset(&self, du: f64, dv: f64) -> Self {
        Self {
            u: self.u.map(|x| (f64::from(x) - du) as f32),
            v: self.v.map(|x| (f64::from(x) - dv) as f32),
        }
    }

    /// Flow of the left-right mirrored video: columns reversed and `u` negated.
    pub fn mirrored(&self) -> Self {
        let (h, w) = (self.height(), self.width());
        let flip = |t: &Tensor<f32>, sign: f32| {
            Tensor::from_fn(&[h, w], |k| sign * t.data()[(k / w) * w + (w - 1 - k % w)])
        };
        Self {
            u: flip(&self.u, -1.0),
            v: flip(&self.v, 1.0),
        }
    }
}

/// Luma of an `[H, W, 3]` frame, or the single channel of an `[H, W, 1]` frame.
pub fn grayscale<T: Scalar>(frame: &Tensor<T>) -> Result<Tensor<T>> {
    frame.expect_rank("grayscale", 3)?;
    let (h, w, c) = (frame.shape()[0], frame.shape()[1], frame.shape()[2]);
    match c {
        1 => frame.clone().reshape(&[h, w]),
        3 => Ok(Tensor::from_fn(&[h, w], |k| {
            let px = &frame.data()[k * 3..k * 3 + 3];
            T::lit(LUMA.iter().zip(px).map(|(l, x)| l * x.as_f64()).sum())
        })),
        _ => Err(Error::shape("grayscale", format!("expected 1 or 3 channels, got {c}"))),
    }
}

/// Horn–Schunck flow from `frame_a` to `frame_b`, both `[H, W]` grayscale.
///
/// The pair is jointly rescaled to `[0, 255]` first so that [`HS_ALPHA`] has
/// a fixed meaning regardless of the input intensity range.
pub fn compute_flow<T: Scalar>(frame_a: &Tensor<T>, frame_b: &Tensor<T>) -> Result<FlowField> {
    frame_a.expect_rank("compute_flow", 2)?;
    frame_b.expect_shape("compute_flow", frame_a.shape())?;
    let (h, w) = (frame_a.shape()[0], frame_a.shape()[1]);
    let a: Vec<f64> = frame_a.data().iter().map(|x| x.as_f64()).collect();
    let b: Vec<f64> = frame_b.data().iter().map(|x| x.as_f64()).collect();
    let (lo, hi) = a
        .iter()
        .chain(&b)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if !(hi - lo).is_finite() {
        return Err(Error::arg("compute_flow", "non-finite intensities"));
    }
    if hi - lo < 1e-12 {
        return Ok(FlowField::zeros(h, w));
    }
    let k = 255.0 / (hi - lo);
    let a: Vec<f64> = a.iter().map(|x| (x - lo) * k).collect();
    let b: Vec<f64> = b.iter().map(|x| (x - lo) * k).collect();

    let at = |img: &[f64], i: isize, j: isize| {
        let i = i.clamp(0, h as isize - 1) as usize;
        let j = j.clamp(0, w as isize - 1) as usize;
        img[i * w + j]
    };
    let n = h * w;
    let mut ex = vec![0.0; n];
    let mut ey = vec![0.0; n];
    let mut et = vec![0.0; n];
    for i in 0..h as isize {
        for j in 0..w as isize {
            let p = i as usize * w + j as usize;
            let dx = |img: &[f64]| 0.5 * (at(img, i, j + 1) - at(img, i, j - 1));
            let dy = |img: &[f64]| 0.5 * (at(img, i + 1, j) - at(img, i - 1, j));
            ex[p] = 0.5 * (dx(&a) + dx(&b));
            ey[p] = 0.5 * (dy(&a) + dy(&b));
            et[p] = b[p] - a[p];
        }
    }

    let alpha2 = HS_ALPHA * HS_ALPHA;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut nu = vec![0.0; n];
    let mut nv = vec![0.0; n];
    for _ in 0..HS_ITERATIONS {
        for i in 0..h as isize {
            for j in 0..w as isize {
                let p = i as usize * w + j as usize;
                let ubar = neighbourhood_mean(&u, h, w, i, j);
                let vbar = neighbourhood_mean(&v, h, w, i, j);
                let r = (ex[p] * ubar + ey[p] * vbar + et[p]) / (alpha2 + ex[p] * ex[p] + ey[p] * ey[p]);
                nu[p] = ubar - ex[p] * r;
                nv[p] = vbar - ey[p] * r;
            }
        }
        std::mem::swap(&mut u, &mut nu);
        std::mem::swap(&mut v, &mut nv);
    }
    FlowField::new(
        Tensor::from_vec(&[h, w], u.into_iter().map(|x| x as f32).collect())?,
        Tensor::from_vec(&[h, w], v.into_iter().map(|x| x as f32).collect())?,
    )
}

/// Weighted 8-neighbour average (edges 1/6, corners 1/12) with replicated borders.
fn neighbourhood_mean(f: &[f64], h: usize, w: usize, i: isize, j: isize) -> f64 {
    let at = |di: isize, dj: isize| {
        let y = (i + di).clamp(0, h as isize - 1) as usize;
        let x = (j + dj).clamp(0, w as isize - 1) as usize;
        f[y * w + x]
    };
    (at(-1, 0) + at(1, 0) + at(0, -1) + at(0, 1)) / 6.0
        + (at(-1, -1) + at(-1, 1) + at(1, -1) + at(1, 1)) / 12.0
}
