//! Random horizontal reflection of RGB frames and their flow stacks.

use rand::Rng;

use crate::error::Result;
use crate::tensor::Tensor;
use crate::video::stack::FlowStack;

/// Mirror an `[H, W, C]` image across its vertical axis.
pub fn mirror_image(image: &Tensor<f32>) -> Result<Tensor<f32>> {
    image.expect_rank("mirror_image", 3)?;
    let (w, c) = (image.shape()[1], image.shape()[2]);
    Ok(Tensor::from_fn(image.shape(), |k| {
        let (row, col, ch) = (k / (w * c), (k / c) % w, k % c);
        image.data()[(row * w + (w - 1 - col)) * c + ch]
    }))
}

/// Mirror one sample: the RGB frame and the stack, with horizontal flow negated.
pub fn flip_sample(rgb: &Tensor<f32>, stack: &FlowStack, cap: f64) -> Result<(Tensor<f32>, FlowStack)> {
    Ok((mirror_image(rgb)?, stack.mirrored(cap)?))
}

/// Independent Bernoulli(`p`) flip decisions for `n` samples.
pub fn flip_flags(n: usize, p: f64, rng: &mut impl Rng) -> Vec<bool> {
    (0..n).map(|_| p > 0.0 && rng.random_bool(p.min(1.0))).collect()
}

/// Flip each sample where `flags` is set.
pub fn apply_flips(samples: &mut [(Tensor<f32>, FlowStack)], flags: &[bool], cap: f64) -> Result<()> {
    for (s, &f) in samples.iter_mut().zip(flags) {
        if f {
            *s = flip_sample(&s.0, &s.1, cap)?;
        }
    }
    Ok(())
}

/// Flip each sample with probability `p`; returns the decisions so a paired
/// batch can be flipped identically.
pub fn augment_flip(
    samples: &mut [(Tensor<f32>, FlowStack)],
    p: f64,
    rng: &mut impl Rng,
    cap: f64,
) -> Result<Vec<bool>> {
    let flags = flip_flags(samples.len(), p, rng);
    apply_flips(samples, &flags, cap)?;
    Ok(flags)
}
