//! Synthetic moving-square videos shared by the integration tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use elr_twostream::harness::{prepare_clip, Clip, DatasetManifest, ManifestEntry, Protocol};
use elr_twostream::video::PipelineConfig;
use elr_twostream::Tensor;

pub const SIDE: usize = 32;
pub const FRAMES: usize = 16;
const SQUARE: f64 = 6.0;

/// Fraction of pixel `[p, p+1)` covered by the interval `[a, b)`.
fn coverage(p: usize, a: f64, b: f64) -> f64 {
    let (lo, hi) = (p as f64, p as f64 + 1.0);
    (hi.min(b) - lo.max(a)).clamp(0.0, 1.0)
}

/// A bright square sliding horizontally at 1 px per frame over a dark,
/// faintly textured static background. `label` 0 moves left, 1 moves right.
pub fn moving_square(label: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let travel = (FRAMES - 1) as f64;
    let span = SIDE as f64 - SQUARE - travel - 2.0;
    let x_start = 1.0 + rng.random_range(0.0..span);
    let y0 = 1.0 + rng.random_range(0.0..SIDE as f64 - SQUARE - 2.0);
    let bg: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..0.25));
    let fg: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.7..1.0));
    let texture: Vec<f64> = (0..SIDE * SIDE * 3).map(|_| rng.random_range(-0.03..0.03)).collect();
    let mut data = Vec::with_capacity(FRAMES * SIDE * SIDE * 3);
    for t in 0..FRAMES {
        let x0 = if label == 1 {
            x_start + t as f64
        } else {
            x_start + travel - t as f64
        };
        for y in 0..SIDE {
            let cy = coverage(y, y0, y0 + SQUARE);
            for x in 0..SIDE {
                let a = cy * coverage(x, x0, x0 + SQUARE);
                for c in 0..3 {
                    let v = bg[c] + texture[(y * SIDE + x) * 3 + c] + a * (fg[c] - bg[c]);
                    data.push(v.clamp(0.0, 1.0) as f32);
                }
            }
        }
    }
    Tensor::from_vec(&[FRAMES, SIDE, SIDE, 3], data).unwrap()
}

/// `n` videos with alternating labels spread over `subjects` subjects.
pub fn square_videos(n: usize, subjects: usize, seed: u64) -> (DatasetManifest, Vec<Tensor<f32>>) {
    let entries = (0..n)
        .map(|i| ManifestEntry {
            path: format!("square-{i:03}").into(),
            label: i % 2,
            subject: format!("s{}", (i / 2) % subjects),
            split: None,
        })
        .collect();
    let manifest =
        DatasetManifest::new(entries, vec!["left".into(), "right".into()], Protocol::LeavePersonOut).unwrap();
    let videos = (0..n)
        .map(|i| moving_square(i % 2, seed.wrapping_mul(1_000_003).wrapping_add(i as u64)))
        .collect();
    (manifest, videos)
}

pub fn prepare_all(manifest: &DatasetManifest, videos: &[Tensor<f32>], cfg: &PipelineConfig, with_hr: bool) -> Vec<Clip> {
    manifest
        .entries
        .iter()
        .zip(videos)
        .map(|(e, v)| prepare_clip(v, e.path.clone(), e.label, e.subject.clone(), cfg, with_hr).unwrap())
        .collect()
}

/// A small fused network and short schedule for end-to-end plumbing tests.
pub fn tiny_config(output: &std::path::Path) -> elr_twostream::harness::ExperimentConfig {
    let mut cfg = elr_twostream::harness::ExperimentConfig::default();
    cfg.apply_text(
        "fusion = sum\n\
         input_size = 16\n\
         conv_widths = 4,4,4\n\
         fc_width = 8\n\
         dropout = 0\n\
         temporal_length = 0\n\
         batch_size = 4\n\
         epochs = 2\n\
         base_lr = 0.01\n\
         flip_probability = 0\n\
         test_stride = 5\n",
    )
    .unwrap();
    cfg.output_dir = output.to_path_buf();
    cfg
}
