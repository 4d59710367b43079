//! From raw frames to network-ready clips and per-frame samples.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::video::color::MAGNITUDE_CAP;
use crate::video::flow::{compute_flow, grayscale, FlowField};
use crate::video::normalize::normalize_video;
use crate::video::resize::resize_frames;
use crate::video::spline::resize_temporal_spline;
use crate::video::stack::{build_flow_stack, FlowStack};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Resolution {
    /// Decimated to the eLR size, then upscaled to the network input size.
    Elr,
    /// Decimated directly to the network input size.
    Hr,
}

impl Resolution {
    pub fn tag(self) -> &'static str {
        match self {
            Resolution::Elr => "elr",
            Resolution::Hr => "hr",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    /// Side of the square network input.
    pub input_size: usize,
    /// Fixed eLR `(height, width)`; `None` picks 16×12 or 12×16 by source orientation.
    pub elr_size: Option<(usize, usize)>,
    /// Temporal length after spline resampling; `None` keeps the source length.
    pub temporal_length: Option<usize>,
    pub magnitude_cap: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input_size: 32,
            elr_size: None,
            temporal_length: Some(100),
            magnitude_cap: MAGNITUDE_CAP,
        }
    }
}

impl PipelineConfig {
    /// eLR frame size for a source of `height × width`, keeping its orientation.
    pub fn elr_dims(&self, height: usize, width: usize) -> (usize, usize) {
        match self.elr_size {
            Some(s) => s,
            None if width > height => (12, 16),
            None => (16, 12),
        }
    }
}

/// One pipeline step, reported in execution order by [`prepare_video_traced`].
#[derive(Clone, Debug, PartialEq)]
pub enum Stage {
    Resize { from: (usize, usize), to: (usize, usize) },
    TemporalResize { from: usize, to: usize },
    Normalize { frames: usize, size: (usize, usize) },
    Flow { pairs: usize, size: (usize, usize), normalized: bool },
}

/// A clip ready for sampling: normalized RGB frames and the flows between them.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedVideo {
    /// `[T, S, S, 3]`.
    pub rgb: Tensor<f32>,
    /// `T − 1` flows; flow `k` goes from frame `k` to frame `k + 1`.
    pub flows: Vec<FlowField>,
}

impl PreparedVideo {
    pub fn new(rgb: Tensor<f32>, flows: Vec<FlowField>) -> Result<Self> {
        rgb.expect_rank("prepared_video", 4)?;
        let t = rgb.shape()[0];
        if t < 2 || flows.len() != t - 1 {
            return Err(Error::arg(
                "prepared_video",
                format!("{t} frames need {} flows, got {}", t.saturating_sub(1), flows.len()),
            ));
        }
        Ok(Self { rgb, flows })
    }

    pub fn frames(&self) -> usize {
        self.rgb.shape()[0]
    }

    /// RGB frame `t` and the flow stack around it.
    pub fn sample(&self, t: usize, cap: f64) -> Result<(Tensor<f32>, FlowStack)> {
        let n = self.frames();
        if t >= n {
            return Err(Error::arg("make_sample", format!("frame {t} outside clip of {n} frames")));
        }
        let stack = build_flow_stack(&self.flows, t.min(n - 2), cap)?;
        Ok((self.rgb.index_first(t)?, stack))
    }
}

/// Run the full pipeline on a `[T, H, W, 3]` clip with values in `[0, 1]`.
pub fn prepare_video(frames: &Tensor<f32>, resolution: Resolution, cfg: &PipelineConfig) -> Result<PreparedVideo> {
    prepare_video_traced(frames, resolution, cfg, &mut |_| {})
}

pub fn prepare_video_traced(
    frames: &Tensor<f32>,
    resolution: Resolution,
    cfg: &PipelineConfig,
    trace: &mut dyn FnMut(Stage),
) -> Result<PreparedVideo> {
    frames.expect_rank("prepare_video", 4)?;
    let (t, h, w, c) = (frames.shape()[0], frames.shape()[1], frames.shape()[2], frames.shape()[3]);
    if c != 3 {
        return Err(Error::shape("prepare_video", format!("expected RGB frames, got {c} channels")));
    }
    if t < 2 {
        return Err(Error::arg("prepare_video", format!("need at least 2 frames, got {t}")));
    }
    let s = cfg.input_size;
    let mut clip = frames.clone();
    let mut size = (h, w);
    if resolution == Resolution::Elr {
        let low = cfg.elr_dims(h, w);
        clip = resize_frames(&clip, low)?;
        trace(Stage::Resize { from: size, to: low });
        size = low;
    }
    clip = resize_frames(&clip, (s, s))?;
    trace(Stage::Resize { from: size, to: (s, s) });

    if let Some(len) = cfg.temporal_length {
        if len != t {
            clip = resize_temporal_spline(&clip, len)?;
            trace(Stage::TemporalResize { from: t, to: len });
        }
    }

    let (rgb, _) = normalize_video(&clip)?;
    let frames = rgb.shape()[0];
    trace(Stage::Normalize { frames, size: (s, s) });

    let gray = (0..frames)
        .map(|k| grayscale(&rgb.index_first(k)?))
        .collect::<Result<Vec<_>>>()?;
    let flows = gray
        .par_windows(2)
        .map(|p| compute_flow(&p[0], &p[1]))
        .collect::<Result<Vec<_>>>()?;
    trace(Stage::Flow {
        pairs: flows.len(),
        size: (s, s),
        normalized: true,
    });
    PreparedVideo::new(rgb, flows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(t: usize, h: usize, w: usize) -> Tensor<f32> {
        Tensor::from_fn(&[t, h, w, 3], |k| {
            let px = k / 3;
            let f = px / (h * w);
            let y = (px % (h * w)) / w;
            let x = px % w;
            (0.5 + 0.4 * ((x as f32 + f as f32) * 0.5).sin() * (y as f32 * 0.3).cos()) * (1.0 - 0.1 * (k % 3) as f32)
        })
    }

    #[test]
    fn orientation_picks_elr_dims() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.elr_dims(48, 64), (12, 16));
        assert_eq!(cfg.elr_dims(64, 48), (16, 12));
        assert_eq!(cfg.elr_dims(40, 40), (16, 12));
    }

    #[test]
    fn sample_shapes() {
        let cfg = PipelineConfig {
            temporal_length: Some(6),
            ..Default::default()
        };
        let v = prepare_video(&clip(4, 40, 48), Resolution::Elr, &cfg).unwrap();
        assert_eq!(v.frames(), 6);
        assert_eq!(v.flows.len(), 5);
        let (rgb, stack) = v.sample(5, cfg.magnitude_cap).unwrap();
        assert_eq!(rgb.shape(), &[32, 32, 3]);
        assert_eq!(stack.encoded.shape(), &[32, 32, 33]);
        assert!(v.sample(6, cfg.magnitude_cap).is_err());
    }
}
