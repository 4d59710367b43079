//! Video preprocessing: spatial and temporal resampling, normalization,
//! optical flow, color coding and flow stacks.

pub mod cache;
pub mod color;
pub mod flow;
pub mod normalize;
pub mod resize;
pub mod sample;
pub mod source;
pub mod spline;
pub mod stack;

pub use cache::{read_elrv, write_elrv, SampleCache};
pub use color::{encode_flow_color, MAGNITUDE_CAP};
pub use flow::{compute_flow, grayscale, FlowField};
pub use normalize::{normalize_video, NormalizationStats};
pub use resize::{bicubic_resize, resize_frames};
pub use sample::{prepare_video, prepare_video_traced, PipelineConfig, PreparedVideo, Resolution, Stage};
pub use source::load_raw_video;
pub use spline::resize_temporal_spline;
pub use stack::{build_flow_stack, stack_indices, FlowStack, STACK_LEN};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A labelled raw clip, `[T, H, W, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoTensor {
    pub frames: Tensor<f32>,
    pub subject: String,
    pub label: usize,
}

impl VideoTensor {
    pub fn new(frames: Tensor<f32>, subject: impl Into<String>, label: usize) -> Result<Self> {
        frames.expect_rank("video", 4)?;
        if !frames.all_finite() {
            return Err(Error::arg("video", "non-finite pixel values"));
        }
        Ok(Self {
            frames,
            subject: subject.into(),
            label,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}
