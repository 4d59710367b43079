//! Prepared clips, per-epoch sampling plans and batch assembly.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::coupled::{flip_sample, Batch};
use crate::error::{Error, Result};
use crate::harness::manifest::DatasetManifest;
use crate::nn::network::NetInput;
use crate::nn::spec::Stream;
use crate::tensor::Tensor;
use crate::video::{load_raw_video, prepare_video, FlowStack, PipelineConfig, PreparedVideo, Resolution, SampleCache};

/// One labelled video after preprocessing.
#[derive(Clone, Debug)]
pub struct Clip {
    pub path: PathBuf,
    pub label: usize,
    pub subject: String,
    pub elr: PreparedVideo,
    /// Present only when coupled training needs the HR rendition.
    pub hr: Option<PreparedVideo>,
}

impl Clip {
    pub fn video(&self, res: Resolution) -> Result<&PreparedVideo> {
        match res {
            Resolution::Elr => Ok(&self.elr),
            Resolution::Hr => self
                .hr
                .as_ref()
                .ok_or_else(|| Error::arg("clip", format!("{} has no HR rendition", self.path.display()))),
        }
    }
}

/// Runs the pipeline on an in-memory `[T, H, W, 3]` clip.
pub fn prepare_clip(
    frames: &Tensor<f32>,
    path: impl Into<PathBuf>,
    label: usize,
    subject: impl Into<String>,
    cfg: &PipelineConfig,
    with_hr: bool,
) -> Result<Clip> {
    Ok(Clip {
        path: path.into(),
        label,
        subject: subject.into(),
        elr: prepare_video(frames, Resolution::Elr, cfg)?,
        hr: with_hr.then(|| prepare_video(frames, Resolution::Hr, cfg)).transpose()?,
    })
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        e @ (Error::Io { .. } | Error::Image { .. } | Error::Format { .. }) => e,
        other => Error::Format {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    }
}

fn cached(cache: &SampleCache, source: &Path, cfg: &PipelineConfig, res: Resolution, raw: &mut Option<Tensor<f32>>) -> Result<PreparedVideo> {
    let key = SampleCache::key(source, cfg);
    if cache.contains(&key, res) {
        return cache.load(&key, res);
    }
    if raw.is_none() {
        *raw = Some(load_raw_video(source)?);
    }
    let video = prepare_video(raw.as_ref().expect("loaded"), res, cfg).map_err(|e| with_path(source, e))?;
    cache.store(&key, res, &video)?;
    Ok(video)
}

/// Loads every manifest entry through the cache, preparing and storing missing clips.
pub fn preprocess_manifest(
    manifest: &DatasetManifest,
    cfg: &PipelineConfig,
    cache: &SampleCache,
    with_hr: bool,
) -> Result<Vec<Clip>> {
    std::fs::create_dir_all(cache.dir()).map_err(|e| Error::io(cache.dir(), e))?;
    manifest
        .entries
        .par_iter()
        .map(|entry| {
            let mut raw = None;
            let elr = cached(cache, &entry.path, cfg, Resolution::Elr, &mut raw)?;
            let hr = with_hr
                .then(|| cached(cache, &entry.path, cfg, Resolution::Hr, &mut raw))
                .transpose()?;
            Ok(Clip {
                path: entry.path.clone(),
                label: entry.label,
                subject: entry.subject.clone(),
                elr,
                hr,
            })
        })
        .collect()
}

/// One training sample: a clip, its center frame and whether it is mirrored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Draw {
    pub clip: usize,
    pub center: usize,
    pub flip: bool,
}

/// Shuffles `train` and draws one uniformly random center per clip, split into batches.
pub fn epoch_plan(
    clips: &[Clip],
    train: &[usize],
    batch_size: usize,
    flip_probability: f64,
    rng: &mut impl Rng,
) -> Vec<Vec<Draw>> {
    let mut order = train.to_vec();
    order.shuffle(rng);
    let draws: Vec<Draw> = order
        .into_iter()
        .map(|clip| Draw {
            clip,
            center: rng.random_range(0..clips[clip].elr.frames()),
            flip: flip_probability > 0.0 && rng.random_bool(flip_probability.min(1.0)),
        })
        .collect();
    draws.chunks(batch_size.max(1)).map(<[Draw]>::to_vec).collect()
}

/// Network input for `stream` from per-sample RGB frames and flow stacks.
pub fn stream_input(stream: Stream, samples: &[(Tensor<f32>, FlowStack)]) -> Result<NetInput<f32>> {
    let rgb = || Tensor::stack(&samples.iter().map(|s| s.0.clone()).collect::<Vec<_>>());
    let flow = || Tensor::stack(&samples.iter().map(|s| s.1.encoded.clone()).collect::<Vec<_>>());
    Ok(match stream {
        Stream::Spatial => NetInput::rgb(rgb()?),
        Stream::Temporal => NetInput::flow(flow()?),
        Stream::Fused => NetInput::both(rgb()?, flow()?),
    })
}

/// Builds the batch for `draws` from the `res` rendition of each clip.
pub fn materialize(
    clips: &[Clip],
    draws: &[Draw],
    res: Resolution,
    stream: Stream,
    cap: f64,
) -> Result<Batch<f32>> {
    let samples = draws
        .iter()
        .map(|d| {
            let (rgb, stack) = clips[d.clip].video(res)?.sample(d.center, cap)?;
            if d.flip {
                flip_sample(&rgb, &stack, cap)
            } else {
                Ok((rgb, stack))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Batch {
        input: stream_input(stream, &samples)?,
        labels: draws.iter().map(|d| clips[d.clip].label).collect(),
    })
}
