//! Video-level predictions, CCR and fold statistics.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harness::data::{stream_input, Clip};
use crate::nn::network::Model;
use crate::ops::softmax;
use crate::video::PreparedVideo;

/// Frames evaluated per forward pass.
const EVAL_CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct VideoPrediction {
    /// Index of the clip in the dataset.
    pub index: usize,
    pub label: usize,
    pub predicted: usize,
    /// Softmax averaged over the evaluated frames.
    pub probabilities: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldResult {
    pub fold: String,
    pub predictions: Vec<VideoPrediction>,
    pub ccr: f64,
}

impl FoldResult {
    pub fn new(fold: impl Into<String>, predictions: Vec<VideoPrediction>) -> Result<Self> {
        let fold = fold.into();
        if predictions.is_empty() {
            return Err(Error::arg("evaluate", format!("fold {fold} has an empty test set")));
        }
        let ccr = ccr(&predictions);
        Ok(Self { fold, predictions, ccr })
    }
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Fraction of predictions matching their label.
pub fn ccr(predictions: &[VideoPrediction]) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    predictions.iter().filter(|p| p.predicted == p.label).count() as f64 / predictions.len() as f64
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Elementwise mean of two softmax vectors.
pub fn average_softmax(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "average_two_stream",
            format!("{} classes vs {} classes", a.len(), b.len()),
        ));
    }
    Ok(a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect())
}

/// Center frames `0, stride, 2·stride, ...` of a clip with `frames` frames.
pub fn eval_centers(frames: usize, stride: usize) -> Vec<usize> {
    (0..frames).step_by(stride.max(1)).collect()
}

/// Softmax of `model` at every evaluated center of `video`.
pub fn frame_softmax(model: &Model<f32>, video: &PreparedVideo, stride: usize, cap: f64) -> Result<Vec<Vec<f64>>> {
    let stream = model.spec().stream;
    let mut out = Vec::new();
    for chunk in eval_centers(video.frames(), stride).chunks(EVAL_CHUNK) {
        let samples = chunk.iter().map(|&t| video.sample(t, cap)).collect::<Result<Vec<_>>>()?;
        let probs = softmax(&model.predict(&stream_input(stream, &samples)?)?)?;
        let c = probs.shape()[1];
        out.extend(probs.data().chunks_exact(c).map(|r| r.iter().map(|&p| p as f64).collect()));
    }
    Ok(out)
}

/// Video-level softmax: per-frame outputs averaged across `models`, then across frames.
pub fn video_softmax(models: &[Model<f32>], video: &PreparedVideo, stride: usize, cap: f64) -> Result<Vec<f64>> {
    let (first, rest) = models
        .split_first()
        .ok_or_else(|| Error::arg("evaluate", "no models given"))?;
    let mut frames = frame_softmax(first, video, stride, cap)?;
    for (k, model) in rest.iter().enumerate() {
        let other = frame_softmax(model, video, stride, cap)?;
        let w = 1.0 / (k + 2) as f64;
        for (acc, o) in frames.iter_mut().zip(&other) {
            if acc.len() != o.len() {
                return Err(Error::shape(
                    "average_two_stream",
                    format!("{} classes vs {} classes", acc.len(), o.len()),
                ));
            }
            for (a, b) in acc.iter_mut().zip(o) {
                *a += w * (b - *a);
            }
        }
    }
    let n = frames.len() as f64;
    let mut mean = vec![0.0; frames[0].len()];
    for f in &frames {
        for (m, p) in mean.iter_mut().zip(f) {
            *m += p / n;
        }
    }
    Ok(mean)
}

/// Evaluates the eLR renditions of `test` clips with one model, or with the
/// softmax average of several.
pub fn evaluate(
    fold: &str,
    models: &[Model<f32>],
    clips: &[Clip],
    test: &[usize],
    stride: usize,
    cap: f64,
) -> Result<FoldResult> {
    let predictions = test
        .par_iter()
        .map(|&i| {
            let probabilities = video_softmax(models, &clips[i].elr, stride, cap)?;
            Ok(VideoPrediction {
                index: i,
                label: clips[i].label,
                predicted: argmax(&probabilities),
                probabilities,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    FoldResult::new(fold, predictions)
}

/// Softmax-average baseline of separately trained spatial and temporal networks.
pub fn average_two_stream(
    fold: &str,
    spatial: &Model<f32>,
    temporal: &Model<f32>,
    clips: &[Clip],
    test: &[usize],
    stride: usize,
    cap: f64,
) -> Result<FoldResult> {
    let (a, b) = (spatial.spec().num_classes, temporal.spec().num_classes);
    if a != b {
        return Err(Error::shape("average_two_stream", format!("{a} classes vs {b} classes")));
    }
    evaluate(fold, &[spatial.clone(), temporal.clone()], clips, test, stride, cap)
}
