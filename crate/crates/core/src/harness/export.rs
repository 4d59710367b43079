//! Per-video feature export.

use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::data::{stream_input, Clip};
use crate::harness::evaluate::eval_centers;
use crate::nn::network::Model;
use crate::nn::checkpoint::write_atomic;
use crate::video::PreparedVideo;

/// Layers whose activations can be exported. Both names denote the fc4 output
/// that feeds the final layer.
pub const FEATURE_LAYERS: &[&str] = &["fc5_input", "fc4"];

fn check_layer(layer: &str) -> Result<()> {
    if FEATURE_LAYERS.contains(&layer) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "unknown feature layer {layer:?} (expected one of {})",
            FEATURE_LAYERS.join(", ")
        )))
    }
}

/// Mean activation of `layer` over the evaluated centers of `video`.
pub fn video_features(model: &Model<f32>, video: &PreparedVideo, layer: &str, stride: usize, cap: f64) -> Result<Vec<f64>> {
    check_layer(layer)?;
    let centers = eval_centers(video.frames(), stride);
    let samples = centers.iter().map(|&t| video.sample(t, cap)).collect::<Result<Vec<_>>>()?;
    let (_, features) = model.predict_with_features(&stream_input(model.spec().stream, &samples)?)?;
    let d = features.shape()[1];
    let mut mean = vec![0.0; d];
    for row in features.data().chunks_exact(d) {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x as f64 / centers.len() as f64;
        }
    }
    Ok(mean)
}

/// Writes `path,label,subject,f0,...` with one row per clip in `indices`.
/// Returns the number of rows.
pub fn export_features(
    model: &Model<f32>,
    clips: &[Clip],
    indices: &[usize],
    layer: &str,
    stride: usize,
    cap: f64,
    out: &Path,
) -> Result<usize> {
    check_layer(layer)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let width = model.spec().fc_width;
    let mut header = vec!["path".to_string(), "label".into(), "subject".into()];
    header.extend((0..width).map(|k| format!("f{k}")));
    w.write_record(&header)?;
    for &i in indices {
        let clip = &clips[i];
        let f = video_features(model, &clip.elr, layer, stride, cap)?;
        let mut row = vec![clip.path.display().to_string(), clip.label.to_string(), clip.subject.clone()];
        row.extend(f.iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(out, e.into_error()))?;
    write_atomic(out, &bytes)?;
    Ok(indices.len())
}
