//! Reading raw clips: a directory of image frames or a single `.elrv` file.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::video::cache::read_elrv;

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "bmp", "ppm"];

fn is_frame(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Load a clip as `[T, H, W, 3]` with values in `[0, 1]`.
///
/// Frames in a directory are ordered by file name. Single-channel `.elrv`
/// clips are replicated to three channels.
pub fn load_raw_video(path: &Path) -> Result<Tensor<f32>> {
    if path.is_dir() {
        return load_frame_dir(path);
    }
    let clip = read_elrv(path)?;
    match clip.shape()[3] {
        3 => Ok(clip),
        1 => {
            let mut shape = clip.shape().to_vec();
            shape[3] = 3;
            Ok(Tensor::from_fn(&shape, |k| clip.data()[k / 3]))
        }
        c => Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("raw clip must have 1 or 3 channels, has {c}"),
        }),
    }
}

fn load_frame_dir(dir: &Path) -> Result<Tensor<f32>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    files.retain(|p| is_frame(p));
    files.sort();
    if files.is_empty() {
        return Err(Error::Format {
            path: dir.to_path_buf(),
            detail: "no image frames found".into(),
        });
    }
    let mut frames = Vec::with_capacity(files.len());
    for f in &files {
        let img = image::open(f)
            .map_err(|source| Error::Image {
                path: f.clone(),
                source,
            })?
            .to_rgb32f();
        let (w, h) = img.dimensions();
        frames.push(Tensor::from_vec(&[h as usize, w as usize, 3], img.into_raw())?);
    }
    Tensor::stack(&frames).map_err(|e| Error::Format {
        path: dir.to_path_buf(),
        detail: format!("frames differ in size: {e}"),
    })
}
