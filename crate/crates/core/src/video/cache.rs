//! On-disk `.elrv` clips.
//!
//! Byte layout (integers are little-endian `u32`):
//!
//! ```text
//! magic    b"ELRV"
//! version  1
//! T        frame count
//! R        frame side (frames are R×R)
//! C        channels per pixel
//! dtype    1 = f32
//! data     T·R·R·C little-endian f32, frames-major, then rows, columns, channels
//! ```
//!
//! A prepared clip is two files: `<key>.<res>.rgb.elrv` with `C = 3` and
//! `<key>.<res>.flow.elrv` with `C = 2` (`u`, `v`) and `T − 1` frames.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::nn::checkpoint::write_atomic;
use crate::rng::derive_seed;
use crate::tensor::Tensor;
use crate::video::flow::FlowField;
use crate::video::sample::{PipelineConfig, PreparedVideo, Resolution};

pub const ELRV_MAGIC: &[u8; 4] = b"ELRV";
pub const ELRV_VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 1;
const HEADER_LEN: usize = 24;

pub fn encode_elrv(frames: &Tensor<f32>) -> Result<Vec<u8>> {
    frames.expect_rank("encode_elrv", 4)?;
    let s = frames.shape();
    if s[1] != s[2] {
        return Err(Error::shape("encode_elrv", format!("frames must be square, got {s:?}")));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + frames.len() * 4);
    out.extend_from_slice(ELRV_MAGIC);
    for v in [ELRV_VERSION, s[0] as u32, s[1] as u32, s[3] as u32, DTYPE_F32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &x in frames.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_elrv(bytes: &[u8]) -> std::result::Result<Tensor<f32>, String> {
    if bytes.len() < HEADER_LEN {
        return Err("file shorter than header".into());
    }
    if &bytes[..4] != ELRV_MAGIC {
        return Err("bad magic".into());
    }
    let field = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let (version, t, r, c, dtype) = (field(0), field(1), field(2), field(3), field(4));
    if version != ELRV_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    if dtype != DTYPE_F32 {
        return Err(format!("unsupported dtype code {dtype}"));
    }
    let shape = [t as usize, r as usize, r as usize, c as usize];
    let n: usize = shape.iter().product();
    let body = &bytes[HEADER_LEN..];
    if body.len() != n * 4 {
        return Err(format!("expected {} data bytes, found {}", n * 4, body.len()));
    }
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Tensor::from_vec(&shape, data).map_err(|e| e.to_string())
}

pub fn write_elrv(path: &Path, frames: &Tensor<f32>) -> Result<()> {
    write_atomic(path, &encode_elrv(frames)?)
}

pub fn read_elrv(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_elrv(&bytes).map_err(|detail| Error::Format {
        path: path.to_path_buf(),
        detail,
    })
}

fn flows_to_tensor(flows: &[FlowField]) -> Result<Tensor<f32>> {
    let (h, w) = (flows[0].height(), flows[0].width());
    let mut data = Vec::with_capacity(flows.len() * h * w * 2);
    for f in flows {
        for (&u, &v) in f.u.data().iter().zip(f.v.data()) {
            data.push(u);
            data.push(v);
        }
    }
    Tensor::from_vec(&[flows.len(), h, w, 2], data)
}

fn tensor_to_flows(t: &Tensor<f32>) -> Result<Vec<FlowField>> {
    let (n, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    if t.shape()[3] != 2 {
        return Err(Error::shape("flow cache", format!("expected 2 channels, got {:?}", t.shape())));
    }
    (0..n)
        .map(|k| {
            let f = &t.data()[k * h * w * 2..(k + 1) * h * w * 2];
            FlowField::new(
                Tensor::from_fn(&[h, w], |p| f[2 * p]),
                Tensor::from_fn(&[h, w], |p| f[2 * p + 1]),
            )
        })
        .collect()
}

/// Directory of prepared clips keyed by source path and pipeline settings.
#[derive(Clone, Debug)]
pub struct SampleCache {
    dir: PathBuf,
}

impl SampleCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// File stem for `source` under `cfg`; changes whenever either does.
    pub fn key(source: &Path, cfg: &PipelineConfig) -> String {
        let id = format!(
            "{}|{}|{:?}|{:?}",
            source.display(),
            cfg.input_size,
            cfg.elr_size,
            cfg.temporal_length
        );
        let stem: String = source
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        format!("{stem}-{:016x}", derive_seed(ELRV_VERSION.into(), &id))
    }

    pub fn paths(&self, key: &str, res: Resolution) -> (PathBuf, PathBuf) {
        (
            self.dir.join(format!("{key}.{}.rgb.elrv", res.tag())),
            self.dir.join(format!("{key}.{}.flow.elrv", res.tag())),
        )
    }

    pub fn contains(&self, key: &str, res: Resolution) -> bool {
        let (a, b) = self.paths(key, res);
        a.is_file() && b.is_file()
    }

    pub fn store(&self, key: &str, res: Resolution, video: &PreparedVideo) -> Result<()> {
        let (rgb, flow) = self.paths(key, res);
        write_elrv(&rgb, &video.rgb)?;
        write_elrv(&flow, &flows_to_tensor(&video.flows)?)
    }

    pub fn load(&self, key: &str, res: Resolution) -> Result<PreparedVideo> {
        let (rgb, flow) = self.paths(key, res);
        let video = PreparedVideo::new(read_elrv(&rgb)?, tensor_to_flows(&read_elrv(&flow)?)?);
        video.map_err(|e| Error::Format {
            path: flow,
            detail: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_bit_exact() {
        let t = Tensor::from_fn(&[2, 3, 3, 1], |k| k as f32);
        let b = encode_elrv(&t).unwrap();
        assert_eq!(&b[..4], b"ELRV");
        let words: Vec<u32> = b[4..24].chunks_exact(4).map(|w| u32::from_le_bytes(w.try_into().unwrap())).collect();
        assert_eq!(words, vec![1, 2, 3, 1, 1]);
        assert_eq!(b.len(), 24 + 18 * 4);
        assert_eq!(&b[24 + 4..24 + 8], &1.0f32.to_le_bytes());
        assert_eq!(decode_elrv(&b).unwrap(), t);
    }

    #[test]
    fn corrupt_files_rejected() {
        let t = Tensor::<f32>::zeros(&[1, 2, 2, 3]);
        let b = encode_elrv(&t).unwrap();
        assert!(decode_elrv(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(decode_elrv(&bad).is_err());
        let mut dtype = b;
        dtype[20] = 2;
        assert!(decode_elrv(&dtype).is_err());
    }

    #[test]
    fn flows_round_trip_through_tensor() {
        let flows: Vec<_> = (0..3)
            .map(|k| FlowField::new(Tensor::full(&[2, 2], k as f32), Tensor::full(&[2, 2], -(k as f32))).unwrap())
            .collect();
        assert_eq!(tensor_to_flows(&flows_to_tensor(&flows).unwrap()).unwrap(), flows);
    }
}
