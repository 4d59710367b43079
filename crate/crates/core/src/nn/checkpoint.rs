//! Flat checkpoint container.
//!
//! Byte layout (all integers little-endian `u32`):
//!
//! ```text
//! magic   b"ELRC"
//! version 1
//! count   number of records
//! record* name_len, name (UTF-8), ndim, dims[ndim], f32 data[product(dims)]
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::network::{build_network, Model};
use crate::nn::spec::NetworkSpec;
use crate::tensor::{Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ELRC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub records: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn push<T: Scalar>(&mut self, name: impl Into<String>, tensor: &Tensor<T>) {
        self.records.push((name.into(), tensor.cast()));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.records.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for (name, t) in &self.records {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> io::Result<Self> {
        let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let count = read_u32(&mut r)? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            if len > r.len() {
                return Err(bad("truncated record name"));
            }
            let name = String::from_utf8(r[..len].to_vec()).map_err(|_| bad("record name is not UTF-8"))?;
            r = &r[len..];
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                shape.push(read_u32(&mut r)? as usize);
            }
            let numel: usize = shape.iter().product();
            if numel * 4 > r.len() {
                return Err(bad("truncated record data"));
            }
            let data = r[..numel * 4]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            r = &r[numel * 4..];
            let t = Tensor::from_vec(&shape, data).map_err(|e| bad(&e.to_string()))?;
            records.push((name, t));
        }
        if !r.is_empty() {
            return Err(bad("trailing bytes after last record"));
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }
}

fn read_u32(r: &mut &[u8]) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Writes to a sibling temp file and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn running_names(layer: &str) -> (String, String) {
    (format!("{layer}.running_mean"), format!("{layer}.running_var"))
}

/// Logical parameters plus batch-norm running statistics of a standalone model.
pub fn model_checkpoint<T: Scalar>(model: &Model<T>) -> Checkpoint {
    let mut ck = Checkpoint::default();
    for decl in model.net.decls() {
        ck.push(decl.name.clone(), &model.parameter(&decl.name).expect("declared"));
    }
    for (layer, stats) in model.net.running_stats() {
        let (m, v) = running_names(layer);
        ck.push(m, &stats.mean);
        ck.push(v, &stats.var);
    }
    ck
}

/// Rebuilds a standalone model for `spec` from a checkpoint written by [`model_checkpoint`].
pub fn model_from_checkpoint<T: Scalar>(spec: &NetworkSpec, ck: &Checkpoint) -> Result<Model<T>> {
    let mut model = build_network::<T>(spec, 0)?;
    let missing = |n: &str| Error::Config(format!("checkpoint lacks record {n:?}"));
    let names: Vec<String> = model.net.decls().map(|d| d.name.clone()).collect();
    for name in names {
        let src = ck.get(&name).ok_or_else(|| missing(&name))?;
        let dst = model.parameter_mut(&name).expect("declared");
        src.expect_shape("checkpoint", dst.shape())?;
        *dst = src.cast();
    }
    let layers: Vec<String> = model.net.running_stats().map(|(n, _)| n.to_string()).collect();
    for layer in layers {
        let (m, v) = running_names(&layer);
        let mean = ck.get(&m).ok_or_else(|| missing(&m))?.cast();
        let var = ck.get(&v).ok_or_else(|| missing(&v))?.cast();
        let stats = model.net.running_stats_mut(&layer).expect("declared");
        mean.expect_shape("checkpoint", stats.mean.shape())?;
        var.expect_shape("checkpoint", stats.var.shape())?;
        stats.mean = mean;
        stats.var = var;
    }
    Ok(model)
}
