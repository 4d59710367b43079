//! Operators that merge spatial and temporal feature maps into one trunk.
//!
//! All operators work on channel-last tensors of any rank ≥ 2 (`[N,H,W,D]` for
//! maps after Conv3, `[N,1,1,D]` for vectors after Fc4). Spatial dimensions
//! are never changed.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ops::{conv2d, conv2d_backward, ConvGeometry};
use crate::tensor::{FeatureMap, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FusionOp {
    Sum,
    Concat,
    Conv,
}

impl FusionOp {
    /// Output depth for inputs of depth `d` each.
    pub fn output_depth(self, d: usize) -> usize {
        match self {
            FusionOp::Sum => d,
            FusionOp::Concat => 2 * d,
            FusionOp::Conv => conv_fusion_width(2 * d),
        }
    }
}

impl fmt::Display for FusionOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionOp::Sum => "sum",
            FusionOp::Concat => "concat",
            FusionOp::Conv => "conv",
        })
    }
}

impl FromStr for FusionOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(FusionOp::Sum),
            "concat" | "cat" => Ok(FusionOp::Concat),
            "conv" => Ok(FusionOp::Conv),
            other => Err(Error::Config(format!(
                "unknown fusion operator {other:?} (expected sum, concat or conv)"
            ))),
        }
    }
}

/// Where the two streams merge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FusionLayer {
    Conv3,
    Fc4,
}

impl fmt::Display for FusionLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionLayer::Conv3 => "conv3",
            FusionLayer::Fc4 => "fc4",
        })
    }
}

impl FromStr for FusionLayer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "conv3" => Ok(FusionLayer::Conv3),
            "fc4" => Ok(FusionLayer::Fc4),
            other => Err(Error::Config(format!(
                "fusion can only follow conv3 or fc4, got {other:?}"
            ))),
        }
    }
}

/// Number of 1×1 filters in the conv-fusion bank: half the stacked depth, rounded half-up.
pub fn conv_fusion_width(stacked_depth: usize) -> usize {
    (stacked_depth + 1) / 2
}

/// Filter bank `[1,1,D_o,D'_o]` and bias `[D'_o]` of conv fusion.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionConvParams<T = f32> {
    pub filter_bank: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> FusionConvParams<T> {
    pub fn new(filter_bank: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        filter_bank.expect_rank("fuse_conv", 4)?;
        let s = filter_bank.shape();
        if s[0] != 1 || s[1] != 1 {
            return Err(Error::shape("fuse_conv", format!("filter bank must be 1x1, got {s:?}")));
        }
        if s[3] != conv_fusion_width(s[2]) {
            return Err(Error::shape(
                "fuse_conv",
                format!("{} filters for stacked depth {}, expected {}", s[3], s[2], conv_fusion_width(s[2])),
            ));
        }
        bias.expect_shape("fuse_conv bias", &[s[3]])?;
        Ok(Self { filter_bank, bias })
    }

    pub fn zeros(stacked_depth: usize) -> Self {
        let out = conv_fusion_width(stacked_depth);
        Self {
            filter_bank: Tensor::zeros(&[1, 1, stacked_depth, out]),
            bias: Tensor::zeros(&[out]),
        }
    }
}

pub struct FusionGrads<T> {
    pub spatial: Tensor<T>,
    pub temporal: Tensor<T>,
    pub filter_bank: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

fn same_shape<T: Scalar>(op: &'static str, xs: &Tensor<T>, xt: &Tensor<T>) -> Result<()> {
    if xs.shape() != xt.shape() {
        return Err(Error::shape(
            op,
            format!("spatial {:?} vs temporal {:?}", xs.shape(), xt.shape()),
        ));
    }
    Ok(())
}

pub fn sum<T: Scalar>(xs: &Tensor<T>, xt: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("fuse_sum", xs, xt)?;
    xs.zip_map(xt, |a, b| a + b)
}

/// Interleaves channels: output `2d` ← spatial `d`, output `2d+1` ← temporal `d`.
pub fn concat<T: Scalar>(xs: &Tensor<T>, xt: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("fuse_concat", xs, xt)?;
    let d = xs.last_dim();
    let mut out = Vec::with_capacity(2 * xs.len());
    for (rs, rt) in xs.data().chunks_exact(d).zip(xt.data().chunks_exact(d)) {
        for c in 0..d {
            out.push(rs[c]);
            out.push(rt[c]);
        }
    }
    let mut shape = xs.shape().to_vec();
    *shape.last_mut().unwrap() = 2 * d;
    Tensor::from_vec(&shape, out)
}

/// Inverse of [`concat`].
pub fn deinterleave<T: Scalar>(y: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let d2 = y.last_dim();
    if d2 % 2 != 0 {
        return Err(Error::shape("deinterleave", format!("odd channel count {d2}")));
    }
    let d = d2 / 2;
    let mut a = Vec::with_capacity(y.len() / 2);
    let mut b = Vec::with_capacity(y.len() / 2);
    for row in y.data().chunks_exact(d2) {
        for pair in row.chunks_exact(2) {
            a.push(pair[0]);
            b.push(pair[1]);
        }
    }
    let mut shape = y.shape().to_vec();
    *shape.last_mut().unwrap() = d;
    Ok((Tensor::from_vec(&shape, a)?, Tensor::from_vec(&shape, b)?))
}

fn as_maps<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    match t.ndim() {
        4 => Ok(t.clone()),
        2 => t.clone().reshape(&[t.shape()[0], 1, 1, t.shape()[1]]),
        _ => Err(Error::shape("fuse_conv", format!("unsupported rank {:?}", t.shape()))),
    }
}

/// Interleaved concat followed by a 1×1 convolution with `params`.
pub fn conv<T: Scalar>(xs: &Tensor<T>, xt: &Tensor<T>, params: &FusionConvParams<T>) -> Result<Tensor<T>> {
    let stacked = concat(xs, xt)?;
    let depth = stacked.last_dim();
    if params.filter_bank.shape().get(2) != Some(&depth) {
        return Err(Error::shape(
            "fuse_conv",
            format!(
                "filter bank {:?} does not match stacked depth {depth}",
                params.filter_bank.shape()
            ),
        ));
    }
    let y = conv2d(&as_maps(&stacked)?, &params.filter_bank, &params.bias, ConvGeometry::default())?;
    let mut shape = xs.shape().to_vec();
    *shape.last_mut().unwrap() = params.bias.len();
    y.reshape(&shape)
}

pub fn backward<T: Scalar>(
    op: FusionOp,
    xs: &Tensor<T>,
    xt: &Tensor<T>,
    params: Option<&FusionConvParams<T>>,
    grad_out: &Tensor<T>,
) -> Result<FusionGrads<T>> {
    same_shape("fusion backward", xs, xt)?;
    match op {
        FusionOp::Sum => {
            grad_out.expect_shape("fuse_sum backward", xs.shape())?;
            Ok(FusionGrads {
                spatial: grad_out.clone(),
                temporal: grad_out.clone(),
                filter_bank: None,
                bias: None,
            })
        }
        FusionOp::Concat => {
            let (spatial, temporal) = deinterleave(grad_out)?;
            spatial.expect_shape("fuse_concat backward", xs.shape())?;
            Ok(FusionGrads {
                spatial,
                temporal,
                filter_bank: None,
                bias: None,
            })
        }
        FusionOp::Conv => {
            let params = params.ok_or_else(|| Error::arg("fuse_conv backward", "missing filter bank"))?;
            let stacked = as_maps(&concat(xs, xt)?)?;
            let g = as_maps(grad_out)?;
            let grads = conv2d_backward(&stacked, &params.filter_bank, ConvGeometry::default(), &g)?;
            let mut shape = xs.shape().to_vec();
            *shape.last_mut().unwrap() = 2 * xs.last_dim();
            let (spatial, temporal) = deinterleave(&grads.input.reshape(&shape)?)?;
            Ok(FusionGrads {
                spatial,
                temporal,
                filter_bank: Some(grads.filters),
                bias: Some(grads.bias),
            })
        }
    }
}

/// Single-map convenience over [`FeatureMap`]s.
pub fn fuse_maps<T: Scalar>(
    op: FusionOp,
    xs: &FeatureMap<T>,
    xt: &FeatureMap<T>,
    params: Option<&FusionConvParams<T>>,
) -> Result<FeatureMap<T>> {
    let y = match op {
        FusionOp::Sum => sum(&xs.tensor, &xt.tensor)?,
        FusionOp::Concat => concat(&xs.tensor, &xt.tensor)?,
        FusionOp::Conv => {
            let params = params.ok_or_else(|| Error::arg("fuse_conv", "missing filter bank"))?;
            let lift = |t: &Tensor<T>| {
                let s = t.shape();
                t.clone().reshape(&[1, s[0], s[1], s[2]])
            };
            let y = conv(&lift(&xs.tensor)?, &lift(&xt.tensor)?, params)?;
            let s = y.shape().to_vec();
            y.reshape(&s[1..])?
        }
    };
    FeatureMap::new(y, xs.layer_index)
}
