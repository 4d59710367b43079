//! Declarative description of the base ConvNet and its fused variants.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fusion::{FusionLayer, FusionOp};

pub const RGB_CHANNELS: usize = 3;
/// 11 colour-encoded flow fields × 3 channels.
pub const FLOW_CHANNELS: usize = 33;
pub const DEFAULT_INIT_STD: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    Spatial,
    Temporal,
    Fused,
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stream::Spatial => "spatial",
            Stream::Temporal => "temporal",
            Stream::Fused => "fused",
        })
    }
}

impl FromStr for Stream {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial" => Ok(Stream::Spatial),
            "temporal" => Ok(Stream::Temporal),
            "fused" => Ok(Stream::Fused),
            other => Err(Error::Config(format!("unknown stream {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FusionSpec {
    pub op: FusionOp,
    pub layer: FusionLayer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub out_channels: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Pool,
    BatchNorm,
    Relu,
    Dropout,
    Linear,
    Fusion,
}

/// One entry of the flattened layer list; `coupling_layer_index` is the
/// 1-based layer `n` whose coupling ratio governs this layer's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: Option<[usize; 2]>,
    pub out_channels: Option<usize>,
    pub coupling_layer_index: Option<usize>,
}

impl LayerSpec {
    fn plain(kind: LayerKind) -> Self {
        Self {
            kind,
            kernel: None,
            out_channels: None,
            coupling_layer_index: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub stream: Stream,
    /// Square input side; 32 for the published setting.
    pub input_size: usize,
    pub convs: [ConvSpec; 3],
    pub fc_width: usize,
    pub num_classes: usize,
    /// Drop probability applied to the inputs of both fully-connected layers.
    pub dropout: f64,
    pub fusion: Option<FusionSpec>,
    pub init_std: f64,
}

impl NetworkSpec {
    fn base(stream: Stream, num_classes: usize, fusion: Option<FusionSpec>) -> Self {
        Self {
            stream,
            input_size: 32,
            convs: [
                ConvSpec {
                    kernel: 5,
                    out_channels: 32,
                },
                ConvSpec {
                    kernel: 3,
                    out_channels: 64,
                },
                ConvSpec {
                    kernel: 3,
                    out_channels: 128,
                },
            ],
            fc_width: 256,
            num_classes,
            dropout: 0.85,
            fusion,
            init_std: DEFAULT_INIT_STD,
        }
    }

    pub fn spatial(num_classes: usize) -> Self {
        Self::base(Stream::Spatial, num_classes, None)
    }

    pub fn temporal(num_classes: usize) -> Self {
        Self::base(Stream::Temporal, num_classes, None)
    }

    pub fn fused(num_classes: usize, op: FusionOp, layer: FusionLayer) -> Self {
        Self::base(Stream::Fused, num_classes, Some(FusionSpec { op, layer }))
    }

    /// Replace the layer widths (conv1..conv3, fc4).
    pub fn with_widths(mut self, convs: [usize; 3], fc_width: usize) -> Self {
        for (c, w) in self.convs.iter_mut().zip(convs) {
            c.out_channels = w;
        }
        self.fc_width = fc_width;
        self
    }

    pub fn input_channels(stream: Stream) -> usize {
        match stream {
            Stream::Temporal => FLOW_CHANNELS,
            _ => RGB_CHANNELS,
        }
    }

    /// Width `D^n` of coupling layer `n` in 1..=5 (the conv-fusion bank is
    /// not a coupling layer of its own).
    pub fn layer_width(&self, n: usize) -> Option<usize> {
        match n {
            1..=3 => Some(self.convs[n - 1].out_channels),
            4 => Some(self.fc_width),
            5 => Some(self.num_classes),
            _ => None,
        }
    }

    /// Side of the map after the three conv/pool stages.
    pub fn final_map_size(&self) -> usize {
        self.input_size / 8
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidSpec(m));
        if self.input_size < 8 || self.input_size % 8 != 0 {
            return fail(format!(
                "input size {} must be a positive multiple of 8 (three 2x2 poolings)",
                self.input_size
            ));
        }
        for (i, c) in self.convs.iter().enumerate() {
            if c.out_channels == 0 {
                return fail(format!("conv{} has zero output channels", i + 1));
            }
            if c.kernel == 0 || c.kernel % 2 == 0 {
                return fail(format!("conv{} kernel {} must be odd", i + 1, c.kernel));
            }
        }
        if self.fc_width == 0 {
            return fail("fc4 width must be at least 1".into());
        }
        if self.num_classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return fail(format!("init std {} must be positive", self.init_std));
        }
        match (self.stream, self.fusion) {
            (Stream::Fused, None) => fail("fused stream needs a fusion operator".into()),
            (Stream::Spatial | Stream::Temporal, Some(_)) => {
                fail("fusion given for a single-stream network".into())
            }
            _ => Ok(()),
        }
    }

    /// The flattened layer list of one pass through the network.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut trunk = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            trunk.push(LayerSpec {
                kind: LayerKind::Conv,
                kernel: Some([c.kernel, c.kernel]),
                out_channels: Some(c.out_channels),
                coupling_layer_index: Some(i + 1),
            });
            trunk.push(LayerSpec {
                kind: LayerKind::BatchNorm,
                kernel: None,
                out_channels: Some(c.out_channels),
                coupling_layer_index: Some(i + 1),
            });
            trunk.push(LayerSpec::plain(LayerKind::Relu));
            trunk.push(LayerSpec::plain(LayerKind::Pool));
        }
        let linear = |width: usize, n: usize| LayerSpec {
            kind: LayerKind::Linear,
            kernel: None,
            out_channels: Some(width),
            coupling_layer_index: Some(n),
        };
        let fusion = |s: &FusionSpec| LayerSpec {
            kind: LayerKind::Fusion,
            kernel: (s.op == FusionOp::Conv).then_some([1, 1]),
            out_channels: None,
            coupling_layer_index: (s.op == FusionOp::Conv).then_some(3),
        };
        let mut layers = trunk.clone();
        if self.stream == Stream::Fused {
            layers.extend(trunk);
        }
        match self.fusion {
            Some(s) if s.layer == FusionLayer::Fc4 => {
                for _ in 0..2 {
                    layers.push(LayerSpec::plain(LayerKind::Dropout));
                    layers.push(linear(self.fc_width, 4));
                    layers.push(LayerSpec::plain(LayerKind::Relu));
                }
                layers.push(fusion(&s));
            }
            other => {
                if let Some(s) = other {
                    layers.push(fusion(&s));
                }
                layers.push(LayerSpec::plain(LayerKind::Dropout));
                layers.push(linear(self.fc_width, 4));
                layers.push(LayerSpec::plain(LayerKind::Relu));
            }
        }
        layers.push(LayerSpec::plain(LayerKind::Dropout));
        layers.push(linear(self.num_classes, 5));
        layers
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_has_three_convs_and_two_fcs_per_stream() {
        let spec = NetworkSpec::spatial(12);
        let layers = spec.layers();
        let count = |k| layers.iter().filter(|l| l.kind == k).count();
        assert_eq!(count(LayerKind::Conv), 3);
        assert_eq!(count(LayerKind::Linear), 2);
        assert_eq!(count(LayerKind::Pool), 3);
        assert_eq!(count(LayerKind::Fusion), 0);
    }

    #[test]
    fn fused_at_fc4_duplicates_fc4() {
        let spec = NetworkSpec::fused(12, FusionOp::Sum, FusionLayer::Fc4);
        let layers = spec.layers();
        let convs = layers.iter().filter(|l| l.kind == LayerKind::Conv).count();
        let fcs = layers.iter().filter(|l| l.kind == LayerKind::Linear).count();
        assert_eq!((convs, fcs), (6, 3));
    }

    #[test]
    fn validation_names_violation() {
        let mut spec = NetworkSpec::spatial(12);
        spec.input_size = 20;
        assert!(spec.validate().unwrap_err().to_string().contains("multiple of 8"));

        let mut spec = NetworkSpec::spatial(12);
        spec.fusion = Some(FusionSpec {
            op: FusionOp::Sum,
            layer: FusionLayer::Conv3,
        });
        assert!(spec.validate().unwrap_err().to_string().contains("single-stream"));

        let mut spec = NetworkSpec::fused(12, FusionOp::Sum, FusionLayer::Conv3);
        spec.fusion = None;
        assert!(spec.validate().is_err());

        let spec = NetworkSpec::spatial(12).with_widths([0, 4, 4], 8);
        assert!(spec.validate().unwrap_err().to_string().contains("conv1"));
    }

    #[test]
    fn widths_per_coupling_layer() {
        let spec = NetworkSpec::spatial(12);
        let widths: Vec<_> = (1..=5).map(|n| spec.layer_width(n).unwrap()).collect();
        assert_eq!(widths, vec![32, 64, 128, 256, 12]);
        assert_eq!(spec.layer_width(6), None);
    }
}
