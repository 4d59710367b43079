//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key in
//! [`CONFIG_KEYS`] may appear at most once; unknown keys are errors.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::coupled::{CouplingSchedule, TrainerConfig};
use crate::error::{Error, Result};
use crate::fusion::{FusionLayer, FusionOp};
use crate::harness::manifest::Protocol;
use crate::nn::spec::{ConvSpec, FusionSpec, NetworkSpec, Stream};
use crate::video::color::MAGNITUDE_CAP;
use crate::video::sample::PipelineConfig;

/// Which network(s) an experiment trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamChoice {
    Spatial,
    Temporal,
    Fused,
    /// Separate spatial and temporal networks whose softmax outputs are averaged.
    Average,
}

impl fmt::Display for StreamChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StreamChoice::Spatial => "spatial",
            StreamChoice::Temporal => "temporal",
            StreamChoice::Fused => "fused",
            StreamChoice::Average => "average",
        })
    }
}

impl FromStr for StreamChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" | "avg" => Ok(StreamChoice::Average),
            other => Ok(match other.parse::<Stream>()? {
                Stream::Spatial => StreamChoice::Spatial,
                Stream::Temporal => StreamChoice::Temporal,
                Stream::Fused => StreamChoice::Fused,
            }),
        }
    }
}

/// Recognized keys with a one-line description each.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("manifest", "CSV manifest with columns path,label,subject[,split]"),
    ("protocol", "leave-person-out or fixed-splits"),
    ("cache_dir", "directory for preprocessed .elrv clips"),
    ("output_dir", "directory for reports, logs and checkpoints"),
    ("stream", "spatial, temporal, fused or average"),
    ("fusion", "sum, concat or conv"),
    ("fusion_layer", "conv3 or fc4"),
    ("coupling", "true to train a semi-coupled eLR/HR pair, false for eLR only"),
    ("coupling_ratios", "five comma-separated ratios c1..c5"),
    ("input_size", "network input side in pixels"),
    ("conv_widths", "three comma-separated conv output widths"),
    ("conv_kernels", "three comma-separated odd kernel sizes"),
    ("fc_width", "width of fc4"),
    ("dropout", "drop probability before fc4 and fc5"),
    ("init_std", "standard deviation of initial weights"),
    ("base_lr", "initial learning rate"),
    ("lr_decay_every", "epochs between learning-rate reductions"),
    ("lr_decay_factor", "divisor applied at each reduction"),
    ("momentum", "SGD momentum"),
    ("weight_decay", "L2 weight decay"),
    ("batch_size", "samples per iteration"),
    ("epochs", "passes over the training videos"),
    ("flip_probability", "probability of mirroring a training sample"),
    ("temporal_length", "frames after spline resampling, 0 to keep source length"),
    ("elr_size", "eLR frame size HxW, or auto"),
    ("test_stride", "spacing of evaluated center frames"),
    ("checkpoint_every", "epochs between intermediate checkpoints, 0 for final only"),
    ("eval_train", "also report CCR on each fold's training videos"),
    ("seed", "master random seed"),
    ("folds", "comma-separated fold ids to run, or all"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub manifest: Option<PathBuf>,
    pub protocol: Protocol,
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
    pub stream: StreamChoice,
    pub fusion: FusionOp,
    pub fusion_layer: FusionLayer,
    pub coupling: bool,
    pub coupling_ratios: CouplingSchedule,
    pub input_size: usize,
    pub conv_widths: [usize; 3],
    pub conv_kernels: [usize; 3],
    pub fc_width: usize,
    pub dropout: f64,
    pub init_std: f64,
    pub trainer: TrainerConfig,
    pub temporal_length: Option<usize>,
    pub elr_size: Option<(usize, usize)>,
    pub test_stride: usize,
    pub checkpoint_every: usize,
    pub eval_train: bool,
    pub folds: Option<Vec<String>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let spec = NetworkSpec::fused(2, FusionOp::Conv, FusionLayer::Conv3);
        Self {
            manifest: None,
            protocol: Protocol::LeavePersonOut,
            cache_dir: PathBuf::from("cache"),
            output_dir: PathBuf::from("runs"),
            stream: StreamChoice::Fused,
            fusion: FusionOp::Conv,
            fusion_layer: FusionLayer::Conv3,
            coupling: true,
            coupling_ratios: CouplingSchedule::default(),
            input_size: spec.input_size,
            conv_widths: spec.convs.map(|c| c.out_channels),
            conv_kernels: spec.convs.map(|c| c.kernel),
            fc_width: spec.fc_width,
            dropout: spec.dropout,
            init_std: spec.init_std,
            trainer: TrainerConfig::default(),
            temporal_length: Some(100),
            elr_size: None,
            test_stride: 4,
            checkpoint_every: 0,
            eval_train: false,
            folds: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_triple(key: &str, value: &str) -> Result<[usize; 3]> {
    let v = value
        .split(',')
        .map(|p| parse::<usize>(key, p.trim()))
        .collect::<Result<Vec<_>>>()?;
    v.try_into()
        .map_err(|_| Error::Config(format!("{key}: expected three comma-separated values, got {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

impl ExperimentConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let t = &mut self.trainer;
        match key {
            "manifest" => self.manifest = Some(PathBuf::from(v)),
            "protocol" => self.protocol = v.parse()?,
            "cache_dir" => self.cache_dir = PathBuf::from(v),
            "output_dir" => self.output_dir = PathBuf::from(v),
            "stream" => self.stream = v.parse()?,
            "fusion" => self.fusion = v.parse()?,
            "fusion_layer" => self.fusion_layer = v.parse()?,
            "coupling" => self.coupling = parse_bool(key, v)?,
            "coupling_ratios" => self.coupling_ratios = v.parse()?,
            "input_size" => self.input_size = parse(key, v)?,
            "conv_widths" => self.conv_widths = parse_triple(key, v)?,
            "conv_kernels" => self.conv_kernels = parse_triple(key, v)?,
            "fc_width" => self.fc_width = parse(key, v)?,
            "dropout" => self.dropout = parse(key, v)?,
            "init_std" => self.init_std = parse(key, v)?,
            "base_lr" => t.base_lr = parse(key, v)?,
            "lr_decay_every" => t.lr_decay_every = parse(key, v)?,
            "lr_decay_factor" => t.lr_decay_factor = parse(key, v)?,
            "momentum" => t.momentum = parse(key, v)?,
            "weight_decay" => t.weight_decay = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "flip_probability" => t.flip_probability = parse(key, v)?,
            "seed" => t.seed = parse(key, v)?,
            "temporal_length" => {
                let n: usize = parse(key, v)?;
                self.temporal_length = (n > 0).then_some(n);
            }
            "elr_size" => {
                self.elr_size = if v.eq_ignore_ascii_case("auto") {
                    None
                } else {
                    let (h, w) = v
                        .split_once(['x', 'X'])
                        .ok_or_else(|| Error::Config(format!("{key}: expected HxW or auto, got {v:?}")))?;
                    Some((parse(key, h.trim())?, parse(key, w.trim())?))
                }
            }
            "test_stride" => self.test_stride = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "eval_train" => self.eval_train = parse_bool(key, v)?,
            "folds" => {
                self.folds = if v.eq_ignore_ascii_case("all") {
                    None
                } else {
                    Some(v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
                }
            }
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {k:?}", n + 1)));
            }
            self.set(k, v).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        if let Some(base) = path.parent() {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            if let Some(m) = cfg.manifest.as_mut() {
                fix(m);
            }
            if text.lines().any(|l| l.trim_start().starts_with("cache_dir")) {
                fix(&mut cfg.cache_dir);
            }
            if text.lines().any(|l| l.trim_start().starts_with("output_dir")) {
                fix(&mut cfg.output_dir);
            }
        }
        Ok(cfg)
    }

    /// The network for `stream` (spatial, temporal or fused) with `num_classes` outputs.
    pub fn network_spec(&self, stream: Stream, num_classes: usize) -> Result<NetworkSpec> {
        let mut spec = NetworkSpec::spatial(num_classes);
        spec.stream = stream;
        spec.input_size = self.input_size;
        spec.convs = std::array::from_fn(|i| ConvSpec {
            kernel: self.conv_kernels[i],
            out_channels: self.conv_widths[i],
        });
        spec.fc_width = self.fc_width;
        spec.dropout = self.dropout;
        spec.init_std = self.init_std;
        spec.fusion = (stream == Stream::Fused).then_some(FusionSpec {
            op: self.fusion,
            layer: self.fusion_layer,
        });
        spec.validate()?;
        Ok(spec)
    }

    /// Streams trained by this experiment: one network, or two for averaging.
    pub fn streams(&self) -> Vec<Stream> {
        match self.stream {
            StreamChoice::Spatial => vec![Stream::Spatial],
            StreamChoice::Temporal => vec![Stream::Temporal],
            StreamChoice::Fused => vec![Stream::Fused],
            StreamChoice::Average => vec![Stream::Spatial, Stream::Temporal],
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            input_size: self.input_size,
            elr_size: self.elr_size,
            temporal_length: self.temporal_length,
            magnitude_cap: MAGNITUDE_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.trainer.validate()?;
        if self.test_stride == 0 {
            return Err(Error::Config("test_stride must be at least 1".into()));
        }
        if let Some((h, w)) = self.elr_size {
            if h < 2 || w < 2 {
                return Err(Error::Config(format!("elr_size {h}x{w} must be at least 2x2")));
            }
        }
        if self.temporal_length == Some(1) {
            return Err(Error::Config("temporal_length must be 0 or at least 2".into()));
        }
        for s in self.streams() {
            self.network_spec(s, 2)?;
        }
        if let Some(m) = &self.manifest {
            if !m.is_file() {
                return Err(Error::Config(format!("manifest {} does not exist", m.display())));
            }
        }
        Ok(())
    }

    /// Renders every key, in [`CONFIG_KEYS`] order, as a loadable config file.
    pub fn to_text(&self) -> String {
        let t = &self.trainer;
        let join = |a: [usize; 3]| a.map(|x| x.to_string()).join(",");
        let mut out = String::new();
        for (key, _) in CONFIG_KEYS {
            let value = match *key {
                "manifest" => self.manifest.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
                "protocol" => self.protocol.to_string(),
                "cache_dir" => self.cache_dir.display().to_string(),
                "output_dir" => self.output_dir.display().to_string(),
                "stream" => self.stream.to_string(),
                "fusion" => self.fusion.to_string(),
                "fusion_layer" => self.fusion_layer.to_string(),
                "coupling" => self.coupling.to_string(),
                "coupling_ratios" => self.coupling_ratios.to_string(),
                "input_size" => self.input_size.to_string(),
                "conv_widths" => join(self.conv_widths),
                "conv_kernels" => join(self.conv_kernels),
                "fc_width" => self.fc_width.to_string(),
                "dropout" => self.dropout.to_string(),
                "init_std" => self.init_std.to_string(),
                "base_lr" => t.base_lr.to_string(),
                "lr_decay_every" => t.lr_decay_every.to_string(),
                "lr_decay_factor" => t.lr_decay_factor.to_string(),
                "momentum" => t.momentum.to_string(),
                "weight_decay" => t.weight_decay.to_string(),
                "batch_size" => t.batch_size.to_string(),
                "epochs" => t.epochs.to_string(),
                "flip_probability" => t.flip_probability.to_string(),
                "temporal_length" => self.temporal_length.unwrap_or(0).to_string(),
                "elr_size" => self.elr_size.map_or("auto".into(), |(h, w)| format!("{h}x{w}")),
                "test_stride" => self.test_stride.to_string(),
                "checkpoint_every" => self.checkpoint_every.to_string(),
                "eval_train" => self.eval_train.to_string(),
                "seed" => t.seed.to_string(),
                "folds" => self.folds.as_ref().map_or("all".into(), |f| f.join(",")),
                _ => unreachable!("every key is rendered"),
            };
            if *key == "manifest" && value.is_empty() {
                continue;
            }
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text("# comment\nstream = average\nelr_size = 8x8\ntemporal_length = 0\nfolds = s1, s2\n")
            .unwrap();
        assert_eq!(cfg.stream, StreamChoice::Average);
        assert_eq!(cfg.elr_size, Some((8, 8)));
        assert_eq!(cfg.temporal_length, None);
        let mut back = ExperimentConfig::default();
        back.apply_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_and_duplicate_keys_rejected() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.apply_text("epochz = 3\n").is_err());
        assert!(cfg.apply_text("epochs = 3\nepochs = 4\n").is_err());
        assert!(cfg.apply_text("just text\n").is_err());
    }

    #[test]
    fn every_key_is_settable() {
        let cfg = ExperimentConfig::default();
        for line in cfg.to_text().lines() {
            let (k, v) = line.split_once(" = ").unwrap();
            ExperimentConfig::default().set(k, v).unwrap();
        }
        assert_eq!(cfg.to_text().lines().count(), CONFIG_KEYS.len() - 1);
    }

    #[test]
    fn default_network_is_the_conv3_conv_fusion() {
        let spec = ExperimentConfig::default().network_spec(Stream::Fused, 12).unwrap();
        assert_eq!(spec, NetworkSpec::fused(12, FusionOp::Conv, FusionLayer::Conv3));
    }
}
