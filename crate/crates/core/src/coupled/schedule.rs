use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const COUPLING_LAYERS: usize = 5;

/// Per-layer coupling ratios `c_1..c_5`: the fraction of each layer's output
/// channels shared between the eLR and HR networks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CouplingSchedule {
    ratios: [f64; COUPLING_LAYERS],
}

impl CouplingSchedule {
    /// Ratios must lie in `[0, 1]` and be non-decreasing with depth.
    pub fn new(ratios: [f64; COUPLING_LAYERS]) -> Result<Self> {
        for (i, &c) in ratios.iter().enumerate() {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::InvalidSchedule(format!("c_{} = {c} outside [0, 1]", i + 1)));
            }
        }
        if let Some(i) = ratios.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::InvalidSchedule(format!(
                "ratios must not decrease with depth: c_{} = {} > c_{} = {}",
                i + 1,
                ratios[i],
                i + 2,
                ratios[i + 1]
            )));
        }
        Ok(Self { ratios })
    }

    pub fn uncoupled() -> Self {
        Self { ratios: [0.0; 5] }
    }

    pub fn fully_coupled() -> Self {
        Self { ratios: [1.0; 5] }
    }

    pub fn ratios(&self) -> [f64; COUPLING_LAYERS] {
        self.ratios
    }

    pub fn ratio(&self, layer: usize) -> f64 {
        self.ratios[layer - 1]
    }

    /// `k = round(c_n · width)`, halves rounded up.
    pub fn shared_count(&self, layer: usize, width: usize) -> usize {
        let k = (self.ratio(layer) * width as f64 + 0.5 + 1e-9).floor() as usize;
        k.min(width)
    }
}

impl Default for CouplingSchedule {
    fn default() -> Self {
        Self {
            ratios: [0.0, 0.25, 0.5, 0.75, 1.0],
        }
    }
}

impl fmt::Display for CouplingSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.ratios.iter().map(|c| c.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for CouplingSchedule {
    type Err = Error;

    /// Five comma-separated ratios, e.g. `0,0.25,0.5,0.75,1`.
    fn from_str(s: &str) -> Result<Self> {
        let values = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidSchedule(format!("not a number: {p:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let ratios: [f64; COUPLING_LAYERS] = values
            .try_into()
            .map_err(|v: Vec<f64>| Error::InvalidSchedule(format!("expected 5 ratios, got {}", v.len())))?;
        Self::new(ratios)
    }
}
