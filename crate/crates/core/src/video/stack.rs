//! Eleven-flow stacks centered on a frame.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::video::color::encode_flow_color;
use crate::video::flow::FlowField;

pub const STACK_RADIUS: usize = 5;
pub const STACK_LEN: usize = 2 * STACK_RADIUS + 1;

#[derive(Clone, Debug, PartialEq)]
pub struct FlowStack {
    /// The mean-subtracted raw flows in stack order.
    pub flows: Vec<FlowField>,
    /// `[H, W, 33]`; flow `k` occupies channels `3k..3k+3`.
    pub encoded: Tensor<f32>,
}

impl FlowStack {
    /// Color-encode already mean-subtracted flows.
    pub fn from_flows(flows: Vec<FlowField>, cap: f64) -> Result<Self> {
        if flows.len() != STACK_LEN {
            return Err(Error::arg(
                "flow_stack",
                format!("expected {STACK_LEN} flows, got {}", flows.len()),
            ));
        }
        let colored = flows
            .iter()
            .map(|f| encode_flow_color(f, cap))
            .collect::<Result<Vec<_>>>()?;
        let encoded = Tensor::concat_last(&colored.iter().collect::<Vec<_>>())?;
        Ok(Self { flows, encoded })
    }

    /// The stack of the left-right mirrored video.
    pub fn mirrored(&self, cap: f64) -> Result<Self> {
        Self::from_flows(self.flows.iter().map(FlowField::mirrored).collect(), cap)
    }
}

/// Flow indices `t−5..=t+5` clamped to `[0, len)`.
pub fn stack_indices(len: usize, t: usize) -> [usize; STACK_LEN] {
    std::array::from_fn(|k| (t + k).saturating_sub(STACK_RADIUS).min(len - 1))
}

/// Select eleven flows around `t`, remove their common mean displacement and encode.
pub fn build_flow_stack(flows: &[FlowField], t: usize, cap: f64) -> Result<FlowStack> {
    if flows.is_empty() {
        return Err(Error::arg("build_flow_stack", "empty flow list"));
    }
    if t >= flows.len() {
        return Err(Error::arg(
            "build_flow_stack",
            format!("center {t} outside {} flows", flows.len()),
        ));
    }
    let picked: Vec<&FlowField> = stack_indices(flows.len(), t).iter().map(|&i| &flows[i]).collect();
    let (mut su, mut sv) = (0.0, 0.0);
    for f in &picked {
        let (u, v) = f.mean();
        su += u;
        sv += v;
    }
    let (mu, mv) = (su / STACK_LEN as f64, sv / STACK_LEN as f64);
    FlowStack::from_flows(picked.iter().map(|f| f.offset(mu, mv)).collect(), cap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video::color::MAGNITUDE_CAP;

    fn uniform(u: f32, v: f32) -> FlowField {
        FlowField::new(Tensor::full(&[4, 4], u), Tensor::full(&[4, 4], v)).unwrap()
    }

    #[test]
    fn clamped_indices_at_start() {
        assert_eq!(stack_indices(3, 0), [0, 0, 0, 0, 0, 0, 1, 2, 2, 2, 2]);
        assert_eq!(stack_indices(20, 10), [5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15]);
    }

    #[test]
    fn stack_has_33_channels_and_zero_mean() {
        let flows: Vec<_> = (0..3).map(|k| uniform(k as f32, 1.0 - k as f32)).collect();
        let s = build_flow_stack(&flows, 0, MAGNITUDE_CAP).unwrap();
        assert_eq!(s.encoded.shape(), &[4, 4, 33]);
        let (su, sv) = s.flows.iter().fold((0.0, 0.0), |(a, b), f| {
            let (u, v) = f.mean();
            (a + u, b + v)
        });
        assert!(su.abs() < 1e-6 && sv.abs() < 1e-6);
    }

    #[test]
    fn empty_and_out_of_range_rejected() {
        assert!(build_flow_stack(&[], 0, MAGNITUDE_CAP).is_err());
        assert!(build_flow_stack(&[uniform(0.0, 0.0)], 1, MAGNITUDE_CAP).is_err());
    }
}
