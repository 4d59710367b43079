//! Polar color coding of flow fields.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::video::flow::FlowField;

/// Flow magnitude (pixels) that maps to full saturation.
pub const MAGNITUDE_CAP: f64 = 8.0;

/// HSV with `h` in degrees, `s` and `v` in `[0, 1]`, to RGB in `[0, 1]`.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(360.0);
    let c = v * s;
    let x = c * (1.0 - ((h / 60.0) % 2.0 - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match (h / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

/// Hue from `atan2(v, u)` in degrees `[0, 360)`, saturation from magnitude, value 1.
pub fn flow_hsv(u: f64, v: f64, cap: f64) -> (f64, f64) {
    let hue = v.atan2(u).to_degrees().rem_euclid(360.0);
    let sat = ((u * u + v * v).sqrt() / cap).min(1.0);
    (hue, sat)
}

/// Encode a flow field as an `[H, W, 3]` RGB image.
pub fn encode_flow_color(flow: &FlowField, cap: f64) -> Result<Tensor<f32>> {
    if !(cap > 0.0) {
        return Err(Error::arg("encode_flow_color", format!("magnitude cap must be positive, got {cap}")));
    }
    let mut data = Vec::with_capacity(flow.u.len() * 3);
    for (&u, &v) in flow.u.data().iter().zip(flow.v.data()) {
        let (h, s) = flow_hsv(f64::from(u), f64::from(v), cap);
        data.extend(hsv_to_rgb(h, s, 1.0).map(|x| x as f32));
    }
    Tensor::from_vec(&[flow.height(), flow.width(), 3], data)
}
