use elr_twostream::video::{
    bicubic_resize, build_flow_stack, compute_flow, encode_flow_color, normalize_video, prepare_video,
    prepare_video_traced, resize_temporal_spline, FlowField, PipelineConfig, Resolution, Stage, MAGNITUDE_CAP,
};
use elr_twostream::Tensor;
use proptest::prelude::*;

fn blob(size: usize, cy: f64, cx: f64, sigma: f64) -> Tensor<f64> {
    Tensor::from_fn(&[size, size], |k| {
        let (y, x) = ((k / size) as f64, (k % size) as f64);
        (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * sigma * sigma)).exp()
    })
}

/// Mean `(u, v)` over pixels where either frame is bright.
fn region_mean(flow: &FlowField, a: &Tensor<f64>, b: &Tensor<f64>) -> (f64, f64) {
    let (mut su, mut sv, mut n) = (0.0, 0.0, 0.0);
    for k in 0..a.len() {
        if a.data()[k].max(b.data()[k]) > 0.2 {
            su += f64::from(flow.u.data()[k]);
            sv += f64::from(flow.v.data()[k]);
            n += 1.0;
        }
    }
    (su / n, sv / n)
}

#[test]
fn flow_recovers_small_translations() {
    for (dy, dx) in [(0.0, 1.0), (0.0, -1.0), (1.0, 0.0), (-1.0, 0.0), (0.0, 2.0), (2.0, 0.0), (0.0, -2.0), (-2.0, 0.0)] {
        let a = blob(32, 15.5, 15.5, 4.0);
        let b = blob(32, 15.5 + dy, 15.5 + dx, 4.0);
        let flow = compute_flow(&a, &b).unwrap();
        let (u, v) = region_mean(&flow, &a, &b);
        let along = if dx.abs() + dy.abs() > 1.0 { 0.5 } else { 0.3 };
        let (tol_u, tol_v) = if dx != 0.0 { (along, 0.2) } else { (0.2, along) };
        assert!((u - dx).abs() <= tol_u, "shift ({dy},{dx}): u = {u}");
        assert!((v - dy).abs() <= tol_v, "shift ({dy},{dx}): v = {v}");
    }
}

#[test]
fn flow_is_invariant_to_intensity_range() {
    let a = blob(32, 14.0, 15.0, 4.0);
    let b = blob(32, 14.0, 16.0, 4.0);
    let f1 = compute_flow(&a, &b).unwrap();
    let f2 = compute_flow(&a.map(|x| 3.0 * x + 10.0), &b.map(|x| 3.0 * x + 10.0)).unwrap();
    for (x, y) in f1.u.data().iter().zip(f2.u.data()) {
        assert!((x - y).abs() < 1e-4);
    }
}

#[test]
fn ramp_stays_linear_when_upscaled() {
    let img = Tensor::<f64>::from_fn(&[8, 8, 1], |k| (k % 8) as f64 * 0.1);
    let up = bicubic_resize(&img, (16, 16)).unwrap();
    // Half-pixel mapping: output column x samples source position (x + 0.5) / 2 − 0.5.
    for y in 0..16 {
        for x in 4..12 {
            let expect = ((x as f64 + 0.5) / 2.0 - 0.5) * 0.1;
            assert!((up.data()[y * 16 + x] - expect).abs() < 1e-4);
        }
    }
}

#[test]
fn information_floor_of_decimation() {
    let img = Tensor::<f64>::from_fn(&[32, 32, 3], |k| {
        let p = k / 3;
        let (y, x) = ((p / 32) as f64, (p % 32) as f64);
        0.5 + 0.25 * (x * 0.35 + (k % 3) as f64).sin() + 0.2 * (y * 0.5).cos() * (x * 0.2).sin()
    });
    let low = bicubic_resize(&img, (16, 12)).unwrap();
    let up = bicubic_resize(&low, (32, 32)).unwrap();
    let again = bicubic_resize(&up, (16, 12)).unwrap();
    let mae = low.data().iter().zip(again.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / low.len() as f64;
    let scale = low.data().iter().map(|x| x.abs()).sum::<f64>() / low.len() as f64;
    assert!(mae / scale < 0.02, "relative MAE {}", mae / scale);
}

#[test]
fn spline_reproduces_linear_trajectories() {
    let clip = Tensor::<f64>::from_fn(&[7, 2, 2, 1], |k| {
        let t = (k / 4) as f64;
        let p = (k % 4) as f64;
        p * 0.5 + t * (1.0 + p)
    });
    let out = resize_temporal_spline(&clip, 100).unwrap();
    for k in 0..100 {
        let t = k as f64 * 6.0 / 99.0;
        for p in 0..4 {
            let expect = p as f64 * 0.5 + t * (1.0 + p as f64);
            assert!((out.data()[k * 4 + p] - expect).abs() < 1e-9);
        }
    }
    let aligned = Tensor::<f64>::from_fn(&[100, 2, 2, 1], |k| ((k * 31) % 17) as f64);
    let same = resize_temporal_spline(&aligned, 100).unwrap();
    for (a, b) in aligned.data().iter().zip(same.data()) {
        assert!((a - b).abs() < 1e-6);
    }
    let flat = Tensor::<f64>::full(&[5, 2, 2, 3], 0.4);
    assert!(resize_temporal_spline(&flat, 37).unwrap().data().iter().all(|x| (x - 0.4).abs() < 1e-12));
}

#[test]
fn color_rotation_shifts_hue() {
    // At cardinal angles, rotating by 120° permutes the primaries.
    let enc = |u: f32, v: f32| {
        let f = FlowField::new(Tensor::full(&[1, 1], u), Tensor::full(&[1, 1], v)).unwrap();
        encode_flow_color(&f, MAGNITUDE_CAP).unwrap().into_data()
    };
    let m = 8.0f32;
    let r = enc(m, 0.0);
    let g = enc(m * (120f32).to_radians().cos(), m * (120f32).to_radians().sin());
    let b = enc(m * (240f32).to_radians().cos(), m * (240f32).to_radians().sin());
    let close = |a: &[f32], b: [f32; 3]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-5);
    assert!(close(&r, [1.0, 0.0, 0.0]));
    assert!(close(&g, [0.0, 1.0, 0.0]));
    assert!(close(&b, [0.0, 0.0, 1.0]));
}

fn moving_square(frames: usize, h: usize, w: usize) -> Tensor<f32> {
    Tensor::from_fn(&[frames, h, w, 3], |k| {
        let p = k / 3;
        let t = p / (h * w);
        let (y, x) = ((p % (h * w)) / w, p % w);
        let x0 = 8 + 2 * t;
        let inside = y >= h / 3 && y < h / 3 + 14 && x >= x0 && x < x0 + 14;
        if inside {
            0.9 - 0.2 * (k % 3) as f32
        } else {
            0.1 + 0.002 * ((x * 7 + y * 13) % 11) as f32
        }
    })
}

#[test]
fn pipeline_computes_flow_on_normalized_upscaled_frames() {
    let mut trace = Vec::new();
    let cfg = PipelineConfig {
        temporal_length: Some(8),
        ..Default::default()
    };
    prepare_video_traced(&moving_square(6, 48, 64), Resolution::Elr, &cfg, &mut |s| trace.push(s)).unwrap();
    assert_eq!(
        trace,
        vec![
            Stage::Resize { from: (48, 64), to: (12, 16) },
            Stage::Resize { from: (12, 16), to: (32, 32) },
            Stage::TemporalResize { from: 6, to: 8 },
            Stage::Normalize { frames: 8, size: (32, 32) },
            Stage::Flow { pairs: 7, size: (32, 32), normalized: true },
        ]
    );
}

#[test]
fn elr_and_hr_samples_differ() {
    let cfg = PipelineConfig {
        temporal_length: None,
        ..Default::default()
    };
    let clip = moving_square(4, 64, 64);
    let elr = prepare_video(&clip, Resolution::Elr, &cfg).unwrap();
    let hr = prepare_video(&clip, Resolution::Hr, &cfg).unwrap();
    let (a, sa) = elr.sample(1, cfg.magnitude_cap).unwrap();
    let (b, _) = hr.sample(1, cfg.magnitude_cap).unwrap();
    assert_eq!(a.shape(), &[32, 32, 3]);
    assert_eq!(sa.encoded.shape(), &[32, 32, 33]);
    let mad = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f32>() / a.len() as f32;
    assert!(mad > 0.0);
}

#[test]
fn moving_square_flow_points_right() {
    let cfg = PipelineConfig {
        temporal_length: None,
        ..Default::default()
    };
    let v = prepare_video(&moving_square(4, 32, 32), Resolution::Hr, &cfg).unwrap();
    let mean_u: f64 = v.flows.iter().map(|f| f.mean().0).sum::<f64>() / v.flows.len() as f64;
    assert!(mean_u > 0.05, "{mean_u}");
}

#[test]
fn stack_mean_is_removed_before_encoding() {
    let flows: Vec<_> = (0..4)
        .map(|k| FlowField::new(Tensor::full(&[3, 3], 2.0 + k as f32), Tensor::full(&[3, 3], -1.0)).unwrap())
        .collect();
    let s = build_flow_stack(&flows, 2, MAGNITUDE_CAP).unwrap();
    let (su, sv) = s.flows.iter().fold((0.0, 0.0), |(a, b), f| {
        let (u, v) = f.mean();
        (a + u, b + v)
    });
    assert!(su.abs() < 1e-6 && sv.abs() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalization_is_scale_invariant(seed in 0u64..1000, a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let clip = Tensor::<f64>::from_fn(&[4, 3, 3, 2], |k| ((k as u64 * 2654435761 + seed) % 1000) as f64 / 1000.0);
        let (x, _) = normalize_video(&clip).unwrap();
        let (y, _) = normalize_video(&clip.map(|v| a * v + b)).unwrap();
        for (p, q) in x.data().iter().zip(y.data()) {
            prop_assert!((p - q).abs() < 1e-6);
        }
        let frame = 18;
        for i in 0..frame {
            let m: f64 = (0..4).map(|t| x.data()[t * frame + i]).sum::<f64>() / 4.0;
            prop_assert!(m.abs() < 1e-6);
        }
    }

    #[test]
    fn resize_preserves_constants(h in 2usize..20, w in 2usize..20, th in 2usize..40, tw in 2usize..40, c in -3.0f64..3.0) {
        let out = bicubic_resize(&Tensor::<f64>::full(&[h, w, 2], c), (th, tw)).unwrap();
        prop_assert!(out.data().iter().all(|x| (x - c).abs() < 1e-9));
    }
}
