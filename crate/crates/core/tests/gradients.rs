use elr_twostream::fusion::{FusionLayer, FusionOp};
use elr_twostream::gradcheck::{network_check, numeric_gradient, primitive_suite, relative_error, toy_spec};
use elr_twostream::nn::{NetworkSpec, Stream};
use elr_twostream::ops::{self, ConvGeometry};
use elr_twostream::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn every_primitive_matches_finite_differences() {
    let reports = primitive_suite(20, 1, 1e-5).unwrap();
    assert_eq!(reports.len(), 8);
    for r in &reports {
        assert!(r.instances >= 20);
        assert!(r.passed(), "{} max relative error {:e}", r.name, r.max_relative_error);
    }
}

#[test]
fn conv_gradients_on_five_by_five_by_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::<f64>::from_fn(&[1, 5, 5, 2], |_| rng.random_range(-1.0..1.0));
    let f = Tensor::<f64>::from_fn(&[3, 3, 2, 3], |_| rng.random_range(-1.0..1.0));
    let b = Tensor::<f64>::from_fn(&[3], |_| rng.random_range(-1.0..1.0));
    let geom = ConvGeometry::default();
    let y = ops::conv2d(&x, &f, &b, geom).unwrap();
    let r = Tensor::<f64>::from_fn(y.shape(), |_| rng.random_range(-1.0..1.0));
    let g = ops::conv2d_backward(&x, &f, geom, &r).unwrap();
    let nx = numeric_gradient(&x, |x| ops::conv2d(x, &f, &b, geom).unwrap().dot(&r));
    let nf = numeric_gradient(&f, |f| ops::conv2d(&x, f, &b, geom).unwrap().dot(&r));
    assert!(relative_error(&g.input, &nx) < 1e-6);
    assert!(relative_error(&g.filters, &nf) < 1e-6);
}

#[test]
fn pooling_gradient_is_one_hot_per_window() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = Tensor::<f64>::from_fn(&[1, 8, 8, 1], |_| rng.random_range(-1.0..1.0));
    let (_, idx) = ops::max_pool(&x).unwrap();
    let g = ops::max_pool_backward(&idx, &Tensor::full(&[1, 4, 4, 1], 1.0)).unwrap();
    for wy in 0..4 {
        for wx in 0..4 {
            let ones = [(0, 0), (0, 1), (1, 0), (1, 1)]
                .iter()
                .filter(|(dy, dx)| g.data()[(2 * wy + dy) * 8 + 2 * wx + dx] == 1.0)
                .count();
            assert_eq!(ones, 1);
        }
    }
    let r = Tensor::<f64>::full(&[1, 4, 4, 1], 1.0);
    let nx = numeric_gradient(&x, |x| ops::max_pool(x).unwrap().0.dot(&r));
    assert!(relative_error(&g, &nx) < 1e-6);
}

#[test]
fn full_network_gradients_match() {
    for (op, layer) in [
        (FusionOp::Conv, FusionLayer::Conv3),
        (FusionOp::Sum, FusionLayer::Fc4),
        (FusionOp::Concat, FusionLayer::Conv3),
    ] {
        let report = network_check(&toy_spec(op, layer), 3, 1e-3).unwrap();
        assert!(report.passed(), "{op}@{layer}: {:e}", report.max_relative_error);
    }
    let mut single = toy_spec(FusionOp::Sum, FusionLayer::Conv3);
    single.stream = Stream::Temporal;
    single.fusion = None;
    assert!(network_check(&single, 4, 1e-3).unwrap().passed());
}

#[test]
fn thirty_two_bit_within_looser_tolerance() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = Tensor::<f32>::from_fn(&[2, 3], |_| rng.random_range(-1.0..1.0));
    let w = Tensor::<f32>::from_fn(&[3, 2], |_| rng.random_range(-1.0..1.0));
    let b = Tensor::<f32>::zeros(&[2]);
    let r = Tensor::<f32>::from_fn(&[2, 2], |_| rng.random_range(-1.0..1.0));
    let g = ops::linear_backward(&x, &w, &r).unwrap();
    let h = 1e-2f32;
    let mut worst = 0.0f32;
    for i in 0..w.len() {
        let mut up = w.clone();
        up.data_mut()[i] += h;
        let mut down = w.clone();
        down.data_mut()[i] -= h;
        let num = (ops::linear(&x, &up, &b).unwrap().dot(&r) - ops::linear(&x, &down, &b).unwrap().dot(&r)) / (2.0 * h);
        worst = worst.max((num - g.weights.data()[i]).abs() / g.weights.max_abs());
    }
    assert!(worst < 1e-3, "{worst}");
}

#[test]
fn default_spec_is_valid_for_every_stream() {
    for spec in [
        NetworkSpec::spatial(12),
        NetworkSpec::temporal(12),
        NetworkSpec::fused(12, FusionOp::Conv, FusionLayer::Conv3),
        NetworkSpec::fused(12, FusionOp::Concat, FusionLayer::Fc4),
    ] {
        spec.validate().unwrap();
    }
}
