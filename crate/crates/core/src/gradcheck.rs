//! Central finite-difference checks of every differentiable primitive and of
//! a full toy network, in 64-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::fusion::{self, FusionConvParams, FusionLayer, FusionOp};
use crate::nn::{build_network, NetInput, NetworkSpec};
use crate::ops::{self, ConvGeometry, Mode, RunningStats};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
/// Denominator floor so that gradients that are identically zero compare by absolute error.
const FLOOR: f64 = 1e-6;

/// `max|a-n| / max(max|a|, max|n|, 1e-6)`.
pub fn relative_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    let diff = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    diff / analytic.max_abs().max(numeric.max_abs()).max(FLOOR)
}

/// Central differences of scalar `f` with respect to every element of `x`.
pub fn numeric_gradient(x: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + STEP;
        let up = f(&probe);
        probe.data_mut()[i] = orig - STEP;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * STEP);
    }
    grad
}

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub name: String,
    pub instances: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

struct Tracker {
    name: &'static str,
    worst: f64,
    instances: usize,
}

impl Tracker {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            worst: 0.0,
            instances: 0,
        }
    }

    fn record(&mut self, pairs: &[(&Tensor<f64>, &Tensor<f64>)]) {
        for (a, n) in pairs {
            self.worst = self.worst.max(relative_error(a, n));
        }
        self.instances += 1;
    }

    fn finish(self, tolerance: f64) -> CheckReport {
        CheckReport {
            name: self.name.to_string(),
            instances: self.instances,
            max_relative_error: self.worst,
            tolerance,
        }
    }
}

/// Checks each primitive on `instances` random cases. Losses are random
/// projections `sum(R ⊙ y)`, so the analytic gradient is `backward(R)`.
pub fn primitive_suite(instances: usize, seed: u64, tolerance: f64) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();

    let mut t = Tracker::new("conv2d");
    for _ in 0..instances {
        let (n, h, w) = (rng.random_range(1..=2), rng.random_range(3..=6), rng.random_range(3..=6));
        let (din, dout) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let (kh, kw) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let geom = ConvGeometry::new(rng.random_range(1..=2), rng.random_range(0..=1));
        let x = random(&mut rng, &[n, h, w, din]);
        let f = random(&mut rng, &[kh, kw, din, dout]);
        let b = random(&mut rng, &[dout]);
        let y = ops::conv2d(&x, &f, &b, geom)?;
        let r = random(&mut rng, y.shape());
        let g = ops::conv2d_backward(&x, &f, geom, &r)?;
        let nx = numeric_gradient(&x, |x| ops::conv2d(x, &f, &b, geom).unwrap().dot(&r));
        let nf = numeric_gradient(&f, |f| ops::conv2d(&x, f, &b, geom).unwrap().dot(&r));
        let nb = numeric_gradient(&b, |b| ops::conv2d(&x, &f, b, geom).unwrap().dot(&r));
        t.record(&[(&g.input, &nx), (&g.filters, &nf), (&g.bias, &nb)]);
    }
    reports.push(t.finish(tolerance));

    let mut t = Tracker::new("max_pool");
    for _ in 0..instances {
        let shape = [rng.random_range(1..=2), 2 * rng.random_range(1..=4), 2 * rng.random_range(1..=4), rng.random_range(1..=3)];
        let x = random(&mut rng, &shape);
        let (y, idx) = ops::max_pool(&x)?;
        let r = random(&mut rng, y.shape());
        let g = ops::max_pool_backward(&idx, &r)?;
        let nx = numeric_gradient(&x, |x| ops::max_pool(x).unwrap().0.dot(&r));
        t.record(&[(&g, &nx)]);
    }
    reports.push(t.finish(tolerance));

    let mut t = Tracker::new("batch_norm");
    for _ in 0..instances {
        let d = rng.random_range(1..=3);
        let shape = [rng.random_range(2..=3), rng.random_range(1..=3), rng.random_range(1..=3), d];
        let x = random(&mut rng, &shape).map(|v| 2.0 * v + 0.5);
        let scale = random(&mut rng, &[d]);
        let shift = random(&mut rng, &[d]);
        let stats = RunningStats::<f64>::new(d);
        let eval = |x: &Tensor<f64>, s: &Tensor<f64>, b: &Tensor<f64>| {
            ops::batch_norm(x, s, b, &mut stats.clone(), Mode::Train).unwrap().0
        };
        let (y, cache) = ops::batch_norm(&x, &scale, &shift, &mut stats.clone(), Mode::Train)?;
        let r = random(&mut rng, y.shape());
        let g = ops::batch_norm_backward(&cache, &scale, &r)?;
        let nx = numeric_gradient(&x, |x| eval(x, &scale, &shift).dot(&r));
        let ns = numeric_gradient(&scale, |s| eval(&x, s, &shift).dot(&r));
        let nb = numeric_gradient(&shift, |b| eval(&x, &scale, b).dot(&r));
        t.record(&[(&g.input, &nx), (&g.scale, &ns), (&g.shift, &nb)]);
    }
    reports.push(t.finish(tolerance));

    let mut t = Tracker::new("linear");
    for _ in 0..instances {
        let (n, din, dout) = (rng.random_range(1..=4), rng.random_range(1..=6), rng.random_range(1..=5));
        let x = random(&mut rng, &[n, din]);
        let w = random(&mut rng, &[din, dout]);
        let b = random(&mut rng, &[dout]);
        let r = random(&mut rng, &[n, dout]);
        let g = ops::linear_backward(&x, &w, &r)?;
        let nx = numeric_gradient(&x, |x| ops::linear(x, &w, &b).unwrap().dot(&r));
        let nw = numeric_gradient(&w, |w| ops::linear(&x, w, &b).unwrap().dot(&r));
        let nb = numeric_gradient(&b, |b| ops::linear(&x, &w, b).unwrap().dot(&r));
        let gb = Tensor::from_fn(&[dout], |j| (0..n).map(|i| r.data()[i * dout + j]).sum());
        t.record(&[(&g.input, &nx), (&g.weights, &nw), (&g.bias, &nb), (&gb, &nb)]);
    }
    reports.push(t.finish(tolerance));

    let mut t = Tracker::new("softmax_cross_entropy");
    for _ in 0..instances {
        let (n, c) = (rng.random_range(1..=4), rng.random_range(2..=6));
        let z = random(&mut rng, &[n, c]).map(|v| 3.0 * v);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let (_, p) = ops::softmax_cross_entropy(&z, &labels)?;
        let g = ops::softmax_cross_entropy_backward(&p, &labels)?;
        let nz = numeric_gradient(&z, |z| ops::softmax_cross_entropy(z, &labels).unwrap().0);
        t.record(&[(&g, &nz)]);
    }
    reports.push(t.finish(tolerance));

    for (name, op) in [
        ("fuse_sum", FusionOp::Sum),
        ("fuse_concat", FusionOp::Concat),
        ("fuse_conv", FusionOp::Conv),
    ] {
        let mut t = Tracker::new(name);
        for _ in 0..instances {
            let d = rng.random_range(1..=3);
            let shape = [rng.random_range(1..=2), rng.random_range(1..=4), rng.random_range(1..=4), d];
            let xs = random(&mut rng, &shape);
            let xt = random(&mut rng, &shape);
            let params = FusionConvParams::new(
                random(&mut rng, &[1, 1, 2 * d, d]),
                random(&mut rng, &[d]),
            )?;
            let fwd = |xs: &Tensor<f64>, xt: &Tensor<f64>, p: &FusionConvParams<f64>| match op {
                FusionOp::Sum => fusion::sum(xs, xt).unwrap(),
                FusionOp::Concat => fusion::concat(xs, xt).unwrap(),
                FusionOp::Conv => fusion::conv(xs, xt, p).unwrap(),
            };
            let y = fwd(&xs, &xt, &params);
            let r = random(&mut rng, y.shape());
            let g = fusion::backward(op, &xs, &xt, Some(&params), &r)?;
            let ns = numeric_gradient(&xs, |x| fwd(x, &xt, &params).dot(&r));
            let nt = numeric_gradient(&xt, |x| fwd(&xs, x, &params).dot(&r));
            let mut pairs = vec![(&g.spatial, &ns), (&g.temporal, &nt)];
            let (nf, nb);
            if op == FusionOp::Conv {
                nf = numeric_gradient(&params.filter_bank, |f| {
                    fwd(&xs, &xt, &FusionConvParams::new(f.clone(), params.bias.clone()).unwrap()).dot(&r)
                });
                nb = numeric_gradient(&params.bias, |b| {
                    fwd(&xs, &xt, &FusionConvParams::new(params.filter_bank.clone(), b.clone()).unwrap()).dot(&r)
                });
                pairs.push((g.filter_bank.as_ref().unwrap(), &nf));
                pairs.push((g.bias.as_ref().unwrap(), &nb));
            }
            t.record(&pairs);
        }
        reports.push(t.finish(tolerance));
    }

    Ok(reports)
}

/// A two-class fused network on 8×8 inputs with tiny widths.
pub fn toy_spec(op: FusionOp, layer: FusionLayer) -> NetworkSpec {
    let mut spec = NetworkSpec::fused(2, op, layer).with_widths([2, 3, 2], 4);
    spec.input_size = 8;
    spec.convs[0].kernel = 3;
    spec.dropout = 0.3;
    spec.init_std = 0.5;
    spec
}

/// Finite-difference check of every parameter of a train-mode network,
/// dropout masks held fixed by seed.
pub fn network_check(spec: &NetworkSpec, seed: u64, tolerance: f64) -> Result<CheckReport> {
    let mut model = build_network::<f64>(spec, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let n = 3;
    let s = spec.input_size;
    let input = NetInput::both(random(&mut rng, &[n, s, s, 3]), random(&mut rng, &[n, s, s, 33]));
    let input = match spec.stream {
        crate::nn::Stream::Spatial => NetInput::rgb(input.rgb.unwrap()),
        crate::nn::Stream::Temporal => NetInput::flow(input.flow.unwrap()),
        crate::nn::Stream::Fused => input,
    };
    let labels: Vec<usize> = (0..n).map(|i| i % spec.num_classes).collect();
    let drop_seed = 77;

    let (logits, cache) = model.forward(&input, Mode::Train, drop_seed)?;
    let (_, probs) = ops::softmax_cross_entropy(&logits, &labels)?;
    let dlogits = ops::softmax_cross_entropy_backward(&probs, &labels)?;
    let grads = model.backward(&cache, &dlogits)?;

    let mut t = Tracker::new("network");
    let names: Vec<String> = model.net.decls().map(|d| d.name.clone()).collect();
    for name in &names {
        let base = model.parameter(name).unwrap();
        let numeric = numeric_gradient(&base, |v| {
            let mut probe = model.clone();
            *probe.parameter_mut(name).unwrap() = v.clone();
            let (z, _) = probe.forward(&input, Mode::Train, drop_seed).unwrap();
            ops::softmax_cross_entropy(&z, &labels).unwrap().0
        });
        let analytic = grads.get(name).expect("gradient for every parameter");
        t.record(&[(analytic, &numeric)]);
    }
    Ok(t.finish(tolerance))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_gradient_of_quadratic() {
        let x = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let g = numeric_gradient(&x, |x| x.dot(x));
        let exact = x.map(|v| 2.0 * v);
        assert!(relative_error(&g, &exact) < 1e-9);
    }

    #[test]
    fn relative_error_uses_floor() {
        let a = Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap();
        let n = Tensor::from_vec(&[2], vec![1e-12, 0.0]).unwrap();
        assert!(relative_error(&a, &n) < 1e-5);
    }
}
