use elr_twostream::coupled::{
    alternating_update, build_coupled_pair, train_step, train_step_single, Batch, CouplingSchedule, TrainerConfig,
    TrainerState,
};
use elr_twostream::fusion::{FusionLayer, FusionOp};
use elr_twostream::nn::{build_network, NetInput, NetworkSpec, ParamStore, Partition, SgdStep};
use elr_twostream::ops::{softmax_cross_entropy, softmax_cross_entropy_backward, Mode};
use elr_twostream::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_spec() -> NetworkSpec {
    let mut spec = NetworkSpec::spatial(3).with_widths([4, 4, 4], 8);
    spec.input_size = 8;
    spec.dropout = 0.5;
    spec.init_std = 0.1;
    spec
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, channels: usize, classes: usize) -> Batch<f32> {
    let x = Tensor::from_fn(&[n, 8, 8, channels], |_| rng.random_range(-1.0..1.0));
    Batch {
        input: NetInput::rgb(x),
        labels: (0..n).map(|i| i % classes).collect(),
    }
}

fn perturbed(b: &Batch<f32>) -> Batch<f32> {
    let rgb = b.input.rgb.as_ref().unwrap().map(|x| x + 0.1);
    Batch {
        input: NetInput::rgb(rgb),
        labels: b.labels.clone(),
    }
}

#[test]
fn uncoupled_pair_trains_like_standalone() {
    let spec = small_spec();
    let cfg = TrainerConfig {
        base_lr: 0.05,
        seed: 11,
        ..Default::default()
    };
    let mut pair = build_coupled_pair::<f32>(&spec, CouplingSchedule::uncoupled(), 5).unwrap();
    let mut solo = build_network::<f32>(&spec, 5).unwrap();
    let (mut sp, mut ss) = (TrainerState::new(cfg.seed), TrainerState::new(cfg.seed));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..6 {
        let elr = random_batch(&mut rng, 6, 3, 3);
        let hr = perturbed(&elr);
        let rep = train_step(&mut pair, &elr, &hr, &cfg, &mut sp).unwrap();
        let loss = train_step_single(&mut solo, &elr, &cfg, &mut ss).unwrap();
        assert_eq!(rep.loss_elr.to_bits(), loss.to_bits());
    }
    let decoupled = pair.decouple().unwrap();
    for d in solo.net.decls() {
        let a = decoupled.parameter(&d.name).unwrap();
        let b = solo.parameter(&d.name).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()), "{}", d.name);
    }
}

#[test]
fn shared_tensors_update_twice_per_iteration() {
    let spec = small_spec();
    let cfg = TrainerConfig::default();
    let schedule = CouplingSchedule::new([0.25, 0.5, 0.5, 0.75, 1.0]).unwrap();
    let mut pair = build_coupled_pair::<f32>(&spec, schedule, 2).unwrap();
    let mut state = TrainerState::new(0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = 4;
    for _ in 0..m {
        let elr = random_batch(&mut rng, 4, 3, 3);
        let hr = perturbed(&elr);
        train_step(&mut pair, &elr, &hr, &cfg, &mut state).unwrap();
    }
    assert_eq!(state.iteration, m);
    let mut seen = [0; 3];
    for (_, p) in pair.store.iter() {
        let expect = match p.partition {
            Partition::Shared => {
                seen[0] += 1;
                2 * m
            }
            Partition::ElrOnly => {
                seen[1] += 1;
                m
            }
            Partition::HrOnly => {
                seen[2] += 1;
                m
            }
            Partition::Standalone => unreachable!(),
        };
        assert_eq!(p.updates, expect, "{}", p.name);
    }
    assert!(seen.iter().all(|&s| s > 0));
    // Shared channels read identically through either network.
    for d in pair.elr.decls() {
        let (e, h) = (pair.elr.parts(&d.name).unwrap(), pair.hr.parts(&d.name).unwrap());
        if pair.store.get(e[0]).partition == Partition::Shared {
            assert_eq!(e[0], h[0]);
            let k = pair.store.value(e[0]).last_dim();
            let a = pair.elr.parameter(&pair.store, &d.name).unwrap().slice_last(0, k).unwrap();
            let b = pair.hr.parameter(&pair.store, &d.name).unwrap().slice_last(0, k).unwrap();
            assert_eq!(a, b);
        }
    }
}

#[test]
fn two_parameter_toy_matches_hand_computation() {
    // L_eLR(w) = (w − 3)², L_HR(w, b) = (w·b − 2)²; w shared, b HR-only.
    let mut store = ParamStore::<f64>::new();
    let w = store.insert("shared/w", Partition::Shared, Tensor::scalar(0.5)).unwrap();
    let b = store.insert("hr/b", Partition::HrOnly, Tensor::scalar(1.5)).unwrap();
    let mu = 0.1;
    let step = SgdStep {
        lr: mu,
        momentum: 0.0,
        weight_decay: 0.0,
    };
    alternating_update(
        &mut store,
        step,
        |s| {
            let wv = s.value(w).data()[0];
            Ok(((wv - 3.0).powi(2), vec![(w, Tensor::scalar(2.0 * (wv - 3.0)))]))
        },
        |s| {
            let (wv, bv) = (s.value(w).data()[0], s.value(b).data()[0]);
            let r = wv * bv - 2.0;
            Ok((r * r, vec![(w, Tensor::scalar(2.0 * r * bv)), (b, Tensor::scalar(2.0 * r * wv))]))
        },
    )
    .unwrap();
    // Hand execution.
    let w1 = 0.5 - mu * (2.0 * (0.5 - 3.0));
    let r1 = w1 * 1.5 - 2.0;
    let w2 = w1 - mu * (2.0 * r1 * 1.5);
    let b1 = 1.5 - mu * (2.0 * r1 * w1);
    assert!((store.value(w).data()[0] - w2).abs() < 1e-15);
    assert!((store.value(b).data()[0] - b1).abs() < 1e-15);
    assert_eq!(store.get(w).updates, 2);
    assert_eq!(store.get(b).updates, 1);
}

#[test]
fn decoupled_network_is_a_value_copy() {
    let spec = small_spec();
    let mut pair = build_coupled_pair::<f32>(&spec, CouplingSchedule::default(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let probe = random_batch(&mut rng, 5, 3, 3);
    let cfg = TrainerConfig::default();
    let mut state = TrainerState::new(1);
    let hr = perturbed(&probe);
    train_step(&mut pair, &probe, &hr, &cfg, &mut state).unwrap();

    let model = pair.decouple().unwrap();
    let before = model.predict(&probe.input).unwrap();
    assert_eq!(before, pair.elr.predict(&pair.store, &probe.input).unwrap());
    for id in pair.store.ids_in(Partition::HrOnly) {
        pair.store.value_mut(id).data_mut().iter_mut().for_each(|x| *x += 1.0);
    }
    for id in pair.store.ids_in(Partition::Shared) {
        pair.store.value_mut(id).data_mut().iter_mut().for_each(|x| *x *= -2.0);
    }
    assert_eq!(model.predict(&probe.input).unwrap(), before);
}

#[test]
fn fully_coupled_networks_are_parameter_identical() {
    let spec = NetworkSpec::fused(3, FusionOp::Conv, FusionLayer::Conv3).with_widths([2, 4, 4], 6);
    let mut spec = spec;
    spec.input_size = 8;
    let pair = build_coupled_pair::<f32>(&spec, CouplingSchedule::fully_coupled(), 9).unwrap();
    assert!(pair.store.ids_in(Partition::ElrOnly).is_empty());
    let elr = pair.decouple().unwrap();
    let hr = pair.hr_model().unwrap();
    for d in elr.net.decls() {
        assert_eq!(elr.parameter(&d.name), hr.parameter(&d.name), "{}", d.name);
    }
}

#[test]
fn full_sharing_gives_coinciding_first_gradients() {
    let spec = small_spec();
    let mut pair = build_coupled_pair::<f64>(&spec, CouplingSchedule::fully_coupled(), 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Tensor::<f64>::from_fn(&[4, 8, 8, 3], |_| rng.random_range(-1.0..1.0));
    let input = NetInput::rgb(x);
    let labels = [0, 1, 2, 0];
    let grads = |net: &mut elr_twostream::nn::Network<f64>, store: &ParamStore<f64>| {
        let (logits, cache) = net.forward(store, &input, Mode::Eval, 0).unwrap();
        let (_, probs) = softmax_cross_entropy(&logits, &labels).unwrap();
        net.backward(store, &cache, &softmax_cross_entropy_backward(&probs, &labels).unwrap()).unwrap()
    };
    let store = pair.store.clone();
    let ge = grads(&mut pair.elr, &store);
    let gh = grads(&mut pair.hr, &store);
    assert!(ge.len() > 0);
    for (id, name, g) in ge.iter() {
        assert_eq!(Some(g), gh.by_id(id), "{name}");
    }
}

#[test]
fn mismatched_batches_rejected() {
    let spec = small_spec();
    let mut pair = build_coupled_pair::<f32>(&spec, CouplingSchedule::default(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_batch(&mut rng, 4, 3, 3);
    let b = random_batch(&mut rng, 3, 3, 3);
    let mut state = TrainerState::new(0);
    let cfg = TrainerConfig::default();
    assert!(train_step(&mut pair, &a, &b, &cfg, &mut state).is_err());
    let mut relabeled = a.clone();
    relabeled.labels[0] = 2;
    assert!(train_step(&mut pair, &a, &relabeled, &cfg, &mut state).is_err());
    let mut short = a.clone();
    short.labels.pop();
    assert!(train_step(&mut pair, &short, &short, &cfg, &mut state).is_err());
    assert_eq!(state.iteration, 0);
}

#[test]
fn loss_falls_on_separable_data() {
    let mut spec = NetworkSpec::spatial(2).with_widths([4, 4, 4], 8);
    spec.input_size = 8;
    spec.dropout = 0.0;
    let cfg = TrainerConfig {
        base_lr: 0.05,
        lr_decay_every: 1000,
        batch_size: 8,
        seed: 3,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 16;
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let data = Tensor::<f32>::from_fn(&[n, 8, 8, 3], |k| {
        let i = k / 192;
        let x = (k / 3) % 8;
        let bright = (x < 4) == (labels[i] == 0);
        if bright { 1.0 } else { 0.0 }
    });
    let noise = Tensor::<f32>::from_fn(data.shape(), |_| 0.1 * rng.random_range(-1.0f32..1.0));
    let data = data.zip_map(&noise, |a, b| a + b).unwrap();
    let batches: Vec<Batch<f32>> = (0..n / cfg.batch_size)
        .map(|b| {
            let items: Vec<Tensor<f32>> = (b * 8..b * 8 + 8).map(|i| data.index_first(i).unwrap()).collect();
            Batch {
                input: NetInput::rgb(Tensor::stack(&items).unwrap()),
                labels: labels[b * 8..b * 8 + 8].to_vec(),
            }
        })
        .collect();
    let mut pair = build_coupled_pair::<f32>(&spec, CouplingSchedule::default(), 4).unwrap();
    let mut state = TrainerState::new(cfg.seed);
    let eval_loss = |pair: &elr_twostream::coupled::CoupledPair<f32>| {
        let all = NetInput::rgb(data.clone());
        let logits = pair.elr.predict(&pair.store, &all).unwrap();
        softmax_cross_entropy(&logits, &labels).unwrap().0
    };
    let initial = eval_loss(&pair);
    for epoch in 0..50 {
        state.epoch = epoch;
        for b in &batches {
            train_step(&mut pair, b, b, &cfg, &mut state).unwrap();
        }
    }
    let last = eval_loss(&pair);
    assert!(last < 0.1 * initial, "loss {initial} -> {last}");
}
