//! Assembly of spatial, temporal and fused networks, and their forward and
//! backward passes.
//!
//! A [`Network`] is a fixed program of layer ops plus *slots*: each slot is
//! one logical parameter tensor (e.g. `spatial.conv2.weight`) stored as one or
//! more parts in a [`ParamStore`], concatenated along the output-channel
//! (last) axis. A standalone network has a single part per slot; a coupled
//! network keeps the shared leading channels and its private trailing
//! channels as separate parts.

use std::borrow::Cow;
use std::sync::atomic::{AtomicU64, Ordering};

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::fusion::{self, FusionConvParams, FusionLayer, FusionOp};
use crate::nn::params::{ParamId, ParamStore, Partition};
use crate::nn::spec::{NetworkSpec, Stream};
use crate::ops::{self, ConvGeometry, Mode, RunningStats};
use crate::rng::{derive_index, rng_for};
use crate::tensor::{Scalar, Tensor};

static NEXT_NETWORK_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    BnScale,
    BnShift,
}

/// A logical parameter tensor declared by the architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamDecl {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: ParamRole,
    /// Coupling layer `n` (1..=5) whose ratio decides how many output channels are shared.
    pub coupling_layer: usize,
}

impl ParamDecl {
    pub fn out_channels(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Initial value: weights ~ N(0, std²) drawn from a generator addressed by
    /// `(seed, domain/name)`, biases and shifts zero, scales one.
    pub fn initial_value<T: Scalar>(&self, std: f64, seed: u64, domain: &str) -> Tensor<T> {
        match self.role {
            ParamRole::Weight => {
                let mut rng = rng_for(seed, &format!("{domain}/{}", self.name));
                let normal = Normal::new(0.0, std).expect("positive std");
                Tensor::from_fn(&self.shape, |_| T::lit(normal.sample(&mut rng)))
            }
            ParamRole::Bias | ParamRole::BnShift => Tensor::zeros(&self.shape),
            ParamRole::BnScale => Tensor::full(&self.shape, T::one()),
        }
    }
}

#[derive(Clone, Debug)]
struct Slot {
    decl: ParamDecl,
    parts: Vec<ParamId>,
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Conv {
        weight: usize,
        bias: usize,
        geom: ConvGeometry,
    },
    BatchNorm {
        scale: usize,
        shift: usize,
        stats: usize,
    },
    Relu,
    Pool,
    Flatten,
    Dropout {
        p: f64,
    },
    Linear {
        weight: usize,
        bias: usize,
    },
}

#[derive(Clone, Debug)]
struct FusionNode {
    op: FusionOp,
    /// Slot indices of the conv-fusion bank and bias.
    bank: Option<(usize, usize)>,
    /// After-Fc4 fusion runs on `[N,1,1,D]` views of `[N,D]` vectors.
    on_vectors: bool,
}

/// Which input feeds a trunk.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputKind {
    Rgb,
    Flow,
}

#[derive(Clone, Debug)]
struct Trunk {
    input: InputKind,
    ops: Vec<Op>,
}

/// Batch inputs: RGB frames `[N,S,S,3]` and/or flow stacks `[N,S,S,33]`.
#[derive(Clone, Debug, Default)]
pub struct NetInput<T = f32> {
    pub rgb: Option<Tensor<T>>,
    pub flow: Option<Tensor<T>>,
}

impl<T: Scalar> NetInput<T> {
    pub fn rgb(rgb: Tensor<T>) -> Self {
        Self {
            rgb: Some(rgb),
            flow: None,
        }
    }

    pub fn flow(flow: Tensor<T>) -> Self {
        Self {
            rgb: None,
            flow: Some(flow),
        }
    }

    pub fn both(rgb: Tensor<T>, flow: Tensor<T>) -> Self {
        Self {
            rgb: Some(rgb),
            flow: Some(flow),
        }
    }

    pub fn batch_size(&self) -> Option<usize> {
        self.rgb
            .as_ref()
            .or(self.flow.as_ref())
            .map(|t| t.shape()[0])
    }

    pub fn cast<U: Scalar>(&self) -> NetInput<U> {
        NetInput {
            rgb: self.rgb.as_ref().map(Tensor::cast),
            flow: self.flow.as_ref().map(Tensor::cast),
        }
    }
}

#[derive(Clone, Debug)]
enum OpCache<T> {
    Conv { input: Tensor<T> },
    BatchNorm(ops::BatchNormCache<T>),
    Relu { input: Tensor<T> },
    Pool(ops::PoolIndices),
    Flatten { shape: Vec<usize> },
    Dropout(ops::DropoutMask<T>),
    Linear { input: Tensor<T> },
}

/// Activations recorded by [`Network::forward`] for the matching backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    network_id: u64,
    generation: u64,
    batch: usize,
    trunks: Vec<Vec<OpCache<T>>>,
    fusion_inputs: Option<(Tensor<T>, Tensor<T>)>,
    head: Vec<OpCache<T>>,
    /// Input of the final (Fc5) layer, `[N, fc_width]`.
    pub penultimate: Tensor<T>,
}

/// Per-parameter gradients, keyed by store id and name.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    entries: Vec<(ParamId, String, Tensor<T>)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(_, n, _)| n == name).map(|(_, _, g)| g)
    }

    pub fn by_id(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(i, _, _)| *i == id).map(|(_, _, g)| g)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.entries.iter().map(|(i, n, g)| (*i, n.as_str(), g))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct Network<T = f32> {
    id: u64,
    spec: NetworkSpec,
    slots: Vec<Slot>,
    stats_names: Vec<String>,
    stats: Vec<RunningStats<T>>,
    trunks: Vec<Trunk>,
    fusion: Option<FusionNode>,
    head: Vec<Op>,
}

struct Builder {
    decls: Vec<ParamDecl>,
    stats: Vec<(String, usize)>,
}

impl Builder {
    fn param(&mut self, name: String, shape: Vec<usize>, role: ParamRole, n: usize) -> usize {
        self.decls.push(ParamDecl {
            name,
            shape,
            role,
            coupling_layer: n,
        });
        self.decls.len() - 1
    }

    fn conv_trunk(&mut self, spec: &NetworkSpec, prefix: &str, in_channels: usize) -> Vec<Op> {
        let mut ops = Vec::new();
        let mut din = in_channels;
        for (i, c) in spec.convs.iter().enumerate() {
            let n = i + 1;
            let k = c.kernel;
            let weight = self.param(
                format!("{prefix}.conv{n}.weight"),
                vec![k, k, din, c.out_channels],
                ParamRole::Weight,
                n,
            );
            let bias = self.param(format!("{prefix}.conv{n}.bias"), vec![c.out_channels], ParamRole::Bias, n);
            let scale = self.param(format!("{prefix}.bn{n}.scale"), vec![c.out_channels], ParamRole::BnScale, n);
            let shift = self.param(format!("{prefix}.bn{n}.shift"), vec![c.out_channels], ParamRole::BnShift, n);
            self.stats.push((format!("{prefix}.bn{n}"), c.out_channels));
            ops.extend([
                Op::Conv {
                    weight,
                    bias,
                    geom: ConvGeometry::same(k),
                },
                Op::BatchNorm {
                    scale,
                    shift,
                    stats: self.stats.len() - 1,
                },
                Op::Relu,
                Op::Pool,
            ]);
            din = c.out_channels;
        }
        ops
    }

    fn linear(&mut self, name: &str, din: usize, dout: usize, n: usize) -> Op {
        let weight = self.param(format!("{name}.weight"), vec![din, dout], ParamRole::Weight, n);
        let bias = self.param(format!("{name}.bias"), vec![dout], ParamRole::Bias, n);
        Op::Linear { weight, bias }
    }
}

fn input_kind(stream: Stream) -> InputKind {
    match stream {
        Stream::Temporal => InputKind::Flow,
        _ => InputKind::Rgb,
    }
}

fn prefix(kind: InputKind) -> &'static str {
    match kind {
        InputKind::Rgb => "spatial",
        InputKind::Flow => "temporal",
    }
}

/// Parameter declarations of `spec` in network order.
pub fn param_decls(spec: &NetworkSpec) -> Result<Vec<ParamDecl>> {
    spec.validate()?;
    Ok(blueprint(spec).0.decls)
}

fn blueprint(spec: &NetworkSpec) -> (Builder, Vec<Trunk>, Option<FusionNode>, Vec<Op>) {
    let mut b = Builder {
        decls: Vec::new(),
        stats: Vec::new(),
    };
    let side = spec.final_map_size();
    let conv_out = side * side * spec.convs[2].out_channels;
    let kinds: Vec<InputKind> = match spec.stream {
        Stream::Fused => vec![InputKind::Rgb, InputKind::Flow],
        s => vec![input_kind(s)],
    };
    let mut trunks: Vec<Trunk> = kinds
        .iter()
        .map(|&k| Trunk {
            input: k,
            ops: b.conv_trunk(spec, prefix(k), NetworkSpec::input_channels(match k {
                InputKind::Rgb => Stream::Spatial,
                InputKind::Flow => Stream::Temporal,
            })),
        })
        .collect();
    let drop = Op::Dropout { p: spec.dropout };
    let mut head = Vec::new();
    let fusion = match spec.fusion {
        Some(f) if spec.stream == Stream::Fused => {
            let (depth, on_vectors) = match f.layer {
                FusionLayer::Conv3 => (spec.convs[2].out_channels, false),
                FusionLayer::Fc4 => (spec.fc_width, true),
            };
            if on_vectors {
                for t in &mut trunks {
                    let fc4 = b.linear(&format!("{}.fc4", prefix(t.input)), conv_out, spec.fc_width, 4);
                    t.ops.extend([Op::Flatten, drop, fc4, Op::Relu]);
                }
            }
            let bank = (f.op == FusionOp::Conv).then(|| {
                let out = fusion::conv_fusion_width(2 * depth);
                (
                    b.param("fusion.weight".into(), vec![1, 1, 2 * depth, out], ParamRole::Weight, 3),
                    b.param("fusion.bias".into(), vec![out], ParamRole::Bias, 3),
                )
            });
            let fused_depth = f.op.output_depth(depth);
            if !on_vectors {
                let fc4 = b.linear("fc4", side * side * fused_depth, spec.fc_width, 4);
                head.extend([Op::Flatten, drop, fc4, Op::Relu]);
                head.extend([drop, b.linear("fc5", spec.fc_width, spec.num_classes, 5)]);
            } else {
                head.extend([Op::Flatten, drop, b.linear("fc5", fused_depth, spec.num_classes, 5)]);
            }
            Some(FusionNode {
                op: f.op,
                bank,
                on_vectors,
            })
        }
        _ => {
            let fc4 = b.linear("fc4", conv_out, spec.fc_width, 4);
            head.extend([Op::Flatten, drop, fc4, Op::Relu]);
            head.extend([drop, b.linear("fc5", spec.fc_width, spec.num_classes, 5)]);
            None
        }
    };
    (b, trunks, fusion, head)
}

impl<T: Scalar> Network<T> {
    /// Lays out `spec`, asking `resolve` for the store ids backing each
    /// declared parameter. The returned parts must concatenate along the
    /// last axis to the declared shape.
    pub fn assemble(
        spec: &NetworkSpec,
        store: &ParamStore<T>,
        mut resolve: impl FnMut(&ParamDecl) -> Result<Vec<ParamId>>,
    ) -> Result<Self> {
        spec.validate()?;
        let (builder, trunks, fusion, head) = blueprint(spec);
        let mut slots = Vec::with_capacity(builder.decls.len());
        for decl in builder.decls {
            let parts = resolve(&decl)?;
            let lead = &decl.shape[..decl.shape.len() - 1];
            let mut width = 0;
            for &id in &parts {
                let s = store.value(id).shape();
                if &s[..s.len() - 1] != lead {
                    return Err(Error::shape(
                        "assemble",
                        format!("part of {} has shape {s:?}, declared {:?}", decl.name, decl.shape),
                    ));
                }
                width += s[s.len() - 1];
            }
            if width != decl.out_channels() {
                return Err(Error::shape(
                    "assemble",
                    format!("parts of {} cover {width} of {} channels", decl.name, decl.out_channels()),
                ));
            }
            slots.push(Slot { decl, parts });
        }
        let (stats_names, stats) = builder
            .stats
            .into_iter()
            .map(|(name, d)| (name, RunningStats::new(d)))
            .unzip();
        Ok(Self {
            id: NEXT_NETWORK_ID.fetch_add(1, Ordering::Relaxed),
            spec: spec.clone(),
            slots,
            stats_names,
            stats,
            trunks,
            fusion,
            head,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn decls(&self) -> impl Iterator<Item = &ParamDecl> {
        self.slots.iter().map(|s| &s.decl)
    }

    /// Store ids backing the named logical parameter, shared part first.
    pub fn parts(&self, name: &str) -> Option<&[ParamId]> {
        self.slots
            .iter()
            .find(|s| s.decl.name == name)
            .map(|s| s.parts.as_slice())
    }

    /// Every store id this network reads, in slot order, without repeats.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = Vec::new();
        for s in &self.slots {
            for &id in &s.parts {
                if !ids.contains(&id) {
                    ids.push(id);
                }
            }
        }
        ids
    }

    /// Logical tensor `name` as seen by this network.
    pub fn parameter(&self, store: &ParamStore<T>, name: &str) -> Option<Tensor<T>> {
        let slot = self.slots.iter().position(|s| s.decl.name == name)?;
        Some(self.value(store, slot).into_owned())
    }

    pub fn running_stats(&self) -> impl Iterator<Item = (&str, &RunningStats<T>)> {
        self.stats_names.iter().map(String::as_str).zip(&self.stats)
    }

    pub fn running_stats_mut(&mut self, name: &str) -> Option<&mut RunningStats<T>> {
        let i = self.stats_names.iter().position(|n| n == name)?;
        Some(&mut self.stats[i])
    }

    /// Weight, bias and batch-norm affine element count.
    pub fn count_parameters(&self) -> usize {
        self.slots.iter().map(|s| s.decl.numel()).sum()
    }

    fn value<'a>(&self, store: &'a ParamStore<T>, slot: usize) -> Cow<'a, Tensor<T>> {
        let parts = &self.slots[slot].parts;
        if parts.len() == 1 {
            Cow::Borrowed(store.value(parts[0]))
        } else {
            let views: Vec<&Tensor<T>> = parts.iter().map(|&id| store.value(id)).collect();
            Cow::Owned(Tensor::concat_last(&views).expect("slot parts validated at assembly"))
        }
    }

    fn check_input(&self, kind: InputKind, input: &NetInput<T>) -> Result<Tensor<T>> {
        let (tensor, channels, label) = match kind {
            InputKind::Rgb => (input.rgb.as_ref(), 3, "rgb"),
            InputKind::Flow => (input.flow.as_ref(), 33, "flow"),
        };
        let t = tensor.ok_or_else(|| {
            Error::arg("forward", format!("{} stream needs a {label} input", prefix(kind)))
        })?;
        t.expect_rank("forward", 4)?;
        let s = self.spec.input_size;
        let shape = t.shape();
        if shape[3] != channels {
            return Err(Error::shape(
                "forward",
                format!(
                    "{} stream expects {channels} input channels, got {}",
                    prefix(kind),
                    shape[3]
                ),
            ));
        }
        if shape[1] != s || shape[2] != s {
            return Err(Error::shape(
                "forward",
                format!("expected {s}x{s} inputs, got {}x{}", shape[1], shape[2]),
            ));
        }
        Ok(t.clone())
    }

    /// Runs the network. Train mode updates batch-norm running statistics;
    /// `seed` fixes the dropout masks.
    pub fn forward(
        &mut self,
        store: &ParamStore<T>,
        input: &NetInput<T>,
        mode: Mode,
        seed: u64,
    ) -> Result<(Tensor<T>, ForwardCache<T>)> {
        let mut stats = std::mem::take(&mut self.stats);
        let out = self.run(store, input, mode, seed, &mut stats);
        self.stats = stats;
        out
    }

    /// Eval-mode logits; takes `&self` so trained networks can be shared across threads.
    pub fn predict(&self, store: &ParamStore<T>, input: &NetInput<T>) -> Result<Tensor<T>> {
        Ok(self.predict_with_features(store, input)?.0)
    }

    /// Eval-mode logits together with the Fc5 input activations.
    pub fn predict_with_features(
        &self,
        store: &ParamStore<T>,
        input: &NetInput<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut stats = self.stats.clone();
        let (logits, cache) = self.run(store, input, Mode::Eval, 0, &mut stats)?;
        Ok((logits, cache.penultimate))
    }

    fn run(
        &self,
        store: &ParamStore<T>,
        input: &NetInput<T>,
        mode: Mode,
        seed: u64,
        stats: &mut [RunningStats<T>],
    ) -> Result<(Tensor<T>, ForwardCache<T>)> {
        let mut op_counter = 0u64;
        let mut trunk_caches = Vec::with_capacity(self.trunks.len());
        let mut outputs = Vec::with_capacity(self.trunks.len());
        let mut batch = None;
        for trunk in &self.trunks {
            let x = self.check_input(trunk.input, input)?;
            let n = x.shape()[0];
            if batch.is_some_and(|b| b != n) {
                return Err(Error::shape("forward", "rgb and flow batch sizes differ"));
            }
            batch = Some(n);
            let mut cache = Vec::with_capacity(trunk.ops.len());
            let y = self.run_ops(store, &trunk.ops, x, mode, seed, &mut op_counter, stats, &mut cache)?;
            trunk_caches.push(cache);
            outputs.push(y);
        }

        let (x, fusion_inputs) = match &self.fusion {
            Some(node) => {
                let xt = outputs.pop().unwrap();
                let xs = outputs.pop().unwrap();
                let (xs, xt) = if node.on_vectors {
                    let lift = |t: Tensor<T>| {
                        let (n, d) = (t.shape()[0], t.shape()[1]);
                        t.reshape(&[n, 1, 1, d])
                    };
                    (lift(xs)?, lift(xt)?)
                } else {
                    (xs, xt)
                };
                let y = match node.op {
                    FusionOp::Sum => fusion::sum(&xs, &xt)?,
                    FusionOp::Concat => fusion::concat(&xs, &xt)?,
                    FusionOp::Conv => {
                        let params = self.bank(store, node)?;
                        fusion::conv(&xs, &xt, &params)?
                    }
                };
                (y, Some((xs, xt)))
            }
            None => (outputs.pop().unwrap(), None),
        };

        let mut head_cache = Vec::with_capacity(self.head.len());
        let (last, body) = self.head.split_last().expect("head ends in fc5");
        let penultimate = self.run_ops(store, body, x, mode, seed, &mut op_counter, stats, &mut head_cache)?;
        let logits = self.run_ops(
            store,
            std::slice::from_ref(last),
            penultimate.clone(),
            mode,
            seed,
            &mut op_counter,
            stats,
            &mut head_cache,
        )?;
        if !logits.all_finite() {
            return Err(Error::arg("forward", "non-finite logits"));
        }
        Ok((
            logits,
            ForwardCache {
                network_id: self.id,
                generation: store.generation(),
                batch: batch.unwrap_or(0),
                trunks: trunk_caches,
                fusion_inputs,
                head: head_cache,
                penultimate,
            },
        ))
    }

    fn bank(&self, store: &ParamStore<T>, node: &FusionNode) -> Result<FusionConvParams<T>> {
        let (w, b) = node.bank.expect("conv fusion declares a bank");
        FusionConvParams::new(self.value(store, w).into_owned(), self.value(store, b).into_owned())
    }

    #[allow(clippy::too_many_arguments)]
    fn run_ops(
        &self,
        store: &ParamStore<T>,
        ops: &[Op],
        mut x: Tensor<T>,
        mode: Mode,
        seed: u64,
        counter: &mut u64,
        stats: &mut [RunningStats<T>],
        cache: &mut Vec<OpCache<T>>,
    ) -> Result<Tensor<T>> {
        for op in ops {
            *counter += 1;
            x = match *op {
                Op::Conv { weight, bias, geom } => {
                    let y = ops::conv2d(&x, &self.value(store, weight), &self.value(store, bias), geom)?;
                    cache.push(OpCache::Conv { input: x });
                    y
                }
                Op::BatchNorm {
                    scale,
                    shift,
                    stats: si,
                } => {
                    let (y, c) = ops::batch_norm(
                        &x,
                        &self.value(store, scale),
                        &self.value(store, shift),
                        &mut stats[si],
                        mode,
                    )?;
                    cache.push(OpCache::BatchNorm(c));
                    y
                }
                Op::Relu => {
                    let y = ops::relu(&x);
                    cache.push(OpCache::Relu { input: x });
                    y
                }
                Op::Pool => {
                    let (y, idx) = ops::max_pool(&x)?;
                    cache.push(OpCache::Pool(idx));
                    y
                }
                Op::Flatten => {
                    let shape = x.shape().to_vec();
                    let n = shape[0];
                    let rest = x.len() / n;
                    cache.push(OpCache::Flatten { shape });
                    x.reshape(&[n, rest])?
                }
                Op::Dropout { p } => {
                    let (y, mask) = ops::dropout(&x, p, mode, derive_index(seed, *counter))?;
                    cache.push(OpCache::Dropout(mask));
                    y
                }
                Op::Linear { weight, bias } => {
                    let y = ops::linear(&x, &self.value(store, weight), &self.value(store, bias))?;
                    cache.push(OpCache::Linear { input: x });
                    y
                }
            };
        }
        Ok(x)
    }

    /// Gradients of `sum(logit_gradient ⊙ logits)` w.r.t. every parameter.
    pub fn backward(
        &self,
        store: &ParamStore<T>,
        cache: &ForwardCache<T>,
        logit_gradient: &Tensor<T>,
    ) -> Result<Gradients<T>> {
        if cache.network_id != self.id {
            return Err(Error::StaleCache("cache was produced by a different network".into()));
        }
        if cache.generation != store.generation() {
            return Err(Error::StaleCache(
                "parameters changed since the forward pass".into(),
            ));
        }
        logit_gradient.expect_shape("backward", &[cache.batch, self.spec.num_classes])?;

        let mut slot_grads: Vec<Option<Tensor<T>>> = vec![None; self.slots.len()];
        let mut g = self.backprop_ops(store, &self.head, &cache.head, logit_gradient.clone(), &mut slot_grads, true)?;

        let trunk_grads: Vec<Tensor<T>> = match (&self.fusion, &cache.fusion_inputs) {
            (Some(node), Some((xs, xt))) => {
                if node.on_vectors {
                    let d = g.len() / cache.batch;
                    g = g.reshape(&[cache.batch, 1, 1, d])?;
                }
                let params = match node.op {
                    FusionOp::Conv => Some(self.bank(store, node)?),
                    _ => None,
                };
                let fg = fusion::backward(node.op, xs, xt, params.as_ref(), &g)?;
                if let (Some((w, b)), Some(gw), Some(gb)) = (node.bank, fg.filter_bank, fg.bias) {
                    accumulate(&mut slot_grads, w, gw)?;
                    accumulate(&mut slot_grads, b, gb)?;
                }
                let flat = |t: Tensor<T>| -> Result<Tensor<T>> {
                    if node.on_vectors {
                        let d = t.last_dim();
                        t.reshape(&[cache.batch, d])
                    } else {
                        Ok(t)
                    }
                };
                vec![flat(fg.spatial)?, flat(fg.temporal)?]
            }
            _ => vec![g],
        };

        for ((trunk, tcache), g) in self.trunks.iter().zip(&cache.trunks).zip(trunk_grads) {
            self.backprop_ops(store, &trunk.ops, tcache, g, &mut slot_grads, false)?;
        }

        let mut entries = Vec::new();
        for (slot, grad) in self.slots.iter().zip(slot_grads) {
            let grad = grad.unwrap_or_else(|| Tensor::zeros(&slot.decl.shape));
            let mut start = 0;
            for &id in &slot.parts {
                let width = store.value(id).last_dim();
                let part = if slot.parts.len() == 1 {
                    grad.clone()
                } else {
                    grad.slice_last(start, width)?
                };
                start += width;
                entries.push((id, store.get(id).name.clone(), part));
            }
        }
        Ok(Gradients { entries })
    }

    fn backprop_ops(
        &self,
        store: &ParamStore<T>,
        ops: &[Op],
        caches: &[OpCache<T>],
        mut g: Tensor<T>,
        slot_grads: &mut [Option<Tensor<T>>],
        has_upstream: bool,
    ) -> Result<Tensor<T>> {
        if ops.len() != caches.len() {
            return Err(Error::StaleCache("cache does not match network program".into()));
        }
        for (i, (op, c)) in ops.iter().zip(caches).enumerate().rev() {
            let first_of_trunk = i == 0 && !has_upstream;
            g = match (op, c) {
                (Op::Conv { weight, bias, geom }, OpCache::Conv { input }) => {
                    let w = self.value(store, *weight);
                    let grads = if first_of_trunk {
                        ops::conv2d_backward_params(input, &w, *geom, &g)?
                    } else {
                        ops::conv2d_backward(input, &w, *geom, &g)?
                    };
                    accumulate(slot_grads, *weight, grads.filters)?;
                    accumulate(slot_grads, *bias, grads.bias)?;
                    grads.input
                }
                (Op::BatchNorm { scale, shift, .. }, OpCache::BatchNorm(bc)) => {
                    let grads = ops::batch_norm_backward(bc, &self.value(store, *scale), &g)?;
                    accumulate(slot_grads, *scale, grads.scale)?;
                    accumulate(slot_grads, *shift, grads.shift)?;
                    grads.input
                }
                (Op::Relu, OpCache::Relu { input }) => ops::relu_backward(input, &g)?,
                (Op::Pool, OpCache::Pool(idx)) => ops::max_pool_backward(idx, &g)?,
                (Op::Flatten, OpCache::Flatten { shape }) => g.reshape(shape)?,
                (Op::Dropout { .. }, OpCache::Dropout(mask)) => ops::dropout_backward(mask, &g)?,
                (Op::Linear { weight, bias }, OpCache::Linear { input }) => {
                    let grads = ops::linear_backward(input, &self.value(store, *weight), &g)?;
                    accumulate(slot_grads, *weight, grads.weights)?;
                    accumulate(slot_grads, *bias, grads.bias)?;
                    grads.input
                }
                _ => return Err(Error::StaleCache("cache does not match network program".into())),
            };
        }
        Ok(g)
    }

    /// Copies every logical parameter into a fresh standalone store.
    pub fn snapshot(&self, store: &ParamStore<T>) -> Result<Model<T>> {
        let mut fresh = ParamStore::new();
        let mut values = Vec::with_capacity(self.slots.len());
        for i in 0..self.slots.len() {
            values.push(self.value(store, i).into_owned());
        }
        let mut ids = Vec::with_capacity(self.slots.len());
        for (slot, v) in self.slots.iter().zip(values) {
            ids.push(fresh.insert(slot.decl.name.clone(), Partition::Standalone, v)?);
        }
        let mut ids = ids.into_iter();
        let mut net = Network::assemble(&self.spec, &fresh, |_| Ok(vec![ids.next().unwrap()]))?;
        net.stats = self.stats.clone();
        Ok(Model { store: fresh, net })
    }
}

fn accumulate<T: Scalar>(slots: &mut [Option<Tensor<T>>], slot: usize, grad: Tensor<T>) -> Result<()> {
    match &mut slots[slot] {
        Some(acc) => acc.add_assign(&grad),
        empty => {
            *empty = Some(grad);
            Ok(())
        }
    }
}

/// A standalone network together with the store that owns its parameters.
#[derive(Clone, Debug)]
pub struct Model<T = f32> {
    pub store: ParamStore<T>,
    pub net: Network<T>,
}

impl<T: Scalar> Model<T> {
    pub fn spec(&self) -> &NetworkSpec {
        self.net.spec()
    }

    pub fn forward(&mut self, input: &NetInput<T>, mode: Mode, seed: u64) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.net.forward(&self.store, input, mode, seed)
    }

    pub fn backward(&self, cache: &ForwardCache<T>, logit_gradient: &Tensor<T>) -> Result<Gradients<T>> {
        self.net.backward(&self.store, cache, logit_gradient)
    }

    pub fn predict(&self, input: &NetInput<T>) -> Result<Tensor<T>> {
        self.net.predict(&self.store, input)
    }

    pub fn predict_with_features(&self, input: &NetInput<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        self.net.predict_with_features(&self.store, input)
    }

    pub fn parameter(&self, name: &str) -> Option<Tensor<T>> {
        self.net.parameter(&self.store, name)
    }

    /// Mutable access to a standalone parameter by logical name.
    pub fn parameter_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        let id = *self.net.parts(name)?.first()?;
        Some(self.store.value_mut(id))
    }

    pub fn count_parameters(&self) -> usize {
        self.net.count_parameters()
    }

    pub fn cast<U: Scalar>(&self) -> Result<Model<U>> {
        let mut store = ParamStore::new();
        let mut ids = Vec::new();
        for decl in self.net.decls() {
            let v = self.parameter(&decl.name).expect("declared").cast();
            ids.push(store.insert(decl.name.clone(), Partition::Standalone, v)?);
        }
        let mut ids = ids.into_iter();
        let mut net = Network::assemble(self.spec(), &store, |_| Ok(vec![ids.next().unwrap()]))?;
        net.stats = self
            .net
            .stats
            .iter()
            .map(|s| RunningStats {
                mean: s.mean.cast(),
                var: s.var.cast(),
                momentum: U::lit(s.momentum.as_f64()),
                epsilon: U::lit(s.epsilon.as_f64()),
            })
            .collect();
        Ok(Model { store, net })
    }
}

/// Builds a standalone network with freshly initialized parameters.
pub fn build_network<T: Scalar>(spec: &NetworkSpec, seed: u64) -> Result<Model<T>> {
    build_in_domain(spec, seed, "elr")
}

pub(crate) fn build_in_domain<T: Scalar>(spec: &NetworkSpec, seed: u64, domain: &str) -> Result<Model<T>> {
    let mut store = ParamStore::new();
    let mut ids = Vec::new();
    for decl in param_decls(spec)? {
        let v = decl.initial_value(spec.init_std, seed, domain);
        ids.push(store.insert(decl.name.clone(), Partition::Standalone, v)?);
    }
    let mut ids = ids.into_iter();
    let net = Network::assemble(spec, &store, |_| Ok(vec![ids.next().unwrap()]))?;
    Ok(Model { store, net })
}
