//! Alternating SGD over a coupled pair.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::coupled::pair::CoupledPair;
use crate::error::{Error, Result};
use crate::nn::network::{Model, NetInput, Network};
use crate::nn::params::{ParamId, ParamStore, SgdStep};
use crate::ops::{softmax_cross_entropy, softmax_cross_entropy_backward, Mode};
use crate::rng::{derive_index, derive_seed};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainerConfig {
    pub base_lr: f64,
    /// Epochs between learning-rate reductions.
    pub lr_decay_every: usize,
    /// Divisor applied at each reduction.
    pub lr_decay_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub flip_probability: f64,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.05,
            lr_decay_every: 10,
            lr_decay_factor: 10.0,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch_size: 256,
            epochs: 30,
            flip_probability: 0.5,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.base_lr > 0.0) {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if self.lr_decay_every == 0 {
            return bad("lr_decay_every must be at least 1".into());
        }
        if !(self.lr_decay_factor > 0.0) {
            return bad(format!("lr_decay_factor must be positive, got {}", self.lr_decay_factor));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return bad(format!("flip_probability {} outside [0, 1]", self.flip_probability));
        }
        Ok(())
    }

    pub fn sgd(&self, epoch: usize) -> SgdStep {
        SgdStep {
            lr: lr_schedule(self, epoch),
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }
}

/// `base_lr · factor^(−⌊epoch / every⌋)`.
pub fn lr_schedule(cfg: &TrainerConfig, epoch: usize) -> f64 {
    let drops = (epoch / cfg.lr_decay_every) as i32;
    cfg.base_lr * cfg.lr_decay_factor.powi(-drops)
}

#[derive(Clone, Debug)]
pub struct TrainerState {
    /// Iterations completed so far.
    pub iteration: u64,
    pub epoch: usize,
    /// Drives shuffling and flips.
    pub rng: ChaCha8Rng,
}

impl TrainerState {
    pub fn new(seed: u64) -> Self {
        Self {
            iteration: 0,
            epoch: 0,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, "trainer")),
        }
    }
}

/// Inputs and labels of one mini-batch.
#[derive(Clone, Debug)]
pub struct Batch<T = f32> {
    pub input: NetInput<T>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> Batch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn check(&self) -> Result<()> {
        if self.input.batch_size() != Some(self.labels.len()) {
            return Err(Error::shape(
                "train_step",
                format!("{} labels for a batch of {:?}", self.labels.len(), self.input.batch_size()),
            ));
        }
        Ok(())
    }
}

/// Losses of one coupled iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub lr: f64,
    pub loss_elr: f64,
    pub loss_hr: f64,
}

/// Loss and gradients for some of the store's tensors.
pub type Objective<T> = (f64, Vec<(ParamId, Tensor<T>)>);

/// One alternating iteration: the first objective is differentiated and its
/// gradients applied, then the second is differentiated at the updated
/// parameters and applied. Tensors touched by both receive two updates.
pub fn alternating_update<T, F, G>(store: &mut ParamStore<T>, step: SgdStep, first: F, second: G) -> Result<(f64, f64)>
where
    T: Scalar,
    F: FnOnce(&ParamStore<T>) -> Result<Objective<T>>,
    G: FnOnce(&ParamStore<T>) -> Result<Objective<T>>,
{
    let (l1, g1) = first(store)?;
    for (id, g) in &g1 {
        store.sgd_update(*id, g, step)?;
    }
    let (l2, g2) = second(store)?;
    for (id, g) in &g2 {
        store.sgd_update(*id, g, step)?;
    }
    Ok((l1, l2))
}

fn objective<T: Scalar>(net: &mut Network<T>, store: &ParamStore<T>, batch: &Batch<T>, seed: u64) -> Result<Objective<T>> {
    let (logits, cache) = net.forward(store, &batch.input, Mode::Train, seed)?;
    let (loss, probs) = softmax_cross_entropy(&logits, &batch.labels)?;
    let grads = net.backward(store, &cache, &softmax_cross_entropy_backward(&probs, &batch.labels)?)?;
    Ok((loss.as_f64(), grads.iter().map(|(id, _, g)| (id, g.clone())).collect()))
}

/// Dropout seed of network `role` ("elr" or "hr") at iteration `m`.
pub fn dropout_seed(cfg: &TrainerConfig, iteration: u64, role: &str) -> u64 {
    derive_seed(derive_index(cfg.seed, iteration), role)
}

/// One coupled iteration: eLR update, then HR update.
///
/// The batches must be two renditions of the same samples.
pub fn train_step<T: Scalar>(
    pair: &mut CoupledPair<T>,
    elr_batch: &Batch<T>,
    hr_batch: &Batch<T>,
    cfg: &TrainerConfig,
    state: &mut TrainerState,
) -> Result<StepReport> {
    elr_batch.check()?;
    hr_batch.check()?;
    if elr_batch.labels != hr_batch.labels {
        return Err(Error::arg("train_step", "eLR and HR batches carry different labels"));
    }
    let shapes = |b: &Batch<T>| {
        (
            b.input.rgb.as_ref().map(|t| t.shape().to_vec()),
            b.input.flow.as_ref().map(|t| t.shape().to_vec()),
        )
    };
    if shapes(elr_batch) != shapes(hr_batch) {
        return Err(Error::shape(
            "train_step",
            format!("eLR batch {:?} vs HR batch {:?}", shapes(elr_batch), shapes(hr_batch)),
        ));
    }
    let step = cfg.sgd(state.epoch);
    let m = state.iteration;
    let CoupledPair { store, elr, hr, .. } = pair;
    let (loss_elr, loss_hr) = alternating_update(
        store,
        step,
        |s| objective(elr, s, elr_batch, dropout_seed(cfg, m, "elr")),
        |s| objective(hr, s, hr_batch, dropout_seed(cfg, m, "hr")),
    )?;
    state.iteration += 1;
    Ok(StepReport {
        lr: step.lr,
        loss_elr,
        loss_hr,
    })
}

/// One SGD iteration of a standalone network, using the eLR dropout seeds.
pub fn train_step_single<T: Scalar>(
    model: &mut Model<T>,
    batch: &Batch<T>,
    cfg: &TrainerConfig,
    state: &mut TrainerState,
) -> Result<f64> {
    batch.check()?;
    let step = cfg.sgd(state.epoch);
    let (loss, grads) = objective(&mut model.net, &model.store, batch, dropout_seed(cfg, state.iteration, "elr"))?;
    for (id, g) in &grads {
        model.store.sgd_update(*id, g, step)?;
    }
    state.iteration += 1;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learning_rate_steps() {
        let cfg = TrainerConfig::default();
        assert_eq!(lr_schedule(&cfg, 0), 0.05);
        assert_eq!(lr_schedule(&cfg, 9), 0.05);
        assert!((lr_schedule(&cfg, 10) - 0.005).abs() < 1e-15);
        assert!((lr_schedule(&cfg, 25) - 5e-4).abs() < 1e-15);
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = TrainerConfig {
            flip_probability: 1.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.flip_probability = 0.5;
        cfg.base_lr = 0.0;
        assert!(cfg.validate().is_err());
        assert!(TrainerConfig::default().validate().is_ok());
    }
}
