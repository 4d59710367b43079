//! Training one network (coupled or standalone) on a fold's training clips.

use std::sync::mpsc::sync_channel;

use crate::coupled::{build_coupled_pair, train_step, train_step_single, Batch, TrainerState};
use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::data::{epoch_plan, materialize, Clip};
use crate::nn::network::{build_network, Model};
use crate::nn::spec::Stream;
use crate::rng::derive_seed;
use crate::video::Resolution;

/// Batches prepared ahead of the training loop.
const PREFETCH: usize = 4;

/// Mean losses of one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub iterations: u64,
    pub lr: f64,
    pub loss_elr: f64,
    /// Absent when training a standalone network.
    pub loss_hr: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainedStream {
    pub stream: Stream,
    /// The deployable eLR network.
    pub model: Model<f32>,
    pub log: Vec<EpochLog>,
}

struct Message {
    epoch: usize,
    batches: Result<(Batch<f32>, Option<Batch<f32>>)>,
}

/// Seed for the network of `stream` in fold `fold`.
pub fn stream_seed(seed: u64, fold: &str, stream: Stream) -> u64 {
    derive_seed(seed, &format!("fold/{fold}/{stream}"))
}

/// Trains the `stream` network on `train` clips.
///
/// With coupling enabled, an eLR/HR pair is trained on matching renditions of
/// every batch and the eLR network is returned. `on_epoch` receives the eLR
/// network after every completed epoch.
pub fn train_stream(
    cfg: &ExperimentConfig,
    stream: Stream,
    num_classes: usize,
    clips: &[Clip],
    train: &[usize],
    fold: &str,
    on_epoch: &mut dyn FnMut(usize, &Model<f32>) -> Result<()>,
) -> Result<TrainedStream> {
    if train.is_empty() {
        return Err(Error::arg("train", format!("fold {fold} has no training videos")));
    }
    let spec = cfg.network_spec(stream, num_classes)?;
    let mut trainer = cfg.trainer.clone();
    trainer.seed = stream_seed(cfg.trainer.seed, fold, stream);
    trainer.validate()?;
    let coupled = cfg.coupling;
    let cap = cfg.pipeline().magnitude_cap;

    let mut state = TrainerState::new(trainer.seed);
    let mut pair = if coupled {
        Some(build_coupled_pair::<f32>(&spec, cfg.coupling_ratios, trainer.seed)?)
    } else {
        None
    };
    let mut single = if coupled {
        None
    } else {
        Some(build_network::<f32>(&spec, trainer.seed)?)
    };
    let snapshot = |pair: &Option<_>, single: &Option<Model<f32>>| -> Result<Model<f32>> {
        match (pair, single) {
            (Some(p), _) => crate::coupled::CoupledPair::decouple(p),
            (None, Some(m)) => Ok(m.clone()),
            (None, None) => unreachable!("one network is always built"),
        }
    };

    let mut log = Vec::with_capacity(trainer.epochs);
    let mut sampler = state.rng.clone();
    std::thread::scope(|scope| -> Result<()> {
        let (tx, rx) = sync_channel::<Message>(PREFETCH);
        let producer_cfg = &trainer;
        scope.spawn(move || {
            for epoch in 0..producer_cfg.epochs {
                let plan = epoch_plan(
                    clips,
                    train,
                    producer_cfg.batch_size,
                    producer_cfg.flip_probability,
                    &mut sampler,
                );
                for draws in plan {
                    let batches = materialize(clips, &draws, Resolution::Elr, stream, cap).and_then(|elr| {
                        let hr = coupled
                            .then(|| materialize(clips, &draws, Resolution::Hr, stream, cap))
                            .transpose()?;
                        Ok((elr, hr))
                    });
                    if tx.send(Message { epoch, batches }).is_err() {
                        return;
                    }
                }
            }
        });

        let mut current: Option<EpochLog> = None;
        let mut finish = |entry: EpochLog, pair: &Option<_>, single: &Option<Model<f32>>| -> Result<()> {
            let n = entry.iterations as f64;
            let entry = EpochLog {
                loss_elr: entry.loss_elr / n,
                loss_hr: entry.loss_hr.map(|l| l / n),
                ..entry
            };
            let epoch = entry.epoch;
            log.push(entry);
            on_epoch(epoch, &snapshot(pair, single)?)
        };
        for Message { epoch, batches } in rx {
            let (elr, hr) = batches?;
            if current.as_ref().is_some_and(|c| c.epoch != epoch) {
                finish(current.take().expect("checked"), &pair, &single)?;
            }
            state.epoch = epoch;
            let (lr, loss_elr, loss_hr) = match (&mut pair, &mut single, hr) {
                (Some(p), _, Some(hr)) => {
                    let r = train_step(p, &elr, &hr, &trainer, &mut state)?;
                    (r.lr, r.loss_elr, Some(r.loss_hr))
                }
                (None, Some(m), _) => {
                    let lr = trainer.sgd(epoch).lr;
                    (lr, train_step_single(m, &elr, &trainer, &mut state)?, None)
                }
                _ => unreachable!("HR batches accompany coupled training"),
            };
            if !(loss_elr.is_finite() && loss_hr.is_none_or(f64::is_finite)) {
                return Err(Error::arg("train", format!("non-finite loss at epoch {epoch}")));
            }
            let c = current.get_or_insert(EpochLog {
                epoch,
                iterations: 0,
                lr,
                loss_elr: 0.0,
                loss_hr: loss_hr.map(|_| 0.0),
            });
            c.iterations += 1;
            c.loss_elr += loss_elr;
            c.loss_hr = c.loss_hr.zip(loss_hr).map(|(a, b)| a + b);
        }
        if let Some(c) = current {
            finish(c, &pair, &single)?;
        }
        Ok(())
    })?;

    Ok(TrainedStream {
        stream,
        model: snapshot(&pair, &single)?,
        log,
    })
}
