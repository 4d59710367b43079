//! Semi-coupled training of an eLR/HR network pair.
//!
//! Both networks share the leading `k^n = round(c_n · D^n)` output channels of
//! every layer `n`. Each iteration updates the eLR network and then the HR
//! network, so shared channels are updated twice and private channels once.

pub mod augment;
pub mod pair;
pub mod schedule;
pub mod trainer;

pub use augment::{augment_flip, apply_flips, flip_flags, flip_sample, mirror_image};
pub use pair::{build_coupled_pair, CoupledPair};
pub use schedule::{CouplingSchedule, COUPLING_LAYERS};
pub use trainer::{
    alternating_update, dropout_seed, lr_schedule, train_step, train_step_single, Batch, Objective, StepReport,
    TrainerConfig, TrainerState,
};
