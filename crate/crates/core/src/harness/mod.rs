//! Manifests, folds, training runs, evaluation and feature export.

pub mod config;
pub mod data;
pub mod evaluate;
pub mod export;
pub mod folds;
pub mod manifest;
pub mod run;
pub mod train;

pub use config::{ExperimentConfig, StreamChoice, CONFIG_KEYS};
pub use data::{epoch_plan, materialize, prepare_clip, preprocess_manifest, stream_input, Clip, Draw};
pub use evaluate::{
    argmax, average_softmax, average_two_stream, ccr, eval_centers, evaluate, mean_std, FoldResult, VideoPrediction,
};
pub use export::{export_features, video_features, FEATURE_LAYERS};
pub use folds::{make_folds, Fold};
pub use manifest::{DatasetManifest, ManifestEntry, Protocol};
pub use run::{checkpoint_path, evaluate_checkpoints, load_dataset, run_experiment, run_with_clips, ExperimentReport};
pub use train::{stream_seed, train_stream, EpochLog, TrainedStream};
