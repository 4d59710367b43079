//! Cross-validated experiments and their report files.
//!
//! An output directory holds:
//!
//! - `config.txt`: the resolved configuration.
//! - `folds.csv`: one row per completed fold.
//! - `predictions.csv`: one row per test video.
//! - `train_log.csv`: mean losses per fold, stream and epoch.
//! - `summary.txt`: mean CCR, StDev and parameter count. Its first line holds
//!   the start time and wall clock and is the only nondeterministic content.
//! - `checkpoints/<fold>/<stream>.elrc`: final eLR networks, plus
//!   `<stream>-epoch<N>.elrc` when intermediate checkpoints are enabled.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::data::{preprocess_manifest, Clip};
use crate::harness::evaluate::{evaluate, mean_std, FoldResult};
use crate::harness::folds::{make_folds, Fold};
use crate::harness::manifest::DatasetManifest;
use crate::harness::train::{train_stream, EpochLog};
use crate::nn::checkpoint::{model_checkpoint, model_from_checkpoint, write_atomic, Checkpoint};
use crate::nn::network::Model;
use crate::nn::spec::Stream;
use crate::video::SampleCache;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub folds: Vec<FoldResult>,
    /// Training-set CCR per fold, when requested.
    pub train_ccr: Vec<Option<f64>>,
    pub mean_ccr: f64,
    pub std_ccr: f64,
    /// Parameters of the deployed eLR network(s).
    pub parameters: usize,
    pub wall_clock_secs: f64,
    /// Set when a fold failed; completed folds are still reported.
    pub failure: Option<String>,
}

fn path_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn checkpoint_path(output_dir: &Path, fold: &str, stream: Stream, epoch: Option<usize>) -> PathBuf {
    let dir = output_dir.join("checkpoints").join(path_safe(fold));
    match epoch {
        Some(e) => dir.join(format!("{stream}-epoch{e}.elrc")),
        None => dir.join(format!("{stream}.elrc")),
    }
}

/// Folds of `manifest`, restricted to the ids selected in `cfg`.
pub fn selected_folds(cfg: &ExperimentConfig, manifest: &DatasetManifest) -> Result<Vec<Fold>> {
    let folds = make_folds(manifest)?;
    let Some(wanted) = &cfg.folds else {
        return Ok(folds);
    };
    if let Some(bad) = wanted.iter().find(|w| !folds.iter().any(|f| &f.id == *w)) {
        return Err(Error::Config(format!("fold {bad:?} not present in the manifest")));
    }
    Ok(folds.into_iter().filter(|f| wanted.contains(&f.id)).collect())
}

fn check_clips(manifest: &DatasetManifest, clips: &[Clip]) -> Result<()> {
    if clips.len() != manifest.len() {
        return Err(Error::arg(
            "run_experiment",
            format!("{} clips for {} manifest entries", clips.len(), manifest.len()),
        ));
    }
    Ok(())
}

struct Reporter<'a> {
    cfg: &'a ExperimentConfig,
    manifest: &'a DatasetManifest,
    clips: &'a [Clip],
    dir: PathBuf,
    started: (u64, Instant),
    folds: Vec<FoldResult>,
    train_ccr: Vec<Option<f64>>,
    logs: Vec<(String, Stream, EpochLog)>,
    parameters: usize,
}

impl<'a> Reporter<'a> {
    fn new(cfg: &'a ExperimentConfig, manifest: &'a DatasetManifest, clips: &'a [Clip], dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Ok(Self {
            cfg,
            manifest,
            clips,
            dir,
            started: (unix, Instant::now()),
            folds: Vec::new(),
            train_ccr: Vec::new(),
            logs: Vec::new(),
            parameters: 0,
        })
    }

    fn report(&self, failure: Option<String>) -> ExperimentReport {
        let ccrs: Vec<f64> = self.folds.iter().map(|f| f.ccr).collect();
        let (mean_ccr, std_ccr) = mean_std(&ccrs);
        ExperimentReport {
            folds: self.folds.clone(),
            train_ccr: self.train_ccr.clone(),
            mean_ccr,
            std_ccr,
            parameters: self.parameters,
            wall_clock_secs: self.started.1.elapsed().as_secs_f64(),
            failure,
        }
    }

    fn write(&self, failure: Option<String>, total_folds: usize) -> Result<ExperimentReport> {
        let report = self.report(failure);
        let put = |name: &str, text: String| write_atomic(&self.dir.join(name), text.as_bytes());

        let mut folds = String::from("fold,test_videos,ccr,train_ccr\n");
        for (f, t) in report.folds.iter().zip(&report.train_ccr) {
            let train = t.map(|x| x.to_string()).unwrap_or_default();
            writeln!(folds, "{},{},{},{train}", f.fold, f.predictions.len(), f.ccr).expect("string write");
        }
        put("folds.csv", folds)?;

        let classes = self.manifest.num_classes();
        let mut preds = String::from("fold,path,subject,label,predicted");
        for c in 0..classes {
            write!(preds, ",p{c}").expect("string write");
        }
        preds.push('\n');
        for f in &report.folds {
            for p in &f.predictions {
                let clip = &self.clips[p.index];
                write!(preds, "{},{},{},{},{}", f.fold, clip.path.display(), clip.subject, p.label, p.predicted)
                    .expect("string write");
                for x in &p.probabilities {
                    write!(preds, ",{x}").expect("string write");
                }
                preds.push('\n');
            }
        }
        put("predictions.csv", preds)?;

        let mut log = String::from("fold,stream,epoch,iterations,lr,loss_elr,loss_hr\n");
        for (fold, stream, e) in &self.logs {
            let hr = e.loss_hr.map(|x| x.to_string()).unwrap_or_default();
            writeln!(log, "{fold},{stream},{},{},{},{},{hr}", e.epoch, e.iterations, e.lr, e.loss_elr)
                .expect("string write");
        }
        put("train_log.csv", log)?;

        let mut summary = format!(
            "# started_unix = {} wall_clock_secs = {:.3}\n",
            self.started.0, report.wall_clock_secs
        );
        let status = report.failure.as_deref().map_or("complete".to_string(), |f| format!("failed: {f}"));
        for (k, v) in [
            ("stream", self.cfg.stream.to_string()),
            ("coupling", self.cfg.coupling.to_string()),
            ("protocol", self.manifest.protocol.to_string()),
            ("folds_completed", report.folds.len().to_string()),
            ("folds_total", total_folds.to_string()),
            ("mean_ccr", report.mean_ccr.to_string()),
            ("stdev_ccr", report.std_ccr.to_string()),
            ("parameters", report.parameters.to_string()),
            ("status", status),
        ] {
            writeln!(summary, "{k} = {v}").expect("string write");
        }
        put("summary.txt", summary)?;
        Ok(report)
    }

    /// Records a fold result, or writes the partial report and returns the error with fold context.
    fn finish_fold(
        &mut self,
        fold: &Fold,
        total: usize,
        outcome: Result<(FoldResult, Option<f64>, usize)>,
    ) -> Result<()> {
        match outcome {
            Ok((result, train, params)) => {
                self.folds.push(result);
                self.train_ccr.push(train);
                self.parameters = params;
                self.write(None, total)?;
                Ok(())
            }
            Err(e) => {
                let e = e.in_fold(fold.id.clone());
                self.write(Some(e.to_string()), total)?;
                Err(e)
            }
        }
    }
}

fn save_model(path: &Path, model: &Model<f32>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    model_checkpoint(model).save(path)
}

fn score(cfg: &ExperimentConfig, fold: &Fold, models: &[Model<f32>], clips: &[Clip]) -> Result<(FoldResult, Option<f64>, usize)> {
    let cap = cfg.pipeline().magnitude_cap;
    let result = evaluate(&fold.id, models, clips, &fold.test, cfg.test_stride, cap)?;
    let train = if cfg.eval_train {
        Some(evaluate(&fold.id, models, clips, &fold.train, cfg.test_stride, cap)?.ccr)
    } else {
        None
    };
    Ok((result, train, models.iter().map(Model::count_parameters).sum()))
}

/// Trains and evaluates every selected fold on already prepared clips.
///
/// `clips[i]` must be the prepared form of `manifest.entries[i]`.
pub fn run_with_clips(cfg: &ExperimentConfig, manifest: &DatasetManifest, clips: &[Clip]) -> Result<ExperimentReport> {
    check_clips(manifest, clips)?;
    let folds = selected_folds(cfg, manifest)?;
    let out = &cfg.output_dir;
    let mut reporter = Reporter::new(cfg, manifest, clips, out.clone())?;
    write_atomic(&out.join("config.txt"), cfg.to_text().as_bytes())?;
    for fold in &folds {
        let mut logs = Vec::new();
        let outcome = (|| {
            let mut models = Vec::new();
            for stream in cfg.streams() {
                let mut on_epoch = |epoch: usize, model: &Model<f32>| {
                    let every = cfg.checkpoint_every;
                    if every > 0 && (epoch + 1) % every == 0 && epoch + 1 < cfg.trainer.epochs {
                        save_model(&checkpoint_path(out, &fold.id, stream, Some(epoch + 1)), model)?;
                    }
                    Ok(())
                };
                let trained = train_stream(
                    cfg,
                    stream,
                    manifest.num_classes(),
                    clips,
                    &fold.train,
                    &fold.id,
                    &mut on_epoch,
                )?;
                save_model(&checkpoint_path(out, &fold.id, stream, None), &trained.model)?;
                logs.extend(trained.log.into_iter().map(|e| (fold.id.clone(), stream, e)));
                models.push(trained.model);
            }
            score(cfg, fold, &models, clips)
        })();
        reporter.logs.append(&mut logs);
        reporter.finish_fold(fold, folds.len(), outcome)?;
    }
    Ok(reporter.report(None))
}

/// Loads the manifest, prepares (or reuses cached) clips, then trains and evaluates.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let (manifest, clips) = load_dataset(cfg)?;
    run_with_clips(cfg, &manifest, &clips)
}

/// Reads and preprocesses the configured manifest.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<(DatasetManifest, Vec<Clip>)> {
    cfg.validate()?;
    let path = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Config("no manifest configured".into()))?;
    let manifest = DatasetManifest::load(path, cfg.protocol)?;
    let clips = preprocess_manifest(&manifest, &cfg.pipeline(), &SampleCache::new(&cfg.cache_dir), cfg.coupling)?;
    Ok((manifest, clips))
}

/// Re-evaluates the final checkpoints under `cfg.output_dir`, writing reports to `report_dir`.
pub fn evaluate_checkpoints(
    cfg: &ExperimentConfig,
    manifest: &DatasetManifest,
    clips: &[Clip],
    report_dir: &Path,
) -> Result<ExperimentReport> {
    check_clips(manifest, clips)?;
    let folds = selected_folds(cfg, manifest)?;
    let mut reporter = Reporter::new(cfg, manifest, clips, report_dir.to_path_buf())?;
    for fold in &folds {
        let outcome = (|| {
            let models = cfg
                .streams()
                .into_iter()
                .map(|stream| {
                    let spec = cfg.network_spec(stream, manifest.num_classes())?;
                    let ck = Checkpoint::load(&checkpoint_path(&cfg.output_dir, &fold.id, stream, None))?;
                    model_from_checkpoint::<f32>(&spec, &ck)
                })
                .collect::<Result<Vec<_>>>()?;
            score(cfg, fold, &models, clips)
        })();
        reporter.finish_fold(fold, folds.len(), outcome)?;
    }
    Ok(reporter.report(None))
}
