use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};

use elr_twostream::fusion::{FusionLayer, FusionOp};
use elr_twostream::gradcheck::{network_check, primitive_suite, toy_spec, CheckReport};
use elr_twostream::harness::{
    checkpoint_path, evaluate_checkpoints, export_features, load_dataset, run_experiment, ExperimentConfig,
    ExperimentReport, CONFIG_KEYS,
};
use elr_twostream::nn::checkpoint::{model_from_checkpoint, Checkpoint};
use elr_twostream::{Error, Result};

fn flag(key: &str) -> String {
    key.replace('_', "-")
}

fn with_config_flags(cmd: Command) -> Command {
    let cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .value_parser(clap::value_parser!(PathBuf))
            .help("key = value file providing defaults for every flag below"),
    );
    CONFIG_KEYS.iter().fold(cmd, |cmd, (key, help)| {
        cmd.arg(Arg::new(*key).long(flag(key)).value_name("VALUE").help(*help))
    })
}

fn cli() -> Command {
    Command::new("elr")
        .about("Two-stream ConvNets for extremely low resolution action recognition")
        .subcommand_required(true)
        .subcommand(with_config_flags(
            Command::new("preprocess").about("Prepare every manifest video into the cache"),
        ))
        .subcommand(with_config_flags(
            Command::new("train").about("Train and evaluate every fold, writing reports and checkpoints"),
        ))
        .subcommand(with_config_flags(Command::new("evaluate").about("Re-evaluate saved checkpoints")).arg(
            Arg::new("report_dir")
                .long("report-dir")
                .value_name("DIR")
                .value_parser(clap::value_parser!(PathBuf))
                .help("where to write the evaluation reports [default: <output-dir>/evaluation]"),
        ))
        .subcommand(
            with_config_flags(Command::new("export-features").about("Write per-video features of saved checkpoints"))
                .arg(
                    Arg::new("layer")
                        .long("layer")
                        .value_name("NAME")
                        .default_value("fc5_input")
                        .help("layer whose activations are exported"),
                ),
        )
        .subcommand(
            Command::new("gradcheck")
                .about("Run the finite-difference gradient suite")
                .arg(
                    Arg::new("instances")
                        .long("instances")
                        .value_parser(clap::value_parser!(usize))
                        .default_value("20"),
                )
                .arg(
                    Arg::new("seed")
                        .long("seed")
                        .value_parser(clap::value_parser!(u64))
                        .default_value("0"),
                )
                .arg(Arg::new("quiet").long("quiet").action(ArgAction::SetTrue)),
        )
}

fn config_from(m: &ArgMatches) -> Result<ExperimentConfig> {
    let mut cfg = match m.get_one::<PathBuf>("config") {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for (key, _) in CONFIG_KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    Ok(cfg)
}

fn print_report(report: &ExperimentReport) {
    for f in &report.folds {
        println!("fold {}: ccr {:.4} ({} videos)", f.fold, f.ccr, f.predictions.len());
    }
    println!(
        "mean ccr {:.4}, stdev {:.4}, parameters {}, {:.1}s",
        report.mean_ccr, report.std_ccr, report.parameters, report.wall_clock_secs
    );
}

fn gradcheck(m: &ArgMatches) -> Result<bool> {
    let instances = *m.get_one::<usize>("instances").expect("defaulted");
    let seed = *m.get_one::<u64>("seed").expect("defaulted");
    let mut reports: Vec<CheckReport> = primitive_suite(instances, seed, 1e-5)?;
    for (op, layer) in [
        (FusionOp::Sum, FusionLayer::Conv3),
        (FusionOp::Concat, FusionLayer::Conv3),
        (FusionOp::Conv, FusionLayer::Conv3),
        (FusionOp::Sum, FusionLayer::Fc4),
        (FusionOp::Conv, FusionLayer::Fc4),
    ] {
        let mut r = network_check(&toy_spec(op, layer), seed, 1e-3)?;
        r.name = format!("network {op}@{layer}");
        reports.push(r);
    }
    let mut ok = true;
    for r in &reports {
        ok &= r.passed();
        if !m.get_flag("quiet") || !r.passed() {
            println!(
                "{} {}: {} instances, max relative error {:.2e} (< {:.0e})",
                if r.passed() { "PASS" } else { "FAIL" },
                r.name,
                r.instances,
                r.max_relative_error,
                r.tolerance
            );
        }
    }
    Ok(ok)
}

fn export(cfg: &ExperimentConfig, layer: &str) -> Result<()> {
    let (manifest, clips) = load_dataset(cfg)?;
    let all: Vec<usize> = (0..clips.len()).collect();
    let folds = elr_twostream::harness::run::selected_folds(cfg, &manifest)?;
    let dir = cfg.output_dir.join("features");
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let cap = cfg.pipeline().magnitude_cap;
    for fold in &folds {
        for stream in cfg.streams() {
            let spec = cfg.network_spec(stream, manifest.num_classes())?;
            let ck = Checkpoint::load(&checkpoint_path(&cfg.output_dir, &fold.id, stream, None))?;
            let model = model_from_checkpoint::<f32>(&spec, &ck)?;
            let out = dir.join(format!("{}-{stream}.csv", fold.id.replace(|c: char| !c.is_ascii_alphanumeric(), "_")));
            let n = export_features(&model, &clips, &all, layer, cfg.test_stride, cap, &out)?;
            println!("wrote {n} rows to {}", out.display());
        }
    }
    Ok(())
}

fn run(m: &ArgMatches) -> Result<bool> {
    match m.subcommand() {
        Some(("preprocess", sub)) => {
            let cfg = config_from(sub)?;
            let (_, clips) = load_dataset(&cfg)?;
            println!("prepared {} videos in {}", clips.len(), cfg.cache_dir.display());
        }
        Some(("train", sub)) => {
            let report = run_experiment(&config_from(sub)?)?;
            print_report(&report);
        }
        Some(("evaluate", sub)) => {
            let cfg = config_from(sub)?;
            let report_dir = sub
                .get_one::<PathBuf>("report_dir")
                .cloned()
                .unwrap_or_else(|| cfg.output_dir.join("evaluation"));
            let (manifest, clips) = load_dataset(&cfg)?;
            print_report(&evaluate_checkpoints(&cfg, &manifest, &clips, &report_dir)?);
        }
        Some(("export-features", sub)) => {
            let cfg = config_from(sub)?;
            export(&cfg, sub.get_one::<String>("layer").expect("defaulted"))?;
        }
        Some(("gradcheck", sub)) => return gradcheck(sub),
        _ => unreachable!("subcommand required"),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    match run(&matches) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::from(1)
        }
    }
}
