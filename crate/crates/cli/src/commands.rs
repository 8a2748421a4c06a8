use std::path::Path;

use xrf::attnviz::{extract_attention, render_heatmap, write_outputs};
use xrf::config::KeyValues;
use xrf::data::{
    assign_split, load_directory, load_image, resize_bilinear, split_samples, synthesize_with, write_directory,
    write_manifest, LabeledSample, Split, SynthConfig,
};
use xrf::metrics::{evaluate as score, write_eval_csv, write_roc_files};
use xrf::models::{load_checkpoint, Model, ModelSpec};
use xrf::train::{evaluate_samples, fit_with_progress, TrainConfig};
use xrf::{Error, Result};

use super::{EvalArgs, RunArgs};

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Decode { .. } | Error::Format(_) | Error::UnknownLabel { .. } | Error::Shape { .. } => {
            EXIT_DATA
        }
        Error::Divergence { .. } | Error::NonFiniteGradient { .. } | Error::NonFinite { .. } => EXIT_DIVERGED,
        _ => EXIT_CONFIG,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Config file (or `fallback` when no file is named), then `--seed`, then
/// `--set` overrides.
fn resolve_kv(args: &RunArgs, fallback: Option<KeyValues>) -> Result<KeyValues> {
    let mut kv = match (&args.config, fallback) {
        (Some(path), _) => KeyValues::read(path).map_err(|e| match e {
            Error::Io { .. } => Error::Config(e.to_string()),
            other => other,
        })?,
        (None, Some(kv)) => kv,
        (None, None) => KeyValues::new(),
    };
    if let Some(seed) = args.seed {
        kv.set("seed", seed);
    }
    for o in &args.overrides {
        kv.apply_override(o)?;
    }
    Ok(kv)
}

/// Loads the configured corpus and splits it by image id.
fn load_splits(data: &str, cfg: &TrainConfig) -> Result<(Vec<LabeledSample>, Vec<LabeledSample>, Vec<LabeledSample>)> {
    let target = (cfg.spec.height, cfg.spec.width);
    let samples = if data == "synth" {
        let synth = SynthConfig {
            size: cfg.spec.height,
            ..SynthConfig::default()
        };
        let mut s = synthesize_with(cfg.data.synth_samples, cfg.seed, &synth)?;
        if cfg.spec.width != cfg.spec.height {
            for sample in &mut s {
                sample.pixels = resize_bilinear(&sample.pixels, target.0, target.1)?;
            }
        }
        s
    } else {
        load_directory(Path::new(data), target)?
    };
    Ok(split_samples(samples, cfg.data.split))
}

pub fn train(args: &RunArgs) -> Result<()> {
    let kv = resolve_kv(args, None)?;
    let cfg = TrainConfig::from_kv(&kv)?;
    create_dir(&args.out)?;
    write_text(&args.out.join("config.resolved"), &cfg.to_kv().render())?;
    let (train, val, test) = load_splits(&args.data, &cfg)?;
    let mut manifest: Vec<(String, Split)> = Vec::new();
    for (part, split) in [(&train, Split::Train), (&val, Split::Val), (&test, Split::Test)] {
        manifest.extend(part.iter().map(|s| (s.image_id.clone(), split)));
    }
    write_manifest(&args.out.join("split.tsv"), &manifest)?;
    eprintln!(
        "training {} on {} images ({} validation, {} held out)",
        cfg.spec.family,
        train.len(),
        val.len(),
        test.len()
    );
    let mut model = Model::build(&cfg.spec)?;
    let epochs = cfg.epochs;
    let report = fit_with_progress(&mut model, &train, &val, &cfg, Some(&args.out), &mut |r| {
        let auc = r.val_auc.map_or_else(|| "-".to_string(), |a| format!("{a:.4}"));
        eprintln!(
            "epoch {}/{epochs}  train_loss {:.4}  val_loss {:.4}  val_acc {:.4}  val_auc {auc}  lr {}",
            r.epoch, r.train_loss, r.val_loss, r.val_acc, r.lr
        );
    })?;
    write_text(&args.out.join("report.csv"), &report.to_csv(cfg.report_wall_clock))?;
    println!("wrote report.csv, best.ckpt, config.resolved, split.tsv to {}", args.out.display());
    Ok(())
}

fn same_architecture(a: &ModelSpec, b: &ModelSpec) -> bool {
    ModelSpec { seed: 0, ..a.clone() } == ModelSpec { seed: 0, ..b.clone() }
}

pub fn evaluate(args: &EvalArgs, with_summary: bool) -> Result<()> {
    let run = &args.run;
    let split: Split = args.split.parse().map_err(|_| {
        Error::Config(format!("field `split`: unknown split `{}` (expected train, val or test)", args.split))
    })?;
    let ckpt_path = args.checkpoint.clone().unwrap_or_else(|| run.out.join("best.ckpt"));
    let mut model = load_checkpoint(&ckpt_path)?;
    let resolved = run.out.join("config.resolved");
    let fallback = if run.config.is_none() && resolved.exists() {
        KeyValues::read(&resolved)?
    } else {
        TrainConfig::new(model.spec.clone()).to_kv()
    };
    let cfg = TrainConfig::from_kv(&resolve_kv(run, Some(fallback))?)?;
    if !same_architecture(&cfg.spec, &model.spec) {
        return Err(Error::Decode {
            path: ckpt_path,
            message: format!(
                "checkpoint holds a {} model that does not match the configured {} architecture",
                model.spec.family, cfg.spec.family
            ),
        });
    }
    let (train, val, test) = load_splits(&run.data, &cfg)?;
    let samples = match split {
        Split::Train => train,
        Split::Val => val,
        Split::Test => test,
    };
    if samples.is_empty() {
        return Err(Error::InvalidArgument(format!("the {split} split is empty")));
    }
    let eval = evaluate_samples(&mut model, &samples, cfg.batch_size)?;
    let targets: Vec<Vec<f64>> = samples.iter().map(|s| s.labels.clone()).collect();
    let report = score(&eval.probs, &targets)?;
    create_dir(&run.out)?;
    if with_summary {
        write_eval_csv(&run.out.join("eval.csv"), &report)?;
    }
    let files = write_roc_files(&run.out, &report)?;
    let skipped: Vec<&str> = report.skipped().map(|i| xrf::data::CLASS_NAMES[i]).collect();
    if !skipped.is_empty() {
        eprintln!("skipped single-label classes: {}", skipped.join(", "));
    }
    let macro_auc = report.macro_auc.map_or_else(|| "undefined".to_string(), |a| a.to_string());
    println!(
        "{split}: {} images, accuracy {}, macro AUC {macro_auc}, {} ROC curves written to {}",
        samples.len(),
        report.accuracy,
        files.len(),
        run.out.display()
    );
    Ok(())
}

pub fn attend(checkpoint: &Path, image: &Path, alpha: f64, out: &Path) -> Result<()> {
    let mut model = load_checkpoint(checkpoint)?;
    if model.token_grid().is_none() {
        return Err(Error::UnsupportedFamily(model.family().to_string()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("field `alpha`: {alpha} outside [0, 1]")));
    }
    let pixels = load_image(image, (model.spec.height, model.spec.width))?;
    let map = extract_attention(&mut model, &pixels)?;
    let overlay = render_heatmap(&map, &pixels, alpha)?;
    create_dir(out)?;
    let stem = image.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned());
    let (png, csv) = write_outputs(out, &stem, &map, &overlay)?;
    println!("wrote {} and {}", png.display(), csv.display());
    Ok(())
}

pub fn synth(out: &Path, count: usize, size: usize, seed: u64) -> Result<()> {
    let cfg = SynthConfig {
        size,
        ..SynthConfig::default()
    };
    let samples = synthesize_with(count, seed, &cfg).map_err(|e| Error::Config(e.to_string()))?;
    write_directory(out, &samples)?;
    let test = samples
        .iter()
        .filter(|s| assign_split(&s.image_id, Default::default()) == Split::Test)
        .count();
    println!("wrote {count} images ({test} in the default test split) to {}", out.display());
    Ok(())
}

