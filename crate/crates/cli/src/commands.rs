use std::fs;
use std::path::{Path, PathBuf};

use isd_core::data::{load_dataset, load_idx, save_dataset, LabeledDataset};
use isd_core::eval::{eval_csv, evaluate_all, EmbeddingTable, Source};
use isd_core::experiments::{ablation_csv, temperature_ablation, unbalanced_csv, unbalanced_study};
use isd_core::nn::ParamSet;
use isd_core::train::{distill, metrics_csv, train, Checkpoint, EvalSets, TrainOutcome};

use crate::config::RunConfig;
use crate::error::CliError;

pub const CONFIG_ECHO: &str = "config.cfg";

/// Output directory for a run. Created on demand; existing files with the
/// same names are replaced.
pub struct OutDir(PathBuf);

impl OutDir {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(path).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
        Ok(OutDir(path.to_path_buf()))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let p = self.path(name);
        fs::write(&p, contents).map_err(|e| CliError::Output(format!("{}: {e}", p.display())))?;
        Ok(p)
    }

    pub fn echo_config(&self, config: &RunConfig) -> Result<PathBuf, CliError> {
        self.write(CONFIG_ECHO, &config.serialize())
    }
}

fn load_data(spec: &str) -> Result<LabeledDataset, CliError> {
    let loaded = match spec.strip_prefix("idx:") {
        Some(rest) => {
            let (images, labels) = rest
                .split_once(':')
                .ok_or_else(|| CliError::Config(format!("expected idx:IMAGES:LABELS, got {spec:?}")))?;
            load_idx(images, labels)
        }
        None => load_dataset(spec),
    };
    loaded.map_err(|e| match e {
        isd_core::Error::Io(io) => CliError::Data(format!("{spec}: {io}")),
        other => other.into(),
    })
}

/// Train and eval splits: files when both paths are set, otherwise the
/// configured gaussian mixture.
pub fn datasets(config: &RunConfig) -> Result<(LabeledDataset, LabeledDataset), CliError> {
    match (config.train_data.is_empty(), config.eval_data.is_empty()) {
        (true, true) => Ok(config.mixture().build()?),
        (false, false) => {
            let train_set = load_data(&config.train_data)?;
            let eval_set = load_data(&config.eval_data)?;
            if train_set.shape() != eval_set.shape() {
                return Err(CliError::Data(format!(
                    "train and eval samples differ in shape: {:?} vs {:?}",
                    train_set.shape(),
                    eval_set.shape()
                )));
            }
            Ok((train_set, eval_set))
        }
        _ => Err(CliError::Config("train_data and eval_data must be set together".into())),
    }
}

fn finish_training(out: &OutDir, outcome: &TrainOutcome) -> Result<(), CliError> {
    out.write("metrics.csv", &metrics_csv(&outcome.metrics))?;
    outcome.checkpoint.save(out.path("checkpoint.bin"))?;
    let last = outcome.metrics.iter().rev().find_map(|r| r.teacher_knn.zip(r.student_knn));
    match last {
        Some((t, s)) => println!("epoch {}: teacher k-NN {t:.4}, student k-NN {s:.4}", outcome.checkpoint.epoch),
        None => println!("trained {} epochs", outcome.checkpoint.epoch),
    }
    Ok(())
}

pub fn run_train(config: &RunConfig, out: &OutDir) -> Result<(), CliError> {
    let (train_set, eval_set) = datasets(config)?;
    let sets = EvalSets {
        memory: &train_set,
        queries: &eval_set,
    };
    let outcome = train(&config.train_config(), &train_set, Some(sets))?;
    finish_training(out, &outcome)
}

pub fn run_distill(config: &RunConfig, teacher: &Path, out: &OutDir) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(teacher)?;
    let (train_set, eval_set) = datasets(config)?;
    let sets = EvalSets {
        memory: &train_set,
        queries: &eval_set,
    };
    let outcome = distill(&config.train_config(), &ckpt, &train_set, Some(sets))?;
    finish_training(out, &outcome)
}

fn check_input(encoder: &ParamSet, ds: &LabeledDataset) -> Result<(), CliError> {
    let input = encoder.spec().widths[0];
    if input != ds.dim() {
        return Err(isd_core::Error::Checkpoint(format!(
            "checkpoint encoder takes {input} inputs but the dataset has dimension {}",
            ds.dim()
        ))
        .into());
    }
    Ok(())
}

pub fn run_eval(config: &RunConfig, checkpoint: &Path, out: &OutDir) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let (train_set, eval_set) = datasets(config)?;
    let pair = &ckpt.pair;
    let mut records = Vec::new();
    for (encoder, source) in [
        (&pair.teacher_encoder, Source::teacher(ckpt.epoch)),
        (&pair.student_encoder, Source::student(ckpt.epoch)),
    ] {
        check_input(encoder, &train_set)?;
        let memory = EmbeddingTable::from_encoder(encoder, &train_set, source)?;
        let queries = EmbeddingTable::from_encoder(encoder, &eval_set, source)?;
        records.extend(evaluate_all(&memory, &queries, &config.eval_config())?);
    }
    let csv = eval_csv(&records);
    out.write("eval.csv", &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn run_ablation(config: &RunConfig, out: &OutDir) -> Result<(), CliError> {
    let rows = temperature_ablation(&config.train_config(), &config.mixture(), &config.tau_grid)?;
    let csv = ablation_csv(&rows);
    out.write("ablation.csv", &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn run_unbalanced(config: &RunConfig, out: &OutDir) -> Result<(), CliError> {
    let rows = unbalanced_study(&config.train_config(), &config.unbalanced())?;
    let csv = unbalanced_csv(&rows);
    out.write("unbalanced.csv", &csv)?;
    print!("{csv}");
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let mean_all = rows.iter().map(|r| r.diff_all()).sum::<f64>() / n;
        let mean_rare = rows.iter().map(|r| r.diff_rare()).sum::<f64>() / n;
        eprintln!("mean ISD-MoCo diff: all {mean_all:.4}, rare {mean_rare:.4}");
    }
    Ok(())
}

pub fn run_gen_data(config: &RunConfig, out: &OutDir) -> Result<(), CliError> {
    let (train_set, eval_set) = config.mixture().build()?;
    save_dataset(&train_set, out.path("train.isdd"))?;
    save_dataset(&eval_set, out.path("eval.isdd"))?;
    println!("wrote {} train and {} eval samples", train_set.len(), eval_set.len());
    Ok(())
}
