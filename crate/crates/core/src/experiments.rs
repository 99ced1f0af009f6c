//! Desk-scale experiment drivers: the temperature sweep and the
//! unbalanced-data comparison of ISD against MoCo.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::{make_unbalanced, GaussianMixture, LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::eval::{knn_predict_all, EmbeddingTable, Source};
use crate::losses::Objective;
use crate::nn::ParamSet;
use crate::train::{train, TrainConfig};

/// Temperature grid of the ablation, with its reference k-NN accuracies.
pub const REFERENCE_TEMPERATURES: [f64; 6] = [0.003, 0.007, 0.01, 0.02, 0.04, 0.06];
pub const REFERENCE_TEMPERATURE_NN: [f64; 6] = [37.2, 37.8, 37.7, 39.7, 35.3, 32.5];

/// Temperature for the MoCo baseline (the usual MoCo-v2 setting).
pub const MOCO_TEMPERATURE: f64 = 0.2;

/// A gaussian-mixture corpus with balanced train and eval splits.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub classes: usize,
    pub dim: usize,
    pub sep: f64,
    pub train_per_class: usize,
    pub eval_per_class: usize,
    pub seed: u64,
}

impl MixtureSpec {
    pub fn build(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        let g = GaussianMixture::new(self.classes, self.dim, self.sep, self.seed)?;
        Ok((g.sample(self.train_per_class, Split::Train)?, g.sample(self.eval_per_class, Split::Eval)?))
    }
}

/// Harder corpus used by the experiment drivers so that accuracy is far
/// from saturated.
pub fn experiment_corpus(seed: u64) -> MixtureSpec {
    MixtureSpec {
        classes: 8,
        dim: 16,
        sep: 2.5,
        train_per_class: 150,
        eval_per_class: 100,
        seed,
    }
}

/// Compact network and schedule shared by the experiment drivers.
pub fn experiment_config(seed: u64) -> TrainConfig {
    let mut c = TrainConfig::default().with_seed(seed);
    c.encoder_hidden = vec![64, 32];
    c.predictor_hidden = 32;
    c.batch_size = 64;
    c.bank_capacity = 512;
    c.epochs = 30;
    c.lr = 0.05;
    c.eval_every = 0;
    c
}

fn knn_with(encoder: &ParamSet, memory: &LabeledDataset, queries: &LabeledDataset, k: usize) -> Result<Vec<usize>> {
    let m = EmbeddingTable::from_encoder(encoder, memory, Source::raw())?;
    let q = EmbeddingTable::from_encoder(encoder, queries, Source::raw())?;
    knn_predict_all(&m, &q, k)
}

fn accuracy(preds: &[usize], labels: &[usize], keep: impl Fn(usize) -> bool) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for (&p, &l) in preds.iter().zip(labels) {
        if keep(l) {
            total += 1;
            hit += usize::from(p == l);
        }
    }
    if total == 0 {
        return f64::NAN;
    }
    hit as f64 / total as f64
}

/// k-NN accuracy of `encoder` with `memory` as the labeled neighbor pool.
pub fn encoder_knn(encoder: &ParamSet, memory: &LabeledDataset, queries: &LabeledDataset, k: usize) -> Result<f64> {
    let preds = knn_with(encoder, memory, queries, k)?;
    Ok(accuracy(&preds, queries.labels(), |_| true))
}

/// k-NN accuracy of the untrained student encoder the run would start from.
pub fn random_init_knn(config: &TrainConfig, memory: &LabeledDataset, queries: &LabeledDataset) -> Result<f64> {
    let mut c = config.clone();
    c.epochs = 0;
    let init = train(&c, memory, None)?;
    encoder_knn(&init.checkpoint.pair.student_encoder, memory, queries, config.eval_k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub tau: f64,
    pub student_knn: f64,
    pub teacher_knn: f64,
}

/// Trains one ISD model per temperature on the same corpus and seeds.
pub fn temperature_ablation(base: &TrainConfig, corpus: &MixtureSpec, grid: &[f64]) -> Result<Vec<AblationRow>> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("temperature grid is empty".into()));
    }
    let (train_set, eval_set) = corpus.build()?;
    grid.par_iter()
        .map(|&tau| {
            let mut c = base.clone();
            c.loss.objective = Objective::Isd;
            c.loss.temperature = tau;
            let out = train(&c, &train_set, None)?;
            let pair = &out.checkpoint.pair;
            Ok(AblationRow {
                tau,
                student_knn: encoder_knn(&pair.student_encoder, &train_set, &eval_set, c.eval_k)?,
                teacher_knn: encoder_knn(&pair.teacher_encoder, &train_set, &eval_set, c.eval_k)?,
            })
        })
        .collect()
}

pub const ABLATION_CSV_HEADER: &str = "tau,student_knn,teacher_knn";

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("{ABLATION_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.tau, r.student_knn, r.teacher_knn);
    }
    out
}

/// The large/rare protocol: a balanced mixture is subsampled for
/// self-supervised training only; k-NN memory and queries stay balanced.
#[derive(Debug, Clone, PartialEq)]
pub struct UnbalancedSpec {
    pub classes: usize,
    pub large_classes: usize,
    pub large_count: usize,
    pub small_count: usize,
    pub eval_per_class: usize,
    pub dim: usize,
    pub sep: f64,
    pub reps: usize,
    pub seed: u64,
}

impl Default for UnbalancedSpec {
    fn default() -> Self {
        UnbalancedSpec {
            classes: 8,
            large_classes: 2,
            large_count: 500,
            small_count: 50,
            eval_per_class: 100,
            dim: 16,
            sep: 2.5,
            reps: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnbalancedRow {
    pub isd_all: f64,
    pub moco_all: f64,
    pub isd_rare: f64,
    pub moco_rare: f64,
}

impl UnbalancedRow {
    pub fn diff_all(&self) -> f64 {
        self.isd_all - self.moco_all
    }

    pub fn diff_rare(&self) -> f64 {
        self.isd_rare - self.moco_rare
    }
}

/// One repetition: fresh mixture and subsample from `seed`, then ISD and
/// MoCo trained with identical budgets.
pub fn unbalanced_repetition(base: &TrainConfig, spec: &UnbalancedSpec, seed: u64) -> Result<UnbalancedRow> {
    if spec.large_classes >= spec.classes {
        return Err(Error::InvalidArgument("at least one class must be rare".into()));
    }
    let g = GaussianMixture::new(spec.classes, spec.dim, spec.sep, seed)?;
    let memory = g.sample(spec.large_count, Split::Train)?;
    let queries = g.sample(spec.eval_per_class, Split::Eval)?;
    let large: Vec<usize> = (0..spec.large_classes).collect();
    let unbalanced = make_unbalanced(&memory, &large, spec.small_count, seed)?;
    let rare = |l: usize| l >= spec.large_classes;

    let run = |objective: Objective, tau: f64| -> Result<(f64, f64)> {
        let mut c = base.clone().with_seed(seed);
        c.loss.objective = objective;
        c.loss.temperature = tau;
        let out = train(&c, &unbalanced, None)?;
        let preds = knn_with(&out.checkpoint.pair.student_encoder, &memory, &queries, c.eval_k)?;
        Ok((accuracy(&preds, queries.labels(), |_| true), accuracy(&preds, queries.labels(), rare)))
    };
    let ((isd_all, isd_rare), (moco_all, moco_rare)) = (run(Objective::Isd, base.loss.temperature)?, run(Objective::Moco, MOCO_TEMPERATURE)?);
    Ok(UnbalancedRow {
        isd_all,
        moco_all,
        isd_rare,
        moco_rare,
    })
}

/// All repetitions; repetition `r` uses seed `spec.seed + r`.
pub fn unbalanced_study(base: &TrainConfig, spec: &UnbalancedSpec) -> Result<Vec<UnbalancedRow>> {
    (0..spec.reps as u64)
        .into_par_iter()
        .map(|r| unbalanced_repetition(base, spec, spec.seed + r))
        .collect()
}

pub const UNBALANCED_CSV_HEADER: &str = "isd_all,moco_all,isd_rare,moco_rare,diff_all,diff_rare";

pub fn unbalanced_csv(rows: &[UnbalancedRow]) -> String {
    let mut out = format!("{UNBALANCED_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.isd_all,
            r.moco_all,
            r.isd_rare,
            r.moco_rare,
            r.diff_all(),
            r.diff_rare()
        );
    }
    out
}
