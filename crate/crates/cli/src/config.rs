//! Flat `key = value` run configuration covering training, dataset,
//! evaluation and experiment settings.

use std::fmt::Write as _;
use std::str::FromStr;

use isd_core::augment::{AugmentPolicy, PolicyName};
use isd_core::eval::EvalConfig;
use isd_core::experiments::{experiment_config, experiment_corpus, MixtureSpec, UnbalancedSpec, REFERENCE_TEMPERATURES};
use isd_core::losses::{LossConfig, Objective};
use isd_core::train::{ScheduleKind, TrainConfig};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub objective: Objective,
    pub temperature: f64,
    pub momentum: f64,
    pub bank_capacity: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    pub schedule: ScheduleKind,
    pub encoder_hidden: Vec<usize>,
    pub predictor_hidden: usize,
    pub teacher_policy: PolicyName,
    pub student_policy: PolicyName,
    pub init_seed: u64,
    pub order_seed: u64,
    pub augment_seed: u64,
    pub distill: bool,
    pub eval_every: usize,
    pub eval_k: usize,

    /// Dataset container or `idx:IMAGES:LABELS`; empty means synthetic.
    pub train_data: String,
    pub eval_data: String,
    pub data_classes: usize,
    pub data_dim: usize,
    pub data_sep: f64,
    pub data_train_per_class: usize,
    pub data_eval_per_class: usize,
    pub data_seed: u64,

    pub recall_ks: Vec<usize>,
    pub probe_epochs: usize,
    pub probe_lr: f64,

    pub tau_grid: Vec<f64>,
    pub reps: usize,
    pub large_classes: usize,
    pub large_count: usize,
    pub small_count: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let eval = EvalConfig::default();
        let mut c = RunConfig::from_train(&TrainConfig::default());
        c.data_classes = 3;
        c.data_dim = 32;
        c.data_sep = 6.0;
        c.data_train_per_class = 200;
        c.data_eval_per_class = 200;
        c.recall_ks = eval.recall_ks;
        c.probe_epochs = eval.probe_epochs;
        c.probe_lr = eval.probe_lr;
        c
    }
}

impl RunConfig {
    fn from_train(t: &TrainConfig) -> Self {
        let u = UnbalancedSpec::default();
        RunConfig {
            objective: t.loss.objective,
            temperature: t.loss.temperature,
            momentum: t.momentum,
            bank_capacity: t.bank_capacity,
            batch_size: t.batch_size,
            epochs: t.epochs,
            lr: t.lr,
            sgd_momentum: t.sgd_momentum,
            weight_decay: t.weight_decay,
            schedule: t.schedule,
            encoder_hidden: t.encoder_hidden.clone(),
            predictor_hidden: t.predictor_hidden,
            teacher_policy: t.teacher_policy.name,
            student_policy: t.student_policy.name,
            init_seed: t.init_seed,
            order_seed: t.order_seed,
            augment_seed: t.augment_seed,
            distill: t.distill,
            eval_every: t.eval_every,
            eval_k: t.eval_k,
            train_data: String::new(),
            eval_data: String::new(),
            data_classes: 0,
            data_dim: 0,
            data_sep: 0.0,
            data_train_per_class: 0,
            data_eval_per_class: 0,
            data_seed: 0,
            recall_ks: vec![1, 2, 4, 8],
            probe_epochs: 200,
            probe_lr: 1.0,
            tau_grid: REFERENCE_TEMPERATURES.to_vec(),
            reps: u.reps,
            large_classes: u.large_classes,
            large_count: u.large_count,
            small_count: u.small_count,
        }
    }

    /// Defaults for the experiment drivers: a smaller network on the
    /// harder corpus.
    pub fn experiment_defaults() -> Self {
        let corpus = experiment_corpus(0);
        let u = UnbalancedSpec::default();
        let mut c = RunConfig::from_train(&experiment_config(0));
        c.data_classes = corpus.classes;
        c.data_dim = corpus.dim;
        c.data_sep = corpus.sep;
        c.data_train_per_class = corpus.train_per_class;
        c.data_eval_per_class = corpus.eval_per_class;
        c.large_count = u.large_count;
        c
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.init_seed = seed;
        self.order_seed = seed;
        self.augment_seed = seed;
        self.data_seed = seed;
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            loss: LossConfig {
                objective: self.objective,
                temperature: self.temperature,
            },
            momentum: self.momentum,
            bank_capacity: self.bank_capacity,
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr: self.lr,
            sgd_momentum: self.sgd_momentum,
            weight_decay: self.weight_decay,
            schedule: self.schedule,
            encoder_hidden: self.encoder_hidden.clone(),
            predictor_hidden: self.predictor_hidden,
            teacher_policy: AugmentPolicy::named(self.teacher_policy),
            student_policy: AugmentPolicy::named(self.student_policy),
            init_seed: self.init_seed,
            order_seed: self.order_seed,
            augment_seed: self.augment_seed,
            distill: self.distill,
            eval_every: self.eval_every,
            eval_k: self.eval_k,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            knn_k: self.eval_k,
            recall_ks: self.recall_ks.clone(),
            probe_epochs: self.probe_epochs,
            probe_lr: self.probe_lr,
        }
    }

    pub fn mixture(&self) -> MixtureSpec {
        MixtureSpec {
            classes: self.data_classes,
            dim: self.data_dim,
            sep: self.data_sep,
            train_per_class: self.data_train_per_class,
            eval_per_class: self.data_eval_per_class,
            seed: self.data_seed,
        }
    }

    pub fn unbalanced(&self) -> UnbalancedSpec {
        UnbalancedSpec {
            classes: self.data_classes,
            large_classes: self.large_classes,
            large_count: self.large_count,
            small_count: self.small_count,
            eval_per_class: self.data_eval_per_class,
            dim: self.data_dim,
            sep: self.data_sep,
            reps: self.reps,
            seed: self.data_seed,
        }
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key));
        }
        out
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        let mut seen = std::collections::HashSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value, got {line:?}", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key) {
                return Err(CliError::Config(format!("line {}: duplicate key {key:?}", n + 1)));
            }
            self.set(key, value.trim())
                .map_err(|e| CliError::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    #[cfg(test)]
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    fn get(&self, key: &str) -> String {
        match key {
            "objective" => self.objective.to_string(),
            "temperature" => self.temperature.to_string(),
            "momentum" => self.momentum.to_string(),
            "bank_capacity" => self.bank_capacity.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "lr" => self.lr.to_string(),
            "sgd_momentum" => self.sgd_momentum.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "schedule" => self.schedule.to_string(),
            "encoder_hidden" => join(&self.encoder_hidden),
            "predictor_hidden" => self.predictor_hidden.to_string(),
            "teacher_policy" => self.teacher_policy.to_string(),
            "student_policy" => self.student_policy.to_string(),
            "init_seed" => self.init_seed.to_string(),
            "order_seed" => self.order_seed.to_string(),
            "augment_seed" => self.augment_seed.to_string(),
            "distill" => self.distill.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "eval_k" => self.eval_k.to_string(),
            "train_data" => self.train_data.clone(),
            "eval_data" => self.eval_data.clone(),
            "data_classes" => self.data_classes.to_string(),
            "data_dim" => self.data_dim.to_string(),
            "data_sep" => self.data_sep.to_string(),
            "data_train_per_class" => self.data_train_per_class.to_string(),
            "data_eval_per_class" => self.data_eval_per_class.to_string(),
            "data_seed" => self.data_seed.to_string(),
            "recall_ks" => join(&self.recall_ks),
            "probe_epochs" => self.probe_epochs.to_string(),
            "probe_lr" => self.probe_lr.to_string(),
            "tau_grid" => join(&self.tau_grid),
            "reps" => self.reps.to_string(),
            "large_classes" => self.large_classes.to_string(),
            "large_count" => self.large_count.to_string(),
            "small_count" => self.small_count.to_string(),
            _ => unreachable!("KEYS lists only known keys"),
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "objective" => self.objective = parse(value)?,
            "temperature" => self.temperature = parse(value)?,
            "momentum" => self.momentum = parse(value)?,
            "bank_capacity" => self.bank_capacity = parse(value)?,
            "batch_size" => self.batch_size = parse(value)?,
            "epochs" => self.epochs = parse(value)?,
            "lr" => self.lr = parse(value)?,
            "sgd_momentum" => self.sgd_momentum = parse(value)?,
            "weight_decay" => self.weight_decay = parse(value)?,
            "schedule" => self.schedule = parse(value)?,
            "encoder_hidden" => self.encoder_hidden = parse_list(value)?,
            "predictor_hidden" => self.predictor_hidden = parse(value)?,
            "teacher_policy" => self.teacher_policy = parse(value)?,
            "student_policy" => self.student_policy = parse(value)?,
            "init_seed" => self.init_seed = parse(value)?,
            "order_seed" => self.order_seed = parse(value)?,
            "augment_seed" => self.augment_seed = parse(value)?,
            "distill" => self.distill = parse(value)?,
            "eval_every" => self.eval_every = parse(value)?,
            "eval_k" => self.eval_k = parse(value)?,
            "train_data" => self.train_data = value.to_string(),
            "eval_data" => self.eval_data = value.to_string(),
            "data_classes" => self.data_classes = parse(value)?,
            "data_dim" => self.data_dim = parse(value)?,
            "data_sep" => self.data_sep = parse(value)?,
            "data_train_per_class" => self.data_train_per_class = parse(value)?,
            "data_eval_per_class" => self.data_eval_per_class = parse(value)?,
            "data_seed" => self.data_seed = parse(value)?,
            "recall_ks" => self.recall_ks = parse_list(value)?,
            "probe_epochs" => self.probe_epochs = parse(value)?,
            "probe_lr" => self.probe_lr = parse(value)?,
            "tau_grid" => self.tau_grid = parse_list(value)?,
            "reps" => self.reps = parse(value)?,
            "large_classes" => self.large_classes = parse(value)?,
            "large_count" => self.large_count = parse(value)?,
            "small_count" => self.small_count = parse(value)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }
}

pub const KEYS: [&str; 36] = [
    "objective",
    "temperature",
    "momentum",
    "bank_capacity",
    "batch_size",
    "epochs",
    "lr",
    "sgd_momentum",
    "weight_decay",
    "schedule",
    "encoder_hidden",
    "predictor_hidden",
    "teacher_policy",
    "student_policy",
    "init_seed",
    "order_seed",
    "augment_seed",
    "distill",
    "eval_every",
    "eval_k",
    "train_data",
    "eval_data",
    "data_classes",
    "data_dim",
    "data_sep",
    "data_train_per_class",
    "data_eval_per_class",
    "data_seed",
    "recall_ks",
    "probe_epochs",
    "probe_lr",
    "tau_grid",
    "reps",
    "large_classes",
    "large_count",
    "small_count",
];

fn parse<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| format!("cannot parse {value:?}: {e}"))
}

fn parse_list<T: FromStr>(value: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(v.trim())).collect()
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}
