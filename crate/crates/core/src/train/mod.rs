//! The training loop: two augmented views per query, teacher and student
//! forward passes, the configured objective over the anchor bank, one SGD
//! step on the student, one EMA step on the teacher, then the enqueue of
//! the teacher embeddings. Also the frozen-teacher distillation mode.

mod checkpoint;
mod metrics;

pub use checkpoint::Checkpoint;
pub use metrics::{metrics_csv, MetricRow, StepMetrics, METRICS_CSV_HEADER};

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::augment::{augment, AugmentPolicy, SampleShape};
use crate::bank::AnchorBank;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::eval::{knn_eval, EmbeddingTable, Source, DEFAULT_K};
use crate::losses::{objective_loss, teacher_entropy, LossConfig, Objective};
use crate::nn::{mlp_forward, sgd_step, LrSchedule, MlpSpec, ModelPair, SgdConfig, SgdState};
use crate::rng::{self, RngState, Stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Constant,
    /// ×0.2 at 70% and 90% of the epochs.
    Step,
    Cosine,
}

impl ScheduleKind {
    pub fn resolve(self, epochs: usize) -> LrSchedule {
        match self {
            ScheduleKind::Constant => LrSchedule::Constant,
            ScheduleKind::Step => LrSchedule::proportional_steps(epochs),
            ScheduleKind::Cosine => LrSchedule::Cosine { total_epochs: epochs },
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::Constant => "constant",
            ScheduleKind::Step => "step",
            ScheduleKind::Cosine => "cosine",
        })
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(ScheduleKind::Constant),
            "step" => Ok(ScheduleKind::Step),
            "cosine" => Ok(ScheduleKind::Cosine),
            other => Err(Error::Config(format!("unknown lr schedule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossConfig,
    /// Teacher EMA coefficient.
    pub momentum: f64,
    pub bank_capacity: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    pub schedule: ScheduleKind,
    /// Encoder widths after the input layer; the last is the embedding size.
    pub encoder_hidden: Vec<usize>,
    pub predictor_hidden: usize,
    pub teacher_policy: AugmentPolicy,
    pub student_policy: AugmentPolicy,
    pub init_seed: u64,
    pub order_seed: u64,
    pub augment_seed: u64,
    /// Teacher loaded from a checkpoint and frozen.
    pub distill: bool,
    /// Evaluate teacher and student k-NN every this many epochs; 0 disables.
    pub eval_every: usize,
    pub eval_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossConfig::default(),
            momentum: 0.999,
            bank_capacity: 1024,
            batch_size: 64,
            epochs: 200,
            lr: 0.01,
            sgd_momentum: 0.9,
            weight_decay: 1e-4,
            schedule: ScheduleKind::Step,
            encoder_hidden: vec![256, 128, 64],
            predictor_hidden: 64,
            teacher_policy: AugmentPolicy::aggressive(),
            student_policy: AugmentPolicy::aggressive(),
            init_seed: 0,
            order_seed: 0,
            augment_seed: 0,
            distill: false,
            eval_every: 10,
            eval_k: DEFAULT_K,
        }
    }
}

impl TrainConfig {
    /// Defaults for one objective; BYOL uses a faster-moving teacher.
    pub fn for_objective(objective: Objective) -> Self {
        let mut c = TrainConfig::default();
        c.loss.objective = objective;
        if objective == Objective::Byol {
            c.momentum = 0.99;
        }
        c
    }

    /// Sets all three seeds.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self.order_seed = seed;
        self.augment_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1]", self.momentum)));
        }
        if self.distill && self.momentum != 1.0 {
            return Err(Error::Config(format!(
                "distillation freezes the teacher; momentum must be 1, got {}",
                self.momentum
            )));
        }
        LossConfig::new(self.loss.objective, self.loss.temperature).map_err(|e| Error::Config(e.to_string()))?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.loss.objective.uses_bank() && self.bank_capacity < 2 {
            return Err(Error::Config(format!("bank capacity must be >= 2, got {}", self.bank_capacity)));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() || !(0.0..1.0).contains(&self.sgd_momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("invalid optimizer settings".into()));
        }
        if self.encoder_hidden.is_empty() || self.encoder_hidden.iter().any(|&w| w == 0) || self.predictor_hidden == 0 {
            return Err(Error::Config(format!("invalid encoder widths {:?}", self.encoder_hidden)));
        }
        if self.eval_k == 0 {
            return Err(Error::Config("eval k must be positive".into()));
        }
        self.teacher_policy.validate()?;
        self.student_policy.validate()
    }

    pub fn encoder_spec(&self, input_dim: usize) -> Result<MlpSpec> {
        let mut widths = vec![input_dim];
        widths.extend(&self.encoder_hidden);
        MlpSpec::new(widths, true)
    }

    pub fn predictor_spec(&self) -> Result<MlpSpec> {
        let e = *self.encoder_hidden.last().unwrap_or(&0);
        MlpSpec::new(vec![e, self.predictor_hidden, e], false)
    }

    pub fn sgd_config(&self) -> SgdConfig {
        SgdConfig {
            lr: self.lr,
            momentum: self.sgd_momentum,
            weight_decay: self.weight_decay,
            schedule: self.schedule.resolve(self.epochs),
        }
    }
}

/// Memory set and query set for periodic k-NN evaluation.
#[derive(Debug, Clone, Copy)]
pub struct EvalSets<'a> {
    pub memory: &'a LabeledDataset,
    pub queries: &'a LabeledDataset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricRow>,
}

/// Owns the model pair, optimizer, bank and generators of one run.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    pair: ModelPair,
    sgd: SgdState,
    bank: Option<AnchorBank>,
    order_rng: ChaCha8Rng,
    augment_rng: ChaCha8Rng,
    epoch: usize,
    step: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, input_dim: usize) -> Result<Self> {
        config.validate()?;
        let pair = ModelPair::new(
            &config.encoder_spec(input_dim)?,
            &config.predictor_spec()?,
            config.init_seed,
            config.momentum,
        )?;
        Self::with_pair(config, pair)
    }

    /// Starts from an explicit model pair (its momentum is replaced by the
    /// configured one).
    pub fn with_pair(config: TrainConfig, mut pair: ModelPair) -> Result<Self> {
        config.validate()?;
        pair.set_momentum(config.momentum)?;
        let sgd = SgdState::new(config.sgd_config(), &[&pair.student_encoder, &pair.student_predictor])?;
        let bank = if config.loss.objective.uses_bank() {
            Some(AnchorBank::new(config.bank_capacity, pair.teacher_encoder.spec().output_dim())?)
        } else {
            None
        };
        Ok(Trainer {
            order_rng: rng::stream(config.order_seed, Stream::DataOrder),
            augment_rng: rng::stream(config.augment_seed, Stream::Augment),
            config,
            pair,
            sgd,
            bank,
            epoch: 0,
            step: 0,
        })
    }

    /// Resumes from a checkpoint written under the same configuration.
    pub fn from_checkpoint(config: TrainConfig, ckpt: &Checkpoint) -> Result<Self> {
        config.validate()?;
        let input = ckpt.pair.student_encoder.spec().input_dim();
        if ckpt.pair.student_encoder.spec() != &config.encoder_spec(input)? || ckpt.pair.student_predictor.spec() != &config.predictor_spec()? {
            return Err(Error::Checkpoint("checkpoint architecture does not match the configuration".into()));
        }
        if ckpt.bank.is_some() != config.loss.objective.uses_bank() {
            return Err(Error::Checkpoint("checkpoint bank does not match the objective".into()));
        }
        let mut pair = ckpt.pair.clone();
        pair.set_momentum(config.momentum)?;
        let sgd = SgdState::from_parts(config.sgd_config(), ckpt.lr, ckpt.velocity.clone());
        Ok(Trainer {
            order_rng: ckpt.order_rng.restore(),
            augment_rng: ckpt.augment_rng.restore(),
            config,
            pair,
            sgd,
            bank: ckpt.bank.clone(),
            epoch: ckpt.epoch,
            step: ckpt.step,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            pair: self.pair.clone(),
            lr: self.sgd.lr(),
            velocity: self.sgd.velocity().to_vec(),
            bank: self.bank.clone(),
            order_rng: RngState::capture(&self.order_rng),
            augment_rng: RngState::capture(&self.augment_rng),
            epoch: self.epoch,
            step: self.step,
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn pair(&self) -> &ModelPair {
        &self.pair
    }

    pub fn bank(&self) -> Option<&AnchorBank> {
        self.bank.as_ref()
    }

    pub fn sgd(&self) -> &SgdState {
        &self.sgd
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn step(&self) -> usize {
        self.step
    }

    fn views(&mut self, ds: &LabeledDataset, indices: &[usize], policy: &AugmentPolicy) -> Result<Tensor> {
        let shape = ds.shape();
        let mut out = Vec::with_capacity(indices.len() * ds.dim());
        for &i in indices {
            out.extend(augment(ds.sample(i), shape, policy, &mut self.augment_rng));
        }
        Tensor::matrix(indices.len(), ds.dim(), out)
    }

    fn two_views(&mut self, ds: &LabeledDataset, indices: &[usize]) -> Result<(Tensor, Tensor)> {
        let shape: SampleShape = ds.shape();
        let d = ds.dim();
        let (tp, sp) = (self.config.teacher_policy, self.config.student_policy);
        let mut xt = Vec::with_capacity(indices.len() * d);
        let mut xs = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            xt.extend(augment(ds.sample(i), shape, &tp, &mut self.augment_rng));
            xs.extend(augment(ds.sample(i), shape, &sp, &mut self.augment_rng));
        }
        Ok((Tensor::matrix(indices.len(), d, xt)?, Tensor::matrix(indices.len(), d, xs)?))
    }

    /// Fills the bank with teacher embeddings of the first
    /// `⌈capacity / batch_size⌉` batches of a seeded pass over `ds`.
    pub fn prefill(&mut self, ds: &LabeledDataset) -> Result<()> {
        let Some(capacity) = self.bank.as_ref().map(AnchorBank::capacity) else {
            return Ok(());
        };
        if ds.is_empty() {
            return Err(Error::InvalidArgument("cannot pre-fill the bank from an empty dataset".into()));
        }
        let b = self.config.batch_size;
        let batches = capacity.div_ceil(b);
        let mut order: Vec<usize> = Vec::new();
        while order.len() < batches * b {
            let mut pass: Vec<usize> = (0..ds.len()).collect();
            pass.shuffle(&mut self.order_rng);
            order.extend(pass);
        }
        let policy = self.config.teacher_policy;
        for chunk in order[..batches * b].chunks(b) {
            let x = self.views(ds, chunk, &policy)?;
            let t = self.pair.teacher_encoder.forward_detached(&x)?;
            self.bank.as_mut().expect("bank present").enqueue(&t)?;
        }
        Ok(())
    }

    /// One optimizer step on the samples `indices` of `ds`.
    pub fn train_step(&mut self, ds: &LabeledDataset, indices: &[usize]) -> Result<StepMetrics> {
        let started = Instant::now();
        if indices.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let cfg = self.config.loss;
        let (anchors, inserted_at_snapshot) = match &self.bank {
            Some(bank) if bank.len() < 2 => return Err(Error::ColdStart { count: bank.len() }),
            Some(bank) => (Some(bank.snapshot()?), bank.total_inserted()),
            None => (None, 0),
        };

        let (xt, xs) = self.two_views(ds, indices)?;
        let t = self.pair.teacher_encoder.forward_detached(&xt)?;
        let enc = self.pair.student_encoder.bind()?;
        let pred = self.pair.student_predictor.bind()?;
        let z = mlp_forward(self.pair.student_encoder.spec(), &enc, &xs)?;
        let p = mlp_forward(self.pair.student_predictor.spec(), &pred, &z)?;

        let loss = objective_loss(&cfg, &t, &p, anchors.as_ref())?;
        let loss_value = loss.item()?;
        if !loss_value.is_finite() {
            return Err(Error::NumericDomain {
                op: "train_step",
                detail: format!("loss is {loss_value}"),
            });
        }
        let entropy = match &anchors {
            Some(a) => {
                let h = teacher_entropy(&t, a, cfg.temperature)?;
                h.iter().sum::<f64>() / h.len() as f64
            }
            None => 0.0,
        };
        loss.backward()?;
        let grads: Vec<Vec<f64>> = enc.iter().chain(&pred).map(Tensor::grad).collect();

        let lr = self.sgd.lr();
        sgd_step(
            &mut [&mut self.pair.student_encoder, &mut self.pair.student_predictor],
            &grads,
            &mut self.sgd,
        )?;
        self.pair.ema_update();

        if let Some(bank) = self.bank.as_mut() {
            // The snapshot above must not contain this batch's teacher views.
            if bank.total_inserted() != inserted_at_snapshot {
                return Err(Error::Contract("bank changed between snapshot and loss".into()));
            }
            bank.enqueue(&t)?;
        }

        let metrics = StepMetrics {
            epoch: self.epoch,
            step: self.step,
            loss: loss_value,
            teacher_entropy: entropy,
            lr,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        self.step += 1;
        Ok(metrics)
    }

    /// One seeded pass over `ds`; pre-fills the bank first if it is empty.
    pub fn run_epoch(&mut self, ds: &LabeledDataset) -> Result<Vec<StepMetrics>> {
        if ds.is_empty() {
            return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
        }
        if self.bank.as_ref().is_some_and(AnchorBank::is_empty) {
            self.prefill(ds)?;
        }
        self.sgd.set_epoch(self.epoch);
        let mut order: Vec<usize> = (0..ds.len()).collect();
        order.shuffle(&mut self.order_rng);
        let mut out = Vec::with_capacity(order.len().div_ceil(self.config.batch_size));
        for chunk in order.chunks(self.config.batch_size) {
            out.push(self.train_step(ds, chunk)?);
        }
        self.epoch += 1;
        Ok(out)
    }

    /// k-NN accuracy of the teacher and of the student encoder.
    pub fn evaluate(&self, sets: EvalSets<'_>) -> Result<(f64, f64)> {
        let k = self.config.eval_k;
        let t_mem = EmbeddingTable::from_encoder(&self.pair.teacher_encoder, sets.memory, Source::teacher(self.epoch))?;
        let t_q = EmbeddingTable::from_encoder(&self.pair.teacher_encoder, sets.queries, Source::teacher(self.epoch))?;
        let s_mem = EmbeddingTable::from_encoder(&self.pair.student_encoder, sets.memory, Source::student(self.epoch))?;
        let s_q = EmbeddingTable::from_encoder(&self.pair.student_encoder, sets.queries, Source::student(self.epoch))?;
        Ok((knn_eval(&t_mem, &t_q, k)?, knn_eval(&s_mem, &s_q, k)?))
    }

    /// Runs the remaining configured epochs.
    pub fn run(&mut self, ds: &LabeledDataset, eval: Option<EvalSets<'_>>) -> Result<Vec<MetricRow>> {
        let mut rows = Vec::new();
        while self.epoch < self.config.epochs {
            let steps = self.run_epoch(ds)?;
            let due = self.config.eval_every > 0 && (self.epoch % self.config.eval_every == 0 || self.epoch == self.config.epochs);
            let knn = match eval {
                Some(sets) if due => Some(self.evaluate(sets)?),
                _ => None,
            };
            let last = steps.len() - 1;
            rows.extend(steps.into_iter().enumerate().map(|(i, step)| {
                let at = if i == last { knn } else { None };
                MetricRow {
                    step,
                    teacher_knn: at.map(|k| k.0),
                    student_knn: at.map(|k| k.1),
                }
            }));
        }
        Ok(rows)
    }
}

/// Trains from a fresh initialization for `config.epochs` epochs.
pub fn train(config: &TrainConfig, ds: &LabeledDataset, eval: Option<EvalSets<'_>>) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config.clone(), ds.dim())?;
    let metrics = trainer.run(ds, eval)?;
    Ok(TrainOutcome {
        checkpoint: trainer.checkpoint(),
        metrics,
    })
}

/// Distills a frozen teacher into a freshly initialized student.
///
/// The teacher is the teacher encoder of `teacher`; momentum is forced to
/// 1 and both views use the mild augmentation policy.
pub fn distill(config: &TrainConfig, teacher: &Checkpoint, ds: &LabeledDataset, eval: Option<EvalSets<'_>>) -> Result<TrainOutcome> {
    let mut config = config.clone();
    config.distill = true;
    config.momentum = 1.0;
    config.teacher_policy = AugmentPolicy::mild();
    config.student_policy = AugmentPolicy::mild();
    config.validate()?;
    let loaded = &teacher.pair.teacher_encoder;
    if loaded.spec() != &config.encoder_spec(ds.dim())? {
        return Err(Error::Checkpoint(format!(
            "teacher architecture {:?} does not match the configured encoder {:?}",
            loaded.spec().widths,
            config.encoder_spec(ds.dim())?.widths
        )));
    }
    let fresh = ModelPair::new(loaded.spec(), &config.predictor_spec()?, config.init_seed, 1.0)?;
    let pair = ModelPair::from_parts(fresh.student_encoder, fresh.student_predictor, loaded.clone(), 1.0)?;
    let mut trainer = Trainer::with_pair(config, pair)?;
    let metrics = trainer.run(ds, eval)?;
    Ok(TrainOutcome {
        checkpoint: trainer.checkpoint(),
        metrics,
    })
}

#[cfg(test)]
mod tests;
