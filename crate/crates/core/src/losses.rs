//! ISD, MoCo and BYOL objectives.
//!
//! Every loss accepts either single embeddings (`[d]`) or batches
//! (`[b × d]`) and returns the mean over rows. Similarities are cosine:
//! queries and anchors are L2-normalized inside the loss, so all three
//! objectives are invariant to positive rescaling of their inputs.
//!
//! Teacher-side inputs (teacher query embedding, positive key, anchors) are
//! detached on entry. Gradient only ever reaches the student query.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::NORM_EPS;
use crate::tensor::Tensor;

pub const DEFAULT_TEMPERATURE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Objective {
    Isd,
    Moco,
    Byol,
}

impl Objective {
    pub fn uses_bank(self) -> bool {
        matches!(self, Objective::Isd | Objective::Moco)
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Isd => "isd",
            Objective::Moco => "moco",
            Objective::Byol => "byol",
        })
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "isd" => Ok(Objective::Isd),
            "moco" => Ok(Objective::Moco),
            "byol" => Ok(Objective::Byol),
            other => Err(Error::Config(format!("unknown objective {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub objective: Objective,
    /// Ignored by BYOL.
    pub temperature: f64,
}

impl LossConfig {
    pub fn new(objective: Objective, temperature: f64) -> Result<Self> {
        if objective != Objective::Byol {
            check_temperature(temperature)?;
        }
        Ok(LossConfig {
            objective,
            temperature,
        })
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            objective: Objective::Isd,
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

fn check_temperature(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Temperature(tau));
    }
    Ok(())
}

/// `[d]` becomes `[1 × d]`; matrices pass through.
fn as_rows(t: &Tensor) -> Result<Tensor> {
    match t.shape() {
        [d] => t.reshape(&[1, *d]),
        [_, _] => Ok(t.clone()),
        other => Err(Error::Contract(format!("expected embedding vector or batch, got {other:?}"))),
    }
}

fn anchor_matrix(anchors: &Tensor, dim: usize, min_rows: usize) -> Result<Tensor> {
    let n = match anchors.shape() {
        [n, d] if *d == dim => *n,
        other => return Err(Error::dim("anchors", other, &[dim])),
    };
    if n < min_rows {
        return Err(Error::DegenerateDistribution { n });
    }
    // Constant: anchors never receive gradient.
    anchors.detach().l2_normalize_rows(NORM_EPS)?.transpose()
}

fn row_dim(t: &Tensor) -> usize {
    *t.shape().last().unwrap_or(&0)
}

/// Cosine similarity of each query row to each anchor, divided by `tau`:
/// `[b × d] , [n × d] → [b × n]`.
fn similarity_logits(queries: &Tensor, anchors: &Tensor, tau: f64, min_anchors: usize) -> Result<Tensor> {
    check_temperature(tau)?;
    let q = as_rows(queries)?;
    let at = anchor_matrix(anchors, row_dim(&q), min_anchors)?;
    Ok(q.l2_normalize_rows(NORM_EPS)?.matmul(&at)?.scale(1.0 / tau))
}

/// Softmax over anchors of `cos(query, anchor_i) / tau`. Returns `[n]` for
/// a vector query and `[b × n]` for a batch.
pub fn anchor_distribution(query: &Tensor, anchors: &Tensor, tau: f64) -> Result<Tensor> {
    let p = similarity_logits(query, anchors, tau, 2)?.softmax_rows()?;
    match query.shape() {
        [_] => p.reshape(&[p.len()]),
        _ => Ok(p),
    }
}

/// Cross-entropy `−Σᵢ targetᵢ · log p_s(i)` with `p_s` the anchor
/// distribution of `student`. `targets` is a constant `[b × n]` (or `[n]`)
/// matrix of row distributions.
pub fn soft_target_cross_entropy(targets: &Tensor, student: &Tensor, anchors: &Tensor, tau: f64) -> Result<Tensor> {
    let log_ps = similarity_logits(student, anchors, tau, 2)?.log_softmax_rows()?;
    let targets = as_rows(&targets.detach())?;
    if targets.shape() != log_ps.shape() {
        return Err(Error::dim("soft_target_cross_entropy", targets.shape(), log_ps.shape()));
    }
    Ok(targets.mul(&log_ps)?.sum_rows()?.mean().scale(-1.0))
}

fn check_pair(teacher: &Tensor, student: &Tensor, op: &'static str) -> Result<()> {
    if teacher.shape() != student.shape() {
        return Err(Error::dim(op, teacher.shape(), student.shape()));
    }
    Ok(())
}

/// ISD objective `H(p_t, p_s) = −Σᵢ p_t(i) log p_s(i)`.
///
/// `p_t` is the anchor distribution of the teacher embedding of one view
/// and `p_s` that of the student prediction for the other view. The
/// teacher term is constant, so this has the same gradient as
/// `KL(p_t ‖ p_s)`.
pub fn isd_loss(q_t_emb: &Tensor, q_s_pred: &Tensor, anchors: &Tensor, tau: f64) -> Result<Tensor> {
    check_pair(q_t_emb, q_s_pred, "isd_loss")?;
    let p_t = similarity_logits(&q_t_emb.detach(), anchors, tau, 2)?.softmax_rows()?;
    soft_target_cross_entropy(&p_t, q_s_pred, anchors, tau)
}

/// `KL(p_t ‖ p_s) = Σᵢ p_t(i) (log p_t(i) − log p_s(i))`, batch mean.
pub fn isd_kl_loss(q_t_emb: &Tensor, q_s_pred: &Tensor, anchors: &Tensor, tau: f64) -> Result<Tensor> {
    check_pair(q_t_emb, q_s_pred, "isd_kl_loss")?;
    let log_pt = similarity_logits(&q_t_emb.detach(), anchors, tau, 2)?.log_softmax_rows()?;
    let p_t: Vec<f64> = log_pt.values().iter().map(|v| v.exp()).collect();
    let p_t = Tensor::new(log_pt.shape(), p_t)?;
    let log_ps = similarity_logits(q_s_pred, anchors, tau, 2)?.log_softmax_rows()?;
    let gap = log_pt.sub(&log_ps)?;
    Ok(p_t.mul(&gap)?.sum_rows()?.mean())
}

/// Entropy `H(p_t)` of each row's teacher anchor distribution.
pub fn teacher_entropy(q_t_emb: &Tensor, anchors: &Tensor, tau: f64) -> Result<Vec<f64>> {
    let log_pt = similarity_logits(&q_t_emb.detach(), anchors, tau, 2)?.log_softmax_rows()?;
    let n = row_dim(&log_pt);
    Ok(log_pt
        .values()
        .chunks_exact(n)
        .map(|row| -row.iter().map(|&l| l.exp() * l).sum::<f64>())
        .collect())
}

/// InfoNCE: `−log softmax₀(cos(q, [pos; anchors]) / tau)`, one-hot target
/// at the positive key.
pub fn moco_loss(q_emb: &Tensor, pos_emb: &Tensor, anchors: &Tensor, tau: f64) -> Result<Tensor> {
    check_pair(pos_emb, q_emb, "moco_loss")?;
    check_temperature(tau)?;
    let q = as_rows(q_emb)?.l2_normalize_rows(NORM_EPS)?;
    let pos = as_rows(&pos_emb.detach())?.l2_normalize_rows(NORM_EPS)?;
    let at = anchor_matrix(anchors, row_dim(&q), 1)?;
    let l_pos = q.mul(&pos)?.sum_rows()?;
    let l_neg = q.matmul(&at)?;
    let logits = l_pos.concat_cols(&l_neg)?.scale(1.0 / tau);
    Ok(logits.log_softmax_rows()?.column(0)?.mean().scale(-1.0))
}

/// BYOL regression `2 − 2·cos(q_s_pred, q_t_emb)`.
pub fn byol_loss(q_s_pred: &Tensor, q_t_emb: &Tensor) -> Result<Tensor> {
    check_pair(q_t_emb, q_s_pred, "byol_loss")?;
    let p = as_rows(q_s_pred)?.l2_normalize_rows(NORM_EPS)?;
    let z = as_rows(&q_t_emb.detach())?.l2_normalize_rows(NORM_EPS)?;
    Ok(p.mul(&z)?.sum_rows()?.mean().scale(-2.0).add_scalar(2.0))
}

/// Dispatches on the configured objective. `anchors` is unused by BYOL.
pub fn objective_loss(config: &LossConfig, teacher: &Tensor, student: &Tensor, anchors: Option<&Tensor>) -> Result<Tensor> {
    let need = || anchors.ok_or(Error::EmptyBank);
    match config.objective {
        Objective::Isd => isd_loss(teacher, student, need()?, config.temperature),
        Objective::Moco => moco_loss(student, teacher, need()?, config.temperature),
        Objective::Byol => byol_loss(student, teacher),
    }
}
