//! Feature-quality evaluation on frozen embeddings: cosine k-NN, a linear
//! probe trained by full-batch gradient descent, and retrieval recall@k.
//!
//! Neighbor rankings sort by cosine similarity, descending, with the lower
//! train index winning exact ties. A k-NN vote tie goes to the tied class
//! whose member ranks highest, which is the single nearest neighbor's
//! class whenever that class is among the tied ones.

use std::cmp::Ordering;
use std::fmt;

use rayon::prelude::*;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{ParamSet, NORM_EPS};
use crate::tensor::Tensor;

pub const DEFAULT_K: usize = 5;
const UNIT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Teacher,
    Student,
    Raw,
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Teacher => "teacher",
            Model::Student => "student",
            Model::Raw => "raw",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Source {
    pub model: Model,
    pub epoch: usize,
}

impl Source {
    pub fn teacher(epoch: usize) -> Self {
        Source {
            model: Model::Teacher,
            epoch,
        }
    }

    pub fn student(epoch: usize) -> Self {
        Source {
            model: Model::Student,
            epoch,
        }
    }

    pub fn raw() -> Self {
        Source {
            model: Model::Raw,
            epoch: 0,
        }
    }
}

/// Unit-norm embeddings with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    embeddings: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    source: Source,
}

impl EmbeddingTable {
    pub fn new(embeddings: Vec<f64>, dim: usize, labels: Vec<usize>, source: Source) -> Result<Self> {
        if labels.is_empty() || dim == 0 {
            return Err(Error::InvalidArgument("embedding table needs at least one row and column".into()));
        }
        if embeddings.len() != labels.len() * dim {
            return Err(Error::dim("embedding table", &[embeddings.len()], &[labels.len(), dim]));
        }
        for (i, row) in embeddings.chunks_exact(dim).enumerate() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_TOL {
                return Err(Error::Contract(format!("embedding row {i} has norm {norm}, expected 1")));
            }
        }
        Ok(EmbeddingTable {
            embeddings,
            dim,
            labels,
            source,
        })
    }

    /// L2-normalizes each row of `values` first.
    pub fn from_raw(values: &[f64], dim: usize, labels: Vec<usize>, source: Source) -> Result<Self> {
        if dim == 0 || values.len() % dim != 0 {
            return Err(Error::dim("embedding table", &[values.len()], &[labels.len(), dim]));
        }
        let mut out = Vec::with_capacity(values.len());
        for (i, row) in values.chunks_exact(dim).enumerate() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm <= NORM_EPS {
                return Err(Error::NumericDomain {
                    op: "embedding table",
                    detail: format!("row {i} is zero and has no direction"),
                });
            }
            out.extend(row.iter().map(|v| v / norm));
        }
        Self::new(out, dim, labels, source)
    }

    /// Embeds every sample of `ds` with `encoder`.
    pub fn from_encoder(encoder: &ParamSet, ds: &LabeledDataset, source: Source) -> Result<Self> {
        let out = encoder.forward_detached(&ds.as_matrix()?)?;
        let dim = out.shape()[1];
        Self::from_raw(out.values(), dim, ds.labels().to_vec(), source)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    pub fn embeddings(&self) -> &[f64] {
        &self.embeddings
    }

    pub fn as_tensor(&self) -> Result<Tensor> {
        Tensor::matrix(self.len(), self.dim, self.embeddings.clone())
    }

    fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m + 1)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rank_order(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
}

/// Indices of the `k` train rows most similar to `query`, best first.
fn nearest(train: &EmbeddingTable, query: &[f64], k: usize, exclude: Option<usize>) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = (0..train.len())
        .filter(|&j| Some(j) != exclude)
        .map(|j| (dot(train.row(j), query), j))
        .collect();
    let k = k.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k, rank_order);
        scored.truncate(k);
    }
    scored.sort_by(rank_order);
    scored.into_iter().map(|(_, j)| j).collect()
}

fn check_pair(train: &EmbeddingTable, test: &EmbeddingTable, k: usize) -> Result<()> {
    if train.dim != test.dim {
        return Err(Error::dim("knn", &[train.len(), train.dim], &[test.len(), test.dim]));
    }
    if k == 0 || k > train.len() {
        return Err(Error::InvalidArgument(format!(
            "k must be in 1..={}, got {k}",
            train.len()
        )));
    }
    Ok(())
}

/// Majority label among the `k` nearest train rows to `query`.
pub fn knn_predict(train: &EmbeddingTable, query: &[f64], k: usize) -> Result<usize> {
    if query.len() != train.dim {
        return Err(Error::dim("knn", &[train.dim], &[query.len()]));
    }
    if k == 0 || k > train.len() {
        return Err(Error::InvalidArgument(format!("k must be in 1..={}, got {k}", train.len())));
    }
    Ok(vote(train, &nearest(train, query, k, None)))
}

fn vote(train: &EmbeddingTable, neighbors: &[usize]) -> usize {
    let mut counts = vec![0usize; train.num_classes()];
    for &j in neighbors {
        counts[train.labels[j]] += 1;
    }
    let best = counts.iter().copied().max().unwrap_or(0);
    neighbors
        .iter()
        .map(|&j| train.labels[j])
        .find(|&c| counts[c] == best)
        .expect("at least one neighbor")
}

pub fn knn_predict_all(train: &EmbeddingTable, test: &EmbeddingTable, k: usize) -> Result<Vec<usize>> {
    check_pair(train, test, k)?;
    Ok((0..test.len())
        .into_par_iter()
        .map(|i| vote(train, &nearest(train, test.row(i), k, None)))
        .collect())
}

/// Fraction of test rows whose k-NN vote matches their label.
pub fn knn_eval(train: &EmbeddingTable, test: &EmbeddingTable, k: usize) -> Result<f64> {
    let preds = knn_predict_all(train, test, k)?;
    let correct = preds.iter().zip(&test.labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / test.len() as f64)
}

/// Affine softmax classifier on frozen embeddings, zero-initialized and
/// trained by full-batch gradient descent on the mean cross-entropy.
/// Prediction ties resolve to the lowest class id.
pub fn linear_probe(train: &EmbeddingTable, test: &EmbeddingTable, epochs: usize, lr: f64) -> Result<f64> {
    if train.dim != test.dim {
        return Err(Error::dim("linear probe", &[train.len(), train.dim], &[test.len(), test.dim]));
    }
    let first = train.labels[0];
    if train.labels.iter().all(|&l| l == first) {
        return Err(Error::InvalidArgument(format!(
            "linear probe needs at least two classes in the train set, found only class {first}"
        )));
    }
    let classes = train.num_classes().max(test.num_classes());
    let d = train.dim;
    let n = train.len() as f64;
    let mut w = vec![0.0; d * classes];
    let mut b = vec![0.0; classes];
    let mut logits = vec![0.0; classes];

    for _ in 0..epochs {
        let mut gw = vec![0.0; d * classes];
        let mut gb = vec![0.0; classes];
        for i in 0..train.len() {
            let x = train.row(i);
            probe_logits(&w, &b, x, &mut logits);
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            for c in 0..classes {
                let p = (logits[c] - max).exp() / z;
                let g = (p - if train.labels[i] == c { 1.0 } else { 0.0 }) / n;
                gb[c] += g;
                for (j, &xj) in x.iter().enumerate() {
                    gw[j * classes + c] += g * xj;
                }
            }
        }
        w.iter_mut().zip(&gw).for_each(|(p, g)| *p -= lr * g);
        b.iter_mut().zip(&gb).for_each(|(p, g)| *p -= lr * g);
    }

    let mut correct = 0;
    for i in 0..test.len() {
        probe_logits(&w, &b, test.row(i), &mut logits);
        let mut pred = 0;
        for c in 1..classes {
            if logits[c] > logits[pred] {
                pred = c;
            }
        }
        if pred == test.labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

fn probe_logits(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let classes = b.len();
    out.copy_from_slice(b);
    for (j, &xj) in x.iter().enumerate() {
        for c in 0..classes {
            out[c] += xj * w[j * classes + c];
        }
    }
}

/// For each `k`, the fraction of rows with a same-class row among their `k`
/// nearest non-self neighbors.
pub fn recall_at_k(table: &EmbeddingTable, ks: &[usize]) -> Result<Vec<f64>> {
    let counts = {
        let mut c = vec![0usize; table.num_classes()];
        table.labels.iter().for_each(|&l| c[l] += 1);
        c
    };
    if let Some(single) = counts.iter().position(|&c| c == 1) {
        return Err(Error::SingletonClass(single));
    }
    let n = table.len();
    if let Some(&bad) = ks.iter().find(|&&k| k == 0 || k > n - 1) {
        return Err(Error::InvalidArgument(format!("recall k must be in 1..={}, got {bad}", n - 1)));
    }
    // Rank (1-based) of the first same-class neighbor of every row.
    let first_hit: Vec<usize> = (0..n)
        .into_par_iter()
        .map(|i| {
            let order = nearest(table, table.row(i), n - 1, Some(i));
            order
                .iter()
                .position(|&j| table.labels[j] == table.labels[i])
                .expect("every class has a second member")
                + 1
        })
        .collect();
    Ok(ks
        .iter()
        .map(|&k| first_hit.iter().filter(|&&r| r <= k).count() as f64 / n as f64)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub metric: String,
    pub k: usize,
    pub value: f64,
    pub source: Source,
}

pub const EVAL_CSV_HEADER: &str = "metric,k,value,source,epoch";

impl EvalRecord {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.metric, self.k, self.value, self.source.model, self.source.epoch)
    }
}

pub fn eval_csv(records: &[EvalRecord]) -> String {
    let mut out = String::from(EVAL_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Settings for [`evaluate_all`].
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub knn_k: usize,
    pub recall_ks: Vec<usize>,
    pub probe_epochs: usize,
    pub probe_lr: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            knn_k: DEFAULT_K,
            recall_ks: vec![1, 2, 4, 8],
            probe_epochs: 200,
            probe_lr: 1.0,
        }
    }
}

/// k-NN, linear probe, and recall@k on the test table.
pub fn evaluate_all(train: &EmbeddingTable, test: &EmbeddingTable, config: &EvalConfig) -> Result<Vec<EvalRecord>> {
    let source = test.source();
    let mut out = vec![
        EvalRecord {
            metric: "knn".into(),
            k: config.knn_k,
            value: knn_eval(train, test, config.knn_k)?,
            source,
        },
        EvalRecord {
            metric: "linear".into(),
            k: 0,
            value: linear_probe(train, test, config.probe_epochs, config.probe_lr)?,
            source,
        },
    ];
    let recalls = recall_at_k(test, &config.recall_ks)?;
    out.extend(config.recall_ks.iter().zip(recalls).map(|(&k, value)| EvalRecord {
        metric: "recall".into(),
        k,
        value,
        source,
    }));
    Ok(out)
}
