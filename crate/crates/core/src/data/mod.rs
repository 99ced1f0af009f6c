//! Labeled datasets: synthetic gaussian mixtures, IDX image files, a binary
//! fixture container, and unbalanced subsampling.

mod container;
mod idx;

pub use container::{load_dataset, read_dataset, save_dataset, write_dataset};
pub use idx::{load_idx, parse_idx, write_idx, IdxArray};

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::augment::SampleShape;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Eval => "eval",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Samples stored row-major in one flat buffer, each of `shape.len()`
/// values, with integer labels in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    samples: Vec<f64>,
    shape: SampleShape,
    labels: Vec<usize>,
    num_classes: usize,
    split: Split,
}

impl LabeledDataset {
    pub fn new(samples: Vec<f64>, shape: SampleShape, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        let d = shape.len();
        if d == 0 {
            return Err(Error::InvalidArgument("samples must have at least one value".into()));
        }
        if samples.len() != labels.len() * d {
            return Err(Error::dim("dataset", &[samples.len()], &[labels.len(), d]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::UnknownClass(bad));
        }
        Ok(LabeledDataset {
            samples,
            shape,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> SampleShape {
        self.shape
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.samples[i * d..(i + 1) * d]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rows `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        let mut samples = Vec::with_capacity(indices.len() * self.dim());
        for &i in indices {
            samples.extend_from_slice(self.sample(i));
        }
        LabeledDataset {
            samples,
            shape: self.shape,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            split: self.split,
        }
    }

    /// All samples as a constant `[N × d]` matrix.
    pub fn as_matrix(&self) -> Result<Tensor> {
        Tensor::matrix(self.len(), self.dim(), self.samples.clone())
    }
}

/// Class means on a sphere of radius `sep`, unit-variance isotropic
/// clusters around them.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    means: Vec<f64>,
    classes: usize,
    dim: usize,
    seed: u64,
}

impl GaussianMixture {
    pub fn new(classes: usize, dim: usize, sep: f64, seed: u64) -> Result<Self> {
        if classes < 2 || dim < 2 {
            return Err(Error::InvalidArgument(format!(
                "gaussian mixture needs >= 2 classes and >= 2 dims, got {classes} and {dim}"
            )));
        }
        if !(sep >= 0.0) || !sep.is_finite() {
            return Err(Error::InvalidArgument(format!("separation must be >= 0, got {sep}")));
        }
        let mut rng = rng::stream(seed, Stream::Dataset);
        let mut means = Vec::with_capacity(classes * dim);
        for _ in 0..classes {
            let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            means.extend(dir.iter().map(|v| v / norm * sep));
        }
        Ok(GaussianMixture {
            means,
            classes,
            dim,
            seed,
        })
    }

    pub fn mean(&self, class: usize) -> &[f64] {
        &self.means[class * self.dim..(class + 1) * self.dim]
    }

    /// `per_class` samples of every class, grouped by class. Train and eval
    /// splits use independent streams.
    pub fn sample(&self, per_class: usize, split: Split) -> Result<LabeledDataset> {
        let which = match split {
            Split::Train => Stream::DatasetTrain,
            Split::Eval => Stream::DatasetEval,
        };
        let mut rng = rng::stream(self.seed, which);
        let mut samples = Vec::with_capacity(self.classes * per_class * self.dim);
        let mut labels = Vec::with_capacity(self.classes * per_class);
        for c in 0..self.classes {
            for _ in 0..per_class {
                for &m in self.mean(c) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    samples.push(m + z);
                }
                labels.push(c);
            }
        }
        LabeledDataset::new(samples, SampleShape::Vector(self.dim), labels, self.classes, split)
    }
}

/// Training split of a fresh [`GaussianMixture`].
pub fn gen_gaussian_mixture(classes: usize, per_class: usize, dim: usize, sep: f64, seed: u64) -> Result<LabeledDataset> {
    GaussianMixture::new(classes, dim, sep, seed)?.sample(per_class, Split::Train)
}

/// Keeps every sample of `large_classes` and a seeded uniform subset of
/// `small_count` samples from each other class. Sample order and values
/// are preserved; only membership changes.
pub fn make_unbalanced(ds: &LabeledDataset, large_classes: &[usize], small_count: usize, seed: u64) -> Result<LabeledDataset> {
    if let Some(&bad) = large_classes.iter().find(|&&c| c >= ds.num_classes()) {
        return Err(Error::UnknownClass(bad));
    }
    let counts = ds.class_counts();
    let mut rng = rng::stream(seed, Stream::Subsample);
    let mut keep = vec![false; ds.len()];
    for class in 0..ds.num_classes() {
        let members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels()[i] == class).collect();
        if large_classes.contains(&class) {
            members.iter().for_each(|&i| keep[i] = true);
            continue;
        }
        if small_count > counts[class] {
            return Err(Error::InvalidArgument(format!(
                "class {class} has {} samples, fewer than the requested {small_count}",
                counts[class]
            )));
        }
        let mut shuffled = members;
        shuffled.shuffle(&mut rng);
        shuffled.truncate(small_count);
        shuffled.iter().for_each(|&i| keep[i] = true);
    }
    let indices: Vec<usize> = (0..ds.len()).filter(|&i| keep[i]).collect();
    Ok(ds.subset(&indices))
}
