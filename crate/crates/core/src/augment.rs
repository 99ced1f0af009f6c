//! Stochastic view generation.
//!
//! Feature vectors get gaussian noise, coordinate masking, global scaling
//! and a planar rotation; images additionally get a random crop (resized
//! back to full size) and a horizontal flip. Transforms run in the order
//! crop, flip, rotation, scaling, masking, noise.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// How a flat sample buffer is laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleShape {
    Vector(usize),
    Image { height: usize, width: usize },
}

impl SampleShape {
    pub fn len(&self) -> usize {
        match *self {
            SampleShape::Vector(d) => d,
            SampleShape::Image { height, width } => height * width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyName {
    None,
    Mild,
    Aggressive,
}

impl fmt::Display for PolicyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyName::None => "none",
            PolicyName::Mild => "mild",
            PolicyName::Aggressive => "aggressive",
        })
    }
}

impl FromStr for PolicyName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PolicyName::None),
            "mild" => Ok(PolicyName::Mild),
            "aggressive" => Ok(PolicyName::Aggressive),
            other => Err(Error::Config(format!("unknown augmentation policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentPolicy {
    pub name: PolicyName,
    pub noise_std: f64,
    pub mask_prob: f64,
    /// Uniform global scale factor range; `(1, 1)` disables it.
    pub scale_range: (f64, f64),
    /// Maximum absolute angle (radians) of a random planar rotation.
    pub rotation_max: f64,
    /// Crop side as a fraction of the image side (images only).
    pub crop_range: (f64, f64),
    pub flip_prob: f64,
}

impl AugmentPolicy {
    pub fn none() -> Self {
        AugmentPolicy {
            name: PolicyName::None,
            noise_std: 0.0,
            mask_prob: 0.0,
            scale_range: (1.0, 1.0),
            rotation_max: 0.0,
            crop_range: (1.0, 1.0),
            flip_prob: 0.0,
        }
    }

    pub fn mild() -> Self {
        AugmentPolicy {
            name: PolicyName::Mild,
            noise_std: 0.05,
            flip_prob: 0.5,
            ..Self::none()
        }
    }

    pub fn aggressive() -> Self {
        AugmentPolicy {
            name: PolicyName::Aggressive,
            noise_std: 0.25,
            mask_prob: 0.2,
            scale_range: (0.5, 1.5),
            crop_range: (0.6, 1.0),
            flip_prob: 0.5,
            ..Self::none()
        }
    }

    pub fn named(name: PolicyName) -> Self {
        match name {
            PolicyName::None => Self::none(),
            PolicyName::Mild => Self::mild(),
            PolicyName::Aggressive => Self::aggressive(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        let range = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !prob(self.mask_prob) || !prob(self.flip_prob) {
            return Err(Error::Config("augmentation probabilities must lie in [0, 1]".into()));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::Config(format!("noise stddev {} must be >= 0", self.noise_std)));
        }
        if !range(self.scale_range) || self.scale_range.0 <= 0.0 {
            return Err(Error::Config(format!("invalid scale range {:?}", self.scale_range)));
        }
        if !range(self.crop_range) || self.crop_range.0 <= 0.0 || self.crop_range.1 > 1.0 {
            return Err(Error::Config(format!("invalid crop range {:?}", self.crop_range)));
        }
        if !(self.rotation_max >= 0.0) || !self.rotation_max.is_finite() {
            return Err(Error::Config(format!("invalid rotation range {}", self.rotation_max)));
        }
        Ok(())
    }

    fn is_identity(&self) -> bool {
        self.noise_std == 0.0
            && self.mask_prob == 0.0
            && self.scale_range == (1.0, 1.0)
            && self.rotation_max == 0.0
            && self.crop_range == (1.0, 1.0)
            && self.flip_prob == 0.0
    }
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self::none()
    }
}

/// One augmented view of `sample`. Deterministic given the generator state.
pub fn augment<R: Rng + ?Sized>(sample: &[f64], shape: SampleShape, policy: &AugmentPolicy, rng: &mut R) -> Vec<f64> {
    debug_assert_eq!(sample.len(), shape.len());
    let mut out = sample.to_vec();
    if policy.is_identity() {
        return out;
    }

    if let SampleShape::Image { height, width } = shape {
        if policy.crop_range != (1.0, 1.0) {
            let frac = uniform(rng, policy.crop_range);
            out = random_crop(&out, height, width, frac, rng);
        }
        if policy.flip_prob > 0.0 && rng.random::<f64>() < policy.flip_prob {
            for row in out.chunks_exact_mut(width) {
                row.reverse();
            }
        }
    }

    if policy.rotation_max > 0.0 && out.len() >= 2 {
        let angle = uniform(rng, (-policy.rotation_max, policy.rotation_max));
        let i = rng.random_range(0..out.len());
        let mut j = rng.random_range(0..out.len() - 1);
        if j >= i {
            j += 1;
        }
        let (c, s) = (angle.cos(), angle.sin());
        let (a, b) = (out[i], out[j]);
        out[i] = c * a - s * b;
        out[j] = s * a + c * b;
    }

    if policy.scale_range != (1.0, 1.0) {
        let k = uniform(rng, policy.scale_range);
        out.iter_mut().for_each(|v| *v *= k);
    }

    if policy.mask_prob > 0.0 {
        for v in out.iter_mut() {
            if rng.random::<f64>() < policy.mask_prob {
                *v = 0.0;
            }
        }
    }

    if policy.noise_std > 0.0 {
        let normal = Normal::new(0.0, policy.noise_std).expect("validated stddev");
        for v in out.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    out
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Square-fraction crop at a random offset, resized back to `h × w` by
/// nearest-neighbour sampling.
fn random_crop<R: Rng + ?Sized>(img: &[f64], h: usize, w: usize, frac: f64, rng: &mut R) -> Vec<f64> {
    let ch = ((h as f64 * frac).round() as usize).clamp(1, h);
    let cw = ((w as f64 * frac).round() as usize).clamp(1, w);
    let top = rng.random_range(0..=h - ch);
    let left = rng.random_range(0..=w - cw);
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let sy = top + (y * ch) / h;
        for x in 0..w {
            let sx = left + (x * cw) / w;
            out[y * w + x] = img[sy * w + sx];
        }
    }
    out
}

/// Mean squared L2 distance between samples and their augmented views,
/// `draws` views per sample.
pub fn expected_distortion<R: Rng + ?Sized>(
    samples: &[f64],
    shape: SampleShape,
    policy: &AugmentPolicy,
    draws: usize,
    rng: &mut R,
) -> f64 {
    let d = shape.len();
    let mut total = 0.0;
    let mut count = 0usize;
    for s in samples.chunks_exact(d) {
        for _ in 0..draws {
            let view = augment(s, shape, policy, rng);
            total += view.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            count += 1;
        }
    }
    total / count.max(1) as f64
}
