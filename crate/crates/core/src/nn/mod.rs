//! MLP encoders and prediction heads, SGD, and the EMA teacher.

mod optim;
mod pair;

pub use optim::{sgd_step, LrSchedule, SgdConfig, SgdState};
pub use pair::{ema_update, ModelPair};

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

/// Epsilon guarding every L2 normalization in the crate.
pub const NORM_EPS: f64 = 1e-12;

/// Fully connected network: affine layers with ReLU between them and no
/// activation after the last layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub final_normalize: bool,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, final_normalize: bool) -> Result<Self> {
        let spec = MlpSpec {
            widths,
            final_normalize,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "an MLP needs at least two widths, got {:?}",
                self.widths
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "MLP widths must be positive: {:?}",
                self.widths
            )));
        }
        if self.output_dim() < 2 {
            return Err(Error::InvalidArgument(format!(
                "embedding dimension must be at least 2, got {}",
                self.output_dim()
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated spec")
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Parameter shapes in storage order: `W0, b0, W1, b1, ...`, with
    /// weights laid out `[fan_in × fan_out]`.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.widths
            .windows(2)
            .flat_map(|w| [vec![w[0], w[1]], vec![w[1]]])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Student,
    Teacher,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamBuffer {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Parameters of one MLP. Teacher sets are never bound as trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    spec: MlpSpec,
    buffers: Vec<ParamBuffer>,
    role: Role,
}

impl ParamSet {
    pub fn from_buffers(spec: MlpSpec, buffers: Vec<ParamBuffer>, role: Role) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.param_shapes();
        if shapes.len() != buffers.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameter buffers, got {}",
                shapes.len(),
                buffers.len()
            )));
        }
        for (shape, buf) in shapes.iter().zip(&buffers) {
            if &buf.shape != shape || buf.values.len() != shape.iter().product::<usize>() {
                return Err(Error::dim("param buffer", shape, &buf.shape));
            }
        }
        Ok(ParamSet { spec, buffers, role })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn is_teacher(&self) -> bool {
        self.role == Role::Teacher
    }

    pub fn buffers(&self) -> &[ParamBuffer] {
        &self.buffers
    }

    pub(crate) fn buffers_mut(&mut self) -> &mut [ParamBuffer] {
        &mut self.buffers
    }

    pub fn num_params(&self) -> usize {
        self.buffers.iter().map(|b| b.values.len()).sum()
    }

    /// Same values, different role.
    pub fn with_role(&self, role: Role) -> ParamSet {
        ParamSet {
            role,
            ..self.clone()
        }
    }

    /// Fresh leaf tensors holding the current values; trainable only for
    /// student sets.
    pub fn bind(&self) -> Result<Vec<Tensor>> {
        self.buffers
            .iter()
            .map(|b| match self.role {
                Role::Student => Tensor::param(&b.shape, b.values.clone()),
                Role::Teacher => Tensor::new(&b.shape, b.values.clone()),
            })
            .collect()
    }

    /// Forward pass on constants; the result carries no graph.
    pub fn forward_detached(&self, x: &Tensor) -> Result<Tensor> {
        let leaves: Vec<Tensor> = self
            .buffers
            .iter()
            .map(|b| Tensor::new(&b.shape, b.values.clone()))
            .collect::<Result<_>>()?;
        Ok(mlp_forward(&self.spec, &leaves, &x.detach())?.detach())
    }

    /// Elementwise distance `‖self − other‖₂` over all buffers.
    pub fn distance(&self, other: &ParamSet) -> f64 {
        self.buffers
            .iter()
            .zip(&other.buffers)
            .flat_map(|(a, b)| a.values.iter().zip(&b.values))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }
}

/// Uniform `U(−1/√fan_in, 1/√fan_in)` weights and zero biases.
pub fn init_params(spec: &MlpSpec, seed: u64) -> Result<ParamSet> {
    let mut rng = rng::stream(seed, Stream::Init);
    init_params_with(spec, &mut rng)
}

pub(crate) fn init_params_with<R: Rng>(spec: &MlpSpec, rng: &mut R) -> Result<ParamSet> {
    spec.validate()?;
    let buffers = spec
        .param_shapes()
        .into_iter()
        .map(|shape| {
            let values = if shape.len() == 2 {
                let bound = 1.0 / (shape[0] as f64).sqrt();
                (0..shape[0] * shape[1])
                    .map(|_| rng.random_range(-bound..bound))
                    .collect()
            } else {
                vec![0.0; shape[0]]
            };
            ParamBuffer { shape, values }
        })
        .collect();
    ParamSet::from_buffers(spec.clone(), buffers, Role::Student)
}

/// Runs `x` (shape `[b × d_in]`) through the MLP described by `spec`
/// using the bound parameter tensors.
pub fn mlp_forward(spec: &MlpSpec, params: &[Tensor], x: &Tensor) -> Result<Tensor> {
    let width = match x.shape() {
        [_, w] => *w,
        other => {
            return Err(Error::Contract(format!(
                "mlp input must be a [batch × width] matrix, got {other:?}"
            )))
        }
    };
    if width != spec.input_dim() {
        return Err(Error::dim("mlp_forward", x.shape(), &[spec.input_dim()]));
    }
    if params.len() != 2 * spec.num_layers() {
        return Err(Error::InvalidArgument(format!(
            "expected {} parameter tensors, got {}",
            2 * spec.num_layers(),
            params.len()
        )));
    }
    let mut h = x.clone();
    let last = spec.num_layers() - 1;
    for (layer, wb) in params.chunks_exact(2).enumerate() {
        h = h.matmul(&wb[0])?.add_row_bias(&wb[1])?;
        if layer < last {
            h = h.relu();
        }
    }
    if spec.final_normalize {
        h = h.l2_normalize_rows(NORM_EPS)?;
    }
    Ok(h)
}
