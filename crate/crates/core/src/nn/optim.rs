use super::ParamSet;
use crate::error::{Error, Result};

/// Learning-rate multiplier as a function of the epoch.
#[derive(Debug, Clone, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// Multiply by `factor` once for every milestone `<= epoch`.
    Step { milestones: Vec<usize>, factor: f64 },
    /// Half-cosine decay from the base rate to zero over `total_epochs`.
    Cosine { total_epochs: usize },
}

impl LrSchedule {
    /// Milestones at 70% and 90% of the run with factor 0.2.
    pub fn proportional_steps(total_epochs: usize) -> Self {
        let at = |frac: f64| (frac * total_epochs as f64).round() as usize;
        LrSchedule::Step {
            milestones: vec![at(0.7), at(0.9)],
            factor: 0.2,
        }
    }

    pub fn multiplier(&self, epoch: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Step { milestones, factor } => {
                let passed = milestones.iter().filter(|&&m| m <= epoch).count();
                factor.powi(passed as i32)
            }
            LrSchedule::Cosine { total_epochs } => {
                if *total_epochs == 0 {
                    return 1.0;
                }
                let t = (epoch.min(*total_epochs) as f64) / *total_epochs as f64;
                0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: LrSchedule,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            schedule: LrSchedule::Constant,
        }
    }
}

/// Momentum SGD with coupled weight decay, one velocity buffer per
/// parameter tensor across all optimized sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub config: SgdConfig,
    lr: f64,
    velocity: Vec<Vec<f64>>,
}

impl SgdState {
    pub fn new(config: SgdConfig, params: &[&ParamSet]) -> Result<Self> {
        if !(config.lr >= 0.0) || !config.lr.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid learning rate {}", config.lr)));
        }
        let velocity = params
            .iter()
            .flat_map(|p| p.buffers().iter().map(|b| vec![0.0; b.values.len()]))
            .collect();
        Ok(SgdState {
            lr: config.lr,
            config,
            velocity,
        })
    }

    pub(crate) fn from_parts(config: SgdConfig, lr: f64, velocity: Vec<Vec<f64>>) -> Self {
        SgdState {
            config,
            lr,
            velocity,
        }
    }

    /// Current (scheduled) learning rate.
    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_epoch(&mut self, epoch: usize) {
        self.lr = self.config.lr * self.config.schedule.multiplier(epoch);
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }
}

/// `v ← μ·v + (g + λ·θ)`, `θ ← θ − lr·v`, in place.
///
/// `grads` holds one buffer per parameter tensor, in the order of
/// `params` and then of each set's buffers.
pub fn sgd_step(params: &mut [&mut ParamSet], grads: &[Vec<f64>], state: &mut SgdState) -> Result<()> {
    if params.iter().any(|p| p.is_teacher()) {
        return Err(Error::Contract("sgd_step received teacher parameters".into()));
    }
    let total: usize = params.iter().map(|p| p.buffers().len()).sum();
    if total != grads.len() || total != state.velocity.len() {
        return Err(Error::InvalidArgument(format!(
            "sgd_step: {total} parameter tensors, {} gradients, {} velocity buffers",
            grads.len(),
            state.velocity.len()
        )));
    }
    let (mu, wd, lr) = (state.config.momentum, state.config.weight_decay, state.lr);
    let buffers = params.iter_mut().flat_map(|p| p.buffers_mut().iter_mut());
    for ((buf, g), v) in buffers.zip(grads).zip(state.velocity.iter_mut()) {
        if buf.values.len() != g.len() || v.len() != g.len() {
            return Err(Error::dim("sgd_step", &buf.shape, &[g.len()]));
        }
        for ((theta, &gi), vi) in buf.values.iter_mut().zip(g).zip(v.iter_mut()) {
            *vi = mu * *vi + (gi + wd * *theta);
            *theta -= lr * *vi;
        }
    }
    Ok(())
}
