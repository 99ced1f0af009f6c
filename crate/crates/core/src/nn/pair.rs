use super::{init_params_with, MlpSpec, ParamSet, Role};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Student encoder and prediction head, plus the EMA teacher encoder.
///
/// The teacher has no predictor: anchors and the teacher-side query
/// embedding both come straight from the teacher encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPair {
    pub student_encoder: ParamSet,
    pub student_predictor: ParamSet,
    pub teacher_encoder: ParamSet,
    momentum: f64,
}

impl ModelPair {
    /// Fresh student from `seed`; the teacher starts as an exact copy of
    /// the student encoder.
    pub fn new(encoder: &MlpSpec, predictor: &MlpSpec, seed: u64, momentum: f64) -> Result<Self> {
        if predictor.input_dim() != encoder.output_dim() {
            return Err(Error::dim(
                "predictor input",
                &[encoder.output_dim()],
                &[predictor.input_dim()],
            ));
        }
        let mut rng = rng::stream(seed, Stream::Init);
        let student_encoder = init_params_with(encoder, &mut rng)?;
        let student_predictor = init_params_with(predictor, &mut rng)?;
        let teacher_encoder = student_encoder.with_role(Role::Teacher);
        Self::from_parts(student_encoder, student_predictor, teacher_encoder, momentum)
    }

    pub fn from_parts(
        student_encoder: ParamSet,
        student_predictor: ParamSet,
        teacher_encoder: ParamSet,
        momentum: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!("momentum {momentum} outside [0, 1]")));
        }
        if teacher_encoder.spec() != student_encoder.spec() {
            return Err(Error::InvalidArgument(
                "teacher and student encoders have different shapes".into(),
            ));
        }
        if student_encoder.is_teacher() || student_predictor.is_teacher() {
            return Err(Error::Contract("student parameter sets must be trainable".into()));
        }
        Ok(ModelPair {
            student_encoder,
            student_predictor,
            teacher_encoder: teacher_encoder.with_role(Role::Teacher),
            momentum,
        })
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn set_momentum(&mut self, momentum: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!("momentum {momentum} outside [0, 1]")));
        }
        self.momentum = momentum;
        Ok(())
    }

    /// `θ_t ← m·θ_t + (1 − m)·θ_s` for every teacher entry.
    pub fn ema_update(&mut self) {
        let m = self.momentum;
        // m = 1 and m = 0 are exact: frozen teacher and plain copy.
        if m == 1.0 {
            return;
        }
        let student = self.student_encoder.buffers();
        for (t, s) in self.teacher_encoder.buffers_mut().iter_mut().zip(student) {
            if m == 0.0 {
                t.values.copy_from_slice(&s.values);
                continue;
            }
            for (tv, &sv) in t.values.iter_mut().zip(&s.values) {
                *tv = m * *tv + (1.0 - m) * sv;
            }
        }
    }
}

/// Free-function form of [`ModelPair::ema_update`].
pub fn ema_update(pair: &mut ModelPair) {
    pair.ema_update();
}
