//! Pose loss with learnable translation/rotation balance factors:
//! `|t - t̂|₁ e^{-β} + β + |log q - log q̂|₁ e^{-γ} + γ`.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::LogPose;
use crate::scalar::Scalar;

/// Initial translation factor β.
pub const BETA_INIT: f64 = 0.0;
/// Initial rotation factor γ.
pub const GAMMA_INIT: f64 = -3.0;

/// Network prediction on a tape: translation and log-quaternion, each a
/// length-3 node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogPoseVar {
    pub t: Var,
    pub w: Var,
}

/// β and γ as one-element nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossFactors {
    pub beta: Var,
    pub gamma: Var,
}

impl LogPoseVar {
    /// Records a fixed pose as two constant nodes.
    pub fn constant<T: Scalar>(tape: &mut Tape<T>, pose: &LogPose<T>) -> Result<Self> {
        Ok(Self {
            t: tape.constant(Tensor::new(vec![3], pose.t.to_vec())?),
            w: tape.constant(Tensor::new(vec![3], pose.w.to_vec())?),
        })
    }

    pub fn read<T: Scalar>(&self, tape: &Tape<T>) -> LogPose<T> {
        let (t, w) = (tape.value(self.t).data(), tape.value(self.w).data());
        LogPose {
            t: [t[0], t[1], t[2]],
            w: [w[0], w[1], w[2]],
        }
    }
}

fn weighted_term<T: Scalar>(tape: &mut Tape<T>, residual: Var, factor: Var) -> Result<Var> {
    let neg = tape.scale(factor, -T::one())?;
    let weight = tape.exp(neg)?;
    let scaled = tape.mul(residual, weight)?;
    tape.add(scaled, factor)
}

/// Loss of one prediction against a canonical log-pose target.
pub fn pose_loss<T: Scalar>(
    tape: &mut Tape<T>,
    pred: LogPoseVar,
    target: &LogPose<T>,
    factors: LossFactors,
) -> Result<Var> {
    if !target.to_array().iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { op: "pose_loss target" });
    }
    for v in [factors.beta, factors.gamma] {
        if tape.value(v).len() != 1 {
            return Err(Error::shape("pose_loss", tape.shape(v), &[1]));
        }
    }
    let tgt = LogPoseVar::constant(tape, target)?;
    let dt = tape.l1_distance(pred.t, tgt.t)?;
    let dw = tape.l1_distance(pred.w, tgt.w)?;
    let lt = weighted_term(tape, dt, factors.beta)?;
    let lw = weighted_term(tape, dw, factors.gamma)?;
    tape.add(lt, lw)
}

/// Mean of [`pose_loss`] over a batch.
pub fn batch_loss<T: Scalar>(
    tape: &mut Tape<T>,
    preds: &[LogPoseVar],
    targets: &[LogPose<T>],
    factors: LossFactors,
) -> Result<Var> {
    if preds.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if preds.len() != targets.len() {
        return Err(Error::shape("batch_loss", &[preds.len()], &[targets.len()]));
    }
    let mut total = pose_loss(tape, preds[0], &targets[0], factors)?;
    for (p, t) in preds.iter().zip(targets).skip(1) {
        let l = pose_loss(tape, *p, t, factors)?;
        total = tape.add(total, l)?;
    }
    let n = T::from_usize(preds.len()).expect("batch size fits the scalar type");
    tape.scale(total, T::one() / n)
}
