use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::nets::EnergyModel;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone)]
pub enum Error {
    /// Two operands (or an operand and a model) disagree on shape.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    NonScalarLoss {
        shape: Vec<usize>,
    },
    /// `backward` was called on a value that does not depend on any trainable leaf.
    NotDifferentiable,
    /// `backward` already ran on this tape; call `Tape::clear` first.
    BackwardAlreadyRun,
    /// A tensor that carries gradient history was passed where a detached one is required.
    NotDetached {
        what: &'static str,
    },
    InvalidArgument(String),
    NonFinite {
        context: String,
    },
    DegenerateCalibration {
        mean_on_manifold: f64,
        mean_off_manifold: f64,
    },
    /// EBM training blew up; carries the last parameters that passed the divergence check.
    Divergence {
        step: usize,
        mean_abs_energy: f64,
        last_good: Box<EnergyModel>,
    },
    ShootingFailed {
        restarts: usize,
        best_miss: f64,
    },
    EmptyReport,
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn non_finite(msg: impl Into<String>) -> Self {
        Error::NonFinite {
            context: msg.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, left, right } => {
                write!(f, "shape mismatch in {op}: {left:?} vs {right:?}")
            }
            Error::NonScalarLoss { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            Error::NotDifferentiable => {
                write!(f, "loss does not depend on any trainable tensor (detached)")
            }
            Error::BackwardAlreadyRun => {
                write!(f, "backward already ran on this tape; clear it before reuse")
            }
            Error::NotDetached { what } => {
                write!(f, "{what} must be detached from the gradient tape")
            }
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::NonFinite { context } => write!(f, "non-finite value: {context}"),
            Error::DegenerateCalibration {
                mean_on_manifold,
                mean_off_manifold,
            } => write!(
                f,
                "degenerate calibration: mean h on manifold ({mean_on_manifold}) equals mean h \
                 off manifold ({mean_off_manifold}); use larger or different calibration sets"
            ),
            Error::Divergence {
                step,
                mean_abs_energy,
                ..
            } => write!(
                f,
                "EBM training diverged at step {step} (mean |E| = {mean_abs_energy:.3e})"
            ),
            Error::ShootingFailed {
                restarts,
                best_miss,
            } => write!(
                f,
                "shooting did not converge after {restarts} restarts (best endpoint miss \
                 {best_miss:.3e}); fall back to the waypoint optimizer"
            ),
            Error::EmptyReport => write!(f, "no metrics requested for evaluation"),
        }
    }
}

impl core::error::Error for Error {}
