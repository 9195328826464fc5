//! Minimal reverse-mode differentiation over dense `f64` tensors.

mod gradcheck;
mod optim;
mod param;
mod tape;

pub use gradcheck::{gradient_check, relative_error, GradCheckReport, ParamCheck, REL_ERROR_FLOOR};
pub use optim::{Adam, AdamConfig};
pub use param::{ParamStore, Parameter};
pub use tape::{Gradients, RecordEntry, Tape, Var, FEATURE_NORM_DELTA};
