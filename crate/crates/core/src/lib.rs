//! Torque-aware momentum (TAM) and its adaptive variants, with the
//! landscapes, classifier and experiment routines used to exercise them.

#![allow(clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod bench;
pub mod error;
pub mod gradcheck;
pub mod landscapes;
pub mod nn;
pub mod optim;
pub mod transfer;
pub mod vecmath;

pub use error::{Error, Result};
pub use optim::{HyperParams, OptimizerKind, OptimizerState, StepOutput, StepTelemetry};
pub use vecmath::{ParamVector, RngStream};
