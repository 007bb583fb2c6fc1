//! Switched predictor feedback for linear systems with constant input delay
//! under dynamic (zooming) quantization of the state or the input.
//!
//! The crate is organized bottom-up:
//!
//! - [`linalg`]: dense kernels (matrix exponential, induced norms, Hurwitz
//!   test, decay envelopes)
//! - [`quantization`]: uniform quantizer and its zoomed form
//! - [`predictor`]: backstepping transforms, predictor laws and the design
//!   constant calculus
//! - [`switching`]: the zoom-out / hold / zoom-in controller
//! - [`sim`]: closed-loop integration of the ODE and transport PDE
//! - [`analysis`]: post-hoc checks on trajectories
//! - [`scenario`] and [`cli`]: the JSON scenario format and the command line

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod error;
pub mod linalg;
pub mod predictor;
pub mod quantization;
pub mod scenario;
pub mod sim;
pub mod switching;

pub use error::{Error, Result};
pub use linalg::{DecayEnvelope, Matrix, NormKind};
pub use predictor::{
    ActuatorState, ConstantOverrides, ControllerGains, DesignConstants, PlantModel, Predictor,
    Provenance, TransformedState,
};
pub use quantization::{QuantizedSnapshot, QuantizerSpec, ZoomState};
pub use scenario::Scenario;
pub use sim::{SimGrid, Trajectory};
pub use switching::{Mode, Phase, SwitchState, SwitchingParams};
