//! Finite abstractions, safety games on them, and closed-loop simulation of
//! the refined controllers.

mod abstraction;
mod closed_loop;
mod game;

use thiserror::Error;

use crate::model::OracleError;
use crate::quantize::QuantizeError;

pub use abstraction::{enumerate_abstraction, FiniteTransitionSystem};
pub use closed_loop::{
    refine_controller, simulate_closed_loop, ConstantController, Controller, RefinedController,
    Trajectory,
};
pub use game::{safe_cells, safety_synthesis, safety_synthesis_with, ControllerTable, InputPolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("state {state:?} is not related to any winning abstract state")]
    Refinement { state: Vec<f64> },
    #[error("controller soundness violated at state {state}, disturbance {disturbance}")]
    Unsound { state: usize, disturbance: usize },
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Quantize(#[from] QuantizeError),
}
