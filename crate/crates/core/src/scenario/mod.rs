//! Scenario-based construction of alternating pseudo-bisimulation functions.
//!
//! Samples are drawn uniformly from `X × D`, the sampled program is solved as
//! one linear program per fixed contraction rate `μ̃_t`, and the optimum is
//! turned into a probabilistic certificate through the sample-size bound, the
//! geometric `κ` function and a Lipschitz bound on the constraint functions.

mod basis;
mod certify;
mod kappa;
mod lipschitz;
mod sample_size;
mod sampling;
pub mod simplex;
mod sop;

use thiserror::Error;

use crate::model::OracleError;
use crate::quantize::QuantizeError;

pub use basis::{BasisMode, BasisSpec};
pub use certify::{
    certificate_margin, certify_apbf, certify_with_samples, convert_gains, ApbfCertificate,
    CandidateReport, CertifyConfig, ConvertedGains, DecisionVector, GridSummary, KappaSource,
    DEFAULT_LAMBDA, DEFAULT_PSI,
};
pub use kappa::{kappa, kappa_inverse};
pub use lipschitz::{
    estimate_lipschitz_data, lipschitz_linear, lipschitz_nonlinear, LipschitzBreakdown,
    LipschitzSource, Matrix, DEFAULT_SAFETY_FACTOR,
};
pub use sample_size::{min_sample_size, SampleSizeReport, MAX_SAMPLE_SIZE, REPORTED_CASE_STUDY_Q};
pub use sampling::{draw_samples, SampleBatch};
pub use sop::{
    assemble_sop, assemble_with_table, solve_lp, ConstraintKind, LpSolution, RowTag, SolveOptions,
    SopInstance, SopRow, VariableBoxes, DEFAULT_ROW_CAP,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("LP solver failure: {0}")]
    Solver(String),
    #[error("matrix is not positive definite (smallest eigenvalue {0})")]
    NotPositiveDefinite(f64),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Quantize(#[from] QuantizeError),
}
