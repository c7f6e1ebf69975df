//! Data-driven symbolic abstractions of black-box control subsystems,
//! scenario-based certificates relating each subsystem to its abstraction,
//! small-gain composition over a network, and safety controller synthesis.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod compose;
pub mod config;
pub mod external;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod quantize;
pub mod scenario;
pub mod synthesize;

pub use compose::{ComposeError, ComposedAbf, GainMatrix, ScalingVector, SimulationRelation};
pub use config::{ConfigError, PipelineConfig};
pub use model::{
    BlackBoxSystem, BoxSet, InterconnectionTopology, Interval, ModelError, Oracle, OracleError,
};
pub use pipeline::{run_pipeline, Pipeline, PipelineError, RunSummary, Stage};
pub use quantize::{QuantizeError, UniformGrid};
pub use scenario::{ApbfCertificate, CertifyConfig, ScenarioError};
pub use synthesize::{ControllerTable, FiniteTransitionSystem, SynthesisError, Trajectory};
