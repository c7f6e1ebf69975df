//! Pipeline configuration, read from and written to TOML.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compose::DEFAULT_SLACK;
use crate::external::ExternalOracle;
use crate::model::{
    build_room_network, BlackBoxSystem, BoxSet, InputSet, InterconnectionTopology, Interval,
    ModelError, RoomNetworkParams, SystemSignature,
};
use crate::scenario::{
    BasisSpec, CertifyConfig, KappaSource, LipschitzSource, VariableBoxes, DEFAULT_LAMBDA,
    DEFAULT_PSI, DEFAULT_ROW_CAP, REPORTED_CASE_STUDY_Q,
};
use crate::synthesize::InputPolicy;

pub const DEFAULT_HORIZON: usize = 100;
pub const DEFAULT_TIMEOUT_MS: u64 = 5_000;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize configuration: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub system: SystemConfig,
    pub grid: GridConfig,
    pub certify: CertifySection,
    #[serde(default)]
    pub compose: ComposeSection,
    #[serde(default)]
    pub synthesis: SynthesisSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemConfig {
    RoomNetwork(RoomNetworkParams),
    External(ExternalSystem),
}

/// Identical subsystems answered by one subprocess speaking the line protocol
/// of [`crate::external`]. Each subsystem sees the states of its neighbors,
/// concatenated in wiring order, as its disturbance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSystem {
    pub command: String,
    #[serde(default)]
    pub args: Vec<String>,
    pub subsystems: usize,
    pub state_box: BoxSet,
    pub inputs: Vec<Vec<f64>>,
    /// Neighbor lists; circular when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wiring: Option<Vec<Vec<usize>>>,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_MS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub state_sigma: f64,
    /// Defaults to `state_sigma`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance_sigma: Option<f64>,
}

impl GridConfig {
    pub fn disturbance_sigma(&self) -> f64 {
        self.disturbance_sigma.unwrap_or(self.state_sigma)
    }
}

/// [`CertifyConfig`] without the seed, which is derived per subsystem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifySection {
    pub basis: BasisSpec,
    pub mu_tildes: Vec<f64>,
    pub eps: Vec<f64>,
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_override: Option<usize>,
    /// Sample count reported elsewhere for the same parameters; shown next to
    /// the computed one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_q: Option<usize>,
    #[serde(default)]
    pub boxes: VariableBoxes,
    #[serde(default = "default_psi")]
    pub psi: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    pub lipschitz: LipschitzSource,
    #[serde(default)]
    pub kappa: KappaSource,
    #[serde(default = "default_true")]
    pub refine: bool,
    #[serde(default = "default_row_cap")]
    pub row_cap: usize,
}

fn default_psi() -> f64 {
    DEFAULT_PSI
}

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

fn default_true() -> bool {
    true
}

fn default_row_cap() -> usize {
    DEFAULT_ROW_CAP
}

impl CertifySection {
    pub fn to_config(&self, seed: u64) -> CertifyConfig {
        CertifyConfig {
            basis: self.basis.clone(),
            mu_tildes: self.mu_tildes.clone(),
            eps: self.eps.clone(),
            beta: self.beta,
            c: self.c,
            q_override: self.q_override,
            boxes: self.boxes,
            psi: self.psi,
            lambda: self.lambda,
            lipschitz: self.lipschitz.clone(),
            kappa: self.kappa,
            seed,
            refine: self.refine,
            row_cap: self.row_cap,
        }
    }
}

/// Gains reported for an external study, composed over `subsystems` copies
/// for comparison with the computed certificates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceGains {
    pub subsystems: usize,
    pub gamma: f64,
    pub mu: f64,
    pub eta: f64,
    pub theta: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComposeSection {
    #[serde(default = "default_slack")]
    pub slack: f64,
    /// Random member pairs used to check the decrease condition empirically.
    #[serde(default)]
    pub decrease_trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceGains>,
}

fn default_slack() -> f64 {
    DEFAULT_SLACK
}

impl Default for ComposeSection {
    fn default() -> Self {
        Self {
            slack: DEFAULT_SLACK,
            decrease_trials: 0,
            reference: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSection {
    /// Safe set of every subsystem; defaults to its state box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub safe_box: Option<BoxSet>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Initial state of every subsystem for the recorded trajectory; defaults
    /// to the winning cell center closest to the middle of the state box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<f64>>,
    /// Also simulate from every winning cell center and report containment.
    #[serde(default = "default_true")]
    pub check_centers: bool,
    #[serde(default)]
    pub policy: InputPolicy,
}

fn default_horizon() -> usize {
    DEFAULT_HORIZON
}

impl Default for SynthesisSection {
    fn default() -> Self {
        Self {
            safe_box: None,
            horizon: DEFAULT_HORIZON,
            initial_state: None,
            check_centers: true,
            policy: InputPolicy::First,
        }
    }
}

/// Subsystems and wiring instantiated from a [`SystemConfig`].
#[derive(Debug, Clone)]
pub struct BuiltNetwork {
    pub subsystems: Vec<BlackBoxSystem>,
    pub topology: InterconnectionTopology,
}

impl SystemConfig {
    pub fn subsystem_count(&self) -> usize {
        match self {
            SystemConfig::RoomNetwork(p) => p.num_rooms,
            SystemConfig::External(e) => e.subsystems,
        }
    }

    pub fn set_subsystem_count(&mut self, m: usize) {
        match self {
            SystemConfig::RoomNetwork(p) => p.num_rooms = m,
            SystemConfig::External(e) => e.subsystems = m,
        }
    }

    pub fn build(&self) -> Result<BuiltNetwork, ConfigError> {
        match self {
            SystemConfig::RoomNetwork(p) => {
                let net = build_room_network(p)?;
                Ok(BuiltNetwork {
                    subsystems: net.rooms,
                    topology: net.topology,
                })
            }
            SystemConfig::External(e) => e.build(),
        }
    }
}

impl ExternalSystem {
    fn build(&self) -> Result<BuiltNetwork, ConfigError> {
        let m = self.subsystems;
        if m == 0 {
            return Err(ConfigError::Invalid(
                "external system needs at least one subsystem".into(),
            ));
        }
        let topology = match &self.wiring {
            Some(w) => InterconnectionTopology::new(w.clone()),
            None => InterconnectionTopology::circular(m),
        };
        if topology.num_subsystems() != m {
            return Err(ConfigError::Invalid(format!(
                "wiring lists {} subsystems, expected {m}",
                topology.num_subsystems()
            )));
        }
        let oracle = Arc::new(
            ExternalOracle::spawn(
                &self.command,
                &self.args,
                Duration::from_millis(self.timeout_ms),
            )
            .map_err(ModelError::from)?,
        );
        let mut subsystems = Vec::with_capacity(m);
        let mut sigs = Vec::with_capacity(m);
        for i in 0..m {
            let dist: Vec<Interval> = topology
                .neighbors(i)
                .iter()
                .flat_map(|_| self.state_box.intervals().iter().copied())
                .collect();
            let sig = SystemSignature::new(
                InputSet::Finite(self.inputs.clone()),
                self.state_box.clone(),
                BoxSet::new(dist),
            )?;
            sigs.push(sig.clone());
            subsystems.push(BlackBoxSystem::new(
                format!("subsystem-{i}"),
                sig,
                oracle.clone(),
            )?);
        }
        topology.validate(&sigs)?;
        Ok(BuiltNetwork {
            subsystems,
            topology,
        })
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.grid.state_sigma > 0.0 && self.grid.state_sigma.is_finite()) {
            return bad(format!(
                "state_sigma {} must be positive",
                self.grid.state_sigma
            ));
        }
        let ds = self.grid.disturbance_sigma();
        if !(ds > 0.0 && ds.is_finite()) {
            return bad(format!("disturbance_sigma {ds} must be positive"));
        }
        if !(self.compose.slack > 0.0 && self.compose.slack < 1.0) {
            return bad(format!(
                "compose slack {} must lie in (0, 1)",
                self.compose.slack
            ));
        }
        if let Some(r) = &self.compose.reference {
            if r.subsystems == 0 {
                return bad("reference gains need at least one subsystem".into());
            }
        }
        self.certify
            .to_config(self.seed)
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let SystemConfig::RoomNetwork(p) = &self.system {
            p.validate()?;
        }
        Ok(())
    }

    /// Seed of the samples drawn for subsystem `i`.
    pub fn subsystem_seed(&self, i: usize) -> u64 {
        // kept below 2^63 so that it survives TOML integers
        self.seed.wrapping_add(
            (i as u64)
                .wrapping_add(1)
                .wrapping_mul(0x9E37_79B9_7F4A_7C15),
        ) & (i64::MAX as u64)
    }

    /// Room network with the case-study sample parameters (`ε = 0.001`,
    /// `β = 1e-4`, `c = 7`) and boxes that keep `η/γ` below one.
    pub fn case_study(rooms: usize) -> Self {
        let mut cfg = Self::desk(rooms);
        cfg.certify.eps = vec![0.001];
        cfg.certify.beta = 1e-4;
        cfg.certify.reference_q = Some(REPORTED_CASE_STUDY_Q);
        cfg.certify.row_cap = usize::MAX;
        cfg.compose.reference = Some(ReferenceGains {
            subsystems: 100,
            gamma: 5.8,
            mu: 0.995,
            eta: 0.02,
            theta: 0.4051,
            beta: 1e-4,
        });
        cfg
    }

    /// Room network at desk scale: `ε = 0.05`, `β = 0.01`, `c = 7`.
    pub fn desk(rooms: usize) -> Self {
        Self {
            seed: 42,
            output_dir: None,
            system: SystemConfig::RoomNetwork(RoomNetworkParams::with_rooms(rooms)),
            grid: GridConfig {
                state_sigma: 0.025,
                disturbance_sigma: None,
            },
            certify: CertifySection {
                basis: BasisSpec::scalar_powers(&[4, 2, 0]),
                mu_tildes: vec![0.5],
                eps: vec![0.05],
                beta: 0.01,
                c: Some(7),
                q_override: None,
                reference_q: None,
                boxes: VariableBoxes {
                    gamma: Interval::new(1.0, 1.0),
                    eta: Interval::new(0.0, 0.005),
                    theta: Interval::new(0.0, 30.0),
                    phi: Interval::new(0.0, 100.0),
                },
                psi: DEFAULT_PSI,
                lambda: DEFAULT_LAMBDA,
                lipschitz: LipschitzSource::Data {
                    pairs: 1000,
                    seed: 1,
                    safety_factor: 1.5,
                    j_f: None,
                    p: None,
                },
                kappa: KappaSource::default(),
                refine: true,
                row_cap: DEFAULT_ROW_CAP,
            },
            compose: ComposeSection::default(),
            synthesis: SynthesisSection {
                policy: InputPolicy::Deepest,
                ..SynthesisSection::default()
            },
        }
    }
}
