//! End-to-end runs: sample → certify → compose → abstract → synthesize → simulate,
//! with every intermediate artifact written under one output directory.
//!
//! Each stage reads what it needs from memory when an earlier stage of the same
//! run produced it, then from the output directory, and computes it otherwise.

use std::fmt;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compose::{
    build_gain_matrix, check_circularity, check_decrease, compose_abf, find_scalings, relation,
    verify_scalings, CircularityReport, ComposedAbf, DecreaseReport, SimulationRelation,
};
use crate::config::{BuiltNetwork, ConfigError, PipelineConfig, ReferenceGains};
use crate::io::{self, IoError};
use crate::model::{BoxSet, InterconnectionTopology};
use crate::quantize::{make_grid, UniformGrid};
use crate::scenario::{
    certify_with_samples, draw_samples, ApbfCertificate, ConvertedGains, SampleBatch,
    SampleSizeReport,
};
use crate::synthesize::{
    enumerate_abstraction, refine_controller, safe_cells, safety_synthesis_with,
    simulate_closed_loop, Controller, ControllerTable, FiniteTransitionSystem, RefinedController,
    Trajectory,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Sample,
    Certify,
    Compose,
    Abstract,
    Synthesize,
    Simulate,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Sample => "sample",
            Stage::Certify => "certify",
            Stage::Compose => "compose",
            Stage::Abstract => "abstract",
            Stage::Synthesize => "synthesize",
            Stage::Simulate => "simulate",
            Stage::Report => "report",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
#[error("{stage} stage failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    pub source: Box<dyn std::error::Error + Send + Sync>,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Into<Box<dyn std::error::Error + Send + Sync>>> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError {
            stage,
            source: e.into(),
        })
    }
}

fn fail<T>(stage: Stage, message: String) -> Result<T, PipelineError> {
    Err(PipelineError {
        stage,
        source: message.into(),
    })
}

/// File names inside an output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn samples(&self, i: usize) -> PathBuf {
        self.root.join("samples").join(format!("subsystem_{i}.csv"))
    }

    pub fn certificate(&self, i: usize) -> PathBuf {
        self.root
            .join("certificates")
            .join(format!("subsystem_{i}.toml"))
    }

    pub fn composition(&self) -> PathBuf {
        self.root.join("composed.toml")
    }

    pub fn abstraction(&self, i: usize) -> PathBuf {
        self.root
            .join("abstractions")
            .join(format!("subsystem_{i}.txt"))
    }

    pub fn controller(&self, i: usize) -> PathBuf {
        self.root
            .join("controllers")
            .join(format!("subsystem_{i}.csv"))
    }

    pub fn trajectories(&self) -> PathBuf {
        self.root.join("trajectories.csv")
    }

    pub fn simulation(&self) -> PathBuf {
        self.root.join("simulation.toml")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.toml")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.txt")
    }
}

/// Composition of the reported per-subsystem gains over a circular network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceComposition {
    pub subsystems: usize,
    pub circularity_passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worst_two_cycle: Option<f64>,
    /// Whether `κ_i = 1` for all `i` satisfies the scaled small-gain condition.
    pub unit_scaling_accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_tilde: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

/// Composes `r.subsystems` copies of a certificate with the reported gains.
pub fn compose_reference(r: &ReferenceGains, state_dim: usize) -> ReferenceComposition {
    let gains = ConvertedGains {
        gamma: r.gamma,
        mu: r.mu,
        eta: r.eta,
        theta: r.theta,
        psi: crate::scenario::DEFAULT_PSI,
        lambda: crate::scenario::DEFAULT_LAMBDA,
    };
    let certs: Vec<ApbfCertificate> = (0..r.subsystems)
        .map(|i| ApbfCertificate::assumed(&format!("reference-{i}"), state_dim, gains, r.beta))
        .collect();
    let topo = if r.subsystems >= 2 {
        InterconnectionTopology::circular(r.subsystems)
    } else {
        InterconnectionTopology::new(vec![Vec::new(); r.subsystems])
    };
    let mut out = ReferenceComposition {
        subsystems: r.subsystems,
        circularity_passed: false,
        worst_two_cycle: None,
        unit_scaling_accepted: false,
        eps_tilde: None,
        confidence: None,
    };
    let Ok(g) = build_gain_matrix(&certs, &topo) else {
        return out;
    };
    let circ = check_circularity(&g);
    out.circularity_passed = circ.passed;
    out.worst_two_cycle = circ.worst_two_cycle;
    if let Ok(k) = verify_scalings(&g, &vec![1.0; r.subsystems]) {
        out.unit_scaling_accepted = true;
        if let Ok(c) = compose_abf(&certs, &g, &k) {
            out.eps_tilde = Some(relation(&c).eps_tilde);
            out.confidence = Some(c.confidence);
        }
    }
    out
}

/// Everything the compose stage produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionRecord {
    pub eps_tilde: f64,
    pub circularity: CircularityReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decrease: Option<DecreaseReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceComposition>,
    pub composed: ComposedAbf,
}

/// Closed-loop results besides the recorded trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub horizon: usize,
    pub initial_state: Vec<Vec<f64>>,
    pub recorded_safe: bool,
    /// Runs started from winning cell centers; each center of each subsystem is used at least once.
    pub center_runs: usize,
    pub center_failures: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_failure: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncated: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeSummary {
    pub eps: Vec<f64>,
    pub beta: f64,
    pub c: usize,
    pub computed: usize,
    pub used: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateSummary {
    pub subsystem: usize,
    pub q: usize,
    pub xi: f64,
    pub lipschitz: f64,
    pub kappa_inv: f64,
    pub margin: f64,
    pub certified: bool,
    pub gamma: f64,
    pub mu: f64,
    pub eta: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionSummary {
    pub circularity_passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worst_two_cycle: Option<f64>,
    pub kappa: Vec<f64>,
    pub gamma: f64,
    pub mu: f64,
    pub theta: f64,
    pub eps_tilde: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisSummary {
    pub states: Vec<usize>,
    pub winning: Vec<usize>,
}

/// Headline numbers of a run, gathered from the artifacts on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub subsystems: usize,
    pub sample_size: SampleSizeSummary,
    #[serde(default)]
    pub certificates: Vec<CertificateSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub composition: Option<CompositionSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceComposition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthesis: Option<SynthesisSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationRecord>,
}

impl RunSummary {
    pub fn render(&self) -> String {
        let mut s = format!(
            "netabs report\nsubsystems: {}, seed: {}\n",
            self.subsystems, self.seed
        );
        let ss = &self.sample_size;
        match SampleSizeReport::new(&ss.eps, ss.beta, ss.c, ss.reference) {
            Ok(r) => s.push_str(&r.render()),
            Err(e) => s.push_str(&format!("sample size: {e}\n")),
        }
        s.push_str(&format!(
            "sample size: samples used per subsystem Q = {}\n",
            ss.used
        ));
        if !self.certificates.is_empty() {
            s.push_str("certificates:\n");
        }
        for c in &self.certificates {
            s.push_str(&format!(
                "  subsystem {}: Q = {}, xi* = {}, L = {}, kappa_inv = {}, margin = {}, {}, gamma = {}, mu = {}, eta = {}, theta = {}\n",
                c.subsystem,
                c.q,
                c.xi,
                c.lipschitz,
                c.kappa_inv,
                c.margin,
                if c.certified { "certified" } else { "NOT certified" },
                c.gamma,
                c.mu,
                c.eta,
                c.theta
            ));
        }
        if let Some(c) = &self.composition {
            s.push_str(&format!(
                "composition: circularity {}, worst 2-cycle product {}, kappa = {:?}\n\
                 composition: gamma = {}, mu = {}, theta = {}, eps_tilde = {}, confidence = {}\n",
                if c.circularity_passed {
                    "passed"
                } else {
                    "FAILED"
                },
                c.worst_two_cycle
                    .map_or("none".to_string(), |v| v.to_string()),
                c.kappa,
                c.gamma,
                c.mu,
                c.theta,
                c.eps_tilde,
                c.confidence
            ));
        }
        if let Some(r) = &self.reference {
            s.push_str(&format!(
                "reference gains over {} subsystems: circularity {}, worst 2-cycle product {}, unit scaling {}, eps_tilde = {}, confidence = {}\n",
                r.subsystems,
                if r.circularity_passed { "passed" } else { "FAILED" },
                r.worst_two_cycle.map_or("none".to_string(), |v| v.to_string()),
                if r.unit_scaling_accepted { "accepted" } else { "rejected" },
                r.eps_tilde.map_or("n/a".to_string(), |v| v.to_string()),
                r.confidence.map_or("n/a".to_string(), |v| v.to_string())
            ));
        }
        if let Some(y) = &self.synthesis {
            s.push_str(&format!(
                "synthesis: winning cells {:?} of {:?}\n",
                y.winning, y.states
            ));
        }
        if let Some(m) = &self.simulation {
            s.push_str(&format!(
                "simulation: horizon {}, recorded run {}, center runs {}, failures {}\n",
                m.horizon,
                if m.recorded_safe { "safe" } else { "UNSAFE" },
                m.center_runs,
                m.center_failures
            ));
            if let Some(f) = &m.first_failure {
                s.push_str(&format!("simulation: first failure: {f}\n"));
            }
            if let Some(t) = &m.truncated {
                s.push_str(&format!("simulation: recorded run truncated: {t}\n"));
            }
        }
        s
    }
}

/// A run over one configuration and output directory.
pub struct Pipeline {
    cfg: PipelineConfig,
    layout: Layout,
    net: BuiltNetwork,
    grids: Vec<(UniformGrid, UniformGrid)>,
    samples: Option<Vec<SampleBatch>>,
    abstractions: Option<Vec<FiniteTransitionSystem>>,
    certificates: Option<Vec<ApbfCertificate>>,
    composition: Option<CompositionRecord>,
    controllers: Option<Vec<ControllerTable>>,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, out: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        cfg.validate().at(Stage::Config)?;
        if cfg.seed > i64::MAX as u64 {
            return fail(
                Stage::Config,
                format!("seed {} exceeds {}", cfg.seed, i64::MAX),
            );
        }
        let net = cfg.system.build().at(Stage::Config)?;
        let grids = net
            .subsystems
            .iter()
            .map(|s| {
                let sig = s.signature();
                Ok((
                    make_grid(&sig.state_box, cfg.grid.state_sigma)?,
                    make_grid(&sig.disturbance_box, cfg.grid.disturbance_sigma())?,
                ))
            })
            .collect::<Result<Vec<_>, crate::quantize::QuantizeError>>()
            .at(Stage::Config)?;
        let layout = Layout::new(out);
        io::write_text(&layout.config(), &cfg.to_toml().at(Stage::Config)?).at(Stage::Config)?;
        Ok(Self {
            cfg,
            layout,
            net,
            grids,
            samples: None,
            abstractions: None,
            certificates: None,
            composition: None,
            controllers: None,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn network(&self) -> &BuiltNetwork {
        &self.net
    }

    pub fn grids(&self) -> &[(UniformGrid, UniformGrid)] {
        &self.grids
    }

    fn m(&self) -> usize {
        self.net.subsystems.len()
    }

    fn sample_size(&self) -> Result<SampleSizeSummary, PipelineError> {
        let cc = self.cfg.certify.to_config(self.cfg.seed);
        let eps = cc.eps_list().at(Stage::Sample)?;
        let computed = cc.computed_sample_size().at(Stage::Sample)?;
        Ok(SampleSizeSummary {
            eps,
            beta: cc.beta,
            c: cc.unknowns(),
            computed,
            used: cc.q_override.unwrap_or(computed),
            reference: self.cfg.certify.reference_q,
        })
    }

    /// Draws fresh samples for every subsystem and writes them.
    pub fn sample(&mut self) -> Result<&[SampleBatch], PipelineError> {
        let q = self.sample_size()?.used;
        let mut out = Vec::with_capacity(self.m());
        for (i, sys) in self.net.subsystems.iter().enumerate() {
            let batch =
                draw_samples(sys.signature(), q, self.cfg.subsystem_seed(i)).at(Stage::Sample)?;
            io::write_samples(&self.layout.samples(i), &batch).at(Stage::Sample)?;
            out.push(batch);
        }
        info!("sampled {q} points for each of {} subsystems", self.m());
        Ok(self.samples.insert(out))
    }

    fn load_samples(&mut self) -> Result<Vec<SampleBatch>, PipelineError> {
        if let Some(s) = &self.samples {
            return Ok(s.clone());
        }
        if (0..self.m()).all(|i| self.layout.samples(i).exists()) {
            let s = (0..self.m())
                .map(|i| io::read_samples(&self.layout.samples(i)))
                .collect::<Result<Vec<_>, IoError>>()
                .at(Stage::Sample)?;
            return Ok(self.samples.insert(s).clone());
        }
        Ok(self.sample()?.to_vec())
    }

    /// Enumerates the abstraction of every subsystem and writes it.
    pub fn abstraction(&mut self) -> Result<&[FiniteTransitionSystem], PipelineError> {
        let mut out = Vec::with_capacity(self.m());
        for (i, sys) in self.net.subsystems.iter().enumerate() {
            let (sg, dg) = &self.grids[i];
            let fts = enumerate_abstraction(sys, sg, dg).at(Stage::Abstract)?;
            let inputs: Vec<Vec<f64>> = sys.signature().inputs.iter().collect();
            io::write_abstraction(&self.layout.abstraction(i), sys.name(), &inputs, &fts)
                .at(Stage::Abstract)?;
            out.push(fts);
        }
        info!("enumerated {} abstractions", self.m());
        Ok(self.abstractions.insert(out))
    }

    fn load_abstractions(&mut self) -> Result<Vec<FiniteTransitionSystem>, PipelineError> {
        if let Some(a) = &self.abstractions {
            return Ok(a.clone());
        }
        if (0..self.m()).all(|i| self.layout.abstraction(i).exists()) {
            let mut out = Vec::with_capacity(self.m());
            for i in 0..self.m() {
                let (_, fts) =
                    io::read_abstraction(&self.layout.abstraction(i)).at(Stage::Abstract)?;
                if fts.state_grid() != Some(&self.grids[i].0)
                    || fts.disturbance_grid() != Some(&self.grids[i].1)
                {
                    return fail(
                        Stage::Abstract,
                        format!(
                            "{} was built on other grids",
                            self.layout.abstraction(i).display()
                        ),
                    );
                }
                out.push(fts);
            }
            return Ok(self.abstractions.insert(out).clone());
        }
        Ok(self.abstraction()?.to_vec())
    }

    /// Certifies every subsystem and writes the certificates.
    pub fn certify(&mut self) -> Result<&[ApbfCertificate], PipelineError> {
        let samples = self.load_samples()?;
        let abstractions = self.load_abstractions()?;
        let mut out = Vec::with_capacity(self.m());
        for (i, sys) in self.net.subsystems.iter().enumerate() {
            let (sg, dg) = &self.grids[i];
            let cc = self.cfg.certify.to_config(self.cfg.subsystem_seed(i));
            let cert = certify_with_samples(sys, sg, dg, abstractions[i].table(), &samples[i], &cc)
                .at(Stage::Certify)?;
            info!(
                "subsystem {i}: xi* = {}, margin = {}, certified = {}",
                cert.decision.xi, cert.margin, cert.certified
            );
            io::write_toml(&self.layout.certificate(i), "certificate", &cert).at(Stage::Certify)?;
            out.push(cert);
        }
        Ok(self.certificates.insert(out))
    }

    fn load_certificates(&mut self) -> Result<Vec<ApbfCertificate>, PipelineError> {
        if let Some(c) = &self.certificates {
            return Ok(c.clone());
        }
        if (0..self.m()).all(|i| self.layout.certificate(i).exists()) {
            let c = (0..self.m())
                .map(|i| io::read_toml(&self.layout.certificate(i)))
                .collect::<Result<Vec<_>, IoError>>()
                .at(Stage::Certify)?;
            return Ok(self.certificates.insert(c).clone());
        }
        Ok(self.certify()?.to_vec())
    }

    /// Composes the certificates into a network function and writes it.
    pub fn compose(&mut self) -> Result<&CompositionRecord, PipelineError> {
        let certs = self.load_certificates()?;
        if let Some(i) = certs.iter().position(|c| !c.certified) {
            return fail(
                Stage::Compose,
                format!(
                    "subsystem {i} is not certified (margin {})",
                    certs[i].margin
                ),
            );
        }
        let g = build_gain_matrix(&certs, &self.net.topology).at(Stage::Compose)?;
        let circularity = check_circularity(&g);
        if !circularity.passed {
            return fail(
                Stage::Compose,
                format!(
                    "circularity fails on cycle {:?} with gain product {:?}",
                    circularity.witness, circularity.witness_product
                ),
            );
        }
        let scalings = find_scalings(&g, self.cfg.compose.slack).at(Stage::Compose)?;
        let composed = compose_abf(&certs, &g, &scalings).at(Stage::Compose)?;
        let rel = relation(&composed);
        let decrease = if self.cfg.compose.decrease_trials > 0 {
            let grids: Vec<UniformGrid> = self.grids.iter().map(|g| g.0.clone()).collect();
            Some(
                check_decrease(
                    &rel,
                    &self.net.subsystems,
                    &self.net.topology,
                    &grids,
                    self.cfg.compose.decrease_trials,
                    self.cfg.seed,
                )
                .at(Stage::Compose)?,
            )
        } else {
            None
        };
        let reference = self
            .cfg
            .compose
            .reference
            .map(|r| compose_reference(&r, self.net.subsystems[0].signature().state_dim));
        let record = CompositionRecord {
            eps_tilde: rel.eps_tilde,
            circularity,
            decrease,
            reference,
            composed,
        };
        io::write_toml(&self.layout.composition(), "composition", &record).at(Stage::Compose)?;
        info!(
            "composed: theta = {}, eps_tilde = {}",
            record.composed.theta, record.eps_tilde
        );
        Ok(self.composition.insert(record))
    }

    fn load_composition(&mut self) -> Result<CompositionRecord, PipelineError> {
        if let Some(c) = &self.composition {
            return Ok(c.clone());
        }
        if self.layout.composition().exists() {
            let c: CompositionRecord =
                io::read_toml(&self.layout.composition()).at(Stage::Compose)?;
            return Ok(self.composition.insert(c).clone());
        }
        Ok(self.compose()?.clone())
    }

    fn safe_boxes(&self) -> Vec<BoxSet> {
        self.net
            .subsystems
            .iter()
            .map(|s| {
                self.cfg
                    .synthesis
                    .safe_box
                    .clone()
                    .unwrap_or_else(|| s.signature().state_box.clone())
            })
            .collect()
    }

    /// Solves the safety game on every abstraction and writes the controllers.
    pub fn synthesize(&mut self) -> Result<&[ControllerTable], PipelineError> {
        let abstractions = self.load_abstractions()?;
        let safe = self.safe_boxes();
        let mut out = Vec::with_capacity(self.m());
        for (i, fts) in abstractions.iter().enumerate() {
            let sb = &safe[i];
            if sb.dim() != self.grids[i].0.dim() {
                return fail(
                    Stage::Synthesize,
                    format!("safe box has dimension {}", sb.dim()),
                );
            }
            let ctrl = safety_synthesis_with(
                fts,
                &safe_cells(&self.grids[i].0, sb),
                self.cfg.synthesis.policy,
            )
            .at(Stage::Synthesize)?;
            ctrl.verify(fts).at(Stage::Synthesize)?;
            io::write_controller(&self.layout.controller(i), &ctrl).at(Stage::Synthesize)?;
            info!(
                "subsystem {i}: {} of {} cells winning",
                ctrl.winning_count(),
                fts.states()
            );
            out.push(ctrl);
        }
        Ok(self.controllers.insert(out))
    }

    fn load_controllers(&mut self) -> Result<Vec<ControllerTable>, PipelineError> {
        if let Some(c) = &self.controllers {
            return Ok(c.clone());
        }
        if (0..self.m()).all(|i| self.layout.controller(i).exists()) {
            let c = (0..self.m())
                .map(|i| io::read_controller(&self.layout.controller(i)))
                .collect::<Result<Vec<_>, IoError>>()
                .at(Stage::Synthesize)?;
            return Ok(self.controllers.insert(c).clone());
        }
        Ok(self.synthesize()?.to_vec())
    }

    /// Refined controllers of every subsystem.
    pub fn refined_controllers(
        &mut self,
    ) -> Result<(SimulationRelation, Vec<RefinedController>), PipelineError> {
        let record = self.load_composition()?;
        let controllers = self.load_controllers()?;
        let rel = relation(&record.composed);
        let refined = controllers
            .iter()
            .enumerate()
            .map(|(i, c)| refine_controller(c, &rel, i, &self.grids[i].0))
            .collect::<Result<Vec<_>, _>>()
            .at(Stage::Simulate)?;
        Ok((rel, refined))
    }

    /// Runs the closed loop from `x0` with the refined controllers.
    pub fn simulate_from(
        &mut self,
        x0: &[Vec<f64>],
        horizon: usize,
    ) -> Result<Vec<Trajectory>, PipelineError> {
        let (_, refined) = self.refined_controllers()?;
        self.run_closed_loop(&refined, x0, horizon)
    }

    fn run_closed_loop(
        &self,
        refined: &[RefinedController],
        x0: &[Vec<f64>],
        horizon: usize,
    ) -> Result<Vec<Trajectory>, PipelineError> {
        let ctrls: Vec<&dyn Controller> = refined.iter().map(|c| c as &dyn Controller).collect();
        simulate_closed_loop(
            &self.net.subsystems,
            &self.net.topology,
            &ctrls,
            &self.safe_boxes(),
            x0,
            horizon,
        )
        .at(Stage::Simulate)
    }

    /// Simulates the recorded run and the winning-center runs; writes the trajectory file.
    pub fn simulate(&mut self) -> Result<SimulationRecord, PipelineError> {
        let controllers = self.load_controllers()?;
        let (_, refined) = self.refined_controllers()?;
        let horizon = self.cfg.synthesis.horizon;
        let centers: Vec<Vec<Vec<f64>>> = controllers
            .iter()
            .enumerate()
            .map(|(i, c)| {
                c.winning_states()
                    .map(|s| self.grids[i].0.representative(s))
                    .collect()
            })
            .collect();
        let x0: Vec<Vec<f64>> = match &self.cfg.synthesis.initial_state {
            Some(x) => vec![x.clone(); self.m()],
            None => centers
                .iter()
                .enumerate()
                .map(|(i, cs)| {
                    let mid = self.net.subsystems[i].signature().state_box.center();
                    let dist = |c: &Vec<f64>| {
                        c.iter()
                            .zip(&mid)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                    };
                    cs.iter()
                        .min_by(|a, b| dist(a).total_cmp(&dist(b)))
                        .cloned()
                        .unwrap_or(mid)
                })
                .collect(),
        };
        let trajs = self.run_closed_loop(&refined, &x0, horizon)?;
        let inputs: Vec<Vec<Vec<f64>>> = self
            .net
            .subsystems
            .iter()
            .map(|s| s.signature().inputs.iter().collect())
            .collect();
        io::write_trajectories(&self.layout.trajectories(), &trajs, &inputs).at(Stage::Simulate)?;
        let truncated = trajs.iter().find_map(|t| t.truncated.clone());
        let mut record = SimulationRecord {
            horizon,
            initial_state: x0,
            recorded_safe: trajs.iter().all(|t| t.all_safe()) && truncated.is_none(),
            center_runs: 0,
            center_failures: 0,
            first_failure: None,
            truncated,
        };
        if self.cfg.synthesis.check_centers {
            let runs = centers.iter().map(Vec::len).max().unwrap_or(0);
            for k in 0..runs {
                // subsystem i starts from its ((k + 7i) mod |W_i|)-th winning center
                let start: Vec<Vec<f64>> = centers
                    .iter()
                    .enumerate()
                    .map(|(i, cs)| cs[(k + 7 * i) % cs.len()].clone())
                    .collect();
                let t = self.run_closed_loop(&refined, &start, horizon)?;
                record.center_runs += 1;
                let bad = t.iter().find(|tr| !tr.all_safe() || tr.truncated.is_some());
                if let Some(tr) = bad {
                    record.center_failures += 1;
                    if record.first_failure.is_none() {
                        record.first_failure = Some(format!(
                            "run {k} from {start:?}: subsystem {} {}",
                            tr.subsystem,
                            tr.truncated
                                .clone()
                                .unwrap_or_else(|| "left its safe set".into())
                        ));
                    }
                }
            }
        }
        io::write_toml(&self.layout.simulation(), "simulation record", &record)
            .at(Stage::Simulate)?;
        info!(
            "simulated {} center runs, {} failures",
            record.center_runs, record.center_failures
        );
        Ok(record)
    }

    /// Gathers the summary from the artifacts present and writes `summary.toml` and `report.txt`.
    pub fn report(&mut self) -> Result<RunSummary, PipelineError> {
        let m = self.m();
        let all = |f: &dyn Fn(usize) -> PathBuf| (0..m).all(|i| f(i).exists());
        let certificates: Vec<ApbfCertificate> =
            if self.certificates.is_some() || all(&|i| self.layout.certificate(i)) {
                self.load_certificates()?
            } else {
                Vec::new()
            };
        let composition = if self.composition.is_some() || self.layout.composition().exists() {
            Some(self.load_composition()?)
        } else {
            None
        };
        let controllers = if self.controllers.is_some() || all(&|i| self.layout.controller(i)) {
            Some(self.load_controllers()?)
        } else {
            None
        };
        let simulation = if self.layout.simulation().exists() {
            Some(io::read_toml::<SimulationRecord>(&self.layout.simulation()).at(Stage::Report)?)
        } else {
            None
        };
        let summary =
            RunSummary {
                seed: self.cfg.seed,
                subsystems: m,
                sample_size: self.sample_size().map_err(|e| PipelineError {
                    stage: Stage::Report,
                    source: e.source,
                })?,
                certificates: certificates
                    .iter()
                    .enumerate()
                    .map(|(i, c)| CertificateSummary {
                        subsystem: i,
                        q: c.q,
                        xi: c.decision.xi,
                        lipschitz: c.lipschitz,
                        kappa_inv: c.kappa_inv,
                        margin: c.margin,
                        certified: c.certified,
                        gamma: c.gains.gamma,
                        mu: c.gains.mu,
                        eta: c.gains.eta,
                        theta: c.gains.theta,
                    })
                    .collect(),
                composition: composition.as_ref().map(|r| CompositionSummary {
                    circularity_passed: r.circularity.passed,
                    worst_two_cycle: r.circularity.worst_two_cycle,
                    kappa: r.composed.scalings.kappa.clone(),
                    gamma: r.composed.gamma,
                    mu: r.composed.mu,
                    theta: r.composed.theta,
                    eps_tilde: r.eps_tilde,
                    confidence: r.composed.confidence,
                }),
                reference: match composition.as_ref().and_then(|r| r.reference.clone()) {
                    Some(r) => Some(r),
                    None => self.cfg.compose.reference.map(|r| {
                        compose_reference(&r, self.net.subsystems[0].signature().state_dim)
                    }),
                },
                synthesis: controllers.map(|cs| SynthesisSummary {
                    states: cs.iter().map(|c| c.winning.len()).collect(),
                    winning: cs.iter().map(ControllerTable::winning_count).collect(),
                }),
                simulation,
            };
        io::write_toml(&self.layout.summary(), "summary", &summary).at(Stage::Report)?;
        io::write_text(&self.layout.report(), &summary.render()).at(Stage::Report)?;
        Ok(summary)
    }

    /// All stages in order, each recomputed.
    pub fn run(&mut self) -> Result<RunSummary, PipelineError> {
        self.sample()?;
        self.abstraction()?;
        self.certify()?;
        self.compose()?;
        self.synthesize()?;
        self.simulate()?;
        self.report()
    }
}

/// Runs every stage of `cfg` into `out` and returns the summary.
pub fn run_pipeline(
    cfg: PipelineConfig,
    out: impl Into<PathBuf>,
) -> Result<RunSummary, PipelineError> {
    Pipeline::new(cfg, out)?.run()
}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        PipelineError {
            stage: Stage::Config,
            source: e.into(),
        }
    }
}
