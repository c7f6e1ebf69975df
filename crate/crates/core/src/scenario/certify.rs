//! The probabilistic certificate: sample count, one program per `μ̃`, the
//! Lipschitz/κ correction and the gain conversion.

use serde::{Deserialize, Serialize};

use super::basis::{BasisMode, BasisSpec};
use super::kappa::kappa_inverse;
use super::lipschitz::{
    estimate_lipschitz_data, lipschitz_linear, lipschitz_nonlinear, LipschitzBreakdown,
    LipschitzSource, Matrix,
};
use super::sample_size::min_sample_size;
use super::sampling::{draw_samples, SampleBatch};
use super::sop::{
    assemble_with_table, solve_lp, SolveOptions, VariableBoxes, DEFAULT_ROW_CAP, ETA, GAMMA, PHI,
    THETA,
};
use super::ScenarioError;
use crate::model::BlackBoxSystem;
use crate::quantize::{tabulate_transitions, TransitionTable, UniformGrid};

pub const DEFAULT_PSI: f64 = 0.99;
pub const DEFAULT_LAMBDA: f64 = 1.0;

/// How `κ⁻¹(ε_t)` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KappaSource {
    /// Uniform sampling on `X × D`; `volume` defaults to `Vol(X × D)`.
    Uniform {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        volume: Option<f64>,
    },
    Fixed {
        value: f64,
    },
}

impl Default for KappaSource {
    fn default() -> Self {
        KappaSource::Uniform { volume: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyConfig {
    pub basis: BasisSpec,
    pub mu_tildes: Vec<f64>,
    /// One `ε_t` per `μ̃_t`; a single value is shared by all.
    pub eps: Vec<f64>,
    pub beta: f64,
    /// Number of unknowns in the program; defaults to `z + 4`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<usize>,
    /// Use this many samples instead of the computed minimum.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_override: Option<usize>,
    #[serde(default)]
    pub boxes: VariableBoxes,
    #[serde(default = "default_psi")]
    pub psi: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    pub lipschitz: LipschitzSource,
    #[serde(default)]
    pub kappa: KappaSource,
    pub seed: u64,
    #[serde(default = "default_refine")]
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

fn default_refine() -> bool {
    true
}

fn default_row_cap() -> usize {
    DEFAULT_ROW_CAP
}

impl CertifyConfig {
    pub fn new(
        basis: BasisSpec,
        mu_tildes: Vec<f64>,
        eps: f64,
        beta: f64,
        lipschitz: LipschitzSource,
    ) -> Self {
        Self {
            basis,
            mu_tildes,
            eps: vec![eps],
            beta,
            c: None,
            q_override: None,
            boxes: VariableBoxes::default(),
            psi: DEFAULT_PSI,
            lambda: DEFAULT_LAMBDA,
            lipschitz,
            kappa: KappaSource::default(),
            seed: 0,
            refine: true,
            row_cap: DEFAULT_ROW_CAP,
        }
    }

    pub fn unknowns(&self) -> usize {
        self.c.unwrap_or(self.basis.len() + 4)
    }

    pub fn eps_list(&self) -> Result<Vec<f64>, ScenarioError> {
        let l = self.mu_tildes.len();
        match self.eps.len() {
            1 => Ok(vec![self.eps[0]; l]),
            n if n == l => Ok(self.eps.clone()),
            n => Err(ScenarioError::Precondition(format!(
                "{n} eps values for {l} mu_tilde values"
            ))),
        }
    }

    /// Smallest admissible sample count for this configuration.
    pub fn computed_sample_size(&self) -> Result<usize, ScenarioError> {
        min_sample_size(&self.eps_list()?, self.beta, self.unknowns())
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.mu_tildes.is_empty() {
            return Err(ScenarioError::Precondition(
                "need at least one mu_tilde".into(),
            ));
        }
        if let Some(m) = self.mu_tildes.iter().find(|m| !(**m > 0.0 && **m < 1.0)) {
            return Err(ScenarioError::Precondition(format!(
                "mu_tilde {m} must lie in (0, 1)"
            )));
        }
        if let Some(e) = self.eps_list()?.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
            return Err(ScenarioError::Precondition(format!(
                "eps {e} must lie in (0, 1)"
            )));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(ScenarioError::Precondition(format!(
                "beta {} must lie in (0, 1)",
                self.beta
            )));
        }
        if !(self.psi > 0.0 && self.psi < 1.0) || !(self.lambda > 0.0) {
            return Err(ScenarioError::Precondition(
                "need psi in (0, 1) and lambda > 0".into(),
            ));
        }
        if self.unknowns() == 0 {
            return Err(ScenarioError::Precondition("c must be at least 1".into()));
        }
        if self.q_override == Some(0) {
            return Err(ScenarioError::Precondition(
                "sample count override must be positive".into(),
            ));
        }
        self.boxes.validate()
    }
}

/// Optimal decision of one program, `G` split into its parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionVector {
    pub gamma: f64,
    pub eta_t: f64,
    pub theta_t: f64,
    pub phi: Vec<f64>,
    pub xi: f64,
    pub mu_t: f64,
}

impl DecisionVector {
    fn from_g(g: &[f64], xi: f64, mu_t: f64) -> Self {
        Self {
            gamma: g[GAMMA],
            eta_t: g[ETA],
            theta_t: g[THETA],
            phi: g[PHI..].to_vec(),
            xi,
            mu_t,
        }
    }
}

/// `(γ, μ, η, θ)` of the converted function together with `(ψ, λ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvertedGains {
    pub gamma: f64,
    pub mu: f64,
    pub eta: f64,
    pub theta: f64,
    pub psi: f64,
    pub lambda: f64,
}

/// `μ = 1 − (1−ψ)(1−μ̃)`, `η = (1+λ)η̃/((1−μ̃)ψ)`, `θ = (1+1/λ)θ̃/((1−μ̃)ψ)`.
pub fn convert_gains(
    mu_t: f64,
    eta_t: f64,
    theta_t: f64,
    psi: f64,
    lambda: f64,
) -> Result<(f64, f64, f64), ScenarioError> {
    if !(psi > 0.0 && psi < 1.0) {
        return Err(ScenarioError::Precondition(format!(
            "psi {psi} must lie in (0, 1)"
        )));
    }
    if !(lambda > 0.0) {
        return Err(ScenarioError::Precondition(format!(
            "lambda {lambda} must be positive"
        )));
    }
    if !(0.0..1.0).contains(&mu_t) {
        return Err(ScenarioError::Precondition(format!(
            "mu_tilde {mu_t} must lie in [0, 1)"
        )));
    }
    let denom = (1.0 - mu_t) * psi;
    Ok((
        1.0 - (1.0 - psi) * (1.0 - mu_t),
        (1.0 + lambda) * eta_t / denom,
        (1.0 + 1.0 / lambda) * theta_t / denom,
    ))
}

/// Outcome of the program for one `μ̃_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub mu_t: f64,
    pub eps_t: f64,
    pub xi: f64,
    pub xi_lp: f64,
    pub lipschitz: LipschitzBreakdown,
    pub kappa_inv: f64,
    pub margin: f64,
    pub working_rows: usize,
    pub active_rows: usize,
}

/// Grid data the certificate was computed on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub state_cells: usize,
    pub state_sigma: f64,
    pub disturbance_cells: usize,
    pub disturbance_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApbfCertificate {
    pub system: String,
    pub basis: BasisSpec,
    pub decision: DecisionVector,
    pub gains: ConvertedGains,
    pub beta: f64,
    pub eps_t: f64,
    pub lipschitz: f64,
    pub kappa_inv: f64,
    pub margin: f64,
    pub certified: bool,
    /// Samples actually used.
    pub q: usize,
    pub c: usize,
    /// Minimum sample count for `(ε, β, c)`.
    pub q_computed: usize,
    pub seed: u64,
    pub boxes: VariableBoxes,
    pub rows: usize,
    pub oracle_queries: usize,
    pub grids: GridSummary,
    pub candidates: Vec<CandidateReport>,
}

impl ApbfCertificate {
    pub fn confidence(&self) -> f64 {
        1.0 - self.beta
    }

    /// `S(φ, x, x̂)` of the certified function.
    pub fn value(&self, x: &[f64], xh: &[f64]) -> f64 {
        self.basis.value(&self.decision.phi, x, xh)
    }

    /// A certificate with externally reported gains and `S = γ‖x − x̂‖²` on an
    /// `n`-dimensional state.
    pub fn assumed(name: &str, state_dim: usize, gains: ConvertedGains, beta: f64) -> Self {
        let basis = BasisSpec::difference(
            (0..state_dim)
                .map(|k| (0..state_dim).map(|j| if j == k { 2 } else { 0 }).collect())
                .collect(),
        );
        Self {
            system: name.to_string(),
            basis,
            decision: DecisionVector {
                gamma: gains.gamma,
                eta_t: 0.0,
                theta_t: 0.0,
                phi: vec![gains.gamma; state_dim],
                xi: 0.0,
                mu_t: 0.0,
            },
            gains,
            beta,
            eps_t: 0.0,
            lipschitz: 0.0,
            kappa_inv: 0.0,
            margin: 0.0,
            certified: true,
            q: 0,
            c: 0,
            q_computed: 0,
            seed: 0,
            boxes: VariableBoxes::default(),
            rows: 0,
            oracle_queries: 0,
            grids: GridSummary {
                state_cells: 0,
                state_sigma: 0.0,
                disturbance_cells: 0,
                disturbance_sigma: 0.0,
            },
            candidates: Vec::new(),
        }
    }
}

/// Draws the minimal number of samples and certifies.
pub fn certify_apbf(
    sys: &BlackBoxSystem,
    state_grid: &UniformGrid,
    dist_grid: &UniformGrid,
    cfg: &CertifyConfig,
) -> Result<ApbfCertificate, ScenarioError> {
    cfg.validate()?;
    let q = match cfg.q_override {
        Some(q) => q,
        None => cfg.computed_sample_size()?,
    };
    let samples = draw_samples(sys.signature(), q, cfg.seed)?;
    let table = tabulate_transitions(sys, state_grid, dist_grid)?;
    certify_with_samples(sys, state_grid, dist_grid, &table, &samples, cfg)
}

fn identity(n: usize, scale: f64) -> Matrix {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { scale } else { 0.0 }).collect())
        .collect()
}

/// Certifies on a given batch and tabulated abstraction.
pub fn certify_with_samples(
    sys: &BlackBoxSystem,
    state_grid: &UniformGrid,
    dist_grid: &UniformGrid,
    table: &TransitionTable,
    samples: &SampleBatch,
    cfg: &CertifyConfig,
) -> Result<ApbfCertificate, ScenarioError> {
    cfg.validate()?;
    let sig = sys.signature();
    cfg.basis.validate(sig.state_dim)?;
    let eps = cfg.eps_list()?;
    let c = cfg.unknowns();
    let q_computed = cfg.computed_sample_size()?;
    let z = cfg.basis.len();
    let boxes = cfg.boxes.expand(z);
    let options = if cfg.refine {
        SolveOptions::scenario()
    } else {
        SolveOptions::plain()
    };

    let w1 = sig.state_box.max_euclidean_norm();
    let w2 = sig
        .inputs
        .iter()
        .map(|u| u.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let w3 = sig.disturbance_box.max_euclidean_norm();
    let radius = sig
        .state_box
        .intervals()
        .iter()
        .map(|b| b.width())
        .fold(0.0, f64::max);
    let sigma = state_grid.sigma();
    let slope = match &cfg.lipschitz {
        LipschitzSource::Data {
            pairs,
            seed,
            safety_factor,
            ..
        } => Some(estimate_lipschitz_data(sys, *pairs, *seed, *safety_factor)?),
        _ => None,
    };
    let dims = sig.state_dim + sig.disturbance_dim;
    let volume = sig.state_box.volume() * sig.disturbance_box.volume();

    let mut best: Option<(ApbfCertificate, f64)> = None;
    let mut candidates = Vec::new();
    for (t, &mu_t) in cfg.mu_tildes.iter().enumerate() {
        let inst = assemble_with_table(
            samples,
            sys,
            state_grid,
            dist_grid,
            table,
            &cfg.basis,
            mu_t,
            &cfg.boxes,
            cfg.row_cap,
        )?;
        let sol = solve_lp(&inst, &boxes, &options)?;
        let decision = DecisionVector::from_g(&sol.decision, sol.xi, mu_t);

        // P of the quadratic bound, automatic when not given
        let auto_p = || -> Result<Matrix, ScenarioError> {
            match cfg.basis.mode {
                BasisMode::Difference => {
                    let p = cfg
                        .basis
                        .curvature_bound(&decision.phi, radius)
                        .unwrap_or(0.0);
                    Ok(identity(sig.state_dim, p.max(decision.gamma)))
                }
                BasisMode::General => Err(ScenarioError::Precondition(
                    "a general basis needs an explicit P or a fixed Lipschitz constant".into(),
                )),
            }
        };
        let lip = match &cfg.lipschitz {
            LipschitzSource::Linear { a, b, e, p } => {
                let p = match p {
                    Some(p) => p.clone(),
                    None => auto_p()?,
                };
                lipschitz_linear(a, b, e, &p, (w1, w2, w3), sigma, mu_t, decision.eta_t)?
            }
            LipschitzSource::Nonlinear { j_f, j_x, j_d, p } => {
                let p = match p {
                    Some(p) => p.clone(),
                    None => auto_p()?,
                };
                lipschitz_nonlinear(*j_f, *j_x, *j_d, &p, (w1, w3), sigma, mu_t, decision.eta_t)?
            }
            LipschitzSource::Data { j_f, p, .. } => {
                let p = match p {
                    Some(p) => p.clone(),
                    None => auto_p()?,
                };
                let j = slope.unwrap_or(0.0);
                lipschitz_nonlinear(
                    j_f.unwrap_or(w1),
                    j,
                    j,
                    &p,
                    (w1, w3),
                    sigma,
                    mu_t,
                    decision.eta_t,
                )?
            }
            LipschitzSource::Fixed { value } => {
                if !(*value >= 0.0) {
                    return Err(ScenarioError::Precondition(format!(
                        "Lipschitz constant {value} must be non-negative"
                    )));
                }
                LipschitzBreakdown {
                    l1: *value,
                    l2: *value,
                    value: *value,
                }
            }
        };
        let kappa_inv = match cfg.kappa {
            KappaSource::Uniform { volume: v } => kappa_inverse(eps[t], dims, v.unwrap_or(volume))?,
            KappaSource::Fixed { value } => value,
        };
        let margin = sol.xi + lip.value * kappa_inv;
        candidates.push(CandidateReport {
            mu_t,
            eps_t: eps[t],
            xi: sol.xi,
            xi_lp: sol.xi_lp,
            lipschitz: lip,
            kappa_inv,
            margin,
            working_rows: sol.working_rows,
            active_rows: sol.active_rows.len(),
        });
        log::debug!(
            "mu_t = {mu_t}: xi = {}, L = {}, margin = {margin}",
            sol.xi,
            lip.value
        );
        if best.as_ref().is_none_or(|(_, m)| margin < *m) {
            let (mu, eta, theta) =
                convert_gains(mu_t, decision.eta_t, decision.theta_t, cfg.psi, cfg.lambda)?;
            let cert = ApbfCertificate {
                system: sys.name().to_string(),
                basis: cfg.basis.clone(),
                gains: ConvertedGains {
                    gamma: decision.gamma,
                    mu,
                    eta,
                    theta,
                    psi: cfg.psi,
                    lambda: cfg.lambda,
                },
                decision,
                beta: cfg.beta,
                eps_t: eps[t],
                lipschitz: lip.value,
                kappa_inv,
                margin,
                certified: margin <= 0.0,
                q: samples.len(),
                c,
                q_computed,
                seed: samples.seed,
                boxes: cfg.boxes,
                rows: inst.row_count(),
                oracle_queries: inst.oracle_queries(),
                grids: GridSummary {
                    state_cells: state_grid.len(),
                    state_sigma: state_grid.sigma(),
                    disturbance_cells: dist_grid.len(),
                    disturbance_sigma: dist_grid.sigma(),
                },
                candidates: Vec::new(),
            };
            best = Some((cert, margin));
        }
    }
    let (mut cert, _) = best.expect("at least one mu_tilde");
    cert.candidates = candidates;
    Ok(cert)
}

/// `ξ*_Q + L·κ⁻¹` and whether it is non-positive.
pub fn certificate_margin(xi: f64, lipschitz: f64, kappa_inv: f64) -> (f64, bool) {
    let m = xi + lipschitz * kappa_inv;
    (m, m <= 0.0)
}
