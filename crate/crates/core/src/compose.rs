//! Small-gain composition of subsystem certificates into a network-level
//! alternating bisimulation function.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{sample_box, BlackBoxSystem, InterconnectionTopology, OracleError};
use crate::quantize::{QuantizeError, UniformGrid};
use crate::scenario::ApbfCertificate;

/// Default slack for the scaling search.
pub const DEFAULT_SLACK: f64 = 1e-6;
const MIN_SLACK: f64 = 1e-12;
/// Per-edge slack of the cycle test.
const CYCLE_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComposeError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("subsystem {0} is not certified")]
    Uncertified(usize),
    #[error("circularity fails on cycle {cycle:?} with gain product {product}")]
    Circularity { cycle: Vec<usize>, product: f64 },
    #[error("no scaling found: {0}")]
    Scaling(String),
    #[error("failure probabilities sum to {0}, leaving no confidence")]
    Confidence(f64),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Quantize(#[from] QuantizeError),
}

/// `μ_ii = μ_i` on the diagonal and `μ_ij = η_i/γ_j` on wired pairs only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainMatrix {
    pub diagonal: Vec<f64>,
    /// `(i, j, μ_ij)` with `i ≠ j`, sorted by `(i, j)`.
    pub edges: Vec<(usize, usize, f64)>,
}

impl GainMatrix {
    pub fn new(
        diagonal: Vec<f64>,
        mut edges: Vec<(usize, usize, f64)>,
    ) -> Result<Self, ComposeError> {
        let m = diagonal.len();
        if let Some(v) = diagonal.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(ComposeError::Precondition(format!(
                "diagonal gain {v} must be finite and non-negative"
            )));
        }
        for &(i, j, v) in &edges {
            if i >= m || j >= m || i == j {
                return Err(ComposeError::Precondition(format!(
                    "invalid edge ({i}, {j})"
                )));
            }
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ComposeError::Precondition(format!(
                    "gain {v} on ({i}, {j}) must be finite and non-negative"
                )));
            }
        }
        edges.sort_by_key(|a| (a.0, a.1));
        if edges
            .windows(2)
            .any(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1))
        {
            return Err(ComposeError::Precondition("duplicate edge".into()));
        }
        Ok(Self { diagonal, edges })
    }

    pub fn size(&self) -> usize {
        self.diagonal.len()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        if i == j {
            return self.diagonal.get(i).copied();
        }
        self.edges
            .binary_search_by(|e| (e.0, e.1).cmp(&(i, j)))
            .ok()
            .map(|k| self.edges[k].2)
    }

    /// `max μ_ij κ_j / κ_i` over the diagonal and every edge.
    pub fn scaled_max(&self, kappa: &[f64]) -> f64 {
        let diag = self.diagonal.iter().copied().fold(0.0, f64::max);
        self.edges
            .iter()
            .map(|&(i, j, v)| v * kappa[j] / kappa[i])
            .fold(diag, f64::max)
    }
}

pub fn build_gain_matrix(
    certs: &[ApbfCertificate],
    topology: &InterconnectionTopology,
) -> Result<GainMatrix, ComposeError> {
    let m = topology.num_subsystems();
    if certs.len() != m {
        return Err(ComposeError::Precondition(format!(
            "{} certificates for {m} subsystems",
            certs.len()
        )));
    }
    if let Some(i) = certs.iter().position(|c| !c.certified) {
        return Err(ComposeError::Uncertified(i));
    }
    let diagonal = certs.iter().map(|c| c.gains.mu).collect();
    let edges = topology
        .edges()
        .into_iter()
        .map(|(i, j)| (i, j, certs[i].gains.eta / certs[j].gains.gamma))
        .collect();
    GainMatrix::new(diagonal, edges)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircularityReport {
    pub passed: bool,
    /// Every gain is below one, so no cycle can reach one.
    pub fast_path: bool,
    /// A cycle with gain product at least one, as a vertex sequence.
    pub witness: Option<Vec<usize>>,
    pub witness_product: Option<f64>,
    /// Largest `μ_ij μ_ji` over pairs wired both ways.
    pub worst_two_cycle: Option<f64>,
}

fn cycle_product(g: &GainMatrix, cycle: &[usize]) -> f64 {
    (0..cycle.len())
        .map(|k| g.get(cycle[k], cycle[(k + 1) % cycle.len()]).unwrap_or(0.0))
        .product()
}

/// Bellman–Ford from a virtual source joined to every vertex. Returns distances, or a
/// cycle of negative total weight.
fn shortest_paths(m: usize, arcs: &[(usize, usize, f64)]) -> Result<Vec<f64>, Vec<usize>> {
    let mut dist = vec![0.0; m];
    let mut pred: Vec<Option<usize>> = vec![None; m];
    let mut last = None;
    for _ in 0..=m {
        last = None;
        for &(u, v, w) in arcs {
            if dist[u] + w < dist[v] {
                dist[v] = dist[u] + w;
                pred[v] = Some(u);
                last = Some(v);
            }
        }
        if last.is_none() {
            return Ok(dist);
        }
    }
    let mut v = last.expect("relaxed in the final round");
    for _ in 0..m {
        v = pred[v].expect("relaxed vertices have predecessors");
    }
    let start = v;
    let mut cycle = vec![start];
    let mut u = pred[start].expect("cycle vertex has a predecessor");
    while u != start {
        cycle.push(u);
        u = pred[u].expect("cycle vertex has a predecessor");
    }
    // predecessor walk runs against the arcs
    cycle.reverse();
    Err(cycle)
}

pub fn check_circularity(g: &GainMatrix) -> CircularityReport {
    let m = g.size();
    let worst_two_cycle = g
        .edges
        .iter()
        .filter(|e| e.0 < e.1)
        .filter_map(|&(i, j, v)| g.get(j, i).map(|w| v * w))
        .fold(None, |acc: Option<f64>, p| {
            Some(acc.map_or(p, |a| a.max(p)))
        });
    let fail = |cycle: Vec<usize>, product: f64| CircularityReport {
        passed: false,
        fast_path: false,
        witness: Some(cycle),
        witness_product: Some(product),
        worst_two_cycle,
    };
    if let Some(i) = (0..m).find(|&i| g.diagonal[i] >= 1.0) {
        return fail(vec![i], g.diagonal[i]);
    }
    if g.edges.iter().all(|e| e.2 < 1.0) {
        return CircularityReport {
            passed: true,
            fast_path: true,
            witness: None,
            witness_product: None,
            worst_two_cycle,
        };
    }
    // a cycle with Σ ln μ ≥ 0 is a negative cycle for −ln μ
    let arcs: Vec<(usize, usize, f64)> = g
        .edges
        .iter()
        .filter(|e| e.2 > 0.0)
        .map(|&(i, j, v)| (i, j, -v.ln() - CYCLE_SLACK))
        .collect();
    match shortest_paths(m, &arcs) {
        Ok(_) => CircularityReport {
            passed: true,
            fast_path: false,
            witness: None,
            witness_product: None,
            worst_two_cycle,
        },
        Err(cycle) => {
            let product = cycle_product(g, &cycle);
            if product >= 1.0 {
                fail(cycle, product)
            } else {
                CircularityReport {
                    passed: true,
                    fast_path: false,
                    witness: None,
                    witness_product: None,
                    worst_two_cycle,
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingVector {
    pub kappa: Vec<f64>,
    /// Per-edge log slack that made the difference constraints feasible.
    pub slack: f64,
    /// `max μ_ij κ_j / κ_i`, always below one.
    pub max_ratio: f64,
}

/// Solves `s_j − s_i ≤ −ln μ_ij − δ′` with `s = ln κ`, shrinking `δ′` from
/// `slack` down to `1e-12` until the system is feasible.
pub fn find_scalings(g: &GainMatrix, slack: f64) -> Result<ScalingVector, ComposeError> {
    if !(slack > 0.0 && slack < 1.0) {
        return Err(ComposeError::Precondition(format!(
            "slack {slack} must lie in (0, 1)"
        )));
    }
    let m = g.size();
    if let Some(i) = (0..m).find(|&i| g.diagonal[i] >= 1.0) {
        return Err(ComposeError::Circularity {
            cycle: vec![i],
            product: g.diagonal[i],
        });
    }
    let mut delta = slack;
    while delta >= MIN_SLACK {
        // x_j − x_i ≤ c is the arc i → j with weight c
        let arcs: Vec<(usize, usize, f64)> = g
            .edges
            .iter()
            .filter(|e| e.2 > 0.0)
            .map(|&(i, j, v)| (i, j, -v.ln() - delta))
            .collect();
        if let Ok(s) = shortest_paths(m, &arcs) {
            let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
            let kappa: Vec<f64> = if m == 0 {
                Vec::new()
            } else {
                s.iter().map(|v| (v - lo).exp()).collect()
            };
            let max_ratio = g.scaled_max(&kappa);
            if max_ratio < 1.0 {
                return Ok(ScalingVector {
                    kappa,
                    slack: delta,
                    max_ratio,
                });
            }
        }
        delta /= 2.0;
    }
    Err(ComposeError::Scaling(
        "difference constraints stay infeasible at the smallest slack; circularity is marginal"
            .into(),
    ))
}

/// Checks given scalings against the gain matrix.
pub fn verify_scalings(g: &GainMatrix, kappa: &[f64]) -> Result<ScalingVector, ComposeError> {
    if kappa.len() != g.size() || kappa.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
        return Err(ComposeError::Precondition(
            "need one positive finite scaling per subsystem".into(),
        ));
    }
    let max_ratio = g.scaled_max(kappa);
    if max_ratio >= 1.0 {
        return Err(ComposeError::Scaling(format!(
            "max scaled gain {max_ratio} is not below one"
        )));
    }
    Ok(ScalingVector {
        kappa: kappa.to_vec(),
        slack: 0.0,
        max_ratio,
    })
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposedAbf {
    pub certificates: Vec<ApbfCertificate>,
    pub scalings: ScalingVector,
    pub gamma: f64,
    pub mu: f64,
    pub theta: f64,
    pub beta_sum: f64,
    pub confidence: f64,
}

impl ComposedAbf {
    /// `V(x, x̂) = max_i S_i(x_i, x̂_i) / κ_i`.
    pub fn value(&self, x: &[Vec<f64>], xh: &[Vec<f64>]) -> f64 {
        self.certificates
            .iter()
            .zip(&self.scalings.kappa)
            .enumerate()
            .map(|(i, (c, k))| c.value(&x[i], &xh[i]) / k)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `S_i(x_i, x̂_i) / κ_i` for one subsystem.
    pub fn local_value(&self, i: usize, x: &[f64], xh: &[f64]) -> f64 {
        self.certificates[i].value(x, xh) / self.scalings.kappa[i]
    }
}

pub fn compose_abf(
    certs: &[ApbfCertificate],
    gains: &GainMatrix,
    scalings: &ScalingVector,
) -> Result<ComposedAbf, ComposeError> {
    let m = certs.len();
    if m == 0 || gains.size() != m || scalings.kappa.len() != m {
        return Err(ComposeError::Precondition(format!(
            "{m} certificates, {} gain rows and {} scalings",
            gains.size(),
            scalings.kappa.len()
        )));
    }
    if let Some(i) = certs.iter().position(|c| !c.certified) {
        return Err(ComposeError::Uncertified(i));
    }
    let mu = gains.scaled_max(&scalings.kappa);
    if mu >= 1.0 {
        return Err(ComposeError::Scaling(format!(
            "scalings give max gain {mu}"
        )));
    }
    let beta_sum = compensated_sum(certs.iter().map(|c| c.beta));
    if beta_sum >= 1.0 {
        return Err(ComposeError::Confidence(beta_sum));
    }
    let k = &scalings.kappa;
    let gamma = 1.0
        / certs
            .iter()
            .zip(k)
            .map(|(c, k)| k / c.gains.gamma)
            .fold(0.0, f64::max);
    let theta = certs
        .iter()
        .zip(k)
        .map(|(c, k)| c.gains.theta / k)
        .fold(0.0, f64::max);
    Ok(ComposedAbf {
        certificates: certs.to_vec(),
        scalings: scalings.clone(),
        gamma,
        mu,
        theta,
        beta_sum,
        confidence: 1.0 - beta_sum,
    })
}

/// `{(x, x̂) : V(x, x̂) ≤ θ}`, inside which `‖x − x̂‖ ≤ ε̃ = √(θ/γ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRelation {
    pub composed: ComposedAbf,
    pub theta: f64,
    pub gamma: f64,
    pub eps_tilde: f64,
}

pub fn relation(composed: &ComposedAbf) -> SimulationRelation {
    SimulationRelation {
        theta: composed.theta,
        gamma: composed.gamma,
        eps_tilde: (composed.theta / composed.gamma).sqrt(),
        composed: composed.clone(),
    }
}

impl SimulationRelation {
    pub fn contains(&self, x: &[Vec<f64>], xh: &[Vec<f64>]) -> bool {
        self.composed.value(x, xh) <= self.theta
    }

    /// Membership of subsystem `i` alone, `S_i/κ_i ≤ θ`.
    pub fn contains_local(&self, i: usize, x: &[f64], xh: &[f64]) -> bool {
        self.composed.local_value(i, x, xh) <= self.theta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecreaseReport {
    pub checked: usize,
    pub skipped: usize,
    pub violations: usize,
    /// Largest `V(x′, x̂′) − max{μV(x, x̂), θ}` seen.
    pub worst_excess: f64,
}

/// Empirical check of `V(f(x,ν), f̂(x̂,ν)) ≤ max{μV(x,x̂), θ}` at random member
/// pairs with `x̂ = P(x)`, neighbor states as disturbances and abstract neighbor
/// states as abstract disturbances.
pub fn check_decrease(
    rel: &SimulationRelation,
    subsystems: &[BlackBoxSystem],
    topology: &InterconnectionTopology,
    grids: &[UniformGrid],
    trials: usize,
    seed: u64,
) -> Result<DecreaseReport, ComposeError> {
    let m = subsystems.len();
    if grids.len() != m || topology.num_subsystems() != m || rel.composed.certificates.len() != m {
        return Err(ComposeError::Precondition(
            "subsystems, grids and certificates differ in number".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = DecreaseReport {
        checked: 0,
        skipped: 0,
        violations: 0,
        worst_excess: f64::NEG_INFINITY,
    };
    for _ in 0..trials {
        let x: Vec<Vec<f64>> = subsystems
            .iter()
            .map(|s| sample_box(&s.signature().state_box, &mut rng))
            .collect();
        let xh: Vec<Vec<f64>> = x
            .iter()
            .zip(grids)
            .map(|(xi, g)| g.quantize(xi).map(|p| p.representative))
            .collect::<Result<_, _>>()?;
        let v = rel.composed.value(&x, &xh);
        if v > rel.theta {
            report.skipped += 1;
            continue;
        }
        let inputs: Vec<Vec<f64>> = subsystems
            .iter()
            .map(|s| {
                let u = &s.signature().inputs;
                u.get(rng.random_range(0..u.len())).expect("index in range")
            })
            .collect();
        let mut xn = Vec::with_capacity(m);
        let mut xhn = Vec::with_capacity(m);
        for i in 0..m {
            let d = topology.disturbance_of(i, &x);
            let dh = topology.disturbance_of(i, &xh);
            xn.push(subsystems[i].query(&x[i], &inputs[i], &d)?);
            let raw = subsystems[i].query(&xh[i], &inputs[i], &dh)?;
            xhn.push(grids[i].nearest(&raw)?.representative);
        }
        let bound = (rel.composed.mu * v).max(rel.theta);
        let excess = rel.composed.value(&xn, &xhn) - bound;
        report.checked += 1;
        report.worst_excess = report.worst_excess.max(excess);
        if excess > 1e-6 {
            report.violations += 1;
        }
    }
    Ok(report)
}
