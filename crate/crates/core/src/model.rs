//! System signatures, black-box one-step oracles, interconnection topology
//! and the built-in room-temperature benchmark network.
//!
//! Everything in the toolkit touches a system only through [`BlackBoxSystem::query`].
//! Concrete model parameters (such as the thermal factors of the room network)
//! stay private to this module.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance used when checking that wired subsystems reproduce a network.
pub const COMPOSITION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("oracle dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("oracle reported error: {0}")]
    Remote(String),
    #[error("oracle protocol error: {0}")]
    Protocol(String),
    #[error("oracle query timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("oracle i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid system signature: {0}")]
    Signature(String),
    #[error("invalid room network parameters: {0}")]
    Params(String),
    #[error("topology error: {0}")]
    Topology(String),
    #[error(
        "composition mismatch for subsystem {subsystem} at state {state:?}: network gives {network}, wired subsystem gives {subsystem_value}"
    )]
    Consistency {
        subsystem: usize,
        state: Vec<f64>,
        input: Vec<f64>,
        network: f64,
        subsystem_value: f64,
    },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    fn max_abs(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// Axis-aligned hyper-rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct BoxSet(pub Vec<Interval>);

impl BoxSet {
    pub fn new(intervals: Vec<Interval>) -> Self {
        Self(intervals)
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        Self(vec![Interval::new(lo, hi); dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.0
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.0.len() && self.0.iter().zip(x).all(|(iv, &v)| iv.contains(v))
    }

    /// First coordinate lying outside the box, if any.
    pub fn first_violation(&self, x: &[f64]) -> Option<(usize, f64)> {
        self.0
            .iter()
            .zip(x)
            .enumerate()
            .find(|(_, (iv, v))| !iv.contains(**v))
            .map(|(k, (_, v))| (k, *v))
    }

    /// Lebesgue volume; an empty product has volume 1.
    pub fn volume(&self) -> f64 {
        self.0.iter().map(Interval::width).product()
    }

    /// Largest Euclidean norm attained on the box.
    pub fn max_euclidean_norm(&self) -> f64 {
        self.0
            .iter()
            .map(|iv| iv.max_abs().powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn center(&self) -> Vec<f64> {
        self.0.iter().map(|iv| 0.5 * (iv.lo + iv.hi)).collect()
    }

    /// Cartesian product `self × other`.
    pub fn product(&self, other: &BoxSet) -> BoxSet {
        BoxSet(self.0.iter().chain(other.0.iter()).copied().collect())
    }

    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        self.0
            .iter()
            .zip(x)
            .map(|(iv, &v)| v.clamp(iv.lo, iv.hi))
            .collect()
    }

    fn validate(&self, what: &str) -> Result<(), ModelError> {
        for (k, iv) in self.0.iter().enumerate() {
            if !(iv.lo.is_finite() && iv.hi.is_finite()) || iv.lo > iv.hi {
                return Err(ModelError::Signature(format!(
                    "{what} interval {k} = {iv} must be finite with lower <= upper"
                )));
            }
        }
        Ok(())
    }
}

/// Finite input set. Networks use the product form so that `|U|^M` is never
/// materialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSet {
    Finite(Vec<Vec<f64>>),
    Product { levels: Vec<f64>, dims: usize },
}

impl InputSet {
    /// Scalar input levels `{v_1, ..., v_k}`.
    pub fn scalar(levels: &[f64]) -> Self {
        InputSet::Finite(levels.iter().map(|&v| vec![v]).collect())
    }

    pub fn len(&self) -> usize {
        match self {
            InputSet::Finite(v) => v.len(),
            InputSet::Product { levels, dims } => {
                levels.len().checked_pow(*dims as u32).unwrap_or(usize::MAX)
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match self {
            InputSet::Finite(v) => v.first().map_or(0, Vec::len),
            InputSet::Product { dims, .. } => *dims,
        }
    }

    /// Input with the given index (lexicographic, first coordinate slowest for products).
    pub fn get(&self, index: usize) -> Option<Vec<f64>> {
        match self {
            InputSet::Finite(v) => v.get(index).cloned(),
            InputSet::Product { levels, dims } => {
                if index >= self.len() {
                    return None;
                }
                let k = levels.len();
                let mut out = vec![0.0; *dims];
                let mut rest = index;
                for slot in out.iter_mut().rev() {
                    *slot = levels[rest % k];
                    rest /= k;
                }
                Some(out)
            }
        }
    }

    pub fn contains(&self, input: &[f64]) -> bool {
        match self {
            InputSet::Finite(v) => v.iter().any(|u| u.as_slice() == input),
            InputSet::Product { levels, dims } => {
                input.len() == *dims && input.iter().all(|c| levels.contains(c))
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).filter_map(move |i| self.get(i))
    }

    fn validate(&self) -> Result<(), ModelError> {
        match self {
            InputSet::Finite(v) => {
                if v.is_empty() {
                    return Err(ModelError::Signature("input set is empty".into()));
                }
                let m = v[0].len();
                for (i, u) in v.iter().enumerate() {
                    if u.len() != m {
                        return Err(ModelError::Signature(format!(
                            "input {i} has dimension {}, expected {m}",
                            u.len()
                        )));
                    }
                    if v[..i].contains(u) {
                        return Err(ModelError::Signature(format!("duplicate input {u:?}")));
                    }
                }
            }
            InputSet::Product { levels, dims } => {
                if levels.is_empty() || *dims == 0 {
                    return Err(ModelError::Signature("input set is empty".into()));
                }
                for (i, l) in levels.iter().enumerate() {
                    if levels[..i].contains(l) {
                        return Err(ModelError::Signature(format!("duplicate input level {l}")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Declared sets of a control system `(X, U, D)` with their dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSignature {
    pub state_dim: usize,
    pub inputs: InputSet,
    pub disturbance_dim: usize,
    pub state_box: BoxSet,
    pub disturbance_box: BoxSet,
}

impl SystemSignature {
    pub fn new(
        inputs: InputSet,
        state_box: BoxSet,
        disturbance_box: BoxSet,
    ) -> Result<Self, ModelError> {
        let sig = Self {
            state_dim: state_box.dim(),
            inputs,
            disturbance_dim: disturbance_box.dim(),
            state_box,
            disturbance_box,
        };
        sig.validate()?;
        Ok(sig)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.state_dim == 0 {
            return Err(ModelError::Signature(
                "state dimension must be positive".into(),
            ));
        }
        if self.state_box.dim() != self.state_dim {
            return Err(ModelError::Signature(format!(
                "state box has {} intervals, expected {}",
                self.state_box.dim(),
                self.state_dim
            )));
        }
        if self.disturbance_box.dim() != self.disturbance_dim {
            return Err(ModelError::Signature(format!(
                "disturbance box has {} intervals, expected {}",
                self.disturbance_box.dim(),
                self.disturbance_dim
            )));
        }
        self.state_box.validate("state")?;
        self.disturbance_box.validate("disturbance")?;
        self.inputs.validate()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.dim()
    }
}

/// One-step transition map `x' = f(x, ν, d)`.
///
/// Implementations must be deterministic and safe to call from several threads.
pub trait Oracle: Send + Sync {
    fn step(
        &self,
        state: &[f64],
        input: &[f64],
        disturbance: &[f64],
    ) -> Result<Vec<f64>, OracleError>;

    /// Answers several queries; remote oracles override this to pipeline requests.
    fn step_batch(&self, queries: &[Query]) -> Result<Vec<Vec<f64>>, OracleError> {
        queries
            .iter()
            .map(|q| self.step(&q.state, &q.input, &q.disturbance))
            .collect()
    }
}

/// A single oracle request.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub state: Vec<f64>,
    pub input: Vec<f64>,
    pub disturbance: Vec<f64>,
}

impl<F> Oracle for F
where
    F: Fn(&[f64], &[f64], &[f64]) -> Vec<f64> + Send + Sync,
{
    fn step(&self, x: &[f64], u: &[f64], d: &[f64]) -> Result<Vec<f64>, OracleError> {
        Ok(self(x, u, d))
    }
}

/// A system that can only be queried, never inspected.
#[derive(Clone)]
pub struct BlackBoxSystem {
    name: String,
    signature: SystemSignature,
    oracle: Arc<dyn Oracle>,
}

impl fmt::Debug for BlackBoxSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BlackBoxSystem")
            .field("name", &self.name)
            .field("signature", &self.signature)
            .finish_non_exhaustive()
    }
}

impl BlackBoxSystem {
    pub fn new(
        name: impl Into<String>,
        signature: SystemSignature,
        oracle: Arc<dyn Oracle>,
    ) -> Result<Self, ModelError> {
        signature.validate()?;
        Ok(Self {
            name: name.into(),
            signature,
            oracle,
        })
    }

    pub fn from_fn<F>(
        name: impl Into<String>,
        signature: SystemSignature,
        f: F,
    ) -> Result<Self, ModelError>
    where
        F: Fn(&[f64], &[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self::new(name, signature, Arc::new(f))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn signature(&self) -> &SystemSignature {
        &self.signature
    }

    /// Queries the oracle once, checking argument and result dimensions.
    pub fn query(
        &self,
        state: &[f64],
        input: &[f64],
        disturbance: &[f64],
    ) -> Result<Vec<f64>, OracleError> {
        self.check_args(state, input, disturbance)?;
        let next = self.oracle.step(state, input, disturbance)?;
        self.check_result(&next)?;
        Ok(next)
    }

    pub fn query_batch(&self, queries: &[Query]) -> Result<Vec<Vec<f64>>, OracleError> {
        for q in queries {
            self.check_args(&q.state, &q.input, &q.disturbance)?;
        }
        let out = self.oracle.step_batch(queries)?;
        if out.len() != queries.len() {
            return Err(OracleError::Protocol(format!(
                "batch returned {} results for {} queries",
                out.len(),
                queries.len()
            )));
        }
        for next in &out {
            self.check_result(next)?;
        }
        Ok(out)
    }

    fn check_args(&self, x: &[f64], u: &[f64], d: &[f64]) -> Result<(), OracleError> {
        let sig = &self.signature;
        let checks = [
            ("state", sig.state_dim, x.len()),
            ("input", sig.input_dim(), u.len()),
            ("disturbance", sig.disturbance_dim, d.len()),
        ];
        for (what, expected, got) in checks {
            if expected != got {
                return Err(OracleError::Dimension {
                    what,
                    expected,
                    got,
                });
            }
        }
        Ok(())
    }

    fn check_result(&self, next: &[f64]) -> Result<(), OracleError> {
        if next.len() != self.signature.state_dim {
            return Err(OracleError::Dimension {
                what: "next state",
                expected: self.signature.state_dim,
                got: next.len(),
            });
        }
        Ok(())
    }
}

/// Wiring of subsystem disturbances to neighbor states: the disturbance of
/// subsystem `i` is the concatenation of `x_j` for `j` in `wiring[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterconnectionTopology {
    pub wiring: Vec<Vec<usize>>,
}

impl InterconnectionTopology {
    pub fn new(wiring: Vec<Vec<usize>>) -> Self {
        Self { wiring }
    }

    /// Ring where subsystem `i` reads `i-1` and `i+1` (mod `m`).
    pub fn circular(m: usize) -> Self {
        Self {
            wiring: (0..m).map(|i| vec![(i + m - 1) % m, (i + 1) % m]).collect(),
        }
    }

    pub fn num_subsystems(&self) -> usize {
        self.wiring.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.wiring[i]
    }

    /// Distinct directed pairs `(i, j)` with `j` wired into `i`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, ns) in self.wiring.iter().enumerate() {
            for &j in ns {
                if !out.contains(&(i, j)) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Checks self-wiring, index range, disturbance dimensions and `X_j ⊆ D_ij`.
    pub fn validate(&self, subsystems: &[SystemSignature]) -> Result<(), ModelError> {
        if subsystems.len() != self.wiring.len() {
            return Err(ModelError::Topology(format!(
                "topology has {} subsystems, {} signatures given",
                self.wiring.len(),
                subsystems.len()
            )));
        }
        for (i, ns) in self.wiring.iter().enumerate() {
            let mut offset = 0;
            for &j in ns {
                if j == i {
                    return Err(ModelError::Topology(format!(
                        "subsystem {i} is wired to itself"
                    )));
                }
                let Some(nb) = subsystems.get(j) else {
                    return Err(ModelError::Topology(format!(
                        "subsystem {i} is wired to unknown subsystem {j}"
                    )));
                };
                let block = offset..offset + nb.state_dim;
                offset = block.end;
                let dist = &subsystems[i].disturbance_box;
                if block.end > dist.dim() {
                    return Err(ModelError::Topology(format!(
                        "subsystem {i}: wiring needs {} disturbance coordinates, signature has {}",
                        block.end,
                        dist.dim()
                    )));
                }
                for (k, (xb, db)) in nb
                    .state_box
                    .intervals()
                    .iter()
                    .zip(&dist.intervals()[block])
                    .enumerate()
                {
                    if !db.contains_interval(xb) {
                        return Err(ModelError::Topology(format!(
                            "containment X_{j} ⊆ D_{i}{j} fails at coordinate {k}: {xb} not inside {db}"
                        )));
                    }
                }
            }
            if offset != subsystems[i].disturbance_dim {
                return Err(ModelError::Topology(format!(
                    "subsystem {i}: wired states have total dimension {offset}, disturbance dimension is {}",
                    subsystems[i].disturbance_dim
                )));
            }
        }
        Ok(())
    }

    /// Disturbance of subsystem `i` given all subsystem states.
    pub fn disturbance_of(&self, i: usize, states: &[Vec<f64>]) -> Vec<f64> {
        self.wiring[i]
            .iter()
            .flat_map(|&j| states[j].iter().copied())
            .collect()
    }
}

/// Parameters of the circular room-temperature network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomNetworkParams {
    pub num_rooms: usize,
    /// Inter-room thermal factor.
    pub aleph: f64,
    /// Outside-environment thermal factor.
    pub digamma: f64,
    /// Cooler thermal factor.
    pub alpha: f64,
    pub t_cooler: f64,
    /// Outside temperature seen by each room; a single entry is broadcast.
    pub t_outside: Vec<f64>,
    pub input_levels: Vec<f64>,
    pub state_box: Interval,
}

impl Default for RoomNetworkParams {
    fn default() -> Self {
        Self {
            num_rooms: 100,
            aleph: 0.005,
            digamma: 0.06,
            alpha: 0.145,
            t_cooler: 5.0,
            t_outside: vec![-2.0],
            input_levels: vec![0.0, 0.05, 0.1, 0.15, 0.2],
            state_box: Interval::new(-0.5, 0.5),
        }
    }
}

impl RoomNetworkParams {
    pub fn with_rooms(num_rooms: usize) -> Self {
        Self {
            num_rooms,
            ..Self::default()
        }
    }

    fn outside(&self, i: usize) -> f64 {
        if self.t_outside.len() == 1 {
            self.t_outside[0]
        } else {
            self.t_outside[i]
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Params(m));
        if self.num_rooms < 2 {
            return err(format!("need at least 2 rooms, got {}", self.num_rooms));
        }
        for (name, v) in [
            ("aleph", self.aleph),
            ("digamma", self.digamma),
            ("alpha", self.alpha),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.t_outside.len() != 1 && self.t_outside.len() != self.num_rooms {
            return err(format!(
                "t_outside needs 1 or {} entries, got {}",
                self.num_rooms,
                self.t_outside.len()
            ));
        }
        if self.input_levels.is_empty() {
            return err("input_levels is empty".into());
        }
        for &nu in &self.input_levels {
            let a = self.diagonal(nu);
            if !(a > 0.0 && a < 1.0) {
                return err(format!(
                    "diagonal entry 1 - 2*aleph - digamma - alpha*nu = {a} is outside (0, 1) for nu = {nu}"
                ));
            }
        }
        if !(self.state_box.lo < self.state_box.hi) {
            return err(format!("state box {} is degenerate", self.state_box));
        }
        Ok(())
    }

    fn diagonal(&self, nu: f64) -> f64 {
        1.0 - 2.0 * self.aleph - self.digamma - self.alpha * nu
    }
}

/// One room: `x' = a(ν) x + ℵ (d_prev + d_next) + α T_c ν + ϝ T_e`.
struct RoomOracle {
    aleph: f64,
    digamma: f64,
    alpha: f64,
    t_cooler: f64,
    t_outside: f64,
}

impl RoomOracle {
    fn next(&self, x: f64, nu: f64, neighbor_sum: f64) -> f64 {
        let a = 1.0 - 2.0 * self.aleph - self.digamma - self.alpha * nu;
        a * x
            + self.aleph * neighbor_sum
            + self.alpha * self.t_cooler * nu
            + self.digamma * self.t_outside
    }
}

impl Oracle for RoomOracle {
    fn step(&self, x: &[f64], u: &[f64], d: &[f64]) -> Result<Vec<f64>, OracleError> {
        Ok(vec![self.next(x[0], u[0], d.iter().sum())])
    }
}

/// Whole network `x' = A(ν) x + α T_c ν + ϝ T_E` with circular `A`.
struct RoomNetworkOracle {
    rooms: Vec<RoomOracle>,
}

impl Oracle for RoomNetworkOracle {
    fn step(&self, x: &[f64], u: &[f64], _d: &[f64]) -> Result<Vec<f64>, OracleError> {
        let m = self.rooms.len();
        // Off-diagonal entries accumulate, so for m = 2 both neighbor slots add up.
        let mut a = vec![vec![0.0; m]; m];
        for i in 0..m {
            let r = &self.rooms[i];
            a[i][i] = 1.0 - 2.0 * r.aleph - r.digamma - r.alpha * u[i];
            a[i][(i + 1) % m] += r.aleph;
            a[i][(i + m - 1) % m] += r.aleph;
        }
        Ok((0..m)
            .map(|i| {
                let r = &self.rooms[i];
                let ax: f64 = a[i].iter().zip(x).map(|(aij, xj)| aij * xj).sum();
                ax + r.alpha * r.t_cooler * u[i] + r.digamma * r.t_outside
            })
            .collect())
    }
}

/// Full room network, its topology and the per-room subsystems.
#[derive(Debug, Clone)]
pub struct RoomNetwork {
    pub network: BlackBoxSystem,
    pub topology: InterconnectionTopology,
    pub rooms: Vec<BlackBoxSystem>,
}

pub fn build_room_network(params: &RoomNetworkParams) -> Result<RoomNetwork, ModelError> {
    params.validate()?;
    let m = params.num_rooms;
    let room = |i: usize| RoomOracle {
        aleph: params.aleph,
        digamma: params.digamma,
        alpha: params.alpha,
        t_cooler: params.t_cooler,
        t_outside: params.outside(i),
    };
    let xb = params.state_box;
    let rooms = (0..m)
        .map(|i| {
            let sig = SystemSignature::new(
                InputSet::scalar(&params.input_levels),
                BoxSet::new(vec![xb]),
                BoxSet::new(vec![xb, xb]),
            )?;
            BlackBoxSystem::new(format!("room-{i}"), sig, Arc::new(room(i)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let net_sig = SystemSignature::new(
        InputSet::Product {
            levels: params.input_levels.clone(),
            dims: m,
        },
        BoxSet::new(vec![xb; m]),
        BoxSet::default(),
    )?;
    let network = BlackBoxSystem::new(
        "room-network",
        net_sig,
        Arc::new(RoomNetworkOracle {
            rooms: (0..m).map(room).collect(),
        }),
    )?;
    Ok(RoomNetwork {
        network,
        topology: InterconnectionTopology::circular(m),
        rooms,
    })
}

/// A subsystem together with the neighbors feeding its disturbance.
#[derive(Debug, Clone)]
pub struct SubsystemHandle {
    pub index: usize,
    pub system: BlackBoxSystem,
    pub neighbors: Vec<usize>,
}

/// Validates the topology against the subsystem signatures and checks, at
/// `checks` random points, that the wired subsystems reproduce the network map.
pub fn decompose_network(
    network: &BlackBoxSystem,
    topology: &InterconnectionTopology,
    subsystems: &[BlackBoxSystem],
    checks: usize,
    seed: u64,
) -> Result<Vec<SubsystemHandle>, ModelError> {
    let sigs: Vec<SystemSignature> = subsystems.iter().map(|s| s.signature().clone()).collect();
    topology.validate(&sigs)?;
    let total: usize = sigs.iter().map(|s| s.state_dim).sum();
    if total != network.signature().state_dim {
        return Err(ModelError::Topology(format!(
            "subsystem states have total dimension {total}, network has {}",
            network.signature().state_dim
        )));
    }
    let total_inputs: usize = sigs.iter().map(SystemSignature::input_dim).sum();
    if total_inputs != network.signature().input_dim() {
        return Err(ModelError::Topology(format!(
            "subsystem inputs have total dimension {total_inputs}, network has {}",
            network.signature().input_dim()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..checks {
        let states: Vec<Vec<f64>> = sigs
            .iter()
            .map(|s| sample_box(&s.state_box, &mut rng))
            .collect();
        let inputs: Vec<Vec<f64>> = sigs
            .iter()
            .map(|s| {
                let k = rng.random_range(0..s.inputs.len());
                s.inputs.get(k).expect("index in range")
            })
            .collect();
        let x: Vec<f64> = states.concat();
        let u: Vec<f64> = inputs.concat();
        let whole = network.query(&x, &u, &[])?;
        let mut offset = 0;
        for (i, sub) in subsystems.iter().enumerate() {
            let d = topology.disturbance_of(i, &states);
            let part = sub.query(&states[i], &inputs[i], &d)?;
            for (k, &v) in part.iter().enumerate() {
                let w = whole[offset + k];
                if (v - w).abs() > COMPOSITION_TOLERANCE {
                    return Err(ModelError::Consistency {
                        subsystem: i,
                        state: x,
                        input: u,
                        network: w,
                        subsystem_value: v,
                    });
                }
            }
            offset += part.len();
        }
    }

    Ok(subsystems
        .iter()
        .enumerate()
        .map(|(i, s)| SubsystemHandle {
            index: i,
            system: s.clone(),
            neighbors: topology.neighbors(i).to_vec(),
        })
        .collect())
}

pub(crate) fn sample_box<R: Rng>(b: &BoxSet, rng: &mut R) -> Vec<f64> {
    b.intervals()
        .iter()
        .map(|iv| {
            if iv.lo == iv.hi {
                iv.lo
            } else {
                rng.random_range(iv.lo..=iv.hi)
            }
        })
        .collect()
}

/// Iterated states with the index of the first state outside `X`, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSequence {
    pub states: Vec<Vec<f64>>,
    pub out_of_domain: Option<usize>,
}

pub fn step_trajectory(
    sys: &BlackBoxSystem,
    x0: &[f64],
    inputs: &[Vec<f64>],
    disturbances: &[Vec<f64>],
) -> Result<StateSequence, ModelError> {
    if inputs.len() != disturbances.len() {
        return Err(ModelError::Precondition(format!(
            "{} inputs but {} disturbances",
            inputs.len(),
            disturbances.len()
        )));
    }
    let xbox = &sys.signature().state_box;
    if !xbox.contains(x0) {
        return Err(ModelError::Precondition(format!(
            "x0 = {x0:?} is outside the state set"
        )));
    }
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(x0.to_vec());
    let mut out_of_domain = None;
    for (k, (u, d)) in inputs.iter().zip(disturbances).enumerate() {
        let next = sys.query(&states[k], u, d)?;
        if out_of_domain.is_none() && !xbox.contains(&next) {
            out_of_domain = Some(k + 1);
        }
        states.push(next);
    }
    Ok(StateSequence {
        states,
        out_of_domain,
    })
}
