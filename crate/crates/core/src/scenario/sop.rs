//! Assembly of the sampled program and its solution by row generation.
//!
//! The program is `min ξ` over `G = [γ, η̃, θ̃, φ₁..φ_z]` and `ξ`, subject to one
//! row `coeffs · G + constant − ξ ≤ 0` per generated inequality. Row counts grow
//! as `Q·|U|·|X̂|·|D̂|`, so rows are generated on demand from the factored data
//! and only the violated ones enter the dense simplex.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::basis::BasisSpec;
use super::sampling::SampleBatch;
use super::simplex::{self, Constraint, LinearProgram, Outcome};
use super::ScenarioError;
use crate::model::{BlackBoxSystem, Interval, Query};
use crate::quantize::{tabulate_transitions, TransitionTable, UniformGrid};

pub const DEFAULT_ROW_CAP: usize = 50_000_000;

/// Indices of the fixed decision variables in `G`.
pub const GAMMA: usize = 0;
pub const ETA: usize = 1;
pub const THETA: usize = 2;
pub const PHI: usize = 3;

const ROWS_PER_ROUND: usize = 64;
const MAX_ROUNDS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariableBoxes {
    pub gamma: Interval,
    pub eta: Interval,
    pub theta: Interval,
    pub phi: Interval,
}

impl Default for VariableBoxes {
    fn default() -> Self {
        Self {
            gamma: Interval::new(1e-3, 1e3),
            eta: Interval::new(0.0, 1e3),
            theta: Interval::new(0.0, 1e3),
            phi: Interval::new(-1e3, 1e3),
        }
    }
}

impl VariableBoxes {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let all = [
            ("gamma", self.gamma),
            ("eta", self.eta),
            ("theta", self.theta),
            ("phi", self.phi),
        ];
        for (name, b) in all {
            if !(b.lo.is_finite() && b.hi.is_finite() && b.lo <= b.hi) {
                return Err(ScenarioError::Precondition(format!(
                    "{name} box {b} must be finite and ordered"
                )));
            }
        }
        if self.gamma.lo <= 0.0 {
            return Err(ScenarioError::Precondition(
                "gamma lower bound must be positive".into(),
            ));
        }
        if self.eta.lo < 0.0 || self.theta.lo < 0.0 {
            return Err(ScenarioError::Precondition(
                "eta and theta boxes must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Per-variable boxes for `G` with `z` basis coefficients.
    pub fn expand(&self, z: usize) -> Vec<Interval> {
        let mut out = vec![self.gamma, self.eta, self.theta];
        out.extend(std::iter::repeat_n(self.phi, z));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConstraintKind {
    H1,
    H2,
}

/// Where a row came from. Explicit rows carry only `sample` (their position).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RowTag {
    pub kind: ConstraintKind,
    pub sample: usize,
    pub input: Option<usize>,
    pub state: usize,
    pub disturbance: Option<usize>,
}

/// `coeffs · G + constant − ξ ≤ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SopRow {
    pub coeffs: Vec<f64>,
    pub constant: f64,
    pub tag: RowTag,
}

impl SopRow {
    pub fn value(&self, g: &[f64]) -> f64 {
        self.coeffs.iter().zip(g).map(|(c, v)| c * v).sum::<f64>() + self.constant
    }
}

#[derive(Debug, Clone)]
struct ScenarioData {
    basis: BasisSpec,
    states: Vec<Vec<f64>>,
    dists: Vec<Vec<f64>>,
    samples: SampleBatch,
    /// `f(x̄_i, ν_u, d̄_i)` at `i · |U| + u`.
    measured: Vec<Vec<f64>>,
    table: TransitionTable,
}

#[derive(Debug, Clone)]
enum Rows {
    Explicit { vars: usize, rows: Vec<SopRow> },
    Scenario(Box<ScenarioData>),
}

/// A sampled program for one fixed `μ̃`.
#[derive(Debug, Clone)]
pub struct SopInstance {
    mu_t: f64,
    boxes: Option<VariableBoxes>,
    oracle_queries: usize,
    rows: Rows,
}

impl SopInstance {
    /// A program given directly by its rows over `vars` decision variables.
    pub fn from_rows(vars: usize, rows: Vec<SopRow>) -> Result<Self, ScenarioError> {
        if let Some(r) = rows.iter().find(|r| r.coeffs.len() != vars) {
            return Err(ScenarioError::Precondition(format!(
                "row {:?} has {} coefficients for {vars} variables",
                r.tag,
                r.coeffs.len()
            )));
        }
        Ok(Self {
            mu_t: 0.0,
            boxes: None,
            oracle_queries: 0,
            rows: Rows::Explicit { vars, rows },
        })
    }

    pub fn mu_t(&self) -> f64 {
        self.mu_t
    }

    /// Boxes given at assembly time, if any.
    pub fn boxes(&self) -> Option<&VariableBoxes> {
        self.boxes.as_ref()
    }

    pub fn num_vars(&self) -> usize {
        match &self.rows {
            Rows::Explicit { vars, .. } => *vars,
            Rows::Scenario(d) => PHI + d.basis.len(),
        }
    }

    pub fn oracle_queries(&self) -> usize {
        self.oracle_queries
    }

    pub fn h1_count(&self) -> usize {
        match &self.rows {
            Rows::Explicit { .. } => 0,
            Rows::Scenario(d) => d.samples.len() * d.states.len(),
        }
    }

    pub fn h2_count(&self) -> usize {
        match &self.rows {
            Rows::Explicit { rows, .. } => rows.len(),
            Rows::Scenario(d) => {
                d.samples.len() * d.table.input_count() * d.states.len() * d.dists.len()
            }
        }
    }

    pub fn row_count(&self) -> usize {
        self.h1_count() + self.h2_count()
    }

    /// Row number `index`: H₁ rows by `(i, x̂)`, then H₂ rows by `(i, ν, x̂, d̂)`.
    pub fn row(&self, index: usize) -> Option<SopRow> {
        match &self.rows {
            Rows::Explicit { rows, .. } => rows.get(index).cloned(),
            Rows::Scenario(d) => {
                let (ns, nu, nd) = (d.states.len(), d.table.input_count(), d.dists.len());
                if index < self.h1_count() {
                    return Some(h1_row(d, index / ns, index % ns));
                }
                let mut rest = index - self.h1_count();
                if rest >= self.h2_count() {
                    return None;
                }
                let k = rest % nd;
                rest /= nd;
                let s = rest % ns;
                rest /= ns;
                let u = rest % nu;
                let i = rest / nu;
                let dist = sq_dist(&d.samples.disturbances[i], &d.dists[k]);
                Some(h2_row(
                    d,
                    self.mu_t,
                    i,
                    u,
                    s,
                    d.table.nearest(s, u, k),
                    k,
                    dist,
                ))
            }
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = SopRow> + '_ {
        (0..self.row_count()).filter_map(|i| self.row(i))
    }

    /// Rows that dominate the full set for every `G` inside `boxes`.
    ///
    /// For fixed `(i, ν, x̂)` an H₂ row depends on `d̂` only through the successor
    /// cell and the linear term `−η̃‖d̄_i − d̂‖²`, so per successor the rows with the
    /// smallest distance (and, if `η̃` may be negative, the largest) suffice.
    fn candidates(&self, boxes: &[Interval]) -> Vec<SopRow> {
        let d = match &self.rows {
            Rows::Explicit { rows, .. } => return rows.clone(),
            Rows::Scenario(d) => d,
        };
        let keep_far = boxes[ETA].lo < 0.0;
        let (ns, nu) = (d.states.len(), d.table.input_count());
        let mut out: Vec<SopRow> = (0..d.samples.len())
            .flat_map(|i| (0..ns).map(move |s| (i, s)))
            .map(|(i, s)| h1_row(d, i, s))
            .collect();
        // successor groups per (x̂, ν): (successor, member disturbance cells)
        let groups: Vec<Vec<(usize, Vec<usize>)>> = (0..ns * nu)
            .map(|su| {
                let mut g: Vec<(usize, Vec<usize>)> = Vec::new();
                for (k, &n) in d
                    .table
                    .nearest_successors(su / nu, su % nu)
                    .iter()
                    .enumerate()
                {
                    match g.iter_mut().find(|(t, _)| *t == n) {
                        Some((_, ks)) => ks.push(k),
                        None => g.push((n, vec![k])),
                    }
                }
                g
            })
            .collect();
        let h2: Vec<Vec<SopRow>> = (0..d.samples.len())
            .into_par_iter()
            .map(|i| {
                let dbar = &d.samples.disturbances[i];
                let dist: Vec<f64> = d.dists.iter().map(|dh| sq_dist(dbar, dh)).collect();
                let mut rows = Vec::new();
                for u in 0..nu {
                    for s in 0..ns {
                        for (next, ks) in &groups[s * nu + u] {
                            let (mut near, mut far) = (ks[0], ks[0]);
                            for &k in ks {
                                if dist[k] < dist[near] {
                                    near = k;
                                }
                                if dist[k] > dist[far] {
                                    far = k;
                                }
                            }
                            rows.push(h2_row(d, self.mu_t, i, u, s, *next, near, dist[near]));
                            if keep_far && far != near {
                                rows.push(h2_row(d, self.mu_t, i, u, s, *next, far, dist[far]));
                            }
                        }
                    }
                }
                rows
            })
            .collect();
        out.extend(h2.into_iter().flatten());
        out
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `γ‖x̄_i − x̂‖² − S(φ, x̄_i, x̂)`.
fn h1_row(d: &ScenarioData, i: usize, s: usize) -> SopRow {
    let z = d.basis.len();
    let x = &d.samples.states[i];
    let xh = &d.states[s];
    let mut coeffs = vec![0.0; PHI + z];
    coeffs[GAMMA] = sq_dist(x, xh);
    d.basis.eval_into(x, xh, &mut coeffs[PHI..]);
    coeffs[PHI..].iter_mut().for_each(|v| *v = -*v);
    SopRow {
        coeffs,
        constant: 0.0,
        tag: RowTag {
            kind: ConstraintKind::H1,
            sample: i,
            input: None,
            state: s,
            disturbance: None,
        },
    }
}

/// `S(φ, f(x̄_i, ν, d̄_i), f̂(x̂, ν, d̂)) − μ̃ S(φ, x̄_i, x̂) − η̃‖d̄_i − d̂‖² − θ̃`.
#[allow(clippy::too_many_arguments)]
fn h2_row(
    d: &ScenarioData,
    mu_t: f64,
    i: usize,
    u: usize,
    s: usize,
    next: usize,
    k: usize,
    dist: f64,
) -> SopRow {
    let z = d.basis.len();
    let nu = d.table.input_count();
    let mut coeffs = vec![0.0; PHI + z];
    let mut now = vec![0.0; z];
    d.basis
        .eval_into(&d.measured[i * nu + u], &d.states[next], &mut coeffs[PHI..]);
    d.basis
        .eval_into(&d.samples.states[i], &d.states[s], &mut now);
    for (c, g) in coeffs[PHI..].iter_mut().zip(&now) {
        *c -= mu_t * g;
    }
    coeffs[ETA] = -dist;
    coeffs[THETA] = -1.0;
    SopRow {
        coeffs,
        constant: 0.0,
        tag: RowTag {
            kind: ConstraintKind::H2,
            sample: i,
            input: Some(u),
            state: s,
            disturbance: Some(k),
        },
    }
}

/// Builds the sampled program for one `μ̃`, querying the oracle for the
/// abstract transitions as well.
#[allow(clippy::too_many_arguments)]
pub fn assemble_sop(
    samples: &SampleBatch,
    sys: &BlackBoxSystem,
    state_grid: &UniformGrid,
    dist_grid: &UniformGrid,
    basis: &BasisSpec,
    mu_t: f64,
    boxes: &VariableBoxes,
    row_cap: usize,
) -> Result<SopInstance, ScenarioError> {
    check_counts(samples, sys, state_grid, dist_grid, row_cap)?;
    let table = tabulate_transitions(sys, state_grid, dist_grid)?;
    assemble_with_table(
        samples, sys, state_grid, dist_grid, &table, basis, mu_t, boxes, row_cap,
    )
}

fn check_counts(
    samples: &SampleBatch,
    sys: &BlackBoxSystem,
    state_grid: &UniformGrid,
    dist_grid: &UniformGrid,
    row_cap: usize,
) -> Result<(), ScenarioError> {
    if samples.is_empty() {
        return Err(ScenarioError::Precondition("sample batch is empty".into()));
    }
    let q = samples.len() as u128;
    let (ns, nu, nd) = (
        state_grid.len() as u128,
        sys.signature().inputs.len() as u128,
        dist_grid.len() as u128,
    );
    let rows = q * ns + q * nu * ns * nd;
    if rows > row_cap as u128 {
        return Err(ScenarioError::Capacity(format!(
            "{rows} rows ({q} samples, {nu} inputs, {ns} states, {nd} disturbances) exceed the cap of {row_cap}"
        )));
    }
    Ok(())
}

/// Like [`assemble_sop`] but reuses an already tabulated abstraction.
#[allow(clippy::too_many_arguments)]
pub fn assemble_with_table(
    samples: &SampleBatch,
    sys: &BlackBoxSystem,
    state_grid: &UniformGrid,
    dist_grid: &UniformGrid,
    table: &TransitionTable,
    basis: &BasisSpec,
    mu_t: f64,
    boxes: &VariableBoxes,
    row_cap: usize,
) -> Result<SopInstance, ScenarioError> {
    let sig = sys.signature();
    basis.validate(sig.state_dim)?;
    boxes.validate()?;
    if !(mu_t > 0.0 && mu_t < 1.0) {
        return Err(ScenarioError::Precondition(format!(
            "mu_t = {mu_t} must lie in (0, 1)"
        )));
    }
    if state_grid.dim() != sig.state_dim || dist_grid.dim() != sig.disturbance_dim {
        return Err(ScenarioError::Precondition(
            "grid dimensions do not match the system".into(),
        ));
    }
    if table.state_count() != state_grid.len()
        || table.input_count() != sig.inputs.len()
        || table.disturbance_count() != dist_grid.len()
    {
        return Err(ScenarioError::Precondition(
            "transition table does not match the grids".into(),
        ));
    }
    check_counts(samples, sys, state_grid, dist_grid, row_cap)?;
    if let Some(i) = (0..samples.len()).find(|&i| {
        !sig.state_box.contains(&samples.states[i])
            || !sig.disturbance_box.contains(&samples.disturbances[i])
    }) {
        return Err(ScenarioError::Precondition(format!(
            "sample {i} lies outside X x D"
        )));
    }
    let inputs: Vec<Vec<f64>> = sig.inputs.iter().collect();
    let queries: Vec<Query> = (0..samples.len())
        .flat_map(|i| {
            inputs.iter().map(move |u| Query {
                state: samples.states[i].clone(),
                input: u.clone(),
                disturbance: samples.disturbances[i].clone(),
            })
        })
        .collect();
    let measured = sys.query_batch(&queries)?;
    Ok(SopInstance {
        mu_t,
        boxes: Some(*boxes),
        oracle_queries: measured.len() + table.queries(),
        rows: Rows::Scenario(Box::new(ScenarioData {
            basis: basis.clone(),
            states: state_grid.representatives(),
            dists: dist_grid.representatives(),
            samples: samples.clone(),
            measured,
            table: table.clone(),
        })),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// After minimizing `ξ`, maximize variable `.0` and then minimize variable `.1`.
    pub refine: Option<(usize, usize)>,
}

impl SolveOptions {
    /// Maximize `γ`, then minimize `θ̃`.
    pub fn scenario() -> Self {
        Self {
            refine: Some((GAMMA, THETA)),
        }
    }

    pub fn plain() -> Self {
        Self { refine: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub decision: Vec<f64>,
    /// Largest row value at `decision`, so every row is `≤ xi` exactly.
    pub xi: f64,
    /// Optimal value of the first stage before refinement.
    pub xi_lp: f64,
    pub active_rows: Vec<RowTag>,
    /// Rows that entered the simplex.
    pub working_rows: usize,
    pub rounds: usize,
}

struct Working {
    rows: Vec<SopRow>,
    ids: HashSet<usize>,
}

impl Working {
    fn add(&mut self, candidates: &[SopRow], id: usize) -> bool {
        if self.ids.insert(id) {
            self.rows.push(candidates[id].clone());
            true
        } else {
            false
        }
    }
}

fn evaluate(candidates: &[SopRow], g: &[f64]) -> Vec<f64> {
    candidates.par_iter().map(|r| r.value(g)).collect()
}

/// Indices of the `limit` largest values above `floor`, largest first, ties by index.
fn most_violated(values: &[f64], floor: f64, limit: usize) -> Vec<usize> {
    let mut over: Vec<usize> = (0..values.len()).filter(|&i| values[i] > floor).collect();
    over.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    over.truncate(limit);
    over
}

enum Stage {
    MinXi,
    Maximize {
        var: usize,
        xi_cap: f64,
    },
    Minimize {
        var: usize,
        xi_cap: f64,
        floor: (usize, f64),
    },
}

/// Solves one stage by row generation; returns `(G, ξ)`.
fn solve_stage(
    candidates: &[SopRow],
    working: &mut Working,
    boxes: &[Interval],
    stage: &Stage,
    rounds: &mut usize,
) -> Result<(Vec<f64>, f64), ScenarioError> {
    let nv = boxes.len();
    loop {
        *rounds += 1;
        if *rounds > MAX_ROUNDS {
            return Err(ScenarioError::Solver(format!(
                "no convergence after {MAX_ROUNDS} row-generation rounds"
            )));
        }
        let mut objective = vec![0.0; nv + 1];
        let mut bounds: Vec<(f64, f64)> = boxes.iter().map(|b| (b.lo, b.hi)).collect();
        bounds.push((f64::NEG_INFINITY, f64::INFINITY));
        let mut cap = f64::INFINITY;
        match *stage {
            Stage::MinXi => objective[nv] = 1.0,
            Stage::Maximize { var, xi_cap } => {
                objective[var] = -1.0;
                cap = xi_cap;
            }
            Stage::Minimize { var, xi_cap, floor } => {
                objective[var] = 1.0;
                cap = xi_cap;
                bounds[floor.0].0 = floor.1.min(bounds[floor.0].1);
            }
        }
        bounds[nv].1 = cap;
        let constraints = working
            .rows
            .iter()
            .map(|r| {
                let mut c = r.coeffs.clone();
                c.push(-1.0);
                Constraint::le(c, -r.constant)
            })
            .collect();
        let lp = LinearProgram {
            objective,
            constraints,
            bounds,
        };
        let sol = match simplex::solve(&lp).map_err(|e| ScenarioError::Solver(e.to_string()))? {
            Outcome::Optimal(s) => s,
            Outcome::Infeasible => {
                return Err(ScenarioError::Solver(
                    "working program became infeasible".into(),
                ))
            }
            Outcome::Unbounded => {
                return Err(ScenarioError::Solver("working program is unbounded".into()))
            }
        };
        let g = sol.x[..nv].to_vec();
        let xi = sol.x[nv];
        let values = evaluate(candidates, &g);
        let floor = xi + 1e-9 * (1.0 + xi.abs());
        let mut added = 0;
        for id in most_violated(&values, floor, ROWS_PER_ROUND * 4) {
            if working.add(candidates, id) {
                added += 1;
                if added == ROWS_PER_ROUND {
                    break;
                }
            }
        }
        if added == 0 {
            return Ok((g, xi));
        }
    }
}

/// Minimizes `ξ` subject to every row and the variable boxes.
pub fn solve_lp(
    instance: &SopInstance,
    boxes: &[Interval],
    options: &SolveOptions,
) -> Result<LpSolution, ScenarioError> {
    let nv = instance.num_vars();
    if boxes.len() != nv {
        return Err(ScenarioError::Precondition(format!(
            "{} boxes for {nv} variables",
            boxes.len()
        )));
    }
    if let Some(b) = boxes
        .iter()
        .find(|b| !(b.lo.is_finite() && b.hi.is_finite() && b.lo <= b.hi))
    {
        return Err(ScenarioError::Precondition(format!(
            "variable box {b} must be finite and ordered"
        )));
    }
    if instance.row_count() == 0 {
        return Err(ScenarioError::Precondition("program has no rows".into()));
    }
    if let Some((hi, lo)) = options.refine {
        if hi >= nv || lo >= nv {
            return Err(ScenarioError::Precondition(
                "refinement variable out of range".into(),
            ));
        }
    }

    let candidates = instance.candidates(boxes);
    let center: Vec<f64> = boxes.iter().map(|b| 0.5 * (b.lo + b.hi)).collect();
    let mut working = Working {
        rows: Vec::new(),
        ids: HashSet::new(),
    };
    let seed_values = evaluate(&candidates, &center);
    for id in most_violated(&seed_values, f64::NEG_INFINITY, ROWS_PER_ROUND) {
        working.add(&candidates, id);
    }

    let mut rounds = 0;
    let (mut g, xi_lp) = solve_stage(&candidates, &mut working, boxes, &Stage::MinXi, &mut rounds)?;
    if let Some((hi, lo)) = options.refine {
        let xi_cap = xi_lp + 1e-9 * (1.0 + xi_lp.abs());
        let (g1, _) = solve_stage(
            &candidates,
            &mut working,
            boxes,
            &Stage::Maximize { var: hi, xi_cap },
            &mut rounds,
        )?;
        let floor = g1[hi] - 1e-9 * (1.0 + g1[hi].abs());
        let (g2, _) = solve_stage(
            &candidates,
            &mut working,
            boxes,
            &Stage::Minimize {
                var: lo,
                xi_cap,
                floor: (hi, floor),
            },
            &mut rounds,
        )?;
        g = g2;
    }
    for (v, b) in g.iter_mut().zip(boxes) {
        *v = v.clamp(b.lo, b.hi);
    }

    let values = evaluate(&candidates, &g);
    let xi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-9 * (1.0 + xi.abs());
    let active_rows = (0..candidates.len())
        .filter(|&i| values[i] >= xi - tol)
        .map(|i| candidates[i].tag)
        .collect();
    Ok(LpSolution {
        decision: g,
        xi,
        xi_lp,
        active_rows,
        working_rows: working.rows.len(),
        rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_room_network, BoxSet, InputSet, RoomNetworkParams, SystemSignature};
    use crate::quantize::make_grid;
    use crate::scenario::draw_samples;

    fn explicit(coeffs: Vec<f64>, constant: f64, n: usize) -> SopRow {
        SopRow {
            coeffs,
            constant,
            tag: RowTag {
                kind: ConstraintKind::H2,
                sample: n,
                input: None,
                state: 0,
                disturbance: None,
            },
        }
    }

    #[test]
    fn max_of_constants() {
        let inst =
            SopInstance::from_rows(0, vec![explicit(vec![], 3.0, 0), explicit(vec![], 5.0, 1)])
                .unwrap();
        let sol = solve_lp(&inst, &[], &SolveOptions::plain()).unwrap();
        assert_eq!(sol.xi, 5.0);
        assert_eq!(sol.active_rows.len(), 1);
        assert_eq!(sol.active_rows[0].sample, 1);
    }

    #[test]
    fn single_coefficient_row() {
        let inst = SopInstance::from_rows(1, vec![explicit(vec![1.0], 0.0, 0)]).unwrap();
        let sol = solve_lp(&inst, &[Interval::new(0.0, 10.0)], &SolveOptions::plain()).unwrap();
        assert_eq!(sol.xi, 0.0);
        assert_eq!(sol.decision, vec![0.0]);
    }

    #[test]
    fn refinement_is_lexicographic() {
        // rows: x0 - x1 - ξ <= 0 and -x0 - ξ <= 0; min ξ gives ξ* = -x0 ... bounded by boxes
        let inst = SopInstance::from_rows(
            2,
            vec![
                explicit(vec![1.0, -1.0], 0.0, 0),
                explicit(vec![-1.0, 0.0], 0.0, 1),
            ],
        )
        .unwrap();
        let boxes = [Interval::new(0.0, 4.0), Interval::new(0.0, 2.0)];
        let sol = solve_lp(
            &inst,
            &boxes,
            &SolveOptions {
                refine: Some((0, 1)),
            },
        )
        .unwrap();
        // ξ* = -1 at x0 = 1, x1 = 2; maximizing x0 keeps 1, minimizing x1 keeps 2
        assert!((sol.xi_lp + 1.0).abs() < 1e-12, "{sol:?}");
        assert!((sol.xi + 1.0).abs() < 1e-8, "{sol:?}");
        assert!((sol.decision[0] - 1.0).abs() < 1e-8);
    }

    fn room_setup(q: usize) -> (BlackBoxSystem, UniformGrid, UniformGrid, SampleBatch) {
        let net = build_room_network(&RoomNetworkParams::with_rooms(3)).unwrap();
        let room = net.rooms[0].clone();
        let sg = make_grid(&room.signature().state_box, 0.025).unwrap();
        let dg = make_grid(&room.signature().disturbance_box, 0.025).unwrap();
        let samples = draw_samples(room.signature(), q, 7).unwrap();
        (room, sg, dg, samples)
    }

    #[test]
    fn counting_and_constant_basis() {
        let (room, sg, dg, samples) = room_setup(10);
        let basis = BasisSpec::scalar_powers(&[0]);
        let inst = assemble_sop(
            &samples,
            &room,
            &sg,
            &dg,
            &basis,
            0.5,
            &VariableBoxes::default(),
            DEFAULT_ROW_CAP,
        )
        .unwrap();
        assert_eq!(inst.h1_count(), 200);
        assert_eq!(inst.h2_count(), 400_000);
        assert_eq!(inst.oracle_queries(), 10 * 5 + 20 * 5 * 400);
        for r in inst.rows().take(200) {
            assert_eq!(r.tag.kind, ConstraintKind::H1);
            assert_eq!(r.coeffs[PHI], -1.0);
        }
    }

    #[test]
    fn row_cap_enforced() {
        let (room, sg, dg, samples) = room_setup(10);
        let err = assemble_sop(
            &samples,
            &room,
            &sg,
            &dg,
            &BasisSpec::scalar_powers(&[2]),
            0.5,
            &VariableBoxes::default(),
            1000,
        )
        .unwrap_err();
        assert!(matches!(err, ScenarioError::Capacity(_)));
    }

    #[test]
    fn rows_match_direct_recomputation() {
        let (room, sg, dg, samples) = room_setup(10);
        let basis = BasisSpec::scalar_powers(&[4, 2, 0]);
        let inst = assemble_sop(
            &samples,
            &room,
            &sg,
            &dg,
            &basis,
            0.5,
            &VariableBoxes::default(),
            DEFAULT_ROW_CAP,
        )
        .unwrap();
        let phi = [3.0, 2.0, 1.5];
        let g = [0.7, 0.02, 0.1, phi[0], phi[1], phi[2]];
        let inputs = [0.0, 0.05, 0.1, 0.15, 0.2];
        let s_fn = |x: f64, xh: f64| phi[0] * (x - xh).powi(4) + phi[1] * (x - xh).powi(2) + phi[2];
        for n in 0..100 {
            let idx = 200 + (n * 3989) % 400_000;
            let r = inst.row(idx).unwrap();
            let i = r.tag.sample;
            let (u, k) = (r.tag.input.unwrap(), r.tag.disturbance.unwrap());
            let xb = samples.states[i][0];
            let db = &samples.disturbances[i];
            let xh = sg.representative(r.tag.state)[0];
            let dh = dg.representative(k);
            let f = room.query(&[xb], &[inputs[u]], db).unwrap()[0];
            let fh_raw = room.query(&[xh], &[inputs[u]], &dh).unwrap();
            let fh = sg.nearest(&fh_raw).unwrap().representative[0];
            let dist = (db[0] - dh[0]).powi(2) + (db[1] - dh[1]).powi(2);
            let want = s_fn(f, fh) - 0.5 * s_fn(xb, xh) - g[1] * dist - g[2];
            assert!((r.value(&g) - want).abs() < 1e-12, "row {idx}");
        }
    }

    #[test]
    fn pruned_program_is_exact() {
        // identity-like toy system small enough to compare against every row
        let sig = SystemSignature::new(
            InputSet::scalar(&[0.0, 0.1]),
            BoxSet::cube(1, -0.5, 0.5),
            BoxSet::cube(1, -0.5, 0.5),
        )
        .unwrap();
        let sys =
            BlackBoxSystem::from_fn("toy", sig, |x, u, d| vec![0.8 * x[0] + 0.1 * d[0] - u[0]])
                .unwrap();
        let sg = make_grid(&sys.signature().state_box, 0.1).unwrap();
        let dg = make_grid(&sys.signature().disturbance_box, 0.1).unwrap();
        let samples = draw_samples(sys.signature(), 30, 3).unwrap();
        let basis = BasisSpec::scalar_powers(&[2, 0]);
        let boxes = VariableBoxes {
            gamma: Interval::new(1e-3, 10.0),
            eta: Interval::new(0.0, 10.0),
            theta: Interval::new(0.0, 10.0),
            phi: Interval::new(-10.0, 10.0),
        };
        let inst = assemble_sop(
            &samples,
            &sys,
            &sg,
            &dg,
            &basis,
            0.5,
            &boxes,
            DEFAULT_ROW_CAP,
        )
        .unwrap();
        let sol = solve_lp(&inst, &boxes.expand(2), &SolveOptions::scenario()).unwrap();
        let full_max = inst
            .rows()
            .map(|r| r.value(&sol.decision))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(
            (full_max - sol.xi).abs() < 1e-12,
            "{full_max} vs {}",
            sol.xi
        );
        assert!(sol.xi <= sol.xi_lp + 1e-8 * (1.0 + sol.xi_lp.abs()));

        let all: Vec<SopRow> = inst.rows().collect();
        let dense = SopInstance::from_rows(5, all).unwrap();
        let direct = solve_lp(&dense, &boxes.expand(2), &SolveOptions::plain()).unwrap();
        assert!((direct.xi_lp - sol.xi_lp).abs() < 1e-8 * (1.0 + direct.xi_lp.abs()));
    }
}
