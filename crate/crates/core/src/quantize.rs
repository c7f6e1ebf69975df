//! Uniform-grid quantizers and the data-driven abstract transition map
//! `f̂(x̂, ν, d̂) = P(f(x̂, ν, d̂))`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BlackBoxSystem, BoxSet, Interval, OracleError, Query};

/// Default cap on the total number of cells of a grid.
pub const DEFAULT_CELL_CAP: usize = 100_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantizeError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("grid needs {cells} cells, above the cap of {cap}")]
    Capacity { cells: String, cap: usize },
    #[error("coordinate {coordinate} = {value} lies outside [{lo}, {hi}]")]
    Domain {
        coordinate: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("cell index {index} out of range for {total} cells")]
    Index { index: usize, total: usize },
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Uniform partition of a box into cells, each represented by its center.
///
/// `sigma` is half of the widest cell side, so `‖P(x) − x‖_∞ ≤ sigma` on the box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformGrid {
    bounds: BoxSet,
    cells_per_dim: Vec<usize>,
    sigma: f64,
}

/// A cell of a grid: flat lexicographic index plus its center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractPoint {
    pub index: usize,
    pub representative: Vec<f64>,
}

/// Successor of an abstract transition; `Sink` absorbs excursions out of the box.
#[derive(Debug, Clone, PartialEq)]
pub enum AbstractState {
    Cell(AbstractPoint),
    Sink,
}

impl AbstractState {
    pub fn cell(&self) -> Option<&AbstractPoint> {
        match self {
            AbstractState::Cell(p) => Some(p),
            AbstractState::Sink => None,
        }
    }
}

pub fn make_grid(bounds: &BoxSet, target_sigma: f64) -> Result<UniformGrid, QuantizeError> {
    make_grid_capped(bounds, target_sigma, DEFAULT_CELL_CAP)
}

/// Smallest per-coordinate cell counts whose half-widths are all `<= target_sigma`.
pub fn make_grid_capped(
    bounds: &BoxSet,
    target_sigma: f64,
    cap: usize,
) -> Result<UniformGrid, QuantizeError> {
    if !(target_sigma > 0.0 && target_sigma.is_finite()) {
        return Err(QuantizeError::Precondition(format!(
            "target sigma must be positive, got {target_sigma}"
        )));
    }
    let mut cells = Vec::with_capacity(bounds.dim());
    for (k, iv) in bounds.intervals().iter().enumerate() {
        let w = iv.width();
        if !(w > 0.0 && w.is_finite()) {
            return Err(QuantizeError::Precondition(format!(
                "coordinate {k} interval {iv} is degenerate"
            )));
        }
        let raw = (w / (2.0 * target_sigma)).ceil();
        if raw > cap as f64 {
            return Err(QuantizeError::Capacity {
                cells: format!("{raw:e} along coordinate {k}"),
                cap,
            });
        }
        let mut n = (raw as usize).max(1);
        // floating-point division can overshoot an exact multiple by one ulp
        if n > 1 && w / (2.0 * (n - 1) as f64) <= target_sigma {
            n -= 1;
        }
        cells.push(n);
    }
    UniformGrid::new(bounds.clone(), cells, cap)
}

impl UniformGrid {
    /// Grid with explicit cell counts.
    pub fn new(
        bounds: BoxSet,
        cells_per_dim: Vec<usize>,
        cap: usize,
    ) -> Result<Self, QuantizeError> {
        if cells_per_dim.len() != bounds.dim() {
            return Err(QuantizeError::Precondition(format!(
                "{} cell counts for a {}-dimensional box",
                cells_per_dim.len(),
                bounds.dim()
            )));
        }
        let mut total: usize = 1;
        for &n in &cells_per_dim {
            if n == 0 {
                return Err(QuantizeError::Precondition(
                    "cell counts must be positive".into(),
                ));
            }
            total = total.checked_mul(n).filter(|&t| t <= cap).ok_or_else(|| {
                QuantizeError::Capacity {
                    cells: format!("product of {cells_per_dim:?}"),
                    cap,
                }
            })?;
        }
        let sigma = bounds
            .intervals()
            .iter()
            .zip(&cells_per_dim)
            .map(|(iv, &n)| iv.width() / (2.0 * n as f64))
            .fold(0.0, f64::max);
        Ok(Self {
            bounds,
            cells_per_dim,
            sigma,
        })
    }

    pub fn bounds(&self) -> &BoxSet {
        &self.bounds
    }

    pub fn cells_per_dim(&self) -> &[usize] {
        &self.cells_per_dim
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dim(&self) -> usize {
        self.cells_per_dim.len()
    }

    pub fn len(&self) -> usize {
        self.cells_per_dim.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn cell_width(&self, k: usize) -> f64 {
        self.bounds.0[k].width() / self.cells_per_dim[k] as f64
    }

    fn boundary(&self, k: usize, j: usize) -> f64 {
        self.bounds.0[k].lo + j as f64 * self.cell_width(k)
    }

    /// Per-coordinate cell indices of a flat index (first coordinate most significant).
    pub fn unflatten(&self, index: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        let mut rest = index;
        for (slot, &n) in out.iter_mut().zip(&self.cells_per_dim).rev() {
            *slot = rest % n;
            rest /= n;
        }
        out
    }

    pub fn flatten(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .zip(&self.cells_per_dim)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    /// Center of the cell with the given flat index.
    pub fn representative(&self, index: usize) -> Vec<f64> {
        self.unflatten(index)
            .iter()
            .enumerate()
            .map(|(k, &j)| self.bounds.0[k].lo + (j as f64 + 0.5) * self.cell_width(k))
            .collect()
    }

    pub fn point(&self, index: usize) -> Result<AbstractPoint, QuantizeError> {
        if index >= self.len() {
            return Err(QuantizeError::Index {
                index,
                total: self.len(),
            });
        }
        Ok(AbstractPoint {
            index,
            representative: self.representative(index),
        })
    }

    /// All cell centers in index order.
    pub fn representatives(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.representative(i)).collect()
    }

    fn coordinate_cell(&self, k: usize, v: f64) -> usize {
        let n = self.cells_per_dim[k];
        let lo = self.bounds.0[k].lo;
        let mut j = (((v - lo) / self.cell_width(k)).floor().max(0.0) as usize).min(n - 1);
        // cells are (b_j, b_{j+1}], the first one also holds its lower end
        while j > 0 && v <= self.boundary(k, j) {
            j -= 1;
        }
        while j + 1 < n && v > self.boundary(k, j + 1) {
            j += 1;
        }
        j
    }

    /// The cell containing `x`; shared boundaries go to the lower-index cell.
    pub fn quantize(&self, x: &[f64]) -> Result<AbstractPoint, QuantizeError> {
        if x.len() != self.dim() {
            return Err(QuantizeError::Precondition(format!(
                "point has dimension {}, grid has {}",
                x.len(),
                self.dim()
            )));
        }
        if let Some((coordinate, value)) = self.bounds.first_violation(x) {
            let Interval { lo, hi } = self.bounds.0[coordinate];
            return Err(QuantizeError::Domain {
                coordinate,
                value,
                lo,
                hi,
            });
        }
        let multi: Vec<usize> = x
            .iter()
            .enumerate()
            .map(|(k, &v)| self.coordinate_cell(k, v))
            .collect();
        let index = self.flatten(&multi);
        Ok(AbstractPoint {
            index,
            representative: self.representative(index),
        })
    }

    /// Nearest cell to an arbitrary point (projects onto the box first).
    pub fn nearest(&self, x: &[f64]) -> Result<AbstractPoint, QuantizeError> {
        self.quantize(&self.bounds.clamp(x))
    }
}

/// Queries the oracle once at the representatives and quantizes the result.
pub fn abstract_transition(
    sys: &BlackBoxSystem,
    state_grid: &UniformGrid,
    dist_grid: &UniformGrid,
    state: &AbstractPoint,
    input: &[f64],
    disturbance: &AbstractPoint,
) -> Result<AbstractState, QuantizeError> {
    debug_assert_eq!(state_grid.representative(state.index), state.representative);
    debug_assert_eq!(
        dist_grid.representative(disturbance.index),
        disturbance.representative
    );
    let next = sys.query(&state.representative, input, &disturbance.representative)?;
    classify(state_grid, &next)
}

/// Cell of `next`, or the sink when `next` leaves the grid box.
pub fn classify(grid: &UniformGrid, next: &[f64]) -> Result<AbstractState, QuantizeError> {
    match grid.quantize(next) {
        Ok(p) => Ok(AbstractState::Cell(p)),
        Err(QuantizeError::Domain { .. }) => Ok(AbstractState::Sink),
        Err(e) => Err(e),
    }
}

/// Dense table of `f̂(x̂, ν, d̂)` for every state cell, input and disturbance cell.
///
/// Entry `(s, u, k)` lives at `(s · |U| + u) · |D̂| + k`. Successors outside the
/// state box are recorded as the sink (`state_count()`), together with the cell
/// nearest to the excursion.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTable {
    states: usize,
    inputs: usize,
    disturbances: usize,
    next: Vec<usize>,
    nearest: Vec<usize>,
}

impl TransitionTable {
    pub fn state_count(&self) -> usize {
        self.states
    }

    pub fn input_count(&self) -> usize {
        self.inputs
    }

    pub fn disturbance_count(&self) -> usize {
        self.disturbances
    }

    pub fn sink(&self) -> usize {
        self.states
    }

    fn slot(&self, s: usize, u: usize, k: usize) -> usize {
        (s * self.inputs + u) * self.disturbances + k
    }

    /// Successor cell, or `sink()`.
    pub fn next(&self, s: usize, u: usize, k: usize) -> usize {
        self.next[self.slot(s, u, k)]
    }

    /// Successor cell with excursions clamped back onto the box.
    pub fn nearest(&self, s: usize, u: usize, k: usize) -> usize {
        self.nearest[self.slot(s, u, k)]
    }

    pub fn successors(&self, s: usize, u: usize) -> &[usize] {
        let at = self.slot(s, u, 0);
        &self.next[at..at + self.disturbances]
    }

    pub fn nearest_successors(&self, s: usize, u: usize) -> &[usize] {
        let at = self.slot(s, u, 0);
        &self.nearest[at..at + self.disturbances]
    }

    pub fn sink_count(&self) -> usize {
        self.next.iter().filter(|&&n| n == self.states).count()
    }

    /// Number of oracle queries spent building the table.
    pub fn queries(&self) -> usize {
        self.next.len()
    }

    pub fn from_parts(
        states: usize,
        inputs: usize,
        disturbances: usize,
        next: Vec<usize>,
        nearest: Vec<usize>,
    ) -> Result<Self, QuantizeError> {
        let total = states * inputs * disturbances;
        if next.len() != total || nearest.len() != total {
            return Err(QuantizeError::Precondition(format!(
                "transition table needs {total} entries, got {} and {}",
                next.len(),
                nearest.len()
            )));
        }
        if let Some(&bad) = next.iter().find(|&&n| n > states) {
            return Err(QuantizeError::Index {
                index: bad,
                total: states + 1,
            });
        }
        if let Some(&bad) = nearest.iter().find(|&&n| n >= states) {
            return Err(QuantizeError::Index {
                index: bad,
                total: states,
            });
        }
        Ok(Self {
            states,
            inputs,
            disturbances,
            next,
            nearest,
        })
    }
}

/// Queries the oracle once per `(x̂, ν, d̂)` and quantizes every result.
pub fn tabulate_transitions(
    sys: &BlackBoxSystem,
    state_grid: &UniformGrid,
    dist_grid: &UniformGrid,
) -> Result<TransitionTable, QuantizeError> {
    let sig = sys.signature();
    if state_grid.dim() != sig.state_dim || dist_grid.dim() != sig.disturbance_dim {
        return Err(QuantizeError::Precondition(format!(
            "grid dimensions ({}, {}) do not match system ({}, {})",
            state_grid.dim(),
            dist_grid.dim(),
            sig.state_dim,
            sig.disturbance_dim
        )));
    }
    let (ns, nu, nd) = (state_grid.len(), sig.inputs.len(), dist_grid.len());
    ns.checked_mul(nu)
        .and_then(|v| v.checked_mul(nd))
        .filter(|&v| v <= DEFAULT_CELL_CAP)
        .ok_or_else(|| QuantizeError::Capacity {
            cells: format!("{ns} x {nu} x {nd}"),
            cap: DEFAULT_CELL_CAP,
        })?;
    let inputs: Vec<Vec<f64>> = sig.inputs.iter().collect();
    let dists = dist_grid.representatives();
    let rows: Vec<(Vec<usize>, Vec<usize>)> = (0..ns)
        .into_par_iter()
        .map(|s| {
            let x = state_grid.representative(s);
            let queries: Vec<Query> = inputs
                .iter()
                .flat_map(|u| {
                    dists.iter().map(|d| Query {
                        state: x.clone(),
                        input: u.clone(),
                        disturbance: d.clone(),
                    })
                })
                .collect();
            let out = sys.query_batch(&queries)?;
            let mut next = Vec::with_capacity(out.len());
            let mut nearest = Vec::with_capacity(out.len());
            for y in &out {
                match classify(state_grid, y)? {
                    AbstractState::Cell(p) => {
                        next.push(p.index);
                        nearest.push(p.index);
                    }
                    AbstractState::Sink => {
                        next.push(ns);
                        nearest.push(state_grid.nearest(y)?.index);
                    }
                }
            }
            Ok((next, nearest))
        })
        .collect::<Result<_, QuantizeError>>()?;
    let (next, nearest): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    Ok(TransitionTable {
        states: ns,
        inputs: nu,
        disturbances: nd,
        next: next.concat(),
        nearest: nearest.concat(),
    })
}
