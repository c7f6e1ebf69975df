use serde::{Deserialize, Serialize};

use super::abstraction::FiniteTransitionSystem;
use super::SynthesisError;
use crate::model::BoxSet;
use crate::quantize::UniformGrid;

/// Winning set of the safety game and the input chosen in each winning state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControllerTable {
    pub winning: Vec<bool>,
    pub inputs: Vec<Option<usize>>,
    pub iterations: usize,
}

impl ControllerTable {
    pub fn winning_count(&self) -> usize {
        self.winning.iter().filter(|&&w| w).count()
    }

    pub fn is_empty(&self) -> bool {
        self.winning_count() == 0
    }

    pub fn winning_states(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.winning.len()).filter(|&s| self.winning[s])
    }

    /// Every disturbance successor of every winning state under its input is winning.
    pub fn verify(&self, fts: &FiniteTransitionSystem) -> Result<(), SynthesisError> {
        for s in self.winning_states() {
            let u = self.inputs[s].ok_or_else(|| {
                SynthesisError::Precondition(format!("winning state {s} has no input"))
            })?;
            if let Some(k) = fts
                .successors(s, u)
                .iter()
                .position(|&n| n == fts.sink() || !self.winning[n])
            {
                return Err(SynthesisError::Unsound {
                    state: s,
                    disturbance: k,
                });
            }
        }
        Ok(())
    }
}

/// Cells lying entirely inside `safe`.
pub fn safe_cells(grid: &UniformGrid, safe: &BoxSet) -> Vec<bool> {
    let eps = 1e-12;
    (0..grid.len())
        .map(|i| {
            let c = grid.representative(i);
            c.iter().enumerate().all(|(k, v)| {
                let b = grid.bounds().0[k];
                let half = b.width() / grid.cells_per_dim()[k] as f64 / 2.0;
                let s = safe.0[k];
                v - half >= s.lo - eps && v + half <= s.hi + eps
            })
        })
        .collect()
}

/// How a winning state picks among its qualifying inputs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputPolicy {
    /// First qualifying input in declared order.
    #[default]
    First,
    /// Qualifying input whose worst successor lies deepest inside the winning
    /// set, measured in grid cells (L∞) to the nearest losing cell or the grid
    /// edge; ties go to the earlier input. Needs the state grid of the
    /// abstraction and falls back to `First` without it.
    Deepest,
}

/// Maximal fixed point `W = {x̂ ∈ W ∩ safe : ∃ν ∀d̂ τ(x̂, ν, d̂) ∈ W}`; the first
/// qualifying input in declared order is chosen.
pub fn safety_synthesis(
    fts: &FiniteTransitionSystem,
    safe: &[bool],
) -> Result<ControllerTable, SynthesisError> {
    safety_synthesis_with(fts, safe, InputPolicy::First)
}

pub fn safety_synthesis_with(
    fts: &FiniteTransitionSystem,
    safe: &[bool],
    policy: InputPolicy,
) -> Result<ControllerTable, SynthesisError> {
    let n = fts.states();
    if safe.len() != n {
        return Err(SynthesisError::Precondition(format!(
            "safe set has {} entries for {n} states",
            safe.len()
        )));
    }
    let sink = fts.sink();
    let qualifies =
        |w: &[bool], s: usize, u: usize| fts.successors(s, u).iter().all(|&m| m != sink && w[m]);
    let good =
        |w: &[bool], s: usize| -> Option<usize> { (0..fts.inputs()).find(|&u| qualifies(w, s, u)) };
    let mut winning = safe.to_vec();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let next: Vec<bool> = (0..n)
            .map(|s| winning[s] && good(&winning, s).is_some())
            .collect();
        if next == winning {
            break;
        }
        winning = next;
    }
    let depth = match (policy, fts.state_grid()) {
        (InputPolicy::Deepest, Some(grid)) if grid.len() == n => Some(depth_in(grid, &winning)),
        _ => None,
    };
    let inputs = (0..n)
        .map(|s| {
            if !winning[s] {
                return None;
            }
            let Some(depth) = &depth else {
                return good(&winning, s);
            };
            let mut best: Option<(usize, usize)> = None;
            for u in (0..fts.inputs()).filter(|&u| qualifies(&winning, s, u)) {
                let worst = fts
                    .successors(s, u)
                    .iter()
                    .map(|&m| depth[m])
                    .min()
                    .unwrap_or(0);
                if best.is_none_or(|(d, _)| worst > d) {
                    best = Some((worst, u));
                }
            }
            best.map(|(_, u)| u)
        })
        .collect();
    Ok(ControllerTable {
        winning,
        inputs,
        iterations,
    })
}

/// L∞ cell distance from each cell to the nearest cell outside `inside`,
/// counting the ring just beyond the grid as outside.
fn depth_in(grid: &UniformGrid, inside: &[bool]) -> Vec<usize> {
    let dims = grid.cells_per_dim();
    let mut depth: Vec<usize> = (0..grid.len())
        .map(|i| {
            if !inside[i] {
                return 0;
            }
            let m = grid.unflatten(i);
            m.iter()
                .zip(dims)
                .map(|(&k, &c)| (k + 1).min(c - k))
                .min()
                .unwrap_or(0)
        })
        .collect();
    // multi-source BFS from losing cells over Chebyshev neighbors
    let mut queue: std::collections::VecDeque<usize> =
        (0..grid.len()).filter(|&i| !inside[i]).collect();
    let offsets: Vec<Vec<isize>> = (0..3usize.pow(dims.len() as u32))
        .map(|mut c| {
            (0..dims.len())
                .map(|_| {
                    let o = (c % 3) as isize - 1;
                    c /= 3;
                    o
                })
                .collect()
        })
        .filter(|o: &Vec<isize>| o.iter().any(|&v| v != 0))
        .collect();
    while let Some(i) = queue.pop_front() {
        let m = grid.unflatten(i);
        for o in &offsets {
            let nb: Option<Vec<usize>> = m
                .iter()
                .zip(o)
                .zip(dims)
                .map(|((&k, &d), &c)| {
                    let v = k as isize + d;
                    (v >= 0 && (v as usize) < c).then_some(v as usize)
                })
                .collect();
            if let Some(nb) = nb {
                let j = grid.flatten(&nb);
                if depth[j] > depth[i] + 1 {
                    depth[j] = depth[i] + 1;
                    queue.push_back(j);
                }
            }
        }
    }
    depth
}
