use serde::{Deserialize, Serialize};

use super::game::ControllerTable;
use super::SynthesisError;
use crate::compose::SimulationRelation;
use crate::model::{BlackBoxSystem, BoxSet, InterconnectionTopology};
use crate::quantize::UniformGrid;

/// State feedback returning an input index.
pub trait Controller: Send + Sync {
    fn input(&self, x: &[f64]) -> Result<usize, SynthesisError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstantController(pub usize);

impl Controller for ConstantController {
    fn input(&self, _x: &[f64]) -> Result<usize, SynthesisError> {
        Ok(self.0)
    }
}

/// Abstract controller lifted to concrete states through the relation of one
/// subsystem: `x` uses the input of the winning cell minimizing `S_i(x, ·)/κ_i`.
#[derive(Debug, Clone)]
pub struct RefinedController {
    subsystem: usize,
    relation: SimulationRelation,
    cells: Vec<(usize, Vec<f64>, usize)>,
}

impl RefinedController {
    /// Winning cell related to `x`, with its `S/κ` value.
    pub fn related_cell(&self, x: &[f64]) -> Result<(usize, f64), SynthesisError> {
        let mut best: Option<(f64, f64, usize)> = None;
        for (cell, rep, _) in &self.cells {
            let v = self.relation.composed.local_value(self.subsystem, x, rep);
            let dist: f64 = x.iter().zip(rep).map(|(a, b)| (a - b) * (a - b)).sum();
            let better = match best {
                None => true,
                Some((bv, bd, _)) => v < bv || (v == bv && dist < bd),
            };
            if better {
                best = Some((v, dist, *cell));
            }
        }
        match best {
            Some((v, _, cell)) if v <= self.relation.theta => Ok((cell, v)),
            _ => Err(SynthesisError::Refinement { state: x.to_vec() }),
        }
    }
}

impl Controller for RefinedController {
    fn input(&self, x: &[f64]) -> Result<usize, SynthesisError> {
        let (cell, _) = self.related_cell(x)?;
        let (_, _, u) = self
            .cells
            .iter()
            .find(|c| c.0 == cell)
            .expect("related cell is winning");
        Ok(*u)
    }
}

pub fn refine_controller(
    ctrl: &ControllerTable,
    relation: &SimulationRelation,
    subsystem: usize,
    state_grid: &UniformGrid,
) -> Result<RefinedController, SynthesisError> {
    if ctrl.is_empty() {
        return Err(SynthesisError::Precondition(
            "controller has no winning states".into(),
        ));
    }
    if ctrl.winning.len() != state_grid.len() {
        return Err(SynthesisError::Precondition(
            "controller and grid differ in size".into(),
        ));
    }
    if subsystem >= relation.composed.certificates.len() {
        return Err(SynthesisError::Precondition(format!(
            "no certificate for subsystem {subsystem}"
        )));
    }
    let cells = ctrl
        .winning_states()
        .map(|s| {
            let u = ctrl.inputs[s].expect("winning states carry an input");
            (s, state_grid.representative(s), u)
        })
        .collect();
    Ok(RefinedController {
        subsystem,
        relation: relation.clone(),
        cells,
    })
}

/// Closed-loop run of one subsystem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub subsystem: usize,
    pub states: Vec<Vec<f64>>,
    /// Input index applied at each step; one shorter than `states`.
    pub inputs: Vec<usize>,
    /// Safe-set membership of each state.
    pub safe: Vec<bool>,
    /// Why the run stopped early, if it did.
    pub truncated: Option<String>,
}

impl Trajectory {
    pub fn all_safe(&self) -> bool {
        self.safe.iter().all(|&s| s)
    }
}

/// Steps the network with `d_ij = x_j`, each subsystem applying its controller.
pub fn simulate_closed_loop(
    subsystems: &[BlackBoxSystem],
    topology: &InterconnectionTopology,
    controllers: &[&dyn Controller],
    safe: &[BoxSet],
    x0: &[Vec<f64>],
    horizon: usize,
) -> Result<Vec<Trajectory>, SynthesisError> {
    let m = subsystems.len();
    if controllers.len() != m || x0.len() != m || safe.len() != m || topology.num_subsystems() != m
    {
        return Err(SynthesisError::Precondition(format!(
            "{m} subsystems, {} controllers, {} initial states, {} safe sets",
            controllers.len(),
            x0.len(),
            safe.len()
        )));
    }
    let mut trajs: Vec<Trajectory> = (0..m)
        .map(|i| Trajectory {
            subsystem: i,
            states: vec![x0[i].clone()],
            inputs: Vec::new(),
            safe: vec![safe[i].contains(&x0[i])],
            truncated: None,
        })
        .collect();
    let mut x = x0.to_vec();
    'time: for t in 0..horizon {
        let mut chosen = Vec::with_capacity(m);
        for i in 0..m {
            match controllers[i].input(&x[i]) {
                Ok(u) => chosen.push(u),
                Err(e) => {
                    for (j, tr) in trajs.iter_mut().enumerate() {
                        tr.truncated = Some(if j == i {
                            format!("step {t}: {e}")
                        } else {
                            format!("step {t}: stopped with subsystem {i}")
                        });
                    }
                    break 'time;
                }
            }
        }
        let mut next = Vec::with_capacity(m);
        for i in 0..m {
            let input = subsystems[i]
                .signature()
                .inputs
                .get(chosen[i])
                .ok_or_else(|| {
                    SynthesisError::Precondition(format!("input index {} out of range", chosen[i]))
                })?;
            let d = topology.disturbance_of(i, &x);
            next.push(subsystems[i].query(&x[i], &input, &d)?);
        }
        for i in 0..m {
            trajs[i].inputs.push(chosen[i]);
            trajs[i].safe.push(safe[i].contains(&next[i]));
            trajs[i].states.push(next[i].clone());
        }
        x = next;
    }
    Ok(trajs)
}
