use super::SynthesisError;
use crate::model::BlackBoxSystem;
use crate::quantize::{tabulate_transitions, TransitionTable, UniformGrid};

/// `τ(x̂, ν, d̂)` over all cells plus an absorbing sink with index `|X̂|`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteTransitionSystem {
    table: TransitionTable,
    grids: Option<(UniformGrid, UniformGrid)>,
}

impl FiniteTransitionSystem {
    /// A system given by its successor table, laid out as `(s · |U| + u) · |D̂| + k`.
    pub fn from_table(
        states: usize,
        inputs: usize,
        disturbances: usize,
        next: Vec<usize>,
    ) -> Result<Self, SynthesisError> {
        let nearest = next
            .iter()
            .map(|&n| n.min(states.saturating_sub(1)))
            .collect();
        let table = TransitionTable::from_parts(states, inputs, disturbances, next, nearest)?;
        Ok(Self { table, grids: None })
    }

    pub fn from_transitions(
        table: TransitionTable,
        state_grid: UniformGrid,
        dist_grid: UniformGrid,
    ) -> Self {
        Self {
            table,
            grids: Some((state_grid, dist_grid)),
        }
    }

    pub fn states(&self) -> usize {
        self.table.state_count()
    }

    pub fn inputs(&self) -> usize {
        self.table.input_count()
    }

    pub fn disturbances(&self) -> usize {
        self.table.disturbance_count()
    }

    pub fn sink(&self) -> usize {
        self.table.sink()
    }

    pub fn next(&self, s: usize, u: usize, k: usize) -> usize {
        self.table.next(s, u, k)
    }

    pub fn successors(&self, s: usize, u: usize) -> &[usize] {
        self.table.successors(s, u)
    }

    pub fn table(&self) -> &TransitionTable {
        &self.table
    }

    pub fn state_grid(&self) -> Option<&UniformGrid> {
        self.grids.as_ref().map(|g| &g.0)
    }

    pub fn disturbance_grid(&self) -> Option<&UniformGrid> {
        self.grids.as_ref().map(|g| &g.1)
    }
}

/// One oracle query per `(x̂, ν, d̂)`.
pub fn enumerate_abstraction(
    sys: &BlackBoxSystem,
    state_grid: &UniformGrid,
    dist_grid: &UniformGrid,
) -> Result<FiniteTransitionSystem, SynthesisError> {
    let table = tabulate_transitions(sys, state_grid, dist_grid)?;
    Ok(FiniteTransitionSystem::from_transitions(
        table,
        state_grid.clone(),
        dist_grid.clone(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_room_network, BoxSet, InputSet, RoomNetworkParams, SystemSignature};
    use crate::quantize::{abstract_transition, make_grid, AbstractState};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn room_abstraction_counts_queries() {
        let net = build_room_network(&RoomNetworkParams::with_rooms(3)).unwrap();
        let room = net.rooms[0].clone();
        let calls = Arc::new(AtomicUsize::new(0));
        let counter = calls.clone();
        let inner = room.clone();
        let counted =
            BlackBoxSystem::from_fn("counted", room.signature().clone(), move |x, u, d| {
                counter.fetch_add(1, Ordering::Relaxed);
                inner.query(x, u, d).unwrap()
            })
            .unwrap();
        let sg = make_grid(&room.signature().state_box, 0.025).unwrap();
        let dg = make_grid(&room.signature().disturbance_box, 0.025).unwrap();
        let fts = enumerate_abstraction(&counted, &sg, &dg).unwrap();
        assert_eq!(calls.load(Ordering::Relaxed), 20 * 5 * 400);
        assert_eq!(
            (fts.states(), fts.inputs(), fts.disturbances()),
            (20, 5, 400)
        );

        let x0 = sg.quantize(&[0.0]).unwrap();
        let d0 = dg.quantize(&[0.0, 0.0]).unwrap();
        let direct = abstract_transition(&room, &sg, &dg, &x0, &[0.0], &d0).unwrap();
        let AbstractState::Cell(p) = direct else {
            panic!("sink")
        };
        assert_eq!(fts.next(x0.index, 0, d0.index), p.index);
        assert_eq!(sg.representative(p.index), vec![-0.125]);
    }

    #[test]
    fn identity_is_fixed() {
        let sig = SystemSignature::new(
            InputSet::scalar(&[0.0, 1.0]),
            BoxSet::cube(1, 0.0, 1.0),
            BoxSet::cube(1, 0.0, 1.0),
        )
        .unwrap();
        let sys = BlackBoxSystem::from_fn("id", sig, |x, _, _| x.to_vec()).unwrap();
        let sg = make_grid(&BoxSet::cube(1, 0.0, 1.0), 0.1).unwrap();
        let dg = make_grid(&BoxSet::cube(1, 0.0, 1.0), 0.25).unwrap();
        let fts = enumerate_abstraction(&sys, &sg, &dg).unwrap();
        for s in 0..fts.states() {
            for u in 0..2 {
                assert!(fts.successors(s, u).iter().all(|&n| n == s));
            }
        }
    }
}
