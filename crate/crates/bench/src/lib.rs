//! Random instances shared by the kernel benchmarks.

use netabs_core::scenario::simplex::{Constraint, LinearProgram};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Feasible bounded LP with `vars` variables in `[-1, 1]` and `rows` random `≤` rows
/// that the origin satisfies.
pub fn random_lp(vars: usize, rows: usize, seed: u64) -> LinearProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let constraints = (0..rows)
        .map(|_| {
            let a: Vec<f64> = (0..vars).map(|_| rng.random_range(-1.0..1.0)).collect();
            Constraint::le(a, rng.random_range(0.1..1.0))
        })
        .collect();
    LinearProgram {
        objective: (0..vars).map(|_| rng.random_range(-1.0..1.0)).collect(),
        constraints,
        bounds: vec![(-1.0, 1.0); vars],
    }
}
