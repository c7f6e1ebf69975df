use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::model::{sample_box, SystemSignature};

/// I.i.d. uniform samples `(x̄_i, d̄_i)` from `X × D`, reproducible from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub seed: u64,
    pub states: Vec<Vec<f64>>,
    pub disturbances: Vec<Vec<f64>>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

pub fn draw_samples(
    signature: &SystemSignature,
    count: usize,
    seed: u64,
) -> Result<SampleBatch, ScenarioError> {
    if count == 0 {
        return Err(ScenarioError::Precondition(
            "sample count must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(count);
    let mut disturbances = Vec::with_capacity(count);
    for _ in 0..count {
        states.push(sample_box(&signature.state_box, &mut rng));
        disturbances.push(sample_box(&signature.disturbance_box, &mut rng));
    }
    Ok(SampleBatch {
        seed,
        states,
        disturbances,
    })
}
