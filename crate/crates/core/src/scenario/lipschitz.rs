use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::model::{sample_box, BlackBoxSystem};

/// Row-major dense matrix as it appears in configuration files.
pub type Matrix = Vec<Vec<f64>>;

pub const DEFAULT_SAFETY_FACTOR: f64 = 1.5;

const MAX_REDRAWS: usize = 100;

/// Where the Lipschitz constant of the constraint functions comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LipschitzSource {
    /// Bound for linear dynamics `x' = A x + B ν + E d`.
    Linear {
        a: Matrix,
        b: Matrix,
        e: Matrix,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p: Option<Matrix>,
    },
    /// Bound from `‖f‖ ≤ j_f`, `‖∂_x f‖ ≤ j_x`, `‖∂_d f‖ ≤ j_d`.
    Nonlinear {
        j_f: f64,
        j_x: f64,
        j_d: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p: Option<Matrix>,
    },
    /// Like `Nonlinear`, with `j_x = j_d` estimated from oracle slopes.
    Data {
        pairs: usize,
        seed: u64,
        #[serde(default = "default_safety_factor")]
        safety_factor: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        j_f: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p: Option<Matrix>,
    },
    Fixed {
        value: f64,
    },
}

fn default_safety_factor() -> f64 {
    DEFAULT_SAFETY_FACTOR
}

/// Both constraint-wise constants and their maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzBreakdown {
    pub l1: f64,
    pub l2: f64,
    pub value: f64,
}

impl LipschitzBreakdown {
    fn new(l1: f64, l2: f64) -> Self {
        Self {
            l1,
            l2,
            value: l1.max(l2),
        }
    }
}

pub(crate) fn to_dmatrix(m: &Matrix, what: &str) -> Result<DMatrix<f64>, ScenarioError> {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 || m.iter().any(|r| r.len() != cols) {
        return Err(ScenarioError::Precondition(format!(
            "matrix {what} is empty or ragged"
        )));
    }
    Ok(DMatrix::from_fn(rows, cols, |i, j| m[i][j]))
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// `(λ_min, λ_max)` of a symmetric positive-definite matrix.
pub(crate) fn pd_extremes(p: &Matrix) -> Result<(f64, f64), ScenarioError> {
    let m = to_dmatrix(p, "P")?;
    if !m.is_square() {
        return Err(ScenarioError::Precondition("P must be square".into()));
    }
    let scale = m.amax().max(1.0);
    if (&m - m.transpose()).amax() > 1e-12 * scale {
        return Err(ScenarioError::Precondition("P must be symmetric".into()));
    }
    let eig = m.symmetric_eigen().eigenvalues;
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo <= 0.0 {
        return Err(ScenarioError::NotPositiveDefinite(lo));
    }
    Ok((lo, hi))
}

fn nonneg(values: &[(&str, f64)]) -> Result<(), ScenarioError> {
    for (name, v) in values {
        if !(*v >= 0.0 && v.is_finite()) {
            return Err(ScenarioError::Precondition(format!(
                "{name} must be a finite non-negative number, got {v}"
            )));
        }
    }
    Ok(())
}

/// Constraint Lipschitz constants for linear dynamics with a quadratic
/// `S = (x − x̂)ᵀ P (x − x̂)`; `bounds` are `(ϖ₁, ϖ₂, ϖ₃)`, the norms of the
/// largest state, input and disturbance.
#[allow(clippy::too_many_arguments)]
pub fn lipschitz_linear(
    a: &Matrix,
    b: &Matrix,
    e: &Matrix,
    p: &Matrix,
    bounds: (f64, f64, f64),
    sigma: f64,
    mu_t: f64,
    eta_t: f64,
) -> Result<LipschitzBreakdown, ScenarioError> {
    let (w1, w2, w3) = bounds;
    nonneg(&[
        ("w1", w1),
        ("w2", w2),
        ("w3", w3),
        ("sigma", sigma),
        ("mu_t", mu_t),
        ("eta_t", eta_t),
    ])?;
    let j1 = spectral_norm(&to_dmatrix(a, "A")?);
    let j2 = spectral_norm(&to_dmatrix(b, "B")?);
    let j3 = spectral_norm(&to_dmatrix(e, "E")?);
    let (lmin, lmax) = pd_extremes(p)?;
    let l1 = 4.0 * w1 * (lmin + lmax);
    let inner = 2.0 * j1 * j1 * w1
        + 2.0 * j1 * j2 * w2
        + 2.0 * j1 * j3 * w3
        + j1 * sigma
        + 2.0 * j3 * j3 * w3
        + 2.0 * j2 * j3 * w2
        + 2.0 * j1 * j3 * w1
        + j3 * sigma
        + 2.0 * w1 * mu_t;
    let l2 = 2.0 * lmax * inner + 2.0 * eta_t * w3;
    Ok(LipschitzBreakdown::new(l1, l2))
}

/// Constraint Lipschitz constants for general dynamics from bounds on `‖f‖`
/// and its partial derivatives; `bounds` are `(ϖ₁, ϖ₃)`.
#[allow(clippy::too_many_arguments)]
pub fn lipschitz_nonlinear(
    j_f: f64,
    j_x: f64,
    j_d: f64,
    p: &Matrix,
    bounds: (f64, f64),
    sigma: f64,
    mu_t: f64,
    eta_t: f64,
) -> Result<LipschitzBreakdown, ScenarioError> {
    let (w1, w3) = bounds;
    nonneg(&[
        ("j_f", j_f),
        ("j_x", j_x),
        ("j_d", j_d),
        ("w1", w1),
        ("w3", w3),
        ("sigma", sigma),
        ("mu_t", mu_t),
        ("eta_t", eta_t),
    ])?;
    let (lmin, lmax) = pd_extremes(p)?;
    let l1 = 4.0 * w1 * (lmin + lmax);
    let l2 = 2.0
        * lmax
        * (2.0 * j_f * j_x + j_x * sigma + 2.0 * j_f * j_d + j_d * sigma + 2.0 * w1 * mu_t)
        + 2.0 * eta_t * w3;
    Ok(LipschitzBreakdown::new(l1, l2))
}

fn euclid(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Largest observed slope `‖f(x,ν,d) − f(x′,ν,d′)‖ / ‖(x,d) − (x′,d′)‖` over
/// random pairs and all inputs, times `safety_factor`.
pub fn estimate_lipschitz_data(
    sys: &BlackBoxSystem,
    pairs: usize,
    seed: u64,
    safety_factor: f64,
) -> Result<f64, ScenarioError> {
    if pairs < 2 {
        return Err(ScenarioError::Precondition(format!(
            "need at least 2 pairs, got {pairs}"
        )));
    }
    if !(safety_factor > 0.0) {
        return Err(ScenarioError::Precondition(
            "safety factor must be positive".into(),
        ));
    }
    let sig = sys.signature();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    for input in sig.inputs.iter() {
        for _ in 0..pairs {
            let mut drawn = None;
            for _ in 0..MAX_REDRAWS {
                let (x, d) = (
                    sample_box(&sig.state_box, &mut rng),
                    sample_box(&sig.disturbance_box, &mut rng),
                );
                let (x2, d2) = (
                    sample_box(&sig.state_box, &mut rng),
                    sample_box(&sig.disturbance_box, &mut rng),
                );
                let diff: Vec<f64> = x
                    .iter()
                    .chain(&d)
                    .zip(x2.iter().chain(&d2))
                    .map(|(a, b)| a - b)
                    .collect();
                let dist = euclid(&diff);
                if dist >= 1e-12 {
                    drawn = Some((x, d, x2, d2, dist));
                    break;
                }
            }
            let Some((x, d, x2, d2, dist)) = drawn else {
                return Err(ScenarioError::Precondition(
                    "could not draw distinct point pairs (degenerate X × D)".into(),
                ));
            };
            let f1 = sys.query(&x, &input, &d)?;
            let f2 = sys.query(&x2, &input, &d2)?;
            let num: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| a - b).collect();
            best = best.max(euclid(&num) / dist);
        }
    }
    Ok(best * safety_factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BoxSet, InputSet, SystemSignature};

    fn s(v: f64) -> Matrix {
        vec![vec![v]]
    }

    #[test]
    fn linear_example() {
        let l = lipschitz_linear(
            &s(0.5),
            &s(1.0),
            &s(0.1),
            &s(1.0),
            (1.0, 0.2, 1.0),
            0.05,
            0.5,
            0.02,
        )
        .unwrap();
        assert!((l.l1 - 8.0).abs() < 1e-12);
        assert!((l.l2 - 4.02).abs() < 1e-12, "{}", l.l2);
        assert_eq!(l.value, l.l1);
    }

    #[test]
    fn linear_vanishes() {
        let l = lipschitz_linear(
            &s(0.5),
            &s(1.0),
            &s(0.1),
            &s(1.0),
            (0.0, 0.0, 0.0),
            0.0,
            0.5,
            0.0,
        )
        .unwrap();
        assert_eq!(l.value, 0.0);
    }

    #[test]
    fn linear_scales_with_p() {
        let args = |p: f64| {
            lipschitz_linear(
                &s(0.5),
                &s(1.0),
                &s(0.1),
                &s(p),
                (1.0, 0.2, 1.0),
                0.05,
                0.5,
                0.0,
            )
            .unwrap()
        };
        let (one, two) = (args(1.0), args(2.0));
        assert!((two.l1 - 2.0 * one.l1).abs() < 1e-12);
        assert!((two.l2 - 2.0 * one.l2).abs() < 1e-12);
    }

    #[test]
    fn matrix_norms_are_spectral() {
        let a = vec![vec![0.0, 2.0], vec![0.0, 0.0]];
        let m = to_dmatrix(&a, "A").unwrap();
        assert!((spectral_norm(&m) - 2.0).abs() < 1e-12);
        let p = vec![vec![2.0, 1.0], vec![1.0, 2.0]];
        let (lo, hi) = pd_extremes(&p).unwrap();
        assert!((lo - 1.0).abs() < 1e-12 && (hi - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite_p() {
        let p = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        let e = lipschitz_linear(
            &s(1.0),
            &s(1.0),
            &s(1.0),
            &p,
            (1.0, 1.0, 1.0),
            0.0,
            0.5,
            0.0,
        );
        assert!(matches!(e, Err(ScenarioError::NotPositiveDefinite(v)) if (v + 1.0).abs() < 1e-12));
        assert!(matches!(
            pd_extremes(&s(0.0)),
            Err(ScenarioError::NotPositiveDefinite(_))
        ));
        let asym = vec![vec![1.0, 0.5], vec![0.0, 1.0]];
        assert!(matches!(
            pd_extremes(&asym),
            Err(ScenarioError::Precondition(_))
        ));
    }

    #[test]
    fn nonlinear_example() {
        let l = lipschitz_nonlinear(1.0, 1.0, 0.01, &s(1.0), (0.5, 0.5), 0.025, 0.5, 0.02).unwrap();
        assert!((l.l2 - 5.1105).abs() < 1e-12, "{}", l.l2);
        assert!((l.l1 - 4.0).abs() < 1e-12);
        assert!((l.value - 5.1105).abs() < 1e-12);
        let z = lipschitz_nonlinear(0.0, 0.0, 0.0, &s(1.0), (0.0, 0.0), 0.0, 0.7, 0.0).unwrap();
        assert_eq!(z.value, 0.0);
    }

    #[test]
    fn nonlinear_monotone() {
        let base = [1.0, 1.0, 0.01, 0.5, 0.5, 0.025, 0.5, 0.02];
        let eval = |v: &[f64; 8]| {
            lipschitz_nonlinear(v[0], v[1], v[2], &s(1.0), (v[3], v[4]), v[5], v[6], v[7])
                .unwrap()
                .value
        };
        let b = eval(&base);
        for k in 0..8 {
            let mut bumped = base;
            bumped[k] *= 1.3;
            assert!(eval(&bumped) >= b, "argument {k}");
        }
        assert!(lipschitz_nonlinear(-1.0, 1.0, 1.0, &s(1.0), (1.0, 1.0), 0.0, 0.5, 0.0).is_err());
    }

    fn scalar_system(f: fn(&[f64], &[f64], &[f64]) -> Vec<f64>) -> BlackBoxSystem {
        let sig = SystemSignature::new(
            InputSet::scalar(&[0.0, 1.0]),
            BoxSet::cube(1, -1.0, 1.0),
            BoxSet::cube(1, -1.0, 1.0),
        )
        .unwrap();
        BlackBoxSystem::from_fn("s", sig, f).unwrap()
    }

    #[test]
    fn data_estimate_identity() {
        let sys = scalar_system(|x, _, _| x.to_vec());
        let sig = SystemSignature::new(
            InputSet::scalar(&[0.0]),
            BoxSet::cube(1, -1.0, 1.0),
            BoxSet::default(),
        )
        .unwrap();
        let id = BlackBoxSystem::from_fn("id", sig, |x, _, _| x.to_vec()).unwrap();
        let est = estimate_lipschitz_data(&id, 50, 1, DEFAULT_SAFETY_FACTOR).unwrap();
        assert!((est - 1.5).abs() < 1e-12);
        // with an ignored disturbance the slope is at most 1
        assert!(estimate_lipschitz_data(&sys, 50, 1, 1.5).unwrap() <= 1.5 + 1e-12);
    }

    #[test]
    fn data_estimate_affine() {
        let sys = scalar_system(|x, _, d| vec![0.9 * x[0] + 0.05 * d[0]]);
        let truth = (0.9f64 * 0.9 + 0.05 * 0.05).sqrt();
        let few = estimate_lipschitz_data(&sys, 20, 4, 1.5).unwrap();
        let many = estimate_lipschitz_data(&sys, 20_000, 4, 1.5).unwrap();
        assert!(few <= 1.5 * truth + 1e-12);
        assert!(many <= 1.5 * truth + 1e-12);
        assert!(many >= few);
        assert!(many > 1.5 * truth * 0.995, "{many}");
        assert!((many - 1.5 * 0.9).abs() < 0.01);
    }

    #[test]
    fn data_estimate_needs_two_pairs() {
        let sys = scalar_system(|x, _, _| x.to_vec());
        assert!(matches!(
            estimate_lipschitz_data(&sys, 1, 0, 1.5),
            Err(ScenarioError::Precondition(_))
        ));
    }
}
