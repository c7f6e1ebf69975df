use serde::{Deserialize, Serialize};

use super::ScenarioError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisMode {
    /// `g_j(x, x̂) = Π_k (x_k − x̂_k)^{e_jk}`; exponents cover the `n` state coordinates.
    Difference,
    /// `g_j(x, x̂) = Π_k x_k^{a_jk} Π_k x̂_k^{b_jk}`; exponents cover `x` then `x̂`.
    General,
}

/// Monomial basis of the candidate function `S(φ, x, x̂) = Σ_j φ_j g_j(x, x̂)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub mode: BasisMode,
    pub terms: Vec<Vec<u32>>,
}

impl BasisSpec {
    pub fn difference(terms: Vec<Vec<u32>>) -> Self {
        Self {
            mode: BasisMode::Difference,
            terms,
        }
    }

    /// Scalar difference basis `{(x − x̂)^p : p ∈ powers}`.
    pub fn scalar_powers(powers: &[u32]) -> Self {
        Self::difference(powers.iter().map(|&p| vec![p]).collect())
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn validate(&self, state_dim: usize) -> Result<(), ScenarioError> {
        if self.terms.is_empty() {
            return Err(ScenarioError::Precondition(
                "basis needs at least one term".into(),
            ));
        }
        let width = match self.mode {
            BasisMode::Difference => state_dim,
            BasisMode::General => 2 * state_dim,
        };
        for (j, t) in self.terms.iter().enumerate() {
            if t.len() != width {
                return Err(ScenarioError::Precondition(format!(
                    "basis term {j} has {} exponents, expected {width}",
                    t.len()
                )));
            }
            if self.mode == BasisMode::Difference && t.iter().any(|e| e % 2 != 0) {
                return Err(ScenarioError::Precondition(format!(
                    "difference basis term {j} = {t:?} has an odd exponent"
                )));
            }
        }
        Ok(())
    }

    /// Writes `g_j(x, x̂)` for every term into `out`.
    pub fn eval_into(&self, x: &[f64], xh: &[f64], out: &mut [f64]) {
        for (slot, t) in out.iter_mut().zip(&self.terms) {
            *slot = match self.mode {
                BasisMode::Difference => t
                    .iter()
                    .zip(x.iter().zip(xh))
                    .map(|(&e, (a, b))| powi(a - b, e))
                    .product(),
                BasisMode::General => {
                    let n = x.len();
                    let px: f64 = t[..n].iter().zip(x).map(|(&e, v)| powi(*v, e)).product();
                    let ph: f64 = t[n..].iter().zip(xh).map(|(&e, v)| powi(*v, e)).product();
                    px * ph
                }
            };
        }
    }

    pub fn eval(&self, x: &[f64], xh: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(x, xh, &mut out);
        out
    }

    /// `S(φ, x, x̂)`.
    pub fn value(&self, phi: &[f64], x: &[f64], xh: &[f64]) -> f64 {
        self.eval(x, xh).iter().zip(phi).map(|(g, p)| g * p).sum()
    }

    /// Isotropic curvature bound `p` with `‖∇_x S‖ ≤ 2 p ‖x − x̂‖` whenever every
    /// `|x_k − x̂_k| ≤ radius` (difference mode only).
    pub fn curvature_bound(&self, phi: &[f64], radius: f64) -> Option<f64> {
        if self.mode != BasisMode::Difference {
            return None;
        }
        let mut p = 0.0;
        for (t, c) in self.terms.iter().zip(phi) {
            let degree: u32 = t.iter().sum();
            if degree < 2 {
                continue;
            }
            let norm = t.iter().map(|&e| (e as f64).powi(2)).sum::<f64>().sqrt();
            p += 0.5 * c.abs() * norm * radius.powi(degree as i32 - 2);
        }
        Some(p)
    }
}

fn powi(v: f64, e: u32) -> f64 {
    match e {
        0 => 1.0,
        1 => v,
        2 => v * v,
        _ => v.powi(e as i32),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_study_basis() {
        let b = BasisSpec::scalar_powers(&[4, 2, 0]);
        b.validate(1).unwrap();
        let d = 0.3f64 - 0.1;
        assert_eq!(b.eval(&[0.3], &[0.1]), vec![d.powi(4), d * d, 1.0]);
        let s = b.value(&[0.2, 0.17, 18.0], &[0.5], &[0.0]);
        assert!((s - (0.2 * 0.0625 + 0.17 * 0.25 + 18.0)).abs() < 1e-12);
    }

    #[test]
    fn constant_term_only() {
        let b = BasisSpec::scalar_powers(&[0]);
        assert_eq!(b.eval(&[3.0], &[-1.0]), vec![1.0]);
    }

    #[test]
    fn rejects_odd_and_empty() {
        assert!(BasisSpec::scalar_powers(&[3]).validate(1).is_err());
        assert!(BasisSpec::scalar_powers(&[]).validate(1).is_err());
        assert!(BasisSpec::difference(vec![vec![2]]).validate(2).is_err());
    }

    #[test]
    fn general_mode() {
        let b = BasisSpec {
            mode: BasisMode::General,
            terms: vec![vec![2, 0], vec![1, 1], vec![0, 2]],
        };
        b.validate(1).unwrap();
        assert_eq!(b.eval(&[2.0], &[3.0]), vec![4.0, 6.0, 9.0]);
        assert_eq!(b.curvature_bound(&[1.0, 1.0, 1.0], 1.0), None);
    }

    #[test]
    fn curvature_bound_dominates_gradient() {
        let b = BasisSpec::scalar_powers(&[4, 2, 0]);
        let phi = [0.7, 1.3, 5.0];
        let p = b.curvature_bound(&phi, 1.0).unwrap();
        assert!((p - (0.5 * 0.7 * 4.0 + 0.5 * 1.3 * 2.0)).abs() < 1e-12);
        for k in 0..=100 {
            let e = -1.0 + 0.02 * k as f64;
            let grad = 4.0 * phi[0] * e.powi(3) + 2.0 * phi[1] * e;
            assert!(grad.abs() <= 2.0 * p * e.abs() + 1e-12);
        }
    }
}
