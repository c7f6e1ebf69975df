use std::f64::consts::PI;

use super::ScenarioError;

/// `Γ(k/2 + 1)` for a positive integer `k`, by the integer/half-integer recursion.
fn gamma_half_plus_one(k: usize) -> f64 {
    let mut g = if k.is_multiple_of(2) {
        1.0
    } else {
        PI.sqrt() / 2.0
    };
    let mut a = if k.is_multiple_of(2) { 1.0 } else { 1.5 };
    let target = k as f64 / 2.0 + 1.0;
    while a < target {
        g *= a;
        a += 1.0;
    }
    g
}

fn ball_factor(dims: usize, volume: f64) -> f64 {
    let k = dims as f64;
    PI.powf(k / 2.0) / (2f64.powf(k) * gamma_half_plus_one(dims) * volume)
}

fn check(dims: usize, volume: f64) -> Result<(), ScenarioError> {
    if dims == 0 {
        return Err(ScenarioError::Precondition(
            "sampling space dimension must be >= 1".into(),
        ));
    }
    if !(volume > 0.0 && volume.is_finite()) {
        return Err(ScenarioError::Precondition(format!(
            "volume must be positive, got {volume}"
        )));
    }
    Ok(())
}

/// Minimal probability mass of a radius-`r` ball under uniform sampling on a
/// `dims`-dimensional box of the given volume.
pub fn kappa(r: f64, dims: usize, volume: f64) -> Result<f64, ScenarioError> {
    check(dims, volume)?;
    if !(r >= 0.0) {
        return Err(ScenarioError::Precondition(format!(
            "radius must be >= 0, got {r}"
        )));
    }
    Ok(ball_factor(dims, volume) * r.powi(dims as i32))
}

/// Radius whose ball mass equals `eps`.
pub fn kappa_inverse(eps: f64, dims: usize, volume: f64) -> Result<f64, ScenarioError> {
    check(dims, volume)?;
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(ScenarioError::Precondition(format!(
            "epsilon {eps} outside (0, 1]"
        )));
    }
    Ok((eps / ball_factor(dims, volume)).powf(1.0 / dims as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn three_dimensional_unit_volume() {
        let r = kappa_inverse(0.001, 3, 1.0).unwrap();
        assert!((r - 0.12408).abs() < 1e-4, "{r}");
    }

    #[test]
    fn gamma_against_statrs() {
        for k in 1..30 {
            let want = statrs::function::gamma::gamma(k as f64 / 2.0 + 1.0);
            let got = gamma_half_plus_one(k);
            assert!((got - want).abs() <= 1e-12 * want, "k = {k}");
        }
    }

    #[test]
    fn one_dimensional_is_linear() {
        for &len in &[0.5, 1.0, 3.0] {
            assert!((kappa(0.2, 1, len).unwrap() - 0.2 / len).abs() < 1e-15);
            assert!((kappa_inverse(0.3, 1, len).unwrap() - 0.3 * len).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(kappa_inverse(0.0, 3, 1.0).is_err());
        assert!(kappa_inverse(0.1, 0, 1.0).is_err());
        assert!(kappa_inverse(0.1, 3, 0.0).is_err());
        assert!(kappa_inverse(1.5, 3, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(eps in 1e-9f64..=1.0, dims in 1usize..12, vol in 1e-3f64..1e3) {
            let r = kappa_inverse(eps, dims, vol).unwrap();
            let back = kappa(r, dims, vol).unwrap();
            prop_assert!((back - eps).abs() <= 1e-12 * eps.max(1e-3));
        }
    }
}
