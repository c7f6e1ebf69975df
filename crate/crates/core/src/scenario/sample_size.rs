use super::ScenarioError;

/// Largest sample count the search will consider.
pub const MAX_SAMPLE_SIZE: usize = 10_000_000;

/// Sample count reported for the 100-room case study (`ε = 0.001`, `β = 1e-4`).
/// It does not follow from the binomial bound for any `c >= 1`.
pub const REPORTED_CASE_STUDY_Q: usize = 776;

/// `ln Σ_t Σ_{i<c} C(Q,i) ε_t^i (1−ε_t)^{Q−i}`, accumulated with term ratios.
fn log_tail(eps: &[f64], c: usize, q: usize) -> f64 {
    let mut terms = Vec::with_capacity(eps.len() * c);
    for &e in eps {
        let log_ratio_base = e.ln() - (-e).ln_1p();
        let mut log_term = q as f64 * (-e).ln_1p();
        terms.push(log_term);
        for i in 0..(c - 1).min(q) {
            log_term += ((q - i) as f64).ln() - ((i + 1) as f64).ln() + log_ratio_base;
            terms.push(log_term);
        }
    }
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Smallest `Q` whose summed binomial tails are at most `beta`.
pub fn min_sample_size(eps: &[f64], beta: f64, c: usize) -> Result<usize, ScenarioError> {
    if eps.is_empty() {
        return Err(ScenarioError::Precondition(
            "need at least one epsilon".into(),
        ));
    }
    if let Some(e) = eps.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
        return Err(ScenarioError::Precondition(format!(
            "epsilon {e} outside (0, 1)"
        )));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(ScenarioError::Precondition(format!(
            "beta {beta} outside (0, 1)"
        )));
    }
    if c == 0 {
        return Err(ScenarioError::Precondition("c must be at least 1".into()));
    }
    let log_beta = beta.ln();
    let ok = |q: usize| log_tail(eps, c, q) <= log_beta;

    let mut hi = 1usize;
    while !ok(hi) {
        if hi >= MAX_SAMPLE_SIZE {
            return Err(ScenarioError::Capacity(format!(
                "more than {MAX_SAMPLE_SIZE} samples needed; increase epsilon or beta"
            )));
        }
        hi = (hi * 2).min(MAX_SAMPLE_SIZE);
    }
    let mut lo = hi / 2;
    // invariant: !ok(lo) (or lo == 0), ok(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Sample count from the binomial bound next to a reported one, so that a
/// report never silently replaces one with the other.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSizeReport {
    pub eps: Vec<f64>,
    pub beta: f64,
    pub c: usize,
    pub computed: usize,
    pub reference: Option<usize>,
}

impl SampleSizeReport {
    pub fn new(
        eps: &[f64],
        beta: f64,
        c: usize,
        reference: Option<usize>,
    ) -> Result<Self, ScenarioError> {
        Ok(Self {
            eps: eps.to_vec(),
            beta,
            c,
            computed: min_sample_size(eps, beta, c)?,
            reference,
        })
    }

    pub fn discrepancy(&self) -> bool {
        self.reference.is_some_and(|r| r != self.computed)
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "sample size: binomial bound with eps = {:?}, beta = {}, c = {} gives Q = {}\n",
            self.eps, self.beta, self.c, self.computed
        );
        if let Some(r) = self.reference {
            s.push_str(&format!("sample size: case-study reported Q = {r}\n"));
        }
        if self.discrepancy() {
            s.push_str(&format!(
                "sample size: DISCREPANCY: reported Q = {} differs from computed Q = {} (the computed value is used)\n",
                self.reference.unwrap_or_default(),
                self.computed
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn closed_form(eps: f64, beta: f64) -> usize {
        (beta.ln() / (1.0 - eps).ln()).ceil() as usize
    }

    #[test]
    fn single_constraint_closed_form() {
        assert_eq!(min_sample_size(&[0.01], 0.01, 1).unwrap(), 459);
        assert_eq!(closed_form(0.01, 0.01), 459);
        assert_eq!(min_sample_size(&[0.1], 0.5, 1).unwrap(), 7);
        assert_eq!(min_sample_size(&[0.001], 1e-4, 1).unwrap(), 9206);
        for &(e, b) in &[(0.05, 0.01), (0.2, 0.3), (0.003, 1e-6)] {
            assert_eq!(min_sample_size(&[e], b, 1).unwrap(), closed_form(e, b));
        }
    }

    #[test]
    fn tail_matches_direct_sum() {
        // direct binomial sum for small Q as an independent check
        let direct = |e: f64, c: usize, q: usize| -> f64 {
            let mut s = 0.0;
            for i in 0..c.min(q + 1) {
                let mut binom = 1.0;
                for k in 0..i {
                    binom *= (q - k) as f64 / (k + 1) as f64;
                }
                s += binom * e.powi(i as i32) * (1.0 - e).powi((q - i) as i32);
            }
            s
        };
        for &(e, c, q) in &[(0.1, 3, 40), (0.3, 5, 17), (0.05, 7, 200), (0.5, 2, 1)] {
            let got = log_tail(&[e], c, q).exp();
            assert!(
                (got - direct(e, c, q)).abs() < 1e-12 * direct(e, c, q).max(1e-300),
                "{e} {c} {q}"
            );
        }
    }

    #[test]
    fn precondition_errors() {
        assert!(min_sample_size(&[0.0], 0.1, 1).is_err());
        assert!(min_sample_size(&[0.1], 1.0, 1).is_err());
        assert!(min_sample_size(&[0.1], 0.1, 0).is_err());
        assert!(min_sample_size(&[], 0.1, 1).is_err());
    }

    #[test]
    fn capacity_error() {
        let e = min_sample_size(&[1e-9], 1e-9, 50).unwrap_err();
        assert!(matches!(e, ScenarioError::Capacity(_)));
    }

    #[test]
    fn monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let l = rng.random_range(1..=3);
            let eps: Vec<f64> = (0..l).map(|_| rng.random_range(0.01..0.3)).collect();
            let beta = rng.random_range(1e-4..0.5);
            let c = rng.random_range(1..=8);
            let q = min_sample_size(&eps, beta, c).unwrap();
            assert!(min_sample_size(&eps, beta, 2 * c).unwrap() >= q);
            assert!(min_sample_size(&eps, beta / 2.0, c).unwrap() >= q);
            let mut longer = eps.clone();
            longer.push(eps[0]);
            assert!(min_sample_size(&longer, beta, c).unwrap() >= q);
            let looser: Vec<f64> = eps.iter().map(|e| (e * 1.5).min(0.99)).collect();
            assert!(min_sample_size(&looser, beta, c).unwrap() <= q);
            assert!(min_sample_size(&eps, (beta * 1.5).min(0.99), c).unwrap() <= q);
            // minimality
            assert!(log_tail(&eps, c, q) <= beta.ln());
            assert!(q == 1 || log_tail(&eps, c, q - 1) > beta.ln());
        }
    }

    #[test]
    fn report_flags_case_study_gap() {
        let r = SampleSizeReport::new(&[0.001], 1e-4, 1, Some(REPORTED_CASE_STUDY_Q)).unwrap();
        assert_eq!(r.computed, 9206);
        assert!(r.discrepancy());
        let text = r.render();
        assert!(text.contains("776") && text.contains("9206") && text.contains("DISCREPANCY"));
        let plain = SampleSizeReport::new(&[0.001], 1e-4, 1, None).unwrap();
        assert!(!plain.discrepancy() && !plain.render().contains("776"));
    }
}
