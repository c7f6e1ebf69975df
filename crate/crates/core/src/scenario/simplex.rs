//! Dense two-phase primal simplex. Entering columns follow the most negative
//! reduced cost until a run of degenerate pivots, after which Bland's rule takes
//! over for the rest of the phase and rules out cycling.
//!
//! Variables may carry arbitrary (possibly infinite) bounds; they are mapped to
//! non-negative standard-form columns before the tableau is built.

use nalgebra::DMatrix;
use thiserror::Error;

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-10;
const REFACTOR_EVERY: usize = 50;
/// Consecutive degenerate pivots tolerated before switching to Bland's rule.
const DEGENERATE_STREAK: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimplexError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("iteration limit {0} reached")]
    IterationLimit(usize),
    #[error(
        "numerical failure: solution violates constraints by {max_violation:e} (smallest accepted pivot {min_pivot:e}, {rows} rows x {cols} columns)"
    )]
    Numerical {
        max_violation: f64,
        min_pivot: f64,
        rows: usize,
        cols: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Constraint {
    pub fn le(coeffs: Vec<f64>, rhs: f64) -> Self {
        Self {
            coeffs,
            relation: Relation::Le,
            rhs,
        }
    }

    pub fn ge(coeffs: Vec<f64>, rhs: f64) -> Self {
        Self {
            coeffs,
            relation: Relation::Ge,
            rhs,
        }
    }
}

/// `min objectiveᵀ x` subject to `constraints` and `bounds[j].0 <= x_j <= bounds[j].1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub bounds: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Optimal(Solution),
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, Copy)]
enum Column {
    /// `x = lo + y`
    Shift { lo: f64, col: usize },
    /// `x = hi − y`
    Mirror { hi: f64, col: usize },
    /// `x = y⁺ − y⁻`
    Split { pos: usize, neg: usize },
}

struct Tableau {
    /// `rows x (cols + 1)`, the last column holds the right-hand side.
    a: Vec<f64>,
    cost: Vec<f64>,
    basis: Vec<usize>,
    rows: usize,
    cols: usize,
    iterations: usize,
    max_iterations: usize,
    min_pivot: f64,
    /// Equilibrated standard-form rows the tableau is rebuilt from.
    original: Vec<f64>,
    phase_costs: Vec<f64>,
}

enum Phase {
    Done,
    Unbounded,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.a[r * (self.cols + 1) + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.cols)
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.cols + 1;
        let p = self.a[r * w + c];
        self.min_pivot = self.min_pivot.min(p.abs());
        for v in &mut self.a[r * w..(r + 1) * w] {
            *v /= p;
        }
        let (before, rest) = self.a.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        for other in before.chunks_mut(w).chain(after.chunks_mut(w)) {
            let f = other[c];
            if f != 0.0 {
                for (o, pv) in other.iter_mut().zip(prow.iter()) {
                    *o -= f * pv;
                }
                other[c] = 0.0;
            }
        }
        let f = self.cost[c];
        if f != 0.0 {
            for (o, pv) in self.cost.iter_mut().zip(prow.iter()) {
                *o -= f * pv;
            }
            self.cost[c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Recomputes the tableau as `B⁻¹ [A | b]` from the original rows.
    fn refactor(&mut self) {
        let (m, w) = (self.rows, self.cols + 1);
        if m == 0 {
            return;
        }
        let b = DMatrix::from_fn(m, m, |r, c| self.original[r * w + self.basis[c]]);
        let full = DMatrix::from_fn(m, w, |r, c| self.original[r * w + c]);
        let Some(x) = b.full_piv_lu().solve(&full) else {
            return;
        };
        if x.iter().any(|v| !v.is_finite()) {
            return;
        }
        for r in 0..m {
            for c in 0..w {
                self.a[r * w + c] = x[(r, c)];
            }
            for (c, &bc) in self.basis.iter().enumerate() {
                self.a[r * w + bc] = if c == r { 1.0 } else { 0.0 };
            }
        }
        let costs = std::mem::take(&mut self.phase_costs);
        self.set_costs(&costs);
    }

    /// Loads reduced costs for the given column costs.
    fn set_costs(&mut self, costs: &[f64]) {
        self.phase_costs = costs.to_vec();
        self.cost = vec![0.0; self.cols + 1];
        self.cost[..costs.len()].copy_from_slice(costs);
        for r in 0..self.rows {
            let cb = costs.get(self.basis[r]).copied().unwrap_or(0.0);
            if cb != 0.0 {
                for c in 0..=self.cols {
                    self.cost[c] -= cb * self.at(r, c);
                }
            }
        }
    }

    fn entering(&self, allowed: usize, bland: bool) -> Option<usize> {
        if bland {
            return (0..allowed).find(|&c| self.cost[c] < -COST_TOL);
        }
        let mut best: Option<usize> = None;
        for c in 0..allowed {
            if self.cost[c] < -COST_TOL && best.is_none_or(|b| self.cost[c] < self.cost[b]) {
                best = Some(c);
            }
        }
        best
    }

    fn run(&mut self, allowed: usize) -> Result<Phase, SimplexError> {
        let mut fresh = false;
        let mut bland = false;
        let mut streak = 0;
        let period = REFACTOR_EVERY.max(self.rows);
        loop {
            let Some(enter) = self.entering(allowed, bland) else {
                if fresh {
                    return Ok(Phase::Done);
                }
                self.refactor();
                fresh = true;
                continue;
            };
            fresh = false;
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let v = self.at(r, enter);
                if v > PIVOT_TOL {
                    let ratio = self.rhs(r).max(0.0) / v;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((br, bratio)) => {
                            let tie = (ratio - bratio).abs() <= 1e-12 * bratio.abs().max(1.0);
                            if ratio < bratio && !tie || tie && self.basis[r] < self.basis[br] {
                                Some((r, ratio))
                            } else {
                                Some((br, bratio))
                            }
                        }
                    };
                }
            }
            let Some((r, ratio)) = leave else {
                return Ok(Phase::Unbounded);
            };
            if ratio <= 0.0 {
                streak += 1;
                bland |= streak >= DEGENERATE_STREAK;
            } else {
                streak = 0;
            }
            self.iterations += 1;
            if self.iterations > self.max_iterations {
                return Err(SimplexError::IterationLimit(self.max_iterations));
            }
            self.pivot(r, enter);
            if self.iterations.is_multiple_of(period) {
                self.refactor();
            }
        }
    }
}

pub fn solve(lp: &LinearProgram) -> Result<Outcome, SimplexError> {
    let n = lp.objective.len();
    if lp.bounds.len() != n {
        return Err(SimplexError::Dimension(format!(
            "{} bounds for {n} variables",
            lp.bounds.len()
        )));
    }
    if let Some((i, c)) = lp
        .constraints
        .iter()
        .enumerate()
        .find(|(_, c)| c.coeffs.len() != n)
    {
        return Err(SimplexError::Dimension(format!(
            "constraint {i} has {} coefficients for {n} variables",
            c.coeffs.len()
        )));
    }
    if lp
        .bounds
        .iter()
        .any(|&(lo, hi)| lo > hi || lo.is_nan() || hi.is_nan())
    {
        return Ok(Outcome::Infeasible);
    }

    // map variables to non-negative standard columns
    let mut map = Vec::with_capacity(n);
    let mut ncols = 0;
    let mut extra_rows: Vec<(usize, f64)> = Vec::new();
    for &(lo, hi) in &lp.bounds {
        if lo.is_finite() {
            map.push(Column::Shift { lo, col: ncols });
            if hi.is_finite() {
                extra_rows.push((ncols, hi - lo));
            }
            ncols += 1;
        } else if hi.is_finite() {
            map.push(Column::Mirror { hi, col: ncols });
            ncols += 1;
        } else {
            map.push(Column::Split {
                pos: ncols,
                neg: ncols + 1,
            });
            ncols += 2;
        }
    }

    let mut std_rows: Vec<(Vec<f64>, Relation, f64)> = Vec::new();
    for con in &lp.constraints {
        let mut row = vec![0.0; ncols];
        let mut rhs = con.rhs;
        for (coef, m) in con.coeffs.iter().zip(&map) {
            match *m {
                Column::Shift { lo, col } => {
                    row[col] += coef;
                    rhs -= coef * lo;
                }
                Column::Mirror { hi, col } => {
                    row[col] -= coef;
                    rhs -= coef * hi;
                }
                Column::Split { pos, neg } => {
                    row[pos] += coef;
                    row[neg] -= coef;
                }
            }
        }
        std_rows.push((row, con.relation, rhs));
    }
    for (col, ub) in extra_rows {
        let mut row = vec![0.0; ncols];
        row[col] = 1.0;
        std_rows.push((row, Relation::Le, ub));
    }
    let mut cost = vec![0.0; ncols];
    let mut offset = 0.0;
    for (c, m) in lp.objective.iter().zip(&map) {
        match *m {
            Column::Shift { lo, col } => {
                cost[col] += c;
                offset += c * lo;
            }
            Column::Mirror { hi, col } => {
                cost[col] -= c;
                offset += c * hi;
            }
            Column::Split { pos, neg } => {
                cost[pos] += c;
                cost[neg] -= c;
            }
        }
    }

    // normalize to non-negative right-hand sides
    for (row, rel, rhs) in &mut std_rows {
        if *rhs < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
            *rhs = -*rhs;
            *rel = match *rel {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
        let scale = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale > 0.0 {
            row.iter_mut().for_each(|v| *v /= scale);
            *rhs /= scale;
        }
    }

    let m = std_rows.len();
    let n_slack = std_rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let n_art = std_rows.iter().filter(|r| r.1 != Relation::Le).count();
    let art_start = ncols + n_slack;
    let cols = art_start + n_art;
    let w = cols + 1;
    let mut a = vec![0.0; m * w];
    let mut basis = vec![0; m];
    let (mut s, mut t) = (ncols, art_start);
    for (r, (row, rel, rhs)) in std_rows.iter().enumerate() {
        a[r * w..r * w + ncols].copy_from_slice(row);
        a[r * w + cols] = *rhs;
        match rel {
            Relation::Le => {
                a[r * w + s] = 1.0;
                basis[r] = s;
                s += 1;
            }
            Relation::Ge => {
                a[r * w + s] = -1.0;
                s += 1;
                a[r * w + t] = 1.0;
                basis[r] = t;
                t += 1;
            }
            Relation::Eq => {
                a[r * w + t] = 1.0;
                basis[r] = t;
                t += 1;
            }
        }
    }

    let original = a.clone();
    let mut tab = Tableau {
        a,
        cost: Vec::new(),
        basis,
        rows: m,
        cols,
        iterations: 0,
        max_iterations: 50 * (m + cols) + 10_000,
        min_pivot: f64::INFINITY,
        original,
        phase_costs: Vec::new(),
    };

    if n_art > 0 {
        let mut phase1 = vec![0.0; cols];
        phase1[art_start..].iter_mut().for_each(|v| *v = 1.0);
        tab.set_costs(&phase1);
        tab.run(cols)?;
        let infeas: f64 = (0..m)
            .filter(|&r| tab.basis[r] >= art_start)
            .map(|r| tab.rhs(r))
            .sum();
        let scale = std_rows.iter().map(|r| r.2).fold(1.0, f64::max);
        if infeas > 1e-9 * scale {
            return Ok(Outcome::Infeasible);
        }
        // drive zero-level artificials out of the basis where possible
        for r in 0..m {
            if tab.basis[r] >= art_start {
                if let Some(c) = (0..art_start).find(|&c| tab.at(r, c).abs() > PIVOT_TOL) {
                    tab.pivot(r, c);
                }
            }
        }
    }

    let mut phase2 = vec![0.0; cols];
    phase2[..ncols].copy_from_slice(&cost);
    tab.set_costs(&phase2);
    if let Phase::Unbounded = tab.run(art_start)? {
        return Ok(Outcome::Unbounded);
    }

    let mut y = vec![0.0; cols];
    for r in 0..m {
        y[tab.basis[r]] = tab.rhs(r).max(0.0);
    }
    let x: Vec<f64> = map
        .iter()
        .zip(&lp.bounds)
        .map(|(m, &(lo, hi))| {
            let v = match *m {
                Column::Shift { lo, col } => lo + y[col],
                Column::Mirror { hi, col } => hi - y[col],
                Column::Split { pos, neg } => y[pos] - y[neg],
            };
            v.clamp(lo, hi)
        })
        .collect();

    let mut worst: f64 = 0.0;
    for con in &lp.constraints {
        let lhs: f64 = con.coeffs.iter().zip(&x).map(|(c, v)| c * v).sum();
        let scale = 1.0
            + con.rhs.abs()
            + con
                .coeffs
                .iter()
                .zip(&x)
                .map(|(c, v)| (c * v).abs())
                .sum::<f64>();
        let viol = match con.relation {
            Relation::Le => lhs - con.rhs,
            Relation::Ge => con.rhs - lhs,
            Relation::Eq => (lhs - con.rhs).abs(),
        };
        worst = worst.max(viol / scale);
    }
    if worst > 1e-8 {
        return Err(SimplexError::Numerical {
            max_violation: worst,
            min_pivot: tab.min_pivot,
            rows: m,
            cols,
        });
    }
    let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum::<f64>();
    debug_assert!(
        (objective - (offset + cost.iter().zip(&y).map(|(c, v)| c * v).sum::<f64>())).abs()
            < 1e-6 * (1.0 + objective.abs())
    );
    Ok(Outcome::Optimal(Solution {
        x,
        objective,
        iterations: tab.iterations,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    const INF: f64 = f64::INFINITY;

    fn optimal(lp: &LinearProgram) -> Solution {
        match solve(lp).unwrap() {
            Outcome::Optimal(s) => s,
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    #[test]
    fn textbook_maximization() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let lp = LinearProgram {
            objective: vec![-3.0, -5.0],
            constraints: vec![
                Constraint::le(vec![1.0, 0.0], 4.0),
                Constraint::le(vec![0.0, 2.0], 12.0),
                Constraint::le(vec![3.0, 2.0], 18.0),
            ],
            bounds: vec![(0.0, INF); 2],
        };
        let s = optimal(&lp);
        assert!((s.objective + 36.0).abs() < 1e-9);
        assert!((s.x[0] - 2.0).abs() < 1e-9 && (s.x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn free_variable_max_of_constants() {
        // min ξ s.t. 3 <= ξ, 5 <= ξ
        let lp = LinearProgram {
            objective: vec![1.0],
            constraints: vec![
                Constraint::ge(vec![1.0], 3.0),
                Constraint::ge(vec![1.0], 5.0),
            ],
            bounds: vec![(-INF, INF)],
        };
        assert!((optimal(&lp).x[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn equality_and_negative_bounds() {
        // min x + y s.t. x - y = -3, x in [-10, 0], y <= 2 -> x = -1, y = 2
        let lp = LinearProgram {
            objective: vec![1.0, 1.0],
            constraints: vec![Constraint {
                coeffs: vec![1.0, -1.0],
                relation: Relation::Eq,
                rhs: -3.0,
            }],
            bounds: vec![(-10.0, 0.0), (-INF, 2.0)],
        };
        let s = optimal(&lp);
        assert!(
            (s.x[0] + 10.0).abs() < 1e-9 && (s.x[1] + 7.0).abs() < 1e-9,
            "{:?}",
            s.x
        );
    }

    #[test]
    fn infeasible_and_unbounded() {
        let lp = LinearProgram {
            objective: vec![1.0],
            constraints: vec![
                Constraint::le(vec![1.0], 1.0),
                Constraint::ge(vec![1.0], 2.0),
            ],
            bounds: vec![(0.0, INF)],
        };
        assert_eq!(solve(&lp).unwrap(), Outcome::Infeasible);
        let lp = LinearProgram {
            objective: vec![-1.0],
            constraints: vec![Constraint::ge(vec![1.0], 2.0)],
            bounds: vec![(0.0, INF)],
        };
        assert_eq!(solve(&lp).unwrap(), Outcome::Unbounded);
        let lp = LinearProgram {
            objective: vec![1.0],
            constraints: vec![],
            bounds: vec![(1.0, 0.0)],
        };
        assert_eq!(solve(&lp).unwrap(), Outcome::Infeasible);
    }

    #[test]
    fn degenerate_cycling_example() {
        // Beale's example, which cycles under the largest-coefficient rule
        let lp = LinearProgram {
            objective: vec![-0.75, 150.0, -0.02, 6.0],
            constraints: vec![
                Constraint::le(vec![0.25, -60.0, -0.04, 9.0], 0.0),
                Constraint::le(vec![0.5, -90.0, -0.02, 3.0], 0.0),
                Constraint::le(vec![0.0, 0.0, 1.0, 0.0], 1.0),
            ],
            bounds: vec![(0.0, INF); 4],
        };
        let s = optimal(&lp);
        assert!((s.objective + 0.05).abs() < 1e-9, "{}", s.objective);
    }

    #[test]
    fn dimension_errors() {
        let lp = LinearProgram {
            objective: vec![1.0, 1.0],
            constraints: vec![Constraint::le(vec![1.0], 1.0)],
            bounds: vec![(0.0, 1.0); 2],
        };
        assert!(matches!(solve(&lp), Err(SimplexError::Dimension(_))));
    }
}
