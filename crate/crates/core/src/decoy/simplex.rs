//! Dense two-phase simplex for small linear programs of the form
//! `min c.x  s.t.  A x <= b,  x >= 0`.
//!
//! The decoy estimator's programs have a few dozen variables and rows, so
//! a plain tableau with Bland's rule (which cannot cycle) is enough. Rows
//! are scaled to unit maximum coefficient before solving; photon-number
//! coefficients span many orders of magnitude otherwise.
//!
//! Infeasibility is detected in phase 1 and reported with the labels of
//! the rows whose artificial variables could not be driven to zero.

const EPS: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-7;

/// One constraint `coeffs . x <= rhs`.
#[derive(Debug, Clone)]
pub struct LpRow {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
    pub label: String,
}

/// Linear program over `num_vars` nonnegative variables.
#[derive(Debug, Clone)]
pub struct Lp {
    pub num_vars: usize,
    pub rows: Vec<LpRow>,
}

#[derive(Debug, Clone)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible { violated: Vec<String> },
    Unbounded,
}

struct Tableau {
    /// m x width matrix, last column is the rhs.
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    num_structural: usize,
    num_slack: usize,
    num_artificial: usize,
}

impl Tableau {
    fn width(&self) -> usize {
        self.num_structural + self.num_slack + self.num_artificial + 1
    }

    fn rhs(&self, row: usize) -> f64 {
        let w = self.width();
        self.rows[row][w - 1]
    }

    fn pivot(&mut self, pivot_row: usize, pivot_col: usize) {
        let w = self.width();
        let scale = self.rows[pivot_row][pivot_col];
        for j in 0..w {
            self.rows[pivot_row][j] /= scale;
        }
        for i in 0..self.rows.len() {
            if i == pivot_row {
                continue;
            }
            let factor = self.rows[i][pivot_col];
            if factor == 0.0 {
                continue;
            }
            for j in 0..w {
                self.rows[i][j] -= factor * self.rows[pivot_row][j];
            }
        }
        self.basis[pivot_row] = pivot_col;
    }

    /// Reduced costs and objective value for a full cost vector.
    fn price(&self, cost: &[f64]) -> (Vec<f64>, f64) {
        let w = self.width();
        let mut reduced = cost.to_vec();
        let mut value = 0.0;
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = cost[b];
            if cb == 0.0 {
                continue;
            }
            value += cb * self.rhs(i);
            for (r, a) in reduced.iter_mut().zip(&self.rows[i][..w - 1]) {
                *r -= cb * a;
            }
        }
        (reduced, value)
    }

    /// Bland's rule iteration until optimal for `cost`; columns for which
    /// `allowed` is false never enter the basis.
    fn optimize(&mut self, cost: &[f64], allowed: impl Fn(usize) -> bool) -> Result<f64, ()> {
        loop {
            let (reduced, value) = self.price(cost);
            let entering = (0..self.width() - 1)
                .find(|&j| allowed(j) && reduced[j] < -EPS);
            let Some(col) = entering else {
                return Ok(value);
            };
            let mut leaving: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][col];
                if a > EPS {
                    let ratio = self.rhs(i) / a;
                    let better = match leaving {
                        None => true,
                        Some((prev, best)) => {
                            ratio < best - EPS
                                || (ratio < best + EPS && self.basis[i] < self.basis[prev])
                        }
                    };
                    if better {
                        leaving = Some((i, ratio));
                    }
                }
            }
            let Some((row, _)) = leaving else {
                return Err(()); // unbounded
            };
            self.pivot(row, col);
        }
    }
}

impl Lp {
    /// Minimize `objective . x` over the feasible set.
    pub fn solve_min(&self, objective: &[f64]) -> LpOutcome {
        assert_eq!(objective.len(), self.num_vars);
        let n = self.num_vars;
        let m = self.rows.len();

        // rows with negative rhs need an artificial variable
        let mut art_index = vec![None; m];
        let mut num_artificial = 0;
        for (i, row) in self.rows.iter().enumerate() {
            if row.rhs < 0.0 {
                art_index[i] = Some(num_artificial);
                num_artificial += 1;
            }
        }

        let width = n + m + num_artificial + 1;
        let mut t = Tableau {
            rows: vec![vec![0.0; width]; m],
            basis: vec![0; m],
            num_structural: n,
            num_slack: m,
            num_artificial,
        };
        for (i, row) in self.rows.iter().enumerate() {
            // scale for conditioning; a positive factor changes nothing
            let max = row
                .coeffs
                .iter()
                .fold(0.0f64, |acc, &v| acc.max(v.abs()))
                .max(row.rhs.abs());
            let scale = if max > 0.0 { 1.0 / max } else { 1.0 };
            let sign = if row.rhs < 0.0 { -1.0 } else { 1.0 };
            for (j, &a) in row.coeffs.iter().enumerate() {
                t.rows[i][j] = sign * scale * a;
            }
            t.rows[i][n + i] = sign * scale;
            t.rows[i][width - 1] = sign * scale * row.rhs;
            match art_index[i] {
                Some(a) => {
                    t.rows[i][n + m + a] = 1.0;
                    t.basis[i] = n + m + a;
                }
                None => t.basis[i] = n + i,
            }
        }

        if num_artificial > 0 {
            let mut phase1 = vec![0.0; width - 1];
            phase1[n + m..n + m + num_artificial].fill(1.0);
            let value = match t.optimize(&phase1, |_| true) {
                Ok(v) => v,
                Err(()) => return LpOutcome::Unbounded,
            };
            if value > FEAS_TOL {
                let violated = (0..m)
                    .filter(|&i| t.basis[i] >= n + m && t.rhs(i) > FEAS_TOL)
                    .map(|i| self.rows[i].label.clone())
                    .collect();
                return LpOutcome::Infeasible { violated };
            }
            // drive any zero-level artificials out of the basis
            for i in 0..m {
                if t.basis[i] >= n + m {
                    if let Some(col) = (0..n + m).find(|&j| t.rows[i][j].abs() > EPS) {
                        t.pivot(i, col);
                    }
                }
            }
        }

        let mut cost = vec![0.0; width - 1];
        cost[..n].copy_from_slice(objective);
        let banned_from = n + m;
        let value = match t.optimize(&cost, |j| j < banned_from) {
            Ok(v) => v,
            Err(()) => return LpOutcome::Unbounded,
        };

        let mut x = vec![0.0; n];
        for (i, &b) in t.basis.iter().enumerate() {
            if b < n {
                x[b] = t.rhs(i);
            }
        }
        LpOutcome::Optimal { x, value }
    }
}
