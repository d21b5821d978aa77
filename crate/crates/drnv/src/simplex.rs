//! Small dense two-phase simplex with Bland's rule, sized for the internal
//! transport-LP verifier only. Not a general-purpose LP interface.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintOp {
    Le,
    Ge,
    Eq,
}

/// One row `coeffs . x (op) rhs` over the structural variables.
#[derive(Debug, Clone)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub op: ConstraintOp,
    pub rhs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum SimplexError {
    #[error("the linear program is infeasible (phase-I residual {residual})")]
    Infeasible { residual: f64 },
    #[error("the linear program is unbounded")]
    Unbounded,
    #[error("pivot limit exceeded after {pivots} pivots")]
    PivotLimit { pivots: usize },
}

const FEAS_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-11;

/// Maximizes `objective . x` subject to the constraints and `x >= 0`.
/// Returns the optimal structural solution and objective value.
pub fn maximize(objective: &[f64], constraints: &[Constraint]) -> Result<(Vec<f64>, f64), SimplexError> {
    let n = objective.len();
    let m = constraints.len();

    // Assemble equality standard form: structural vars, then one slack or
    // surplus per inequality, then one artificial per row that needs it.
    let mut n_slack = 0usize;
    for c in constraints {
        if c.op != ConstraintOp::Eq {
            n_slack += 1;
        }
    }
    let total = n + n_slack + m; // worst case: artificial for every row
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut rhs: Vec<f64> = Vec::with_capacity(m);
    let mut basis: Vec<usize> = Vec::with_capacity(m);
    let mut artificial: Vec<usize> = Vec::new();

    let mut slack_cursor = n;
    let mut art_cursor = n + n_slack;
    for c in constraints {
        assert_eq!(c.coeffs.len(), n, "constraint width mismatch");
        let mut row = vec![0.0; total];
        row[..n].copy_from_slice(&c.coeffs);
        let mut b = c.rhs;
        let mut sign = 1.0;
        if b < 0.0 {
            // Normalize to b >= 0 so the artificial basis is feasible.
            sign = -1.0;
            for v in row.iter_mut() {
                *v = -*v;
            }
            b = -b;
        }
        match c.op {
            ConstraintOp::Le => {
                row[slack_cursor] = sign; // slack keeps the original direction
                if sign > 0.0 {
                    basis.push(slack_cursor);
                } else {
                    // Flipped <= becomes >=: needs surplus + artificial.
                    row[art_cursor] = 1.0;
                    basis.push(art_cursor);
                    artificial.push(art_cursor);
                    art_cursor += 1;
                }
                slack_cursor += 1;
            }
            ConstraintOp::Ge => {
                row[slack_cursor] = -sign;
                if sign > 0.0 {
                    row[art_cursor] = 1.0;
                    basis.push(art_cursor);
                    artificial.push(art_cursor);
                    art_cursor += 1;
                } else {
                    basis.push(slack_cursor);
                }
                slack_cursor += 1;
            }
            ConstraintOp::Eq => {
                row[art_cursor] = 1.0;
                basis.push(art_cursor);
                artificial.push(art_cursor);
                art_cursor += 1;
            }
        }
        rows.push(row);
        rhs.push(b);
    }
    let width = art_cursor;
    for row in rows.iter_mut() {
        row.truncate(width);
    }

    let mut tab = Tableau { rows, rhs, basis, width };

    // Phase I: minimize the sum of artificials.
    if !artificial.is_empty() {
        let mut cost = vec![0.0; width];
        for &j in &artificial {
            cost[j] = -1.0;
        }
        let value = tab.run(&cost)?;
        if value < -FEAS_TOL {
            return Err(SimplexError::Infeasible { residual: -value });
        }
        // Pivot any artificial still in the basis out on a nonzero column.
        for r in 0..tab.basis.len() {
            if artificial.contains(&tab.basis[r]) {
                let col = (0..n + n_slack).find(|&j| tab.rows[r][j].abs() > PIVOT_TOL);
                if let Some(j) = col {
                    tab.pivot(r, j);
                }
            }
        }
        // Freeze artificials at zero for phase II.
        for row in tab.rows.iter_mut() {
            for &j in &artificial {
                row[j] = 0.0;
            }
        }
    }

    // Phase II: maximize the real objective.
    let mut cost = vec![0.0; width];
    cost[..n].copy_from_slice(objective);
    tab.run(&cost)?;

    let mut x = vec![0.0; n];
    for (r, &j) in tab.basis.iter().enumerate() {
        if j < n {
            x[j] = tab.rhs[r];
        }
    }
    let value = objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok((x, value))
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    width: usize,
}

impl Tableau {
    /// Runs primal simplex maximizing `cost . x`; returns the objective value.
    fn run(&mut self, cost: &[f64]) -> Result<f64, SimplexError> {
        let m = self.rows.len();
        let limit = 50_000 + 200 * (self.width + m);
        // Reduced costs: z_j - c_j computed from scratch each pivot would be
        // O(m) per column; keep an explicit objective row instead.
        let mut obj: Vec<f64> = cost.to_vec();
        let mut obj_rhs = 0.0;
        for (r, &j) in self.basis.iter().enumerate() {
            let c = obj[j];
            if c != 0.0 {
                for k in 0..self.width {
                    obj[k] -= c * self.rows[r][k];
                }
                obj_rhs -= c * self.rhs[r];
            }
        }

        for pivots in 0..limit {
            // Bland's rule: smallest index with positive reduced cost.
            let entering = (0..self.width).find(|&j| obj[j] > FEAS_TOL);
            let Some(j) = entering else {
                return Ok(-obj_rhs);
            };
            // Ratio test, ties broken by smallest basis index (Bland).
            let mut best: Option<(f64, usize, usize)> = None;
            for r in 0..m {
                let a = self.rows[r][j];
                if a > PIVOT_TOL {
                    let ratio = self.rhs[r] / a;
                    let key = (ratio, self.basis[r]);
                    match best {
                        Some((br, bb, _)) if (br, bb) <= key => {}
                        _ => best = Some((key.0, key.1, r)),
                    }
                }
            }
            let Some((_, _, r)) = best else {
                return Err(SimplexError::Unbounded);
            };
            self.pivot(r, j);
            let c = obj[j];
            if c != 0.0 {
                for k in 0..self.width {
                    obj[k] -= c * self.rows[r][k];
                }
                obj_rhs -= c * self.rhs[r];
            }
            if pivots + 1 == limit {
                return Err(SimplexError::PivotLimit { pivots: limit });
            }
        }
        Err(SimplexError::PivotLimit { pivots: limit })
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let piv = self.rows[r][j];
        for v in self.rows[r].iter_mut() {
            *v /= piv;
        }
        self.rhs[r] /= piv;
        for i in 0..self.rows.len() {
            if i != r {
                let factor = self.rows[i][j];
                if factor != 0.0 {
                    for k in 0..self.width {
                        let delta = factor * self.rows[r][k];
                        self.rows[i][k] -= delta;
                    }
                    self.rhs[i] -= factor * self.rhs[r];
                }
            }
        }
        self.basis[r] = j;
    }
}
