//! Dense two-phase revised simplex for equality-form linear programs whose
//! columns have unit coefficients on a sparse row set:
//!
//!   min c.x  s.t.  A x = b,  x >= 0,  A[r][j] = 1 iff r in rows(j).
//!
//! This shape covers the path-mass programs solved here (each path hits one
//! endpoint-pair row and one marginal row per interior time). The solver
//! keeps an explicit basis inverse with periodic refactorization, prices by
//! most-negative reduced cost with lexicographic tie-breaks, and falls back
//! to Bland's rule when degenerate pivots stall, so runs are deterministic.
//! Redundant rows are tolerated: their artificial stays basic at level zero
//! and the corresponding dual is pinned by its zero cost.

use crate::error::{Error, Result};

const RED_TOL: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 64;

#[derive(Debug, Clone)]
pub struct UnitColumnLp {
    pub nrows: usize,
    pub rhs: Vec<f64>,
    /// Row indices (sorted, distinct) carrying coefficient 1 per column.
    pub cols: Vec<Vec<u32>>,
    pub costs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub objective: f64,
    /// Nonzero primal values as (column, value).
    pub primal: Vec<(usize, f64)>,
    /// Dual vector, one entry per row.
    pub duals: Vec<f64>,
    pub iterations: usize,
    pub max_primal_residual: f64,
    pub duality_gap: f64,
    /// Most negative reduced cost at termination (>= -1e-9 when optimal).
    pub min_reduced_cost: f64,
}

struct Tableau<'a> {
    lp: &'a UnitColumnLp,
    m: usize,
    /// basis[r] = variable occupying row r; artificials are ncols + r.
    basis: Vec<usize>,
    binv: Vec<f64>, // m x m row-major
    xb: Vec<f64>,
    pivots_since_refactor: usize,
}

impl<'a> Tableau<'a> {
    fn new(lp: &'a UnitColumnLp) -> Self {
        let m = lp.nrows;
        let mut binv = vec![0.0; m * m];
        for r in 0..m {
            binv[r * m + r] = 1.0;
        }
        Tableau {
            lp,
            m,
            basis: (0..m).map(|r| lp.cols.len() + r).collect(),
            binv,
            xb: lp.rhs.clone(),
            pivots_since_refactor: 0,
        }
    }

    fn is_artificial(&self, var: usize) -> bool {
        var >= self.lp.cols.len()
    }

    /// B^{-1} a_j for a unit column (sum of binv columns on the row set).
    fn direction(&self, var: usize) -> Vec<f64> {
        let m = self.m;
        let mut d = vec![0.0; m];
        if self.is_artificial(var) {
            let r = var - self.lp.cols.len();
            for row in 0..m {
                d[row] = self.binv[row * m + r];
            }
        } else {
            for &r in &self.lp.cols[var] {
                let r = r as usize;
                for row in 0..m {
                    d[row] += self.binv[row * m + r];
                }
            }
        }
        d
    }

    /// y = c_B^T B^{-1} for the given cost view.
    fn duals(&self, cost_of: &dyn Fn(usize) -> f64) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (r, &var) in self.basis.iter().enumerate() {
            let c = cost_of(var);
            if c != 0.0 {
                for k in 0..m {
                    y[k] += c * self.binv[r * m + k];
                }
            }
        }
        y
    }

    fn reduced_cost(&self, var: usize, y: &[f64], cost_of: &dyn Fn(usize) -> f64) -> f64 {
        let mut red = cost_of(var);
        for &r in &self.lp.cols[var] {
            red -= y[r as usize];
        }
        // artificials never priced for entering
        debug_assert!(!self.is_artificial(var));
        red
    }

    fn pivot(&mut self, enter: usize, leave_row: usize, d: &[f64]) -> Result<()> {
        let m = self.m;
        let piv = d[leave_row];
        if piv.abs() < PIVOT_TOL {
            return Err(Error::NonConvergence {
                iters: 0,
                residual: piv,
            });
        }
        let theta = self.xb[leave_row] / piv;
        for r in 0..m {
            if r != leave_row {
                self.xb[r] -= theta * d[r];
                if self.xb[r] < 0.0 && self.xb[r] > -1e-12 {
                    self.xb[r] = 0.0;
                }
            }
        }
        self.xb[leave_row] = theta;
        // eta update of the inverse
        let inv_piv = 1.0 / piv;
        for k in 0..m {
            self.binv[leave_row * m + k] *= inv_piv;
        }
        for r in 0..m {
            if r != leave_row {
                let factor = d[r];
                if factor != 0.0 {
                    for k in 0..m {
                        self.binv[r * m + k] -= factor * self.binv[leave_row * m + k];
                    }
                }
            }
        }
        self.basis[leave_row] = enter;
        self.pivots_since_refactor += 1;
        if self.pivots_since_refactor >= REFACTOR_EVERY {
            self.refactor()?;
        }
        Ok(())
    }

    /// Rebuild B^{-1} from scratch by Gauss-Jordan with partial pivoting.
    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        let ncols = self.lp.cols.len();
        let mut a = vec![0.0f64; m * m]; // basis matrix
        for (col, &var) in self.basis.iter().enumerate() {
            if var >= ncols {
                a[(var - ncols) * m + col] = 1.0;
            } else {
                for &r in &self.lp.cols[var] {
                    a[r as usize * m + col] = 1.0;
                }
            }
        }
        let mut inv = vec![0.0; m * m];
        for r in 0..m {
            inv[r * m + r] = 1.0;
        }
        for col in 0..m {
            let mut best = col;
            for r in col + 1..m {
                if a[r * m + col].abs() > a[best * m + col].abs() {
                    best = r;
                }
            }
            if a[best * m + col].abs() < 1e-13 {
                return Err(Error::NonConvergence {
                    iters: 0,
                    residual: a[best * m + col],
                });
            }
            if best != col {
                for k in 0..m {
                    a.swap(col * m + k, best * m + k);
                    inv.swap(col * m + k, best * m + k);
                }
            }
            let piv = a[col * m + col];
            for k in 0..m {
                a[col * m + k] /= piv;
                inv[col * m + k] /= piv;
            }
            for r in 0..m {
                if r != col {
                    let f = a[r * m + col];
                    if f != 0.0 {
                        for k in 0..m {
                            a[r * m + k] -= f * a[col * m + k];
                            inv[r * m + k] -= f * inv[col * m + k];
                        }
                    }
                }
            }
        }
        self.binv = inv;
        // recompute basic values
        let mut xb = vec![0.0; m];
        for r in 0..m {
            let mut acc = 0.0;
            for k in 0..m {
                acc += self.binv[r * m + k] * self.lp.rhs[k];
            }
            xb[r] = if acc < 0.0 && acc > -1e-11 { 0.0 } else { acc };
        }
        self.xb = xb;
        self.pivots_since_refactor = 0;
        Ok(())
    }

    /// Run simplex iterations for the given cost view until optimal.
    fn optimize(&mut self, cost_of: &dyn Fn(usize) -> f64, iter_budget: usize) -> Result<usize> {
        let mut iterations = 0usize;
        let mut degenerate_streak = 0usize;
        let mut bland = false;
        loop {
            iterations += 1;
            if iterations > iter_budget {
                return Err(Error::NonConvergence {
                    iters: iterations,
                    residual: f64::NAN,
                });
            }
            let y = self.duals(cost_of);
            let mut enter: Option<usize> = None;
            let mut best = -RED_TOL;
            for j in 0..self.lp.cols.len() {
                let red = self.reduced_cost(j, &y, cost_of);
                if red < best {
                    best = red;
                    enter = Some(j);
                    if bland {
                        break;
                    }
                }
            }
            let Some(enter) = enter else {
                return Ok(iterations);
            };
            let d = self.direction(enter);
            let mut leave: Option<usize> = None;
            let mut theta = f64::INFINITY;
            for r in 0..self.m {
                if d[r] > PIVOT_TOL {
                    let ratio = (self.xb[r] / d[r]).max(0.0);
                    let replace = match leave {
                        None => true,
                        Some(l) => {
                            ratio < theta - 1e-13
                                || (ratio < theta + 1e-13 && {
                                    // prefer kicking artificials, then smaller index
                                    let cand = self.basis[r];
                                    let cur = self.basis[l];
                                    match (self.is_artificial(cand), self.is_artificial(cur)) {
                                        (true, false) => true,
                                        (false, true) => false,
                                        _ => cand < cur,
                                    }
                                })
                        }
                    };
                    if replace {
                        theta = ratio;
                        leave = Some(r);
                    }
                }
            }
            let Some(leave) = leave else {
                return Err(Error::Unbounded);
            };
            if theta <= 1e-13 {
                degenerate_streak += 1;
                if degenerate_streak > 5 * self.m + 50 {
                    bland = true;
                }
            } else {
                degenerate_streak = 0;
            }
            self.pivot(enter, leave, &d)?;
        }
    }
}

pub fn solve(lp: &UnitColumnLp) -> Result<LpSolution> {
    if lp.rhs.iter().any(|&b| b < -FEAS_TOL) {
        return Err(Error::Infeasible(
            lp.rhs.iter().cloned().fold(0.0, f64::min),
        ));
    }
    let mut tab = Tableau::new(lp);
    let ncols = lp.cols.len();
    let budget = 400 * (lp.nrows + 10) + 40 * ncols + 2000;

    // phase one: drive artificial mass to zero
    let phase1_cost = |var: usize| if var >= ncols { 1.0 } else { 0.0 };
    let it1 = tab.optimize(&phase1_cost, budget)?;
    let infeas: f64 = tab
        .basis
        .iter()
        .zip(&tab.xb)
        .filter(|(&v, _)| v >= ncols)
        .map(|(_, &x)| x.max(0.0))
        .sum();
    if infeas > FEAS_TOL {
        return Err(Error::Infeasible(infeas));
    }
    // drive remaining artificials out of the basis where a real pivot exists;
    // rows with none are redundant and keep their artificial at level zero
    for r in 0..tab.m {
        if tab.basis[r] >= ncols {
            let mut done = false;
            for j in 0..ncols {
                let d = tab.direction(j);
                if d[r].abs() > 1e-9 && !tab.basis.contains(&j) {
                    tab.xb[r] = 0.0;
                    tab.pivot(j, r, &d)?;
                    done = true;
                    break;
                }
            }
            if !done {
                // redundant row
                continue;
            }
        }
    }

    // phase two: real costs, artificials frozen at zero
    let phase2_cost = |var: usize| if var >= ncols { 0.0 } else { lp.costs[var] };
    let it2 = tab.optimize(&phase2_cost, budget)?;

    let y = tab.duals(&phase2_cost);
    let mut min_red: f64 = 0.0;
    for j in 0..ncols {
        min_red = min_red.min(tab.reduced_cost(j, &y, &phase2_cost));
    }
    let mut primal: Vec<(usize, f64)> = tab
        .basis
        .iter()
        .zip(&tab.xb)
        .filter(|(&v, &x)| v < ncols && x > 1e-12)
        .map(|(&v, &x)| (v, x))
        .collect();
    primal.sort_unstable_by_key(|&(v, _)| v);
    let objective: f64 = primal.iter().map(|&(v, x)| lp.costs[v] * x).sum();
    let dual_objective: f64 = y.iter().zip(&lp.rhs).map(|(yi, bi)| yi * bi).sum();

    // primal residual ||A x - b||_inf
    let mut ax = vec![0.0; lp.nrows];
    for &(v, x) in &primal {
        for &r in &lp.cols[v] {
            ax[r as usize] += x;
        }
    }
    let max_primal_residual = ax
        .iter()
        .zip(&lp.rhs)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    Ok(LpSolution {
        objective,
        primal,
        duals: y,
        iterations: it1 + it2,
        max_primal_residual,
        duality_gap: (objective - dual_objective).abs(),
        min_reduced_cost: min_red,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_assignment_problem() {
        // two rows (one per "slot"), three columns each covering one slot
        let lp = UnitColumnLp {
            nrows: 2,
            rhs: vec![1.0, 1.0],
            cols: vec![vec![0], vec![0], vec![1]],
            costs: vec![2.0, 1.0, 3.0],
        };
        let sol = solve(&lp).unwrap();
        assert!((sol.objective - 4.0).abs() < 1e-12);
        assert_eq!(sol.primal, vec![(1, 1.0), (2, 1.0)]);
        assert!(sol.duality_gap < 1e-12);
        assert!(sol.min_reduced_cost > -1e-12);
    }

    #[test]
    fn redundant_row_handled() {
        // rows 0 and 1 duplicate each other through the columns
        let lp = UnitColumnLp {
            nrows: 2,
            rhs: vec![1.0, 1.0],
            cols: vec![vec![0, 1], vec![0, 1]],
            costs: vec![1.0, 2.0],
        };
        let sol = solve(&lp).unwrap();
        assert!((sol.objective - 1.0).abs() < 1e-12);
        assert!(sol.max_primal_residual < 1e-12);
        assert!(sol.duality_gap < 1e-12);
    }

    #[test]
    fn infeasible_detected() {
        // single column cannot satisfy two different rhs rows
        let lp = UnitColumnLp {
            nrows: 2,
            rhs: vec![1.0, 2.0],
            cols: vec![vec![0, 1]],
            costs: vec![1.0],
        };
        assert!(matches!(solve(&lp), Err(Error::Infeasible(_))));
    }

    #[test]
    fn matches_transport_simplex_on_random_instances() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for trial in 0..10 {
            let s = 4;
            let t = 4;
            let costs: Vec<Vec<f64>> = (0..s)
                .map(|_| (0..t).map(|_| rng.gen_range(0.0..1.0)).collect())
                .collect();
            let supply = vec![0.25; s];
            // transportation as a unit-column LP: rows = s supplies + t demands
            let mut cols = Vec::new();
            let mut costvec = Vec::new();
            for i in 0..s {
                for j in 0..t {
                    cols.push(vec![i as u32, (s + j) as u32]);
                    costvec.push(costs[i][j]);
                }
            }
            let lp = UnitColumnLp {
                nrows: s + t,
                rhs: vec![0.25; s + t],
                cols,
                costs: costvec,
            };
            let sol = solve(&lp).unwrap();
            let ts = crate::transport::solve_transport(&supply, &supply, &|i, j| costs[i][j])
                .unwrap();
            assert!(
                (sol.objective - ts.objective).abs() < 1e-10,
                "trial {trial}: lp {} vs transport {}",
                sol.objective,
                ts.objective
            );
            assert!(sol.duality_gap < 1e-9);
            assert!(sol.max_primal_residual < 1e-9);
            assert!(sol.min_reduced_cost > -1e-9);
        }
    }
}
