//! Bistochastic endpoint measures on grid x grid, the quadratic
//! Monge-Kantorovich distance between them (computed exactly on the product
//! torus), and optimal four-point plans.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus::TorusGrid;
use crate::transport::{solve_transport, TransportSolution};

const BISTOCHASTIC_TOL: f64 = 1e-9;

/// A coupling on grid x grid whose both marginals are the discrete Lebesgue
/// measure: every row and column of the mass matrix sums to 1/n^d.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BistochasticMeasure {
    pub grid: TorusGrid,
    /// Row-major mass matrix, mass[i * cells + j] for the pair (i, j).
    pub mass: Vec<f64>,
}

impl BistochasticMeasure {
    pub fn new(grid: TorusGrid, mass: Vec<f64>) -> Result<Self> {
        let cells = grid.cells();
        if mass.len() != cells * cells {
            return Err(Error::GridMismatch(format!(
                "mass matrix has {} entries, expected {}",
                mass.len(),
                cells * cells
            )));
        }
        let m = BistochasticMeasure { grid, mass };
        m.check_bistochastic(BISTOCHASTIC_TOL)?;
        Ok(m)
    }

    pub fn check_bistochastic(&self, tol: f64) -> Result<()> {
        let cells = self.grid.cells();
        let target = 1.0 / cells as f64;
        for i in 0..cells {
            let row: f64 = self.mass[i * cells..(i + 1) * cells].iter().sum();
            if (row - target).abs() > tol {
                return Err(Error::NotBistochastic(format!(
                    "row {i} sums to {row}, expected {target}"
                )));
            }
        }
        for j in 0..cells {
            let col: f64 = (0..cells).map(|i| self.mass[i * cells + j]).sum();
            if (col - target).abs() > tol {
                return Err(Error::NotBistochastic(format!(
                    "column {j} sums to {col}, expected {target}"
                )));
            }
        }
        if self.mass.iter().any(|&v| v < -tol) {
            return Err(Error::NotBistochastic("negative mass entry".into()));
        }
        Ok(())
    }

    /// The stay-put coupling: mass 1/n^d on each diagonal pair (i, i).
    pub fn identity(grid: &TorusGrid) -> Self {
        let cells = grid.cells();
        let mut mass = vec![0.0; cells * cells];
        for i in 0..cells {
            mass[i * cells + i] = 1.0 / cells as f64;
        }
        BistochasticMeasure {
            grid: grid.clone(),
            mass,
        }
    }

    /// Coupling pairing each cell with its translate by `offset` cells per axis.
    pub fn shift(grid: &TorusGrid, offset: &[isize]) -> Self {
        let cells = grid.cells();
        let mut mass = vec![0.0; cells * cells];
        for i in 0..cells {
            let j = grid.shift(i, offset);
            mass[i * cells + j] = 1.0 / cells as f64;
        }
        BistochasticMeasure {
            grid: grid.clone(),
            mass,
        }
    }

    /// The product coupling lambda (x) lambda.
    pub fn product(grid: &TorusGrid) -> Self {
        let cells = grid.cells();
        BistochasticMeasure {
            grid: grid.clone(),
            mass: vec![1.0 / (cells * cells) as f64; cells * cells],
        }
    }

    /// Convex blend (1-s) self + s other; bistochasticity is preserved.
    pub fn blend(&self, other: &BistochasticMeasure, s: f64) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("blend on different grids".into()));
        }
        let mass = self
            .mass
            .iter()
            .zip(&other.mass)
            .map(|(a, b)| (1.0 - s) * a + s * b)
            .collect();
        Ok(BistochasticMeasure {
            grid: self.grid.clone(),
            mass,
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mass[i * self.grid.cells() + j]
    }
}

/// A transport plan on (grid x grid)^2: nonnegative mass on four-point atoms
/// whose (x, y) projection is the source measure and whose (X, Y) projection
/// is the target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransportPlan4 {
    pub grid: TorusGrid,
    /// Sparse entries (x, y, X, Y, mass).
    pub entries: Vec<(u32, u32, u32, u32, f64)>,
}

impl TransportPlan4 {
    pub fn source_marginal(&self) -> Vec<f64> {
        let cells = self.grid.cells();
        let mut out = vec![0.0; cells * cells];
        for &(x, y, _, _, m) in &self.entries {
            out[x as usize * cells + y as usize] += m;
        }
        out
    }

    pub fn target_marginal(&self) -> Vec<f64> {
        let cells = self.grid.cells();
        let mut out = vec![0.0; cells * cells];
        for &(_, _, xx, yy, m) in &self.entries {
            out[xx as usize * cells + yy as usize] += m;
        }
        out
    }

    /// Identity plan of a measure: every atom transported to itself.
    pub fn identity(mu: &BistochasticMeasure) -> Self {
        let cells = mu.grid.cells();
        let entries = (0..cells * cells)
            .filter(|&k| mu.mass[k] > 0.0)
            .map(|k| {
                let (i, j) = (k / cells, k % cells);
                (i as u32, j as u32, i as u32, j as u32, mu.mass[k])
            })
            .collect();
        TransportPlan4 {
            grid: mu.grid.clone(),
            entries,
        }
    }
}

/// Squared product-torus distance between pair atoms (x,y) and (X,Y).
fn pair_cost(grid: &TorusGrid, a: usize, b: usize) -> f64 {
    let cells = grid.cells();
    let (x, y) = (a / cells, a % cells);
    let (xx, yy) = (b / cells, b % cells);
    let dx = grid.cell_distance(x, xx);
    let dy = grid.cell_distance(y, yy);
    dx * dx + dy * dy
}

/// Exact quadratic Monge-Kantorovich distance between two bistochastic
/// measures on the same grid, with an optimal four-point plan.
pub fn mk_distance(
    mu: &BistochasticMeasure,
    nu: &BistochasticMeasure,
) -> Result<(f64, TransportPlan4)> {
    if mu.grid != nu.grid {
        return Err(Error::GridMismatch("mk_distance on different grids".into()));
    }
    mu.check_bistochastic(BISTOCHASTIC_TOL)?;
    nu.check_bistochastic(BISTOCHASTIC_TOL)?;
    let grid = &mu.grid;
    let cells = grid.cells();
    let src: Vec<usize> = (0..cells * cells).filter(|&k| mu.mass[k] > 0.0).collect();
    let tgt: Vec<usize> = (0..cells * cells).filter(|&k| nu.mass[k] > 0.0).collect();
    let supply: Vec<f64> = src.iter().map(|&k| mu.mass[k]).collect();
    let demand: Vec<f64> = tgt.iter().map(|&k| nu.mass[k]).collect();
    // distances between cell pairs are grid-translation invariant, so cache
    // the cost by relative pair
    let cost = |i: usize, j: usize| pair_cost(grid, src[i], tgt[j]);
    let sol: TransportSolution = solve_transport(&supply, &demand, &cost)?;
    let entries = sol
        .flows
        .iter()
        .map(|&(i, j, m)| {
            let a = src[i];
            let b = tgt[j];
            (
                (a / cells) as u32,
                (a % cells) as u32,
                (b / cells) as u32,
                (b % cells) as u32,
                m,
            )
        })
        .collect();
    Ok((
        sol.objective.max(0.0).sqrt(),
        TransportPlan4 {
            grid: grid.clone(),
            entries,
        },
    ))
}

/// Deterministic random bistochastic measure: a positive random matrix
/// Sinkhorn-scaled to uniform marginals. Small `heat` concentrates the mass
/// toward a random permutation coupling; large `heat` flattens it toward the
/// product coupling.
pub fn random_bistochastic(grid: &TorusGrid, seed: u64, heat: f64) -> Result<BistochasticMeasure> {
    if !(heat > 0.0) {
        return Err(Error::Config(format!("heat must be positive, got {heat}")));
    }
    let cells = grid.cells();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mass: Vec<f64> = (0..cells * cells)
        .map(|_| {
            let g: f64 = rng.gen_range(0.0..1.0);
            (g / heat).exp()
        })
        .collect();
    // Sinkhorn scaling to uniform marginals
    let target = 1.0 / cells as f64;
    for _ in 0..10_000 {
        for i in 0..cells {
            let row: f64 = mass[i * cells..(i + 1) * cells].iter().sum();
            let f = target / row;
            for j in 0..cells {
                mass[i * cells + j] *= f;
            }
        }
        let mut worst: f64 = 0.0;
        for j in 0..cells {
            let col: f64 = (0..cells).map(|i| mass[i * cells + j]).sum();
            let f = target / col;
            worst = worst.max((col - target).abs());
            for i in 0..cells {
                mass[i * cells + j] *= f;
            }
        }
        if worst < 1e-13 {
            break;
        }
    }
    BistochasticMeasure::new(grid.clone(), mass)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid4() -> TorusGrid {
        TorusGrid::new(1, 4).unwrap()
    }

    #[test]
    fn identity_distance_is_zero() {
        let g = grid4();
        let id = BistochasticMeasure::identity(&g);
        let (d, plan) = mk_distance(&id, &id).unwrap();
        assert!(d < 1e-12);
        let src = plan.source_marginal();
        for (a, b) in src.iter().zip(&id.mass) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn shift2_distance_matches_brute_force() {
        // oracle: all 24 matchings of the 4 diagonal atoms to 4 shifted atoms
        let g = grid4();
        let id = BistochasticMeasure::identity(&g);
        let sh = BistochasticMeasure::shift(&g, &[2]);
        let (d, plan) = mk_distance(&id, &sh).unwrap();

        let src: Vec<usize> = (0..4).collect(); // atom (i, i)
        let tgt: Vec<usize> = (0..4).collect(); // atom (j, j+2)
        let atom_cost = |i: usize, j: usize| {
            let di = g.cell_distance(src[i], tgt[j]);
            let dj = g.cell_distance(src[i], (tgt[j] + 2) % 4);
            di * di + dj * dj
        };
        let mut best = f64::INFINITY;
        let perms = [
            [0, 1, 2, 3], [0, 1, 3, 2], [0, 2, 1, 3], [0, 2, 3, 1], [0, 3, 1, 2], [0, 3, 2, 1],
            [1, 0, 2, 3], [1, 0, 3, 2], [1, 2, 0, 3], [1, 2, 3, 0], [1, 3, 0, 2], [1, 3, 2, 0],
            [2, 0, 1, 3], [2, 0, 3, 1], [2, 1, 0, 3], [2, 1, 3, 0], [2, 3, 0, 1], [2, 3, 1, 0],
            [3, 0, 1, 2], [3, 0, 2, 1], [3, 1, 0, 2], [3, 1, 2, 0], [3, 2, 0, 1], [3, 2, 1, 0],
        ];
        for p in perms {
            let c: f64 = (0..4).map(|i| atom_cost(i, p[i]) * 0.25).sum();
            best = best.min(c);
        }
        assert!((d * d - best).abs() < 1e-12);
        assert!((d - (0.125f64).sqrt()).abs() < 1e-9);
        // per-atom optimum 1/8: both coordinates move a quarter turn
        assert!((best - 0.125).abs() < 1e-12);
        // plan marginals
        let tgt_m = plan.target_marginal();
        for (a, b) in tgt_m.iter().zip(&sh.mass) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn diameter_bound_on_t1() {
        let g = grid4();
        let a = random_bistochastic(&g, 1, 0.7).unwrap();
        let b = random_bistochastic(&g, 2, 0.7).unwrap();
        let (d, _) = mk_distance(&a, &b).unwrap();
        assert!(d <= (2.0f64 * 0.25).sqrt() + 1e-12); // sqrt(2)/2
    }

    #[test]
    fn random_bistochastic_deterministic_and_valid() {
        let g = grid4();
        let a = random_bistochastic(&g, 7, 1.0).unwrap();
        let b = random_bistochastic(&g, 7, 1.0).unwrap();
        assert_eq!(a.mass, b.mass);
        // marginal sums within 1e-10 of 1/4
        a.check_bistochastic(1e-10).unwrap();
        // large heat flattens toward the product coupling
        let flat = random_bistochastic(&g, 7, 1e6).unwrap();
        for &v in &flat.mass {
            assert!((v - 1.0 / 16.0).abs() < 1e-4);
        }
    }

    #[test]
    fn mk_metric_axioms_on_random_triples() {
        let g = grid4();
        for seed in 0..4u64 {
            let a = random_bistochastic(&g, 3 * seed, 0.8).unwrap();
            let b = random_bistochastic(&g, 3 * seed + 1, 0.8).unwrap();
            let c = random_bistochastic(&g, 3 * seed + 2, 0.8).unwrap();
            let (dab, _) = mk_distance(&a, &b).unwrap();
            let (dba, _) = mk_distance(&b, &a).unwrap();
            let (dac, _) = mk_distance(&a, &c).unwrap();
            let (dcb, _) = mk_distance(&c, &b).unwrap();
            assert!((dab - dba).abs() < 1e-9);
            assert!(dab <= dac + dcb + 1e-8);
            let (daa, _) = mk_distance(&a, &a).unwrap();
            assert!(daa < 1e-9);
        }
    }

    #[test]
    fn explicit_feasible_plan_upper_bounds_distance() {
        // moving every atom of mu by a fixed pair shift is feasible, so its
        // cost bounds the optimum from above
        let g = grid4();
        let mu = random_bistochastic(&g, 11, 0.9).unwrap();
        let cells = g.cells();
        let mut nu_mass = vec![0.0; cells * cells];
        for i in 0..cells {
            for j in 0..cells {
                let jj = g.shift(j, &[1]);
                nu_mass[i * cells + jj] += mu.get(i, j);
            }
        }
        let nu = BistochasticMeasure::new(g.clone(), nu_mass).unwrap();
        let (d, _) = mk_distance(&mu, &nu).unwrap();
        let explicit_cost: f64 = (0..cells)
            .flat_map(|i| (0..cells).map(move |j| (i, j)))
            .map(|(i, j)| {
                let dj = g.cell_distance(j, g.shift(j, &[1]));
                mu.get(i, j) * dj * dj
            })
            .sum();
        assert!(d * d <= explicit_cost + 1e-10);
    }
}
