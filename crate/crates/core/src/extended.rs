//! Label-indexed endpoint data on the unit interval and the optimal action
//! of the label-extended problem, together with the explicit family of
//! couplings along which that action is discontinuous while the transport
//! distance between the data shrinks to zero.
//!
//! The example lives on [0, 1] with the plain interval distance (no wrap):
//! the quantitative lower bound (1/16)(1 - 1/n)^2 is an interval-distance
//! computation. Atoms keep their exact positions; only marginal checks bin
//! them to cells.

use serde::{Deserialize, Serialize};

use crate::brenier::DEFAULT_ENUMERATION_BUDGET;
use crate::coupling::BistochasticMeasure;
use crate::error::{Error, Result};
use crate::fields::DensityPath;
use crate::torus::TorusGrid;
use crate::transport::solve_transport;

/// A coupling of labels (cells of [0,1], m of them) with positions in [0,1]:
/// mass on (label cell, exact position) pairs. Both the label marginal and
/// the cell-binned position marginal are uniform.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledCoupling {
    pub m: usize,
    /// Atoms (label cell, position, mass).
    pub atoms: Vec<(u32, f64, f64)>,
}

impl LabeledCoupling {
    pub fn label_center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) / self.m as f64
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|&(_, _, m)| m).sum()
    }

    /// Integrate a test function of (label position, position).
    pub fn integrate(&self, alpha: &dyn Fn(f64, f64) -> f64) -> f64 {
        self.atoms
            .iter()
            .map(|&(j, y, m)| m * alpha(self.label_center(j as usize), y))
            .sum()
    }

    pub fn label_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for &(j, _, m) in &self.atoms {
            out[j as usize] += m;
        }
        out
    }

    pub fn position_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for &(_, y, m) in &self.atoms {
            let cell = ((y * self.m as f64).floor() as usize).min(self.m - 1);
            out[cell] += m;
        }
        out
    }

    /// Both marginals uniform within tol.
    pub fn check_bistochastic(&self, tol: f64) -> Result<()> {
        let target = 1.0 / self.m as f64;
        for (name, marg) in [
            ("label", self.label_marginal()),
            ("position", self.position_marginal()),
        ] {
            for (j, &v) in marg.iter().enumerate() {
                if (v - target).abs() > tol {
                    return Err(Error::NotBistochastic(format!(
                        "{name} marginal at cell {j} is {v}, expected {target}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The limiting coupling: every label x paired half-and-half with x/2 and
/// 1/2 + x/2, discretized over m label cells (midpoint positions kept exact).
pub fn build_mu_infinity(m: usize) -> Result<LabeledCoupling> {
    if m < 4 || m % 2 != 0 {
        return Err(Error::Config(format!("m must be even and >= 4, got {m}")));
    }
    let mut atoms = Vec::with_capacity(2 * m);
    let half_mass = 1.0 / (2.0 * m as f64);
    for j in 0..m {
        let a = (j as f64 + 0.5) / m as f64;
        atoms.push((j as u32, a / 2.0, half_mass));
        atoms.push((j as u32, 0.5 + a / 2.0, half_mass));
    }
    let mu = LabeledCoupling { m, atoms };
    mu.check_bistochastic(1e-9)?;
    Ok(mu)
}

/// The sawtooth family: 2n segments of label-length 1/(2n). Over the first
/// half of each interval [i/n, (i+1)/n] the label a is paired with
/// a - i/(2n); over the second half with a + 1/2 - (i+1)/(2n). The printed
/// form of the second branch elsewhere drops the i-dependence, which would
/// break bistochasticity; this is the variant consistent with uniform
/// marginals and with the (1/16)(1 - 1/n)^2 lower bound.
pub fn build_mu_n(n: usize, m: usize) -> Result<LabeledCoupling> {
    if n == 0 || m % (2 * n) != 0 {
        return Err(Error::Config(format!(
            "m must be a positive multiple of 2n, got n={n}, m={m}"
        )));
    }
    let mut atoms = Vec::with_capacity(m);
    let mass = 1.0 / m as f64;
    let seg = m / (2 * n); // label cells per segment
    for i in 0..n {
        let base = i * m / n;
        for k in 0..seg {
            let j = base + k;
            let a = (j as f64 + 0.5) / m as f64;
            atoms.push((j as u32, a - i as f64 / (2.0 * n as f64), mass));
        }
        for k in 0..seg {
            let j = base + seg + k;
            let a = (j as f64 + 0.5) / m as f64;
            atoms.push((
                j as u32,
                a + 0.5 - (i as f64 + 1.0) / (2.0 * n as f64),
                mass,
            ));
        }
    }
    let mu = LabeledCoupling { m, atoms };
    mu.check_bistochastic(1e-9)?;
    Ok(mu)
}

/// Quadratic transport distance between two labeled couplings viewed as
/// measures on the square, with interval (non-wrapping) distances.
pub fn interval_mk_distance(a: &LabeledCoupling, b: &LabeledCoupling) -> Result<f64> {
    if a.m != b.m {
        return Err(Error::GridMismatch("couplings on different grids".into()));
    }
    let pa: Vec<(f64, f64, f64)> = a
        .atoms
        .iter()
        .map(|&(j, y, m)| (a.label_center(j as usize), y, m))
        .collect();
    let pb: Vec<(f64, f64, f64)> = b
        .atoms
        .iter()
        .map(|&(j, y, m)| (b.label_center(j as usize), y, m))
        .collect();
    let supply: Vec<f64> = pa.iter().map(|&(_, _, m)| m).collect();
    let demand: Vec<f64> = pb.iter().map(|&(_, _, m)| m).collect();
    let cost = |i: usize, j: usize| {
        let dx = pa[i].0 - pb[j].0;
        let dy = pa[i].1 - pb[j].1;
        dx * dx + dy * dy
    };
    let sol = solve_transport(&supply, &demand, &cost)?;
    Ok(sol.objective.max(0.0).sqrt())
}

/// How the label-extended action is computed.
pub enum ExtendedMode {
    /// Independent per-label transport with free (unconstrained) motion:
    /// exact when nothing couples the labels, a lower bound otherwise.
    FreeMotion,
    /// Keep the incompressibility constraint; only supported when the
    /// initial coupling pairs every label with its own cell (the identity
    /// reduction), in which case the problem is the plain one on the torus.
    Incompressible { time_steps: usize, budget: u64 },
}

/// Optimal action of the label-extended problem between two labeled
/// couplings with equal label marginals.
pub fn solve_extended(
    mu: &LabeledCoupling,
    nu: &LabeledCoupling,
    mode: ExtendedMode,
) -> Result<f64> {
    if mu.m != nu.m {
        return Err(Error::GridMismatch("label grids differ".into()));
    }
    let lm = mu.label_marginal();
    let ln = nu.label_marginal();
    for (j, (a, b)) in lm.iter().zip(&ln).enumerate() {
        if (a - b).abs() > 1e-9 {
            return Err(Error::MarginalMismatch(format!(
                "label {j}: masses {a} vs {b}"
            )));
        }
    }
    match mode {
        ExtendedMode::FreeMotion => {
            let mut by_label_mu: Vec<Vec<(f64, f64)>> = vec![Vec::new(); mu.m];
            let mut by_label_nu: Vec<Vec<(f64, f64)>> = vec![Vec::new(); nu.m];
            for &(j, y, m) in &mu.atoms {
                by_label_mu[j as usize].push((y, m));
            }
            for &(j, y, m) in &nu.atoms {
                by_label_nu[j as usize].push((y, m));
            }
            let mut total = 0.0;
            for j in 0..mu.m {
                let init = &by_label_mu[j];
                let fin = &by_label_nu[j];
                if init.is_empty() && fin.is_empty() {
                    continue;
                }
                let supply: Vec<f64> = init.iter().map(|&(_, m)| m).collect();
                let demand: Vec<f64> = fin.iter().map(|&(_, m)| m).collect();
                let cost = |a: usize, b: usize| {
                    let d = init[a].0 - fin[b].0;
                    0.5 * d * d
                };
                let sol = solve_transport(&supply, &demand, &cost)?;
                total += sol.objective;
            }
            Ok(total)
        }
        ExtendedMode::Incompressible { time_steps, budget } => {
            // the identity reduction: every label must sit at its own cell
            for &(j, y, _) in &mu.atoms {
                if (y - mu.label_center(j as usize)).abs() > 1e-9 {
                    return Err(Error::Config(
                        "incompressible mode needs the identity initial coupling".into(),
                    ));
                }
            }
            let grid = TorusGrid::new(1, mu.m)?;
            let gamma = induced_endpoint_coupling(nu, &grid)?;
            let rho = DensityPath::uniform(&grid, time_steps);
            let sol = crate::brenier::solve_exact(&gamma, &rho, budget)?;
            Ok(sol.action)
        }
    }
}

/// Endpoint coupling on the torus grid induced by a labeled coupling when
/// labels are identified with initial cells. Positions are snapped only on
/// exact cell centers.
pub fn induced_endpoint_coupling(
    nu: &LabeledCoupling,
    grid: &TorusGrid,
) -> Result<BistochasticMeasure> {
    if grid.cells() != nu.m {
        return Err(Error::GridMismatch(format!(
            "grid has {} cells, coupling has {}",
            grid.cells(),
            nu.m
        )));
    }
    let cells = nu.m;
    let mut mass = vec![0.0; cells * cells];
    for &(j, y, m) in &nu.atoms {
        let cell = grid.snap(&[y - 0.5 / cells as f64]);
        mass[j as usize * cells + cell] += m;
    }
    BistochasticMeasure::new(grid.clone(), mass)
}

/// One row of the discontinuity study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesRow {
    /// None encodes the limiting coupling itself.
    pub n: Option<usize>,
    pub dmk: f64,
    /// Quantitative lower bound (1/16)(1 - 1/n)^2.
    pub action_lower: f64,
    pub action_computed: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesReport {
    pub m: usize,
    pub rows: Vec<SeriesRow>,
    pub distances_strictly_decreasing: bool,
    /// action >= 1/64 for every n >= 2 row (the headline lower bound).
    pub headline_holds: bool,
}

/// Tabulate (n, transport distance to the limit, extended action from the
/// limit): the distance column shrinks while the action column stays
/// bounded away from zero, which is the discontinuity.
pub fn discontinuity_series(n_list: &[usize], m: usize) -> Result<SeriesReport> {
    let mu_inf = build_mu_infinity(m)?;
    let mut rows = vec![SeriesRow {
        n: None,
        dmk: 0.0,
        action_lower: 0.0,
        action_computed: solve_extended(&mu_inf, &mu_inf, ExtendedMode::FreeMotion)?,
    }];
    for &n in n_list {
        let mu_n = build_mu_n(n, m)?;
        let dmk = interval_mk_distance(&mu_n, &mu_inf)?;
        let action = solve_extended(&mu_inf, &mu_n, ExtendedMode::FreeMotion)?;
        let lower = (1.0 - 1.0 / n as f64).powi(2) / 16.0;
        rows.push(SeriesRow {
            n: Some(n),
            dmk,
            action_lower: lower,
            action_computed: action,
        });
    }
    let finite: Vec<&SeriesRow> = rows.iter().filter(|r| r.n.is_some()).collect();
    let distances_strictly_decreasing = finite.windows(2).all(|w| w[1].dmk < w[0].dmk - 1e-12);
    let headline_holds = finite
        .iter()
        .filter(|r| r.n.unwrap() >= 2)
        .all(|r| r.action_computed >= 1.0 / 64.0 - 1e-12);
    Ok(SeriesReport {
        m,
        rows,
        distances_strictly_decreasing,
        headline_holds,
    })
}

#[allow(unused)]
fn default_budget() -> u64 {
    DEFAULT_ENUMERATION_BUDGET
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mu_infinity_integral_identities() {
        let mu = build_mu_infinity(32).unwrap();
        assert!((mu.integrate(&|_, _| 1.0) - 1.0).abs() < 1e-12);
        // integral of y: 1/2 * 1/4 + 1/2 * 3/4 = 1/2, exact by midpoint
        // quadrature of a linear integrand
        assert!((mu.integrate(&|_, y| y) - 0.5).abs() < 1e-12);
        mu.check_bistochastic(1e-9).unwrap();
    }

    #[test]
    fn mu_n_construction_bookkeeping() {
        let mu1 = build_mu_n(1, 8).unwrap();
        assert!((mu1.total_mass() - 1.0).abs() < 1e-12);
        let mu4 = build_mu_n(4, 32).unwrap();
        // 8 segments, 4 cells each, per-segment mass 4/32 = 1/8
        assert_eq!(mu4.atoms.len(), 32);
        let seg_mass: f64 = mu4.atoms[0..4].iter().map(|&(_, _, m)| m).sum();
        assert!((seg_mass - 0.125).abs() < 1e-12);
        mu4.check_bistochastic(1e-9).unwrap();
        assert!(build_mu_n(3, 32).is_err());
        assert!(build_mu_infinity(7).is_err());
    }

    #[test]
    fn distances_decrease_along_the_family() {
        let mu_inf = build_mu_infinity(32).unwrap();
        let mut prev = f64::INFINITY;
        for n in [1usize, 2, 4, 8] {
            let mu_n = build_mu_n(n, 32).unwrap();
            let d = interval_mk_distance(&mu_n, &mu_inf).unwrap();
            assert!(d < prev, "n={n}: {d} !< {prev}");
            prev = d;
        }
    }

    #[test]
    fn extended_action_zero_on_diagonal_and_bounded_below() {
        let mu_inf = build_mu_infinity(32).unwrap();
        let zero = solve_extended(&mu_inf, &mu_inf, ExtendedMode::FreeMotion).unwrap();
        assert!(zero.abs() < 1e-12);
        // paper bound: action >= (1/16)(1 - 1/n)^2, measured value within
        // discretization slack 2/m above it
        for (n, bound) in [(2usize, 1.0 / 64.0), (4, 9.0 / 256.0)] {
            let mu_n = build_mu_n(n, 32).unwrap();
            let a = solve_extended(&mu_inf, &mu_n, ExtendedMode::FreeMotion).unwrap();
            assert!(
                a >= bound - 2.0 / 32.0,
                "n={n}: action {a} below bound {bound} - 2/m"
            );
            assert!(a >= 1.0 / 64.0, "headline bound violated at n={n}: {a}");
        }
    }

    #[test]
    fn per_label_action_additivity() {
        // two label-disjoint halves: total action is the sum of the halves
        let m = 8;
        let mass = 1.0 / m as f64;
        let mk = |labels: std::ops::Range<usize>, shift: f64| -> Vec<(u32, f64, f64)> {
            labels
                .map(|j| {
                    let a = (j as f64 + 0.5) / m as f64;
                    (j as u32, (a + shift).rem_euclid(1.0), mass)
                })
                .collect()
        };
        let init: Vec<(u32, f64, f64)> = mk(0..8, 0.0);
        let mut fin = mk(0..4, 0.25);
        fin.extend(mk(4..8, 0.125));
        let mu = LabeledCoupling {
            m,
            atoms: init.clone(),
        };
        let nu = LabeledCoupling { m, atoms: fin };
        let whole = solve_extended(&mu, &nu, ExtendedMode::FreeMotion).unwrap();
        let mut parts = 0.0;
        for (lo, hi) in [(0usize, 4usize), (4, 8)] {
            let muh = LabeledCoupling {
                m,
                atoms: init
                    .iter()
                    .filter(|&&(j, _, _)| (j as usize) >= lo && (j as usize) < hi)
                    .cloned()
                    .collect(),
            };
            let nuh = LabeledCoupling {
                m,
                atoms: nu
                    .atoms
                    .iter()
                    .filter(|&&(j, _, _)| (j as usize) >= lo && (j as usize) < hi)
                    .cloned()
                    .collect(),
            };
            parts += solve_extended(&muh, &nuh, ExtendedMode::FreeMotion).unwrap();
        }
        assert!((whole - parts).abs() < 1e-12);
    }

    #[test]
    fn incompressible_reduction_matches_plain_solver() {
        // identity initial coupling: the extended problem reduces to the
        // plain one with endpoint data read off the labels
        let m = 4;
        let grid = TorusGrid::new(1, m).unwrap();
        let mass = 1.0 / m as f64;
        let ident: Vec<(u32, f64, f64)> = (0..m)
            .map(|j| (j as u32, (j as f64 + 0.5) / m as f64, mass))
            .collect();
        let mu = LabeledCoupling { m, atoms: ident };
        // final: shift every label by half a turn
        let fin: Vec<(u32, f64, f64)> = (0..m)
            .map(|j| {
                let y = ((j as f64 + 0.5) / m as f64 + 0.5).rem_euclid(1.0);
                (j as u32, y, mass)
            })
            .collect();
        let nu = LabeledCoupling { m, atoms: fin };
        let ext = solve_extended(
            &mu,
            &nu,
            ExtendedMode::Incompressible {
                time_steps: 2,
                budget: 1 << 20,
            },
        )
        .unwrap();
        let gamma = induced_endpoint_coupling(&nu, &grid).unwrap();
        let rho = DensityPath::uniform(&grid, 2);
        let direct = crate::brenier::solve_exact(&gamma, &rho, 1 << 20).unwrap();
        assert!((ext - direct.action).abs() < 1e-6);
        assert!((ext - 0.125).abs() < 1e-9);
    }

    #[test]
    fn series_report_shape() {
        let rep = discontinuity_series(&[2, 4, 8], 32).unwrap();
        assert_eq!(rep.rows.len(), 4);
        assert_eq!(rep.rows[0].n, None);
        assert!(rep.rows[0].dmk.abs() < 1e-12);
        assert!(rep.rows[0].action_computed.abs() < 1e-12);
        assert!(rep.distances_strictly_decreasing);
        assert!(rep.headline_holds);
        // formula instantiation at n = 8
        let r8 = rep.rows.iter().find(|r| r.n == Some(8)).unwrap();
        assert!((r8.action_lower - 49.0 / 1024.0).abs() < 1e-12);
        assert!(r8.action_computed >= r8.action_lower - 2.0 / 32.0);
    }
}
