//! The core variational solver: discrete generalized flows over a space-time
//! path lattice, exact minimization of the kinetic action under endpoint and
//! per-time marginal constraints (with the pressure field recovered as the
//! marginal-constraint dual), an entropic multimarginal solver as the
//! scalable stand-in, and the admissibility / least-action / multiplier
//! verification machinery.
//!
//! Conventions. A path is a sequence of cell indices, one per lattice time.
//! Between consecutive knots the particle travels the minimal-image straight
//! segment, so a step from a to b over an interval dt costs
//! geodesic(a,b)^2 / (2 dt), which is exact for piecewise-geodesic curves.
//! Pressure frames live at interior times only, gauge-fixed to zero spatial
//! mean; the sign is the one making
//!   action(gamma, lambda) + <p, R - 1>  <=  action(H)
//! hold for every flow H with the same endpoint coupling and density R.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::coupling::BistochasticMeasure;
use crate::error::{Error, Result};
use crate::fields::{DensityPath, FieldPath};
use crate::lp::{self, UnitColumnLp};
use crate::torus::{min_image_disp, TorusGrid};

/// Space-time lattice: a torus grid with an ordered list of knot times and
/// the cached squared geodesic distance between every cell pair.
#[derive(Debug, Clone)]
pub struct PathLattice {
    pub grid: TorusGrid,
    pub times: Vec<f64>,
    geo2: Vec<f64>,
}

impl PathLattice {
    pub fn with_times(grid: &TorusGrid, times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("lattice times must be increasing".into()));
        }
        let cells = grid.cells();
        let mut geo2 = vec![0.0; cells * cells];
        for a in 0..cells {
            for b in 0..cells {
                let d = grid.cell_distance(a, b);
                geo2[a * cells + b] = d * d;
            }
        }
        Ok(PathLattice {
            grid: grid.clone(),
            times,
            geo2,
        })
    }

    /// Uniform lattice with T intervals on [0, 1].
    pub fn uniform(grid: &TorusGrid, steps: usize) -> Result<Self> {
        Self::with_times(grid, crate::fields::uniform_times(steps))
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn geo2(&self, a: usize, b: usize) -> f64 {
        self.geo2[a * self.grid.cells() + b]
    }

    /// Cost of the step k -> k+1 from cell a to cell b.
    pub fn step_cost(&self, k: usize, a: usize, b: usize) -> f64 {
        let dt = self.times[k + 1] - self.times[k];
        self.geo2(a, b) / (2.0 * dt)
    }

    /// Action of a single knot path.
    pub fn path_action(&self, cells: &[u16]) -> f64 {
        (0..self.steps())
            .map(|k| self.step_cost(k, cells[k] as usize, cells[k + 1] as usize))
            .sum()
    }

    pub fn same_times(&self, other: &[f64]) -> bool {
        self.times.len() == other.len()
            && self
                .times
                .iter()
                .zip(other)
                .all(|(a, b)| (a - b).abs() < 1e-12)
    }
}

/// Explicit flow: nonnegative mass per knot path, paths kept sorted.
#[derive(Debug, Clone, Default)]
pub struct ExplicitFlow {
    pub paths: Vec<(Vec<u16>, f64)>,
}

impl ExplicitFlow {
    pub fn from_map(map: BTreeMap<Vec<u16>, f64>) -> Self {
        ExplicitFlow {
            paths: map.into_iter().filter(|&(_, m)| m > 1e-16).collect(),
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.paths.iter().map(|(_, m)| m).sum()
    }
}

/// Chain-factored flow: endpoint-pair scaling times per-step kernels times
/// per-interior-time scalings. Only defined on uniform lattices.
#[derive(Debug, Clone)]
pub struct ChainFlow {
    pub cells: usize,
    pub steps: usize,
    /// Step transition kernel, cells x cells (shared by all steps).
    pub kernel: Vec<f64>,
    /// Endpoint-pair scaling, cells x cells.
    pub endpoint_scaling: Vec<f64>,
    /// Interior scalings a_t for t = 1..steps-1.
    pub interior_scalings: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub enum FlowRepr {
    Explicit(ExplicitFlow),
    Chain(ChainFlow),
}

/// A discrete generalized flow: a nonnegative measure over lattice paths.
#[derive(Debug, Clone)]
pub struct GeneralizedFlow {
    pub lattice: PathLattice,
    pub repr: FlowRepr,
}

fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik != 0.0 {
                let row = &b[k * n..(k + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(row) {
                    *o += aik * bv;
                }
            }
        }
    }
    out
}

fn scale_cols(m: &mut [f64], diag: &[f64], n: usize) {
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] *= diag[j];
        }
    }
}

impl ChainFlow {
    /// Backward message B_t(x, j): total kernel-and-scaling weight of chains
    /// from x at time t to j at the final time (excluding a_t itself).
    fn backward(&self, t: usize) -> Vec<f64> {
        let n = self.cells;
        let mut b: Vec<f64> = (0..n * n)
            .map(|k| if k / n == k % n { 1.0 } else { 0.0 })
            .collect();
        for s in (t..self.steps).rev() {
            // b <- K * diag(a_{s+1}) * b, with a at the final time = 1
            let mut scaled = b;
            if s + 1 < self.steps {
                let diag = &self.interior_scalings[s]; // a_{s+1}
                for i in 0..n {
                    let d = diag[i];
                    for j in 0..n {
                        scaled[i * n + j] *= d;
                    }
                }
            }
            b = matmul(&self.kernel, &scaled, n);
        }
        b
    }

    /// Forward message F'_t(i, x): weight of chains from i at time 0 to x at
    /// time t, excluding a_t (identity at t = 0).
    fn forward(&self, t: usize) -> Vec<f64> {
        let n = self.cells;
        let mut f: Vec<f64> = (0..n * n)
            .map(|k| if k / n == k % n { 1.0 } else { 0.0 })
            .collect();
        for s in 0..t {
            if s > 0 {
                scale_cols(&mut f, &self.interior_scalings[s - 1], n);
            }
            f = matmul(&f, &self.kernel, n);
        }
        f
    }

    pub fn endpoint_joint(&self) -> Vec<f64> {
        let n = self.cells;
        let w = self.backward(0);
        (0..n * n).map(|k| self.endpoint_scaling[k] * w[k]).collect()
    }

    /// Mass vector of the marginal at interior time t (1..steps-1).
    pub fn interior_marginal(&self, t: usize) -> Vec<f64> {
        let n = self.cells;
        let f = self.forward(t);
        let b = self.backward(t);
        let a = &self.interior_scalings[t - 1];
        let mut out = vec![0.0; n];
        // out(x) = a(x) * sum_{i,j} F'(i,x) G(i,j) B(x,j)
        for x in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                let fix = f[i * n + x];
                if fix != 0.0 {
                    let grow = &self.endpoint_scaling[i * n..(i + 1) * n];
                    let brow = &b[x * n..(x + 1) * n];
                    let mut inner = 0.0;
                    for (g, bb) in grow.iter().zip(brow) {
                        inner += g * bb;
                    }
                    acc += fix * inner;
                }
            }
            out[x] = a[x] * acc;
        }
        out
    }

    /// Pair mass over the step t -> t+1 (t in 0..steps).
    pub fn pair_marginal(&self, t: usize) -> Vec<f64> {
        let n = self.cells;
        let f = self.forward(t);
        let b_next = self.backward(t + 1);
        // C(a, j) = sum_i F'(i,a) G(i,j)
        let mut c = vec![0.0; n * n];
        for a in 0..n {
            for i in 0..n {
                let fia = f[i * n + a];
                if fia != 0.0 {
                    let grow = &self.endpoint_scaling[i * n..(i + 1) * n];
                    let crow = &mut c[a * n..(a + 1) * n];
                    for (cv, &g) in crow.iter_mut().zip(grow) {
                        *cv += fia * g;
                    }
                }
            }
        }
        let one = vec![1.0; n];
        let a_t = if t == 0 { &one } else { &self.interior_scalings[t - 1] };
        let a_t1 = if t + 1 == self.steps {
            &one
        } else {
            &self.interior_scalings[t]
        };
        let mut out = vec![0.0; n * n];
        for a in 0..n {
            for bcell in 0..n {
                let mut inner = 0.0;
                let crow = &c[a * n..(a + 1) * n];
                let brow = &b_next[bcell * n..(bcell + 1) * n];
                for (cv, bv) in crow.iter().zip(brow) {
                    inner += cv * bv;
                }
                out[a * n + bcell] =
                    a_t[a] * self.kernel[a * n + bcell] * a_t1[bcell] * inner;
            }
        }
        out
    }
}

impl GeneralizedFlow {
    pub fn explicit(lattice: PathLattice, paths: BTreeMap<Vec<u16>, f64>) -> Self {
        GeneralizedFlow {
            lattice,
            repr: FlowRepr::Explicit(ExplicitFlow::from_map(paths)),
        }
    }

    pub fn total_mass(&self) -> f64 {
        match &self.repr {
            FlowRepr::Explicit(e) => e.total_mass(),
            FlowRepr::Chain(c) => c.endpoint_joint().iter().sum(),
        }
    }

    /// Joint endpoint mass matrix (cells x cells).
    pub fn endpoint_joint(&self) -> Vec<f64> {
        let cells = self.lattice.grid.cells();
        match &self.repr {
            FlowRepr::Explicit(e) => {
                let mut out = vec![0.0; cells * cells];
                for (p, m) in &e.paths {
                    out[p[0] as usize * cells + *p.last().unwrap() as usize] += m;
                }
                out
            }
            FlowRepr::Chain(c) => c.endpoint_joint(),
        }
    }

    /// Mass per cell at knot k.
    pub fn marginal_mass(&self, k: usize) -> Vec<f64> {
        let cells = self.lattice.grid.cells();
        match &self.repr {
            FlowRepr::Explicit(e) => {
                let mut out = vec![0.0; cells];
                for (p, m) in &e.paths {
                    out[p[k] as usize] += m;
                }
                out
            }
            FlowRepr::Chain(c) => {
                if k == 0 {
                    let j = c.endpoint_joint();
                    (0..cells)
                        .map(|i| j[i * cells..(i + 1) * cells].iter().sum())
                        .collect()
                } else if k == c.steps {
                    let j = c.endpoint_joint();
                    (0..cells).map(|i| (0..cells).map(|r| j[r * cells + i]).sum()).collect()
                } else {
                    c.interior_marginal(k)
                }
            }
        }
    }

    /// Per-time marginals as a density path.
    pub fn density(&self) -> Result<DensityPath> {
        let grid = &self.lattice.grid;
        let vol = grid.cell_volume();
        let frames: Vec<Vec<f64>> = (0..self.lattice.times.len())
            .map(|k| {
                self.marginal_mass(k)
                    .into_iter()
                    .map(|m| m / vol)
                    .collect()
            })
            .collect();
        DensityPath::new(grid.clone(), self.lattice.times.clone(), frames)
    }
}

/// Total kinetic action of the flow. Explicit flows sum per-path actions;
/// chain flows contract per-step pair marginals against step costs, so no
/// path enumeration happens.
pub fn flow_action(flow: &GeneralizedFlow) -> f64 {
    match &flow.repr {
        FlowRepr::Explicit(e) => e
            .paths
            .iter()
            .map(|(p, m)| m * flow.lattice.path_action(p))
            .sum(),
        FlowRepr::Chain(c) => {
            let n = c.cells;
            let mut acc = 0.0;
            for t in 0..c.steps {
                let pm = c.pair_marginal(t);
                for a in 0..n {
                    for b in 0..n {
                        let m = pm[a * n + b];
                        if m != 0.0 {
                            acc += m * flow.lattice.step_cost(t, a, b);
                        }
                    }
                }
            }
            acc
        }
    }
}

/// Scalar pressure frames at interior lattice times, zero mean per frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PressureField {
    pub grid: TorusGrid,
    /// Interior times t_1 .. t_{T-1}.
    pub times: Vec<f64>,
    /// Quadrature weight attached to each interior time.
    pub weights: Vec<f64>,
    pub frames: Vec<Vec<f64>>,
}

impl PressureField {
    fn from_duals(lattice: &PathLattice, mut frames: Vec<Vec<f64>>) -> Self {
        let t_count = lattice.times.len();
        for f in frames.iter_mut() {
            let mean: f64 = f.iter().sum::<f64>() / f.len() as f64;
            f.iter_mut().for_each(|v| *v -= mean);
        }
        let weights = (1..t_count - 1)
            .map(|k| (lattice.times[k + 1] - lattice.times[k - 1]) / 2.0)
            .collect();
        PressureField {
            grid: lattice.grid.clone(),
            times: lattice.times[1..t_count - 1].to_vec(),
            weights,
            frames,
        }
    }

    pub fn max_frame_mean(&self) -> f64 {
        self.frames
            .iter()
            .map(|f| (f.iter().sum::<f64>() / f.len() as f64).abs())
            .fold(0.0, f64::max)
    }

    /// Pointwise difference of two pressure fields on identical supports.
    pub fn sub(&self, other: &PressureField) -> Result<PressureField> {
        if self.times.len() != other.times.len() || self.grid != other.grid {
            return Err(Error::GridMismatch("pressure supports differ".into()));
        }
        Ok(PressureField {
            grid: self.grid.clone(),
            times: self.times.clone(),
            weights: self.weights.clone(),
            frames: self
                .frames
                .iter()
                .zip(&other.frames)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                .collect(),
        })
    }
}

/// Space-time pairing sum_t sum_x p(t,x) r(t,x) w_t vol, the discrete
/// incompressibility-multiplier pairing. The deviation frames r must be
/// zero-mean (they are R - 1 for unit-mass densities R).
pub fn extract_pressure_pairing(p: &PressureField, r_frames: &[Vec<f64>]) -> Result<f64> {
    if r_frames.len() != p.frames.len() {
        return Err(Error::GridMismatch(format!(
            "{} deviation frames vs {} pressure frames",
            r_frames.len(),
            p.frames.len()
        )));
    }
    let vol = p.grid.cell_volume();
    let mut acc = 0.0;
    for ((pf, rf), w) in p.frames.iter().zip(r_frames).zip(&p.weights) {
        let mean = rf.iter().sum::<f64>() / rf.len() as f64;
        if mean.abs() > 1e-9 {
            return Err(Error::InvalidDensity(format!(
                "deviation frame has mean {mean}, expected 0"
            )));
        }
        let dot: f64 = pf.iter().zip(rf).map(|(a, b)| a * b).sum();
        acc += dot * w * vol;
    }
    Ok(acc)
}

/// Residual report from checking a flow against prescribed endpoint and
/// marginal data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub endpoint_l1: f64,
    pub interior_l1: Vec<f64>,
    pub max_residual: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Check endpoint joint = gamma and per-time marginal = rho in L1, within tol.
pub fn verify_admissible(
    flow: &GeneralizedFlow,
    gamma: &BistochasticMeasure,
    rho: &DensityPath,
    tol: f64,
) -> Result<AdmissibilityReport> {
    if flow.lattice.grid != gamma.grid || flow.lattice.grid != rho.grid {
        return Err(Error::GridMismatch("flow/gamma/rho grids differ".into()));
    }
    if !flow.lattice.same_times(&rho.times) {
        return Err(Error::GridMismatch("flow and rho time grids differ".into()));
    }
    let joint = flow.endpoint_joint();
    let endpoint_l1: f64 = joint
        .iter()
        .zip(&gamma.mass)
        .map(|(a, b)| (a - b).abs())
        .sum();
    let vol = flow.lattice.grid.cell_volume();
    let mut interior_l1 = Vec::new();
    for k in 0..flow.lattice.times.len() {
        let mm = flow.marginal_mass(k);
        let l1: f64 = mm
            .iter()
            .zip(&rho.frames[k])
            .map(|(m, d)| (m - d * vol).abs())
            .sum();
        interior_l1.push(l1);
    }
    let max_residual = interior_l1.iter().fold(endpoint_l1, |acc, &v| acc.max(v));
    Ok(AdmissibilityReport {
        endpoint_l1,
        interior_l1,
        max_residual,
        tol,
        pass: max_residual <= tol,
    })
}

/// Full result of the exact solver, including the LP certificates.
#[derive(Debug, Clone)]
pub struct ExactSolution {
    pub action: f64,
    pub flow: GeneralizedFlow,
    pub pressure: PressureField,
    /// Dual of the endpoint-pair constraints, cells x cells.
    pub endpoint_duals: Vec<f64>,
    pub gamma: BistochasticMeasure,
    pub duality_gap: f64,
    pub min_reduced_cost: f64,
    pub primal_residual: f64,
    pub iterations: usize,
}

pub const DEFAULT_ENUMERATION_BUDGET: u64 = 1_000_000;

fn enumerate_paths(cells: usize, knots: usize, budget: u64) -> Result<Vec<Vec<u16>>> {
    let needed = (cells as u128).pow(knots as u32);
    if needed > budget as u128 {
        return Err(Error::BudgetExceeded { needed, budget });
    }
    let total = needed as usize;
    let mut out = Vec::with_capacity(total);
    for mut idx in 0..total {
        let mut path = vec![0u16; knots];
        for k in (0..knots).rev() {
            path[k] = (idx % cells) as u16;
            idx /= cells;
        }
        out.push(path);
    }
    Ok(out)
}

/// Exact minimization of the action over path masses with endpoint joint
/// gamma and interior marginals rho, by enumeration plus simplex. Returns
/// the optimal flow, the pressure (interior duals over their quadrature
/// weight, zero-mean gauged), and the endpoint duals.
pub fn solve_exact(
    gamma: &BistochasticMeasure,
    rho: &DensityPath,
    budget: u64,
) -> Result<ExactSolution> {
    let grid = &gamma.grid;
    if rho.grid != *grid {
        return Err(Error::GridMismatch("gamma and rho grids differ".into()));
    }
    let lattice = PathLattice::with_times(grid, rho.times.clone())?;
    let cells = grid.cells();
    let steps = lattice.steps();
    let vol = grid.cell_volume();
    let paths = enumerate_paths(cells, steps + 1, budget)?;

    let nrows = cells * cells + (steps - 1) * cells;
    let mut cols = Vec::with_capacity(paths.len());
    let mut costs = Vec::with_capacity(paths.len());
    for p in &paths {
        let mut rows = Vec::with_capacity(steps);
        rows.push((p[0] as usize * cells + p[steps] as usize) as u32);
        for t in 1..steps {
            rows.push((cells * cells + (t - 1) * cells + p[t] as usize) as u32);
        }
        cols.push(rows);
        costs.push(lattice.path_action(p));
    }
    let mut rhs = gamma.mass.clone();
    for t in 1..steps {
        for c in 0..cells {
            rhs.push(rho.frames[t][c] * vol);
        }
    }
    let lp = UnitColumnLp {
        nrows,
        rhs,
        cols,
        costs,
    };
    let sol = lp::solve(&lp)?;

    let mut flow_paths = BTreeMap::new();
    for &(col, mass) in &sol.primal {
        flow_paths.insert(paths[col].clone(), mass);
    }
    let flow = GeneralizedFlow::explicit(lattice.clone(), flow_paths);

    let mut pressure_frames = Vec::with_capacity(steps.saturating_sub(1));
    for t in 1..steps {
        let base = cells * cells + (t - 1) * cells;
        let w = (lattice.times[t + 1] - lattice.times[t - 1]) / 2.0;
        let frame: Vec<f64> = (0..cells).map(|c| sol.duals[base + c] / w).collect();
        pressure_frames.push(frame);
    }
    let pressure = PressureField::from_duals(&lattice, pressure_frames);

    Ok(ExactSolution {
        action: sol.objective,
        flow,
        pressure,
        endpoint_duals: sol.duals[..cells * cells].to_vec(),
        gamma: gamma.clone(),
        duality_gap: sol.duality_gap,
        min_reduced_cost: sol.min_reduced_cost,
        primal_residual: sol.max_primal_residual,
        iterations: sol.iterations,
    })
}

/// Convergence statistics of the entropic solver.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntropicStats {
    pub iterations: usize,
    pub converged: bool,
    pub marginal_residual: f64,
}

#[derive(Debug, Clone)]
pub struct EntropicSolution {
    pub action: f64,
    pub flow: GeneralizedFlow,
    pub pressure: PressureField,
    pub stats: EntropicStats,
}

/// Entropic multimarginal solver: minimizes action + reg * KL(flow | chain
/// of heat-kernel transitions) by iterative proportional fitting over the
/// endpoint-coupling constraint and each interior marginal. The pressure is
/// recovered from the per-time scaling potentials as reg*log(a_t) over the
/// time quadrature weight, zero-mean gauged; the reported action excludes
/// the entropy term. Non-convergence inside max_iter is reported in the
/// stats, not fatal.
pub fn solve_entropic(
    gamma: &BistochasticMeasure,
    rho: &DensityPath,
    reg: f64,
    max_iter: usize,
    tol: f64,
) -> Result<EntropicSolution> {
    if !(reg > 0.0) {
        return Err(Error::NonPositiveReg(reg));
    }
    let grid = &gamma.grid;
    if rho.grid != *grid {
        return Err(Error::GridMismatch("gamma and rho grids differ".into()));
    }
    let lattice = PathLattice::with_times(grid, rho.times.clone())?;
    let cells = grid.cells();
    let steps = lattice.steps();
    let vol = grid.cell_volume();
    let dt = 1.0 / steps as f64;
    if lattice
        .times
        .windows(2)
        .any(|w| ((w[1] - w[0]) - dt).abs() > 1e-12)
    {
        return Err(Error::Config(
            "entropic solver requires a uniform time grid".into(),
        ));
    }

    let kernel: Vec<f64> = (0..cells * cells)
        .map(|k| (-lattice.step_cost(0, k / cells, k % cells) / reg).exp())
        .collect();
    let mut chain = ChainFlow {
        cells,
        steps,
        kernel,
        endpoint_scaling: vec![1.0; cells * cells],
        interior_scalings: vec![vec![1.0; cells]; steps.saturating_sub(1)],
    };
    let targets: Vec<Vec<f64>> = (1..steps)
        .map(|t| rho.frames[t].iter().map(|d| d * vol).collect())
        .collect();

    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        // endpoint projection
        let w = chain.backward(0);
        for k in 0..cells * cells {
            chain.endpoint_scaling[k] = if gamma.mass[k] > 0.0 {
                if w[k] <= 0.0 {
                    return Err(Error::NonConvergence {
                        iters: iterations,
                        residual: w[k],
                    });
                }
                gamma.mass[k] / w[k]
            } else {
                0.0
            };
        }
        // interior projections, one marginal at a time
        for t in 1..steps {
            let current = chain.interior_marginal(t);
            for c in 0..cells {
                if current[c] > 0.0 {
                    chain.interior_scalings[t - 1][c] *= targets[t - 1][c] / current[c];
                } else if targets[t - 1][c] > 1e-15 {
                    return Err(Error::NonConvergence {
                        iters: iterations,
                        residual: targets[t - 1][c],
                    });
                }
            }
        }
        // residuals after the sweep
        let joint = chain.endpoint_joint();
        let mut worst: f64 = joint
            .iter()
            .zip(&gamma.mass)
            .map(|(a, b)| (a - b).abs())
            .sum();
        for t in 1..steps {
            let m = chain.interior_marginal(t);
            let l1: f64 = m
                .iter()
                .zip(&targets[t - 1])
                .map(|(a, b)| (a - b).abs())
                .sum();
            worst = worst.max(l1);
        }
        residual = worst;
        if residual < tol {
            converged = true;
            break;
        }
    }

    let mut pressure_frames = Vec::with_capacity(steps.saturating_sub(1));
    for t in 1..steps {
        let frame: Vec<f64> = chain.interior_scalings[t - 1]
            .iter()
            .map(|a| reg * a.max(1e-300).ln() / dt)
            .collect();
        pressure_frames.push(frame);
    }
    let pressure = PressureField::from_duals(&lattice, pressure_frames);

    let flow = GeneralizedFlow {
        lattice,
        repr: FlowRepr::Chain(chain),
    };
    let action = flow_action(&flow);
    Ok(EntropicSolution {
        action,
        flow,
        pressure,
        stats: EntropicStats {
            iterations,
            converged,
            marginal_residual: residual,
        },
    })
}

/// Least-action (complementary slackness) report: every charged path must
/// minimize action minus potential among paths sharing its endpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeastActionReport {
    /// Worst excess of a charged path over its same-endpoint minimum.
    pub worst_charged_slack: f64,
    /// Smallest slack over uncharged paths (>= 0 at optimality).
    pub min_uncharged_slack: f64,
    pub charged_paths: usize,
    pub pass: bool,
}

/// Verify the Lagrange least-action principle for an exact solution by
/// exhaustive same-endpoint enumeration: the reduced cost of a path is its
/// action minus the summed interior potentials minus the endpoint dual.
pub fn verify_least_action(sol: &ExactSolution, tol: f64) -> Result<LeastActionReport> {
    let lattice = &sol.flow.lattice;
    let cells = lattice.grid.cells();
    let steps = lattice.steps();
    let paths = enumerate_paths(cells, steps + 1, DEFAULT_ENUMERATION_BUDGET)?;

    // potential of a path: sum over interior times of p * weight
    let potential = |p: &[u16]| -> f64 {
        (1..steps)
            .map(|t| sol.pressure.frames[t - 1][p[t] as usize] * sol.pressure.weights[t - 1])
            .sum()
    };
    // per-endpoint-pair minimum of action - potential
    let mut best = vec![f64::INFINITY; cells * cells];
    for p in &paths {
        let v = lattice.path_action(p) - potential(p);
        let key = p[0] as usize * cells + p[steps] as usize;
        if v < best[key] {
            best[key] = v;
        }
    }
    let FlowRepr::Explicit(ex) = &sol.flow.repr else {
        return Err(Error::Config(
            "least-action check needs an explicit flow".into(),
        ));
    };
    let charged: std::collections::BTreeSet<&[u16]> =
        ex.paths.iter().map(|(p, _)| p.as_slice()).collect();
    let mut worst_charged: f64 = 0.0;
    let mut min_uncharged = f64::INFINITY;
    for p in &paths {
        let key = p[0] as usize * cells + p[steps] as usize;
        let slack = lattice.path_action(p) - potential(p) - best[key];
        if charged.contains(p.as_slice()) {
            worst_charged = worst_charged.max(slack);
        } else {
            min_uncharged = min_uncharged.min(slack);
        }
    }
    Ok(LeastActionReport {
        worst_charged_slack: worst_charged,
        min_uncharged_slack: min_uncharged,
        charged_paths: ex.paths.len(),
        pass: worst_charged <= tol,
    })
}

/// Multiplier gap action(H) - action(gamma, rho) - <p, R - 1> where R is the
/// density of H. Weak LP duality makes this nonnegative for every flow H
/// with endpoint coupling gamma.
pub fn lagrange_gap(sol: &ExactSolution, h: &GeneralizedFlow) -> Result<f64> {
    let joint = h.endpoint_joint();
    let l1: f64 = joint
        .iter()
        .zip(&sol.gamma.mass)
        .map(|(a, b)| (a - b).abs())
        .sum();
    if l1 > 1e-7 {
        return Err(Error::MarginalMismatch(format!(
            "comparison flow endpoint coupling differs from gamma by {l1}"
        )));
    }
    if !sol.flow.lattice.same_times(&h.lattice.times) {
        return Err(Error::GridMismatch(
            "comparison flow lives on a different time grid".into(),
        ));
    }
    let density = h.density()?;
    let r_frames: Vec<Vec<f64>> = density.frames[1..density.frames.len() - 1]
        .iter()
        .map(|f| f.iter().map(|v| v - 1.0).collect())
        .collect();
    let pairing = extract_pressure_pairing(&sol.pressure, &r_frames)?;
    Ok(flow_action(h) - sol.action - pairing)
}

/// Product-form feasibility witness for (gamma, rho): endpoints from gamma,
/// interior positions drawn independently from rho at each interior time.
pub fn product_flow(
    gamma: &BistochasticMeasure,
    rho: &DensityPath,
    budget: u64,
) -> Result<GeneralizedFlow> {
    let lattice = PathLattice::with_times(&gamma.grid, rho.times.clone())?;
    let cells = gamma.grid.cells();
    let steps = lattice.steps();
    let vol = gamma.grid.cell_volume();
    let paths = enumerate_paths(cells, steps + 1, budget)?;
    let mut map = BTreeMap::new();
    for p in paths {
        let mut m = gamma.get(p[0] as usize, p[steps] as usize);
        if m <= 0.0 {
            continue;
        }
        for t in 1..steps {
            m *= rho.frames[t][p[t] as usize] * vol;
        }
        if m > 0.0 {
            map.insert(p, m);
        }
    }
    Ok(GeneralizedFlow::explicit(lattice, map))
}

/// Flow that moves every endpoint pair along the snapped minimal-image
/// straight segment. Exact (zero snapping error) whenever the interpolated
/// positions land on cell centers.
pub fn straight_line_flow(gamma: &BistochasticMeasure, steps: usize) -> Result<GeneralizedFlow> {
    let grid = &gamma.grid;
    let lattice = PathLattice::uniform(grid, steps)?;
    let cells = grid.cells();
    let mut map = BTreeMap::new();
    for i in 0..cells {
        for j in 0..cells {
            let m = gamma.get(i, j);
            if m <= 0.0 {
                continue;
            }
            let a = grid.center(i);
            let disp = min_image_disp(&a, &grid.center(j))?;
            let path: Vec<u16> = lattice
                .times
                .iter()
                .map(|&t| {
                    let pos: Vec<f64> = a.iter().zip(&disp).map(|(x, d)| x + t * d).collect();
                    grid.snap(&pos) as u16
                })
                .collect();
            *map.entry(path).or_insert(0.0) += m;
        }
    }
    Ok(GeneralizedFlow::explicit(lattice, map))
}

/// Push every path knot through x -> x + delta * xi(t, x), depositing mass
/// on neighboring cells with multilinear weights (independently per knot).
/// The density of the result is exactly the deposition push-forward of the
/// input density, which keeps it consistent with densities built the same
/// way.
pub fn perturb_flow_along_field(
    flow: &GeneralizedFlow,
    xi: &FieldPath,
    delta: f64,
) -> Result<GeneralizedFlow> {
    let lattice = &flow.lattice;
    let grid = &lattice.grid;
    if xi.grid != *grid || !lattice.same_times(&xi.times) {
        return Err(Error::GridMismatch(
            "field and flow live on different lattices".into(),
        ));
    }
    if xi.components != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            got: xi.components,
        });
    }
    let FlowRepr::Explicit(ex) = &flow.repr else {
        return Err(Error::Config("perturbation needs an explicit flow".into()));
    };
    // per-knot deposition kernels: cell -> [(cell, weight)]
    let kernels: Vec<Vec<Vec<(u16, f64)>>> = (0..lattice.times.len())
        .map(|k| {
            (0..grid.cells())
                .map(|c| {
                    let center = grid.center(c);
                    let target: Vec<f64> = (0..grid.dim())
                        .map(|axis| center[axis] + delta * xi.frames[k][c * grid.dim() + axis])
                        .collect();
                    deposit(grid, &target)
                })
                .collect()
        })
        .collect();
    let mut map: BTreeMap<Vec<u16>, f64> = BTreeMap::new();
    for (p, m) in &ex.paths {
        let mut partial: Vec<(Vec<u16>, f64)> = vec![(Vec::with_capacity(p.len()), *m)];
        for (k, &c) in p.iter().enumerate() {
            let opts = &kernels[k][c as usize];
            let mut next = Vec::with_capacity(partial.len() * opts.len());
            for (prefix, pm) in &partial {
                for &(cell, w) in opts {
                    let mut np = prefix.clone();
                    np.push(cell);
                    next.push((np, pm * w));
                }
            }
            partial = next;
        }
        for (np, nm) in partial {
            *map.entry(np).or_insert(0.0) += nm;
        }
    }
    Ok(GeneralizedFlow::explicit(lattice.clone(), map))
}

/// Multilinear deposition of a point onto neighboring cell centers.
pub fn deposit(grid: &TorusGrid, point: &[f64]) -> Vec<(u16, f64)> {
    let n = grid.cells_per_dim() as f64;
    let dim = grid.dim();
    // per axis: (lower cell, weight of lower cell)
    let mut axes: Vec<(usize, f64)> = Vec::with_capacity(dim);
    for &x in point {
        let z = x * n;
        let lower = z.floor();
        let frac = z - lower;
        let lower_cell = (lower.rem_euclid(n)) as usize;
        axes.push((lower_cell, 1.0 - frac));
    }
    let nn = grid.cells_per_dim();
    let mut out = Vec::with_capacity(1 << dim);
    for mask in 0..(1usize << dim) {
        let mut w = 1.0;
        let mut coords = Vec::with_capacity(dim);
        for (axis, &(lower, wl)) in axes.iter().enumerate() {
            if mask & (1 << axis) == 0 {
                w *= wl;
                coords.push(lower);
            } else {
                w *= 1.0 - wl;
                coords.push((lower + 1) % nn);
            }
        }
        if w > 1e-15 {
            out.push((grid.index_of(&coords) as u16, w));
        }
    }
    // merge duplicates (happens when frac is 0 on some axis)
    out.sort_unstable_by_key(|&(c, _)| c);
    out.dedup_by(|a, b| {
        if a.0 == b.0 {
            b.1 += a.1;
            true
        } else {
            false
        }
    });
    out
}
