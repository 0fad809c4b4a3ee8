//! Constructive rearrangement between density paths: solve a periodic
//! Poisson equation spectrally, flow cell centers along the pseudo-time
//! velocity grad(theta)/rho, and read off the per-time straightening maps
//! together with their regularity excess.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{e_norm, DensityPath, FieldPath};
use crate::torus::TorusGrid;
use crate::transport::w1_distance;

/// Per-time displacement fields on cell centers: the map is
/// x -> x + displacement(t, x). Frames where source and target coincide
/// carry exactly zero displacement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StraighteningMap {
    pub grid: TorusGrid,
    pub times: Vec<f64>,
    /// One displacement field per time, cells x dim, component-major.
    pub displacements: Vec<Vec<f64>>,
    /// Regularity excess of the map family relative to the identity.
    pub norm_excess: f64,
}

impl StraighteningMap {
    pub fn identity(grid: &TorusGrid, times: &[f64]) -> Self {
        StraighteningMap {
            grid: grid.clone(),
            times: times.to_vec(),
            displacements: times
                .iter()
                .map(|_| vec![0.0; grid.cells() * grid.dim()])
                .collect(),
            norm_excess: 0.0,
        }
    }

    pub fn as_field(&self) -> Result<FieldPath> {
        FieldPath::new(
            self.grid.clone(),
            self.times.clone(),
            self.grid.dim(),
            self.displacements.clone(),
        )
    }

    /// Mapped position of a cell center at frame k.
    pub fn apply(&self, k: usize, cell: usize) -> Vec<f64> {
        let dim = self.grid.dim();
        let c = self.grid.center(cell);
        (0..dim)
            .map(|a| c[a] + self.displacements[k][cell * dim + a])
            .collect()
    }

    /// Smallest determinant of the interpolated Jacobian over cell centers,
    /// positive for invertible frames.
    pub fn min_jacobian_det(&self) -> f64 {
        let grid = &self.grid;
        let dim = grid.dim();
        let h = grid.spacing();
        let mut worst = f64::INFINITY;
        for disp in &self.displacements {
            for c in 0..grid.cells() {
                // centered differences of the displacement
                let mut jac = vec![0.0; dim * dim];
                for axis in 0..dim {
                    let fwd = grid.neighbor(c, axis);
                    let mut back_coords = grid.coords_of(c);
                    back_coords[axis] =
                        (back_coords[axis] + grid.cells_per_dim() - 1) % grid.cells_per_dim();
                    let back = grid.index_of(&back_coords);
                    for comp in 0..dim {
                        jac[comp * dim + axis] =
                            (disp[fwd * dim + comp] - disp[back * dim + comp]) / (2.0 * h);
                    }
                }
                let det = match dim {
                    1 => 1.0 + jac[0],
                    2 => (1.0 + jac[0]) * (1.0 + jac[3]) - jac[1] * jac[2],
                    _ => unreachable!(),
                };
                worst = worst.min(det);
            }
        }
        worst
    }
}

fn fft_1d(data: &mut [Complex<f64>], inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(data.len())
    } else {
        planner.plan_fft_forward(data.len())
    };
    fft.process(data);
}

/// Spectral solution of the periodic Poisson equation Delta theta = h with
/// zero mean, using the exact continuum symbol -4 pi^2 |k|^2. The input is
/// projected onto zero mean; inputs whose mean exceeds 1e-9 are rejected.
pub fn poisson_solve(h: &[f64], grid: &TorusGrid) -> Result<Vec<f64>> {
    if h.len() != grid.cells() {
        return Err(Error::GridMismatch(format!(
            "field has {} cells, grid has {}",
            h.len(),
            grid.cells()
        )));
    }
    let mean = h.iter().sum::<f64>() / h.len() as f64;
    if mean.abs() > 1e-9 {
        return Err(Error::InvalidDensity(format!(
            "poisson right-hand side has mean {mean}"
        )));
    }
    let n = grid.cells_per_dim();
    let freq = |j: usize| -> f64 {
        let k = if j <= n / 2 { j as isize } else { j as isize - n as isize };
        k as f64
    };
    let two_pi = 2.0 * std::f64::consts::PI;
    match grid.dim() {
        1 => {
            let mut buf: Vec<Complex<f64>> =
                h.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
            fft_1d(&mut buf, false);
            for (j, c) in buf.iter_mut().enumerate() {
                let k2 = freq(j) * freq(j);
                *c = if k2 == 0.0 {
                    Complex::new(0.0, 0.0)
                } else {
                    *c / (-(two_pi * two_pi) * k2)
                };
            }
            fft_1d(&mut buf, true);
            Ok(buf.iter().map(|c| c.re / n as f64).collect())
        }
        2 => {
            let mut buf: Vec<Complex<f64>> =
                h.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
            // rows (axis 1 contiguous), then columns
            for row in buf.chunks_mut(n) {
                fft_1d(row, false);
            }
            let mut col = vec![Complex::new(0.0, 0.0); n];
            for j in 0..n {
                for i in 0..n {
                    col[i] = buf[i * n + j];
                }
                fft_1d(&mut col, false);
                for i in 0..n {
                    buf[i * n + j] = col[i];
                }
            }
            for i in 0..n {
                for j in 0..n {
                    let k2 = freq(i) * freq(i) + freq(j) * freq(j);
                    buf[i * n + j] = if k2 == 0.0 {
                        Complex::new(0.0, 0.0)
                    } else {
                        buf[i * n + j] / (-(two_pi * two_pi) * k2)
                    };
                }
            }
            for j in 0..n {
                for i in 0..n {
                    col[i] = buf[i * n + j];
                }
                fft_1d(&mut col, true);
                for i in 0..n {
                    buf[i * n + j] = col[i];
                }
            }
            for row in buf.chunks_mut(n) {
                fft_1d(row, true);
            }
            let scale = (n * n) as f64;
            Ok(buf.iter().map(|c| c.re / scale).collect())
        }
        _ => unreachable!(),
    }
}

/// Apply the same spectral Laplacian; used for residual checks.
pub fn spectral_laplacian(theta: &[f64], grid: &TorusGrid) -> Result<Vec<f64>> {
    let n = grid.cells_per_dim();
    let freq = |j: usize| -> f64 {
        let k = if j <= n / 2 { j as isize } else { j as isize - n as isize };
        k as f64
    };
    let two_pi = 2.0 * std::f64::consts::PI;
    match grid.dim() {
        1 => {
            let mut buf: Vec<Complex<f64>> =
                theta.iter().map(|&v| Complex::new(v, 0.0)).collect();
            fft_1d(&mut buf, false);
            for (j, c) in buf.iter_mut().enumerate() {
                *c *= -(two_pi * two_pi) * freq(j) * freq(j);
            }
            fft_1d(&mut buf, true);
            Ok(buf.iter().map(|c| c.re / n as f64).collect())
        }
        2 => {
            let mut buf: Vec<Complex<f64>> =
                theta.iter().map(|&v| Complex::new(v, 0.0)).collect();
            for row in buf.chunks_mut(n) {
                fft_1d(row, false);
            }
            let mut col = vec![Complex::new(0.0, 0.0); n];
            for j in 0..n {
                for i in 0..n {
                    col[i] = buf[i * n + j];
                }
                fft_1d(&mut col, false);
                for i in 0..n {
                    buf[i * n + j] = col[i];
                }
            }
            for i in 0..n {
                for j in 0..n {
                    let k2 = freq(i) * freq(i) + freq(j) * freq(j);
                    buf[i * n + j] *= -(two_pi * two_pi) * k2;
                }
            }
            for j in 0..n {
                for i in 0..n {
                    col[i] = buf[i * n + j];
                }
                fft_1d(&mut col, true);
                for i in 0..n {
                    buf[i * n + j] = col[i];
                }
            }
            for row in buf.chunks_mut(n) {
                fft_1d(row, true);
            }
            let scale = (n * n) as f64;
            Ok(buf.iter().map(|c| c.re / scale).collect())
        }
        _ => unreachable!(),
    }
}

/// Centered-difference gradient of a scalar grid field, cells x dim.
pub fn gradient(theta: &[f64], grid: &TorusGrid) -> Vec<f64> {
    let dim = grid.dim();
    let h = grid.spacing();
    let n = grid.cells_per_dim();
    let mut out = vec![0.0; grid.cells() * dim];
    for c in 0..grid.cells() {
        for axis in 0..dim {
            let fwd = grid.neighbor(c, axis);
            let mut bc = grid.coords_of(c);
            bc[axis] = (bc[axis] + n - 1) % n;
            let back = grid.index_of(&bc);
            out[c * dim + axis] = (theta[fwd] - theta[back]) / (2.0 * h);
        }
    }
    out
}

const DENSITY_FLOOR: f64 = 0.5;

fn check_density_pair(f: &DensityPath, g: &DensityPath) -> Result<()> {
    if f.grid != g.grid || f.times.len() != g.times.len() {
        return Err(Error::GridMismatch(
            "density paths on different grids".into(),
        ));
    }
    let fmin = f.min_value().min(g.min_value());
    if fmin < DENSITY_FLOOR {
        return Err(Error::DensityBound {
            min: fmin,
            required: DENSITY_FLOOR,
        });
    }
    let vol = f.grid.cell_volume();
    for (k, (ff, gf)) in f.frames.iter().zip(&g.frames).enumerate() {
        let mf: f64 = ff.iter().sum::<f64>() * vol;
        let mg: f64 = gf.iter().sum::<f64>() * vol;
        if (mf - mg).abs() > 1e-9 {
            return Err(Error::MarginalMismatch(format!(
                "frame {k}: masses {mf} vs {mg}"
            )));
        }
    }
    Ok(())
}

/// Pseudo-time transport velocity grad(theta)/rho(s) per time frame, where
/// Delta theta = f - g and rho(s) = (1-s) f + s g. Satisfies the discrete
/// continuity identity up to the wide-stencil Laplacian error O(spacing^2).
pub fn build_velocity(f: &DensityPath, g: &DensityPath, s: f64) -> Result<FieldPath> {
    check_density_pair(f, g)?;
    let grid = &f.grid;
    let dim = grid.dim();
    let mut frames = Vec::with_capacity(f.frames.len());
    for (ff, gf) in f.frames.iter().zip(&g.frames) {
        let h: Vec<f64> = ff.iter().zip(gf).map(|(a, b)| a - b).collect();
        let theta = poisson_solve(&h, grid)?;
        let grad = gradient(&theta, grid);
        let mut v = vec![0.0; grid.cells() * dim];
        for c in 0..grid.cells() {
            let rho = (1.0 - s) * ff[c] + s * gf[c];
            for a in 0..dim {
                v[c * dim + a] = grad[c * dim + a] / rho;
            }
        }
        frames.push(v);
    }
    FieldPath::new(grid.clone(), f.times.clone(), dim, frames)
}

/// Periodic multilinear interpolation of a vector grid field at a point.
fn interp_field(values: &[f64], dim: usize, grid: &TorusGrid, point: &[f64]) -> Vec<f64> {
    let stencil = crate::brenier::deposit(grid, point);
    let mut out = vec![0.0; dim];
    for &(cell, w) in &stencil {
        for a in 0..dim {
            out[a] += w * values[cell as usize * dim + a];
        }
    }
    out
}

fn frames_equal(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-14)
}

/// Integrate the pseudo-time flow of grad(theta)/rho(s) from every cell
/// center with the classical 4th-order scheme, halving the step until the
/// map's norm excess stabilizes below 1e-6. Frames with f = g short-circuit
/// to the exact identity.
pub fn flow_map(f: &DensityPath, g: &DensityPath, ode_steps: usize) -> Result<StraighteningMap> {
    check_density_pair(f, g)?;
    if ode_steps < 8 {
        return Err(Error::Config(format!(
            "ode_steps must be at least 8, got {ode_steps}"
        )));
    }
    let mut steps = ode_steps;
    let mut prev: Option<StraighteningMap> = None;
    loop {
        let map = flow_map_fixed(f, g, steps)?;
        if let Some(p) = &prev {
            if (p.norm_excess - map.norm_excess).abs() < 1e-6 {
                return Ok(map);
            }
        }
        prev = Some(map);
        steps *= 2;
        if steps > ode_steps * 1024 {
            return Err(Error::NonConvergence {
                iters: steps,
                residual: f64::NAN,
            });
        }
    }
}

fn flow_map_fixed(f: &DensityPath, g: &DensityPath, steps: usize) -> Result<StraighteningMap> {
    let grid = &f.grid;
    let dim = grid.dim();
    let cells = grid.cells();
    let ds = 1.0 / steps as f64;
    let mut displacements = Vec::with_capacity(f.frames.len());
    for (ff, gf) in f.frames.iter().zip(&g.frames) {
        if frames_equal(ff, gf) {
            displacements.push(vec![0.0; cells * dim]);
            continue;
        }
        let h: Vec<f64> = ff.iter().zip(gf).map(|(a, b)| a - b).collect();
        let theta = poisson_solve(&h, grid)?;
        let grad = gradient(&theta, grid);
        // velocity grid at pseudo-time s
        let v_grid = |s: f64| -> Vec<f64> {
            let mut v = vec![0.0; cells * dim];
            for c in 0..cells {
                let rho = (1.0 - s) * ff[c] + s * gf[c];
                for a in 0..dim {
                    v[c * dim + a] = grad[c * dim + a] / rho;
                }
            }
            v
        };
        let mut pos: Vec<Vec<f64>> = (0..cells).map(|c| grid.center(c)).collect();
        for k in 0..steps {
            let s = k as f64 * ds;
            let v1 = v_grid(s);
            let v2 = v_grid(s + 0.5 * ds);
            let v4 = v_grid(s + ds);
            for p in pos.iter_mut() {
                let k1 = interp_field(&v1, dim, grid, p);
                let p2: Vec<f64> = p
                    .iter()
                    .zip(&k1)
                    .map(|(x, k)| x + 0.5 * ds * k)
                    .collect();
                let k2 = interp_field(&v2, dim, grid, &p2);
                let p3: Vec<f64> = p
                    .iter()
                    .zip(&k2)
                    .map(|(x, k)| x + 0.5 * ds * k)
                    .collect();
                let k3 = interp_field(&v2, dim, grid, &p3);
                let p4: Vec<f64> = p.iter().zip(&k3).map(|(x, k)| x + ds * k).collect();
                let k4 = interp_field(&v4, dim, grid, &p4);
                for a in 0..dim {
                    let delta = ds * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]) / 6.0;
                    if delta.abs() > 0.25 {
                        return Err(Error::OdeStepTooCoarse { disp: delta.abs() });
                    }
                    p[a] += delta;
                }
            }
        }
        let mut disp = vec![0.0; cells * dim];
        for c in 0..cells {
            let center = grid.center(c);
            for a in 0..dim {
                let d = pos[c][a] - center[a];
                if d.abs() >= 0.5 {
                    return Err(Error::OdeStepTooCoarse { disp: d.abs() });
                }
                disp[c * dim + a] = d;
            }
        }
        displacements.push(disp);
    }
    let mut map = StraighteningMap {
        grid: grid.clone(),
        times: f.times.clone(),
        displacements,
        norm_excess: 0.0,
    };
    map.norm_excess = e_norm(&map.as_field()?)?;
    Ok(map)
}

/// Per-frame push-forward gaps of f through the map against g.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PushforwardReport {
    /// Per-frame 1-Wasserstein gap (torus ground distance).
    pub w1: Vec<f64>,
    /// Per-frame L1 mass gap.
    pub tv: Vec<f64>,
    pub max_w1: f64,
    pub deposited_mass_error: f64,
}

/// Push f-weighted cell masses through the map with area-weighted deposition
/// and compare against g, frame by frame.
pub fn verify_pushforward(
    map: &StraighteningMap,
    f: &DensityPath,
    g: &DensityPath,
) -> Result<PushforwardReport> {
    if f.grid != map.grid || g.grid != map.grid {
        return Err(Error::GridMismatch("map and densities differ".into()));
    }
    let grid = &map.grid;
    let vol = grid.cell_volume();
    let mut w1 = Vec::new();
    let mut tv = Vec::new();
    let mut mass_err: f64 = 0.0;
    for (k, (ff, gf)) in f.frames.iter().zip(&g.frames).enumerate() {
        let mut pushed = vec![0.0; grid.cells()];
        for c in 0..grid.cells() {
            let target = map.apply(k, c);
            for (cell, w) in crate::brenier::deposit(grid, &target) {
                pushed[cell as usize] += w * ff[c] * vol;
            }
        }
        let total: f64 = pushed.iter().sum();
        mass_err = mass_err.max((total - 1.0).abs());
        let target_mass: Vec<f64> = gf.iter().map(|d| d * vol).collect();
        let l1: f64 = pushed
            .iter()
            .zip(&target_mass)
            .map(|(a, b)| (a - b).abs())
            .sum();
        let dist = |i: usize, j: usize| grid.cell_distance(i, j);
        w1.push(w1_distance(&pushed, &target_mass, &dist)?);
        tv.push(l1);
    }
    let max_w1 = w1.iter().cloned().fold(0.0, f64::max);
    Ok(PushforwardReport {
        w1,
        tv,
        max_w1,
        deposited_mass_error: mass_err,
    })
}
