//! Flat-torus geometry: uniform grids on [0,1)^d with periodic wraparound,
//! minimal-image arithmetic, and the compactly supported mollifier family
//! used everywhere densities or fields get regularized.
//!
//! Cell centers sit at k/n per axis and cells are indexed row-major over
//! axes, so `index = i0 * n + i1` in dimension 2.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform periodic grid on the d-dimensional unit torus (d = 1 or 2).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusGrid {
    dim: usize,
    cells_per_dim: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, cells_per_dim: usize) -> Result<Self> {
        if dim == 0 || dim > 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: dim,
            });
        }
        if cells_per_dim < 2 {
            return Err(Error::GridMismatch(format!(
                "need at least 2 cells per axis, got {cells_per_dim}"
            )));
        }
        Ok(TorusGrid {
            dim,
            cells_per_dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells_per_dim(&self) -> usize {
        self.cells_per_dim
    }

    /// Grid spacing 1/n, identical on every axis.
    pub fn spacing(&self) -> f64 {
        1.0 / self.cells_per_dim as f64
    }

    /// Total number of cells, n^d.
    pub fn cells(&self) -> usize {
        self.cells_per_dim.pow(self.dim as u32)
    }

    /// Volume of one cell, spacing^d.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Center of the cell with the given row-major index.
    pub fn center(&self, index: usize) -> Vec<f64> {
        let n = self.cells_per_dim;
        let mut out = vec![0.0; self.dim];
        let mut rest = index;
        for axis in (0..self.dim).rev() {
            out[axis] = (rest % n) as f64 / n as f64;
            rest /= n;
        }
        out
    }

    /// Row-major index from per-axis integer coordinates (wrapped mod n).
    pub fn index_of(&self, coords: &[usize]) -> usize {
        let n = self.cells_per_dim;
        coords.iter().fold(0, |acc, &c| acc * n + (c % n))
    }

    /// Per-axis integer coordinates of a cell index.
    pub fn coords_of(&self, index: usize) -> Vec<usize> {
        let n = self.cells_per_dim;
        let mut out = vec![0usize; self.dim];
        let mut rest = index;
        for axis in (0..self.dim).rev() {
            out[axis] = rest % n;
            rest /= n;
        }
        out
    }

    /// Index of the neighbor one cell over along `axis` (+1 with wraparound).
    pub fn neighbor(&self, index: usize, axis: usize) -> usize {
        let n = self.cells_per_dim;
        let mut coords = self.coords_of(index);
        coords[axis] = (coords[axis] + 1) % n;
        self.index_of(&coords)
    }

    /// Shift a cell index by an integer offset per axis (wrapped).
    pub fn shift(&self, index: usize, offset: &[isize]) -> usize {
        let n = self.cells_per_dim as isize;
        let coords = self.coords_of(index);
        let shifted: Vec<usize> = coords
            .iter()
            .zip(offset)
            .map(|(&c, &o)| (c as isize + o).rem_euclid(n) as usize)
            .collect();
        self.index_of(&shifted)
    }

    /// Cell whose center is nearest to the point. Ties round up per axis
    /// (half-up, not half-away-from-zero, so snapping commutes with integer
    /// cell translations across the wrap).
    pub fn snap(&self, point: &[f64]) -> usize {
        let n = self.cells_per_dim as f64;
        let coords: Vec<usize> = point
            .iter()
            .map(|&x| {
                let k = (x * n + 0.5).floor();
                (k.rem_euclid(n)) as usize
            })
            .collect();
        self.index_of(&coords)
    }

    /// The uniform density (value 1 in every cell).
    pub fn uniform_density(&self) -> Vec<f64> {
        vec![1.0; self.cells()]
    }

    /// Geodesic distance between two cell indices.
    pub fn cell_distance(&self, a: usize, b: usize) -> f64 {
        // cells are on-grid so the unchecked path is fine
        let pa = self.center(a);
        let pb = self.center(b);
        geodesic_dist_unchecked(&pa, &pb)
    }
}

/// Representative of b − a in [−1/2, 1/2)^d.
pub fn min_image_disp(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let mut d = (y - x).rem_euclid(1.0);
            if d >= 0.5 {
                d -= 1.0;
            }
            d
        })
        .collect())
}

fn geodesic_dist_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = (x - y).abs();
            let d = d.min(1.0 - d);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Geodesic distance on the torus: per-axis minimal image, Euclidean combine.
pub fn geodesic_dist(a: &[f64], b: &[f64], grid: &TorusGrid) -> Result<f64> {
    if a.len() != grid.dim() || b.len() != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            got: if a.len() != grid.dim() { a.len() } else { b.len() },
        });
    }
    Ok(geodesic_dist_unchecked(a, b))
}

/// Compactly supported smooth bump, tensorized per axis and scaled so that
/// psi^eps(v) = psi(v/eps)/eps^d has support in [-eps/4, eps/4]^d.
///
/// The profile is exp(-1/(1-(4v)^2)) per axis, which vanishes with all
/// derivatives at |v| = 1/4. Discrete weights are the kernel sampled at cell
/// displacements and renormalized to unit sum, so mass conservation is exact.
/// When eps/4 falls below the grid spacing only the center cell survives and
/// the kernel degenerates to the identity; this is documented behavior, not
/// an error.
#[derive(Debug, Clone)]
pub struct Mollifier {
    grid: TorusGrid,
    epsilon: f64,
    /// Sparse support: (per-axis integer offset, weight), weights sum to 1.
    support: Vec<(Vec<isize>, f64)>,
}

fn bump_axis(v: f64) -> f64 {
    let s = 4.0 * v;
    if s.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s * s)).exp()
    }
}

impl Mollifier {
    pub fn new(grid: &TorusGrid, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 0.25) {
            return Err(Error::EpsilonOutOfRange(epsilon));
        }
        let n = grid.cells_per_dim() as isize;
        let spacing = grid.spacing();
        // offsets with |offset*spacing| <= eps/4 per axis
        let reach = (epsilon / 4.0 / spacing).floor() as isize;
        let reach = reach.min(n / 2);
        let axis_offsets: Vec<isize> = (-reach..=reach).collect();
        let mut support = Vec::new();
        let mut total = 0.0;
        let mut push = |offset: Vec<isize>| {
            let w: f64 = offset
                .iter()
                .map(|&o| bump_axis(o as f64 * spacing / epsilon))
                .product();
            if w > 0.0 {
                total += w;
                support.push((offset, w));
            }
        };
        match grid.dim() {
            1 => {
                for &o in &axis_offsets {
                    push(vec![o]);
                }
            }
            2 => {
                for &o0 in &axis_offsets {
                    for &o1 in &axis_offsets {
                        push(vec![o0, o1]);
                    }
                }
            }
            _ => unreachable!(),
        }
        for (_, w) in support.iter_mut() {
            *w /= total;
        }
        Ok(Mollifier {
            grid: grid.clone(),
            epsilon,
            support,
        })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Sparse support as (offset, weight) pairs; weights sum to 1 exactly
    /// after renormalization.
    pub fn support(&self) -> &[(Vec<isize>, f64)] {
        &self.support
    }

    /// True when the kernel has collapsed to the single center cell.
    pub fn is_identity(&self) -> bool {
        self.support.len() == 1
    }

    /// Discrete second moment, sum of w * |offset*spacing|^2.
    pub fn second_moment(&self) -> f64 {
        let spacing = self.grid.spacing();
        self.support
            .iter()
            .map(|(off, w)| {
                let r2: f64 = off
                    .iter()
                    .map(|&o| {
                        let d = o as f64 * spacing;
                        d * d
                    })
                    .sum();
                w * r2
            })
            .sum()
    }
}

/// Circular convolution of a grid density with the mollifier weights.
///
/// Preserves nonnegativity exactly and total mass to rounding; a uniform
/// input comes back uniform because the weights sum to one.
pub fn mollify_density(rho: &[f64], kernel: &Mollifier) -> Result<Vec<f64>> {
    let grid = kernel.grid();
    if rho.len() != grid.cells() {
        return Err(Error::GridMismatch(format!(
            "density has {} cells, kernel grid has {}",
            rho.len(),
            grid.cells()
        )));
    }
    let mut out = vec![0.0; rho.len()];
    for (offset, w) in kernel.support() {
        let neg: Vec<isize> = offset.iter().map(|&o| -o).collect();
        for (c, o) in out.iter_mut().enumerate() {
            *o += w * rho[grid.shift(c, &neg)];
        }
    }
    Ok(out)
}

/// Same circular convolution applied to each component of a vector field
/// stored component-major per cell.
pub fn mollify_field(values: &[f64], components: usize, kernel: &Mollifier) -> Result<Vec<f64>> {
    let grid = kernel.grid();
    if values.len() != grid.cells() * components {
        return Err(Error::GridMismatch(format!(
            "field has {} values, expected {}",
            values.len(),
            grid.cells() * components
        )));
    }
    let mut out = vec![0.0; values.len()];
    for (offset, w) in kernel.support() {
        let neg: Vec<isize> = offset.iter().map(|&o| -o).collect();
        for c in 0..grid.cells() {
            let src = grid.shift(c, &neg);
            for k in 0..components {
                out[c * components + k] += w * values[src * components + k];
            }
        }
    }
    Ok(out)
}
