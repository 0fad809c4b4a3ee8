//! Time-indexed grid fields and densities, the regularity norm used by all
//! stability estimates, and the space-time regularization that pads paths
//! with uniform (resp. zero) ramps before mollifying the interior.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus::{mollify_density, mollify_field, Mollifier, TorusGrid};

const MASS_TOL: f64 = 1e-9;

/// A path of probability densities on the grid: T+1 frames at the given
/// times, each nonnegative with unit mass (density values, so the uniform
/// frame is identically 1).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityPath {
    pub grid: TorusGrid,
    pub times: Vec<f64>,
    pub frames: Vec<Vec<f64>>,
}

impl DensityPath {
    pub fn new(grid: TorusGrid, times: Vec<f64>, frames: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() != frames.len() || times.len() < 2 {
            return Err(Error::InvalidDensity(format!(
                "{} times vs {} frames",
                times.len(),
                frames.len()
            )));
        }
        let vol = grid.cell_volume();
        for (k, f) in frames.iter().enumerate() {
            if f.len() != grid.cells() {
                return Err(Error::GridMismatch(format!(
                    "frame {k} has {} cells, grid has {}",
                    f.len(),
                    grid.cells()
                )));
            }
            if f.iter().any(|&v| v < -MASS_TOL) {
                return Err(Error::InvalidDensity(format!("frame {k} has negative values")));
            }
            let mass: f64 = f.iter().sum::<f64>() * vol;
            if (mass - 1.0).abs() > MASS_TOL {
                return Err(Error::InvalidDensity(format!(
                    "frame {k} has mass {mass}, expected 1"
                )));
            }
        }
        Ok(DensityPath { grid, times, frames })
    }

    /// Uniform path on T+1 evenly spaced times.
    pub fn uniform(grid: &TorusGrid, steps: usize) -> Self {
        let times = uniform_times(steps);
        let frames = times.iter().map(|_| grid.uniform_density()).collect();
        DensityPath {
            grid: grid.clone(),
            times,
            frames,
        }
    }

    /// Admissible paths additionally have uniform first and last frames.
    pub fn is_admissible(&self) -> bool {
        let uni = |f: &[f64]| f.iter().all(|&v| (v - 1.0).abs() < MASS_TOL);
        uni(&self.frames[0]) && uni(self.frames.last().unwrap())
    }

    pub fn min_value(&self) -> f64 {
        self.frames
            .iter()
            .flat_map(|f| f.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    /// View the density path as a scalar field path (for norm evaluation).
    pub fn as_field(&self) -> FieldPath {
        FieldPath {
            grid: self.grid.clone(),
            times: self.times.clone(),
            components: 1,
            frames: self.frames.clone(),
            tau: None,
        }
    }
}

/// Evenly spaced times {0, 1/T, ..., 1}.
pub fn uniform_times(steps: usize) -> Vec<f64> {
    (0..=steps).map(|k| k as f64 / steps as f64).collect()
}

/// A time-indexed scalar or vector field on the grid. Frames store
/// `components` values per cell, component-major. `tau`, when set, asserts
/// membership in the subspace of fields vanishing on [0,tau] and [1-tau,1].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldPath {
    pub grid: TorusGrid,
    pub times: Vec<f64>,
    pub components: usize,
    pub frames: Vec<Vec<f64>>,
    pub tau: Option<f64>,
}

impl FieldPath {
    pub fn new(
        grid: TorusGrid,
        times: Vec<f64>,
        components: usize,
        frames: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if times.len() != frames.len() {
            return Err(Error::GridMismatch(format!(
                "{} times vs {} frames",
                times.len(),
                frames.len()
            )));
        }
        for f in &frames {
            if f.len() != grid.cells() * components {
                return Err(Error::GridMismatch(format!(
                    "frame has {} values, expected {}",
                    f.len(),
                    grid.cells() * components
                )));
            }
        }
        Ok(FieldPath {
            grid,
            times,
            components,
            frames,
            tau: None,
        })
    }

    pub fn zero(grid: &TorusGrid, steps: usize, components: usize) -> Self {
        let times = uniform_times(steps);
        let frames = times
            .iter()
            .map(|_| vec![0.0; grid.cells() * components])
            .collect();
        FieldPath {
            grid: grid.clone(),
            times,
            components,
            frames,
            tau: None,
        }
    }

    /// Mark the path as vanishing on the tau-ramps, verifying it does.
    pub fn with_tau(mut self, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 0.25) {
            return Err(Error::TauOutOfRange(tau));
        }
        for (t, f) in self.times.iter().zip(&self.frames) {
            if (*t <= tau + 1e-12 || *t >= 1.0 - tau - 1e-12)
                && f.iter().any(|&v| v.abs() > 1e-12)
            {
                return Err(Error::InvalidDensity(format!(
                    "field does not vanish at ramp time {t}"
                )));
            }
        }
        self.tau = Some(tau);
        Ok(self)
    }

    pub fn sup_norm(&self) -> f64 {
        let comps = self.components;
        self.frames
            .iter()
            .flat_map(|f| {
                f.chunks(comps)
                    .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            })
            .fold(0.0, f64::max)
    }

    /// Pointwise product of two scalar field paths on the same grids.
    pub fn scalar_product(&self, other: &FieldPath) -> Result<FieldPath> {
        if self.components != 1 || other.components != 1 {
            return Err(Error::GridMismatch("scalar_product needs scalar fields".into()));
        }
        if self.grid != other.grid || self.times.len() != other.times.len() {
            return Err(Error::GridMismatch("field paths on different grids".into()));
        }
        let frames = self
            .frames
            .iter()
            .zip(&other.frames)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).collect())
            .collect();
        FieldPath::new(self.grid.clone(), self.times.clone(), 1, frames)
    }
}

/// Sup-in-time discrete Lipschitz constant plus the L2-in-time norm of the
/// sup-in-space forward time difference quotient.
///
/// Zero exactly on paths constant in both time and space; a norm on paths
/// that vanish at the time boundary or have zero mean.
pub fn e_norm(f: &FieldPath) -> Result<f64> {
    if f.times.len() < 2 {
        return Err(Error::SingleFrame);
    }
    Ok(lipschitz_part(f) + time_part(f))
}

/// Max over times of the discrete Lipschitz constant: adjacent-cell
/// differences (with wraparound) divided by the spacing.
pub fn lipschitz_part(f: &FieldPath) -> f64 {
    let grid = &f.grid;
    let spacing = grid.spacing();
    let comps = f.components;
    let mut lip: f64 = 0.0;
    for frame in &f.frames {
        for c in 0..grid.cells() {
            for axis in 0..grid.dim() {
                let nb = grid.neighbor(c, axis);
                let mut d2 = 0.0;
                for k in 0..comps {
                    let d = frame[nb * comps + k] - frame[c * comps + k];
                    d2 += d * d;
                }
                lip = lip.max(d2.sqrt() / spacing);
            }
        }
    }
    lip
}

/// L2-in-time of the max-over-space forward difference quotient, with the
/// interval lengths as quadrature weights.
pub fn time_part(f: &FieldPath) -> f64 {
    let comps = f.components;
    let mut acc = 0.0;
    for k in 0..f.times.len() - 1 {
        let dt = f.times[k + 1] - f.times[k];
        if dt <= 0.0 {
            continue;
        }
        let a = &f.frames[k];
        let b = &f.frames[k + 1];
        let mut sup: f64 = 0.0;
        for c in 0..f.grid.cells() {
            let mut d2 = 0.0;
            for j in 0..comps {
                let d = b[c * comps + j] - a[c * comps + j];
                d2 += d * d;
            }
            sup = sup.max(d2.sqrt() / dt);
        }
        acc += sup * sup * dt;
    }
    acc.sqrt()
}

/// One frame of the regularized density path at an arbitrary time: uniform
/// on the ramps, nearest-frame mollification of the rescaled interior time
/// elsewhere. Nearest-frame selection (rather than interpolation) keeps
/// frames exactly mass-1.
pub fn regularized_density_frame(
    rho: &DensityPath,
    kernel: &Mollifier,
    eps: f64,
    t: f64,
) -> Result<Vec<f64>> {
    if !(eps > 0.0 && eps <= 0.25) {
        return Err(Error::EpsilonOutOfRange(eps));
    }
    if t <= eps + 1e-12 || t >= 1.0 - eps - 1e-12 {
        return Ok(rho.grid.uniform_density());
    }
    let s = (t - eps) / (1.0 - 2.0 * eps);
    let steps = rho.times.len() - 1;
    let k = ((s * steps as f64).round() as usize).min(steps);
    mollify_density(&rho.frames[k], kernel)
}

/// Regularize a density path: uniform ramps of width eps, mollified and
/// time-rescaled interior, on the same time grid as the input.
pub fn regularize_density(rho: &DensityPath, eps: f64) -> Result<DensityPath> {
    if !(eps > 0.0 && eps <= 0.25) {
        return Err(Error::EpsilonOutOfRange(eps));
    }
    let kernel = Mollifier::new(&rho.grid, eps)?;
    let frames: Result<Vec<Vec<f64>>> = rho
        .times
        .iter()
        .map(|&t| regularized_density_frame(rho, &kernel, eps, t))
        .collect();
    DensityPath::new(rho.grid.clone(), rho.times.clone(), frames?)
}

/// Regularize a field path: zero ramps of width eps, mollified and
/// time-rescaled interior. A field vanishing on tau-ramps with tau >= eps
/// stays in that subspace.
pub fn regularize_field(xi: &FieldPath, eps: f64) -> Result<FieldPath> {
    if !(eps > 0.0 && eps <= 0.25) {
        return Err(Error::EpsilonOutOfRange(eps));
    }
    let kernel = Mollifier::new(&xi.grid, eps)?;
    let steps = xi.times.len() - 1;
    let frames: Result<Vec<Vec<f64>>> = xi
        .times
        .iter()
        .map(|&t| {
            if t <= eps + 1e-12 || t >= 1.0 - eps - 1e-12 {
                Ok(vec![0.0; xi.grid.cells() * xi.components])
            } else {
                let s = (t - eps) / (1.0 - 2.0 * eps);
                let k = ((s * steps as f64).round() as usize).min(steps);
                mollify_field(&xi.frames[k], xi.components, &kernel)
            }
        })
        .collect();
    let mut out = FieldPath::new(xi.grid.clone(), xi.times.clone(), xi.components, frames?)?;
    if let Some(tau) = xi.tau {
        if tau >= eps {
            out = out.with_tau(tau)?;
        }
    }
    Ok(out)
}

/// Leibniz-form product bound: returns N(ab) and checks
/// N(ab) <= C (|a|_inf N(b) + |b|_inf N(a)) with C = 1.
///
/// The product rule for finite differences gives this bound exactly; the
/// fully multiplicative variant N(ab) <= M N(a) N(b) fails for constants
/// (N(1) = 0), so the Leibniz form is the one implemented and tested.
pub fn lipschitz_product_bound(a: &FieldPath, b: &FieldPath) -> Result<f64> {
    let prod = a.scalar_product(b)?;
    let n_ab = e_norm(&prod)?;
    let bound = a.sup_norm() * e_norm(b)? + b.sup_norm() * e_norm(a)?;
    debug_assert!(
        n_ab <= bound + 1e-9,
        "product bound violated: {n_ab} > {bound}"
    );
    if n_ab > bound + 1e-9 {
        return Err(Error::InvalidDensity(format!(
            "Leibniz product bound violated: N(ab)={n_ab} > {bound}"
        )));
    }
    Ok(n_ab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid16() -> TorusGrid {
        TorusGrid::new(1, 16).unwrap()
    }

    #[test]
    fn e_norm_constant_is_zero() {
        let g = grid16();
        let times = uniform_times(4);
        let frames = times.iter().map(|_| vec![5.0; 16]).collect();
        let f = FieldPath::new(g, times, 1, frames).unwrap();
        assert_eq!(e_norm(&f).unwrap(), 0.0);
    }

    #[test]
    fn e_norm_linear_in_time_is_one() {
        let g = grid16();
        let times = uniform_times(4);
        let frames = times.iter().map(|&t| vec![t; 16]).collect();
        let f = FieldPath::new(g, times, 1, frames).unwrap();
        assert!((e_norm(&f).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn e_norm_sine_matches_finite_difference_oracle() {
        // f(t,x) = sin(2 pi x) on n=16, T=4: time part 0, Lipschitz part
        // 16 * max_k |sin(2pi(k+1)/16) - sin(2pi k/16)| = 16 * sin(pi/8) * ...
        let g = grid16();
        let times = uniform_times(4);
        let frame: Vec<f64> = (0..16)
            .map(|k| (2.0 * std::f64::consts::PI * k as f64 / 16.0).sin())
            .collect();
        let frames = times.iter().map(|_| frame.clone()).collect();
        let f = FieldPath::new(g, times, 1, frames).unwrap();
        // independent oracle: direct evaluation of both terms
        let mut lip: f64 = 0.0;
        for k in 0..16 {
            let d = (frame[(k + 1) % 16] - frame[k]).abs() * 16.0;
            lip = lip.max(d);
        }
        let expected = lip; // time part is exactly 0
        let got = e_norm(&f).unwrap();
        assert!((got - expected).abs() < 1e-12);
        // continuum Lipschitz constant of sin(2 pi x) is 2 pi
        assert!((got - 2.0 * std::f64::consts::PI).abs() < 0.2);
    }

    #[test]
    fn e_norm_single_frame_rejected() {
        let g = grid16();
        let f = FieldPath::new(g, vec![0.0], 1, vec![vec![0.0; 16]]).unwrap();
        assert!(matches!(e_norm(&f), Err(Error::SingleFrame)));
    }

    #[test]
    fn regularize_density_uniform_fixed_and_ramps_exact() {
        let g = TorusGrid::new(1, 8).unwrap();
        let rho = DensityPath::uniform(&g, 8);
        let out = regularize_density(&rho, 0.125).unwrap();
        for f in &out.frames {
            for v in f {
                assert!((v - 1.0).abs() < 1e-14);
            }
        }
        // perturbed middle frame: ramps must be exactly uniform
        let mut frames: Vec<Vec<f64>> = (0..=8).map(|_| g.uniform_density()).collect();
        frames[4] = vec![1.5, 0.5, 1.0, 1.0, 1.5, 0.5, 1.0, 1.0];
        let rho = DensityPath::new(g.clone(), uniform_times(8), frames).unwrap();
        let out = regularize_density(&rho, 0.125).unwrap();
        for (k, &t) in out.times.iter().enumerate() {
            if t <= 0.125 + 1e-12 || t >= 0.875 - 1e-12 {
                assert!(out.frames[k].iter().all(|&v| (v - 1.0).abs() < 1e-14), "t={t}");
            }
        }
        // query strictly inside the first ramp
        let kernel = Mollifier::new(&g, 0.125).unwrap();
        let f = regularized_density_frame(&rho, &kernel, 0.125, 0.0625).unwrap();
        assert!(f.iter().all(|&v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn regularize_density_matches_composed_oracle() {
        // independent composition of the time-rescaling and convolution
        let g = TorusGrid::new(1, 8).unwrap();
        let mut frames: Vec<Vec<f64>> = (0..=8).map(|_| g.uniform_density()).collect();
        frames[4] = vec![1.5, 0.5, 1.0, 1.0, 1.5, 0.5, 1.0, 1.0];
        let rho = DensityPath::new(g.clone(), uniform_times(8), frames.clone()).unwrap();
        let eps = 0.125;
        let out = regularize_density(&rho, eps).unwrap();
        let kernel = Mollifier::new(&g, eps).unwrap();
        for (k, &t) in rho.times.iter().enumerate() {
            let expect = if t <= eps + 1e-12 || t >= 1.0 - eps - 1e-12 {
                g.uniform_density()
            } else {
                let s = (t - eps) / (1.0 - 2.0 * eps);
                let j = (s * 8.0).round() as usize;
                mollify_density(&frames[j], &kernel).unwrap()
            };
            for (a, b) in out.frames[k].iter().zip(&expect) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn regularize_density_preserves_lower_bound() {
        let g = TorusGrid::new(1, 8).unwrap();
        let mut frames: Vec<Vec<f64>> = (0..=8).map(|_| g.uniform_density()).collect();
        frames[3] = vec![1.25, 0.75, 1.0, 1.0, 1.25, 0.75, 1.0, 1.0];
        frames[5] = vec![0.8, 1.2, 1.0, 1.0, 0.8, 1.2, 1.0, 1.0];
        let rho = DensityPath::new(g, uniform_times(8), frames).unwrap();
        let c = rho.min_value();
        let out = regularize_density(&rho, 0.125).unwrap();
        assert!(out.min_value() >= c.min(1.0) - 1e-12);
    }

    #[test]
    fn regularize_field_zero_and_space_constant() {
        let g = grid16();
        let z = FieldPath::zero(&g, 8, 1);
        let out = regularize_field(&z, 0.125).unwrap();
        assert!(out.frames.iter().flatten().all(|&v| v == 0.0));

        // space-constant field: convolution leaves it fixed, middle window is
        // a time-rescaled copy
        let times = uniform_times(8);
        let frames: Vec<Vec<f64>> = times.iter().map(|&t| vec![t * (1.0 - t); 16]).collect();
        let xi = FieldPath::new(g, times.clone(), 1, frames.clone()).unwrap();
        let eps = 0.125;
        let out = regularize_field(&xi, eps).unwrap();
        for (k, &t) in times.iter().enumerate() {
            if t > eps + 1e-12 && t < 1.0 - eps - 1e-12 {
                let s = (t - eps) / (1.0 - 2.0 * eps);
                let j = (s * 8.0).round() as usize;
                assert!((out.frames[k][0] - frames[j][0]).abs() < 1e-13);
                assert!(out.frames[k].iter().all(|&v| (v - out.frames[k][0]).abs() < 1e-13));
            }
        }
    }

    #[test]
    fn regularize_field_distance_shrinks_linearly_in_eps() {
        // smooth field on n=16, T=8: l2-in-time sup-in-space distance to the
        // regularization decays about linearly over a dyadic eps sweep
        let g = grid16();
        let times = uniform_times(8);
        let frames: Vec<Vec<f64>> = times
            .iter()
            .map(|&t| {
                (0..16)
                    .map(|k| {
                        let x = k as f64 / 16.0;
                        (std::f64::consts::PI * t).sin().powi(2)
                            * (2.0 * std::f64::consts::PI * x).cos()
                    })
                    .collect()
            })
            .collect();
        let xi = FieldPath::new(g, times.clone(), 1, frames).unwrap();
        let dist = |eps: f64| -> f64 {
            let out = regularize_field(&xi, eps).unwrap();
            let mut acc = 0.0;
            for k in 0..times.len() - 1 {
                let dt = times[k + 1] - times[k];
                let sup = xi.frames[k]
                    .iter()
                    .zip(&out.frames[k])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                acc += sup * sup * dt;
            }
            acc.sqrt()
        };
        let d1 = dist(0.25);
        let d2 = dist(0.125);
        let d3 = dist(0.0625);
        assert!(d2 <= 0.75 * d1, "d(1/8)={d2} vs d(1/4)={d1}");
        assert!(d3 <= 0.75 * d2, "d(1/16)={d3} vs d(1/8)={d2}");
        // fitted envelope: dist <= fitted * eps over the sweep
        let fitted = [(0.25, d1), (0.125, d2), (0.0625, d3)]
            .iter()
            .map(|(e, d)| d / e)
            .fold(0.0, f64::max);
        assert!(fitted.is_finite() && fitted > 0.0);
    }

    #[test]
    fn regularize_field_keeps_tau_class() {
        // a field vanishing outside (tau, 1-tau) stays in that class when
        // regularized with eps <= tau
        let g = grid16();
        let times = uniform_times(8);
        let tau = 0.2;
        let frames: Vec<Vec<f64>> = times
            .iter()
            .map(|&t| {
                let w = if t <= tau || t >= 1.0 - tau {
                    0.0
                } else {
                    (std::f64::consts::PI * (t - tau) / (1.0 - 2.0 * tau)).sin()
                };
                (0..16)
                    .map(|k| w * (2.0 * std::f64::consts::PI * k as f64 / 16.0).cos())
                    .collect()
            })
            .collect();
        let xi = FieldPath::new(g, times, 1, frames)
            .unwrap()
            .with_tau(tau)
            .unwrap();
        let out = regularize_field(&xi, 0.125).unwrap();
        assert_eq!(out.tau, Some(tau));
        for (t, f) in out.times.iter().zip(&out.frames) {
            if *t <= tau + 1e-12 || *t >= 1.0 - tau - 1e-12 {
                assert!(f.iter().all(|&v| v.abs() < 1e-12), "t={t}");
            }
        }
    }

    #[test]
    fn product_bound_identity_and_zero() {
        let g = grid16();
        let times = uniform_times(4);
        let ones: Vec<Vec<f64>> = times.iter().map(|_| vec![1.0; 16]).collect();
        let b_frames: Vec<Vec<f64>> = times
            .iter()
            .map(|&t| (0..16).map(|k| t + (k as f64 / 16.0)).collect())
            .collect();
        let a = FieldPath::new(g.clone(), times.clone(), 1, ones).unwrap();
        let b = FieldPath::new(g.clone(), times.clone(), 1, b_frames).unwrap();
        let n_ab = lipschitz_product_bound(&a, &b).unwrap();
        assert!((n_ab - e_norm(&b).unwrap()).abs() < 1e-12);

        let z = FieldPath::zero(&g, 4, 1);
        assert_eq!(lipschitz_product_bound(&z, &z).unwrap(), 0.0);
    }

    #[test]
    fn product_bound_random_smooth_fields() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let g = grid16();
        let times = uniform_times(4);
        for _ in 0..20 {
            let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
                let a0: f64 = rng.gen_range(-1.0..1.0);
                let a1: f64 = rng.gen_range(-1.0..1.0);
                let p: f64 = rng.gen_range(0.0..1.0);
                let frames: Vec<Vec<f64>> = times
                    .iter()
                    .map(|&t| {
                        (0..16)
                            .map(|k| {
                                let x = k as f64 / 16.0;
                                a0 * (2.0 * std::f64::consts::PI * (x + p)).sin()
                                    + a1 * t * (2.0 * std::f64::consts::PI * x).cos()
                            })
                            .collect()
                    })
                    .collect();
                FieldPath::new(g.clone(), times.clone(), 1, frames).unwrap()
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            // both sides computed independently inside the call
            lipschitz_product_bound(&a, &b).unwrap();
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn e_norm_homogeneous_and_triangle(
            vals_a in proptest::collection::vec(-1.0f64..1.0, 3 * 8),
            vals_b in proptest::collection::vec(-1.0f64..1.0, 3 * 8),
            scale in -3.0f64..3.0,
        ) {
            let g = TorusGrid::new(1, 8).unwrap();
            let times = uniform_times(2);
            let mk = |vals: &[f64]| {
                let frames: Vec<Vec<f64>> = (0..3)
                    .map(|k| vals[k * 8..(k + 1) * 8].to_vec())
                    .collect();
                FieldPath::new(g.clone(), times.clone(), 1, frames).unwrap()
            };
            let a = mk(&vals_a);
            let b = mk(&vals_b);
            let scaled = mk(&vals_a.iter().map(|v| v * scale).collect::<Vec<_>>());
            let sum = mk(&vals_a.iter().zip(&vals_b).map(|(x, y)| x + y).collect::<Vec<_>>());
            let na = e_norm(&a).unwrap();
            let nb = e_norm(&b).unwrap();
            prop_assert!((e_norm(&scaled).unwrap() - scale.abs() * na).abs() < 1e-9);
            prop_assert!(e_norm(&sum).unwrap() <= na + nb + 1e-9);
        }
    }
}
