//! Acceptance suite: one test per gate criterion, each printing a pass/fail
//! line with its tolerance and elapsed time. Tolerances are pinned in the
//! code below, not configurable.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use genflow::brenier::{
    flow_action, lagrange_gap, solve_entropic, solve_exact, straight_line_flow,
    verify_least_action, GeneralizedFlow, PathLattice,
};
use genflow::coupling::{random_bistochastic, BistochasticMeasure};
use genflow::dacmoser::{flow_map, verify_pushforward};
use genflow::experiments::{
    extrapolate_reg_sweep, loglog_slope, run_action_holder, run_counterexample,
    run_pressure_holder, run_surgery_sweep, ExperimentConfig,
};
use genflow::fields::{e_norm, regularize_density, uniform_times, DensityPath, FieldPath};
use genflow::torus::{Mollifier, TorusGrid};

fn report(criterion: usize, label: &str, pass: bool, elapsed: f64, detail: &str) {
    println!(
        "criterion {criterion} [{}] {label}: {detail} ({elapsed:.2}s)",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

#[test]
fn criterion_1_exact_solver_correctness() {
    let t0 = Instant::now();
    let g = TorusGrid::new(1, 4).unwrap();
    let rho = DensityPath::uniform(&g, 2);

    let id = BistochasticMeasure::identity(&g);
    let sol_id = solve_exact(&id, &rho, 1 << 20).unwrap();
    let id_zero = sol_id.action == 0.0;

    // brute-force oracle over all 64 paths: per-endpoint-pair minimum action
    let sh = BistochasticMeasure::shift(&g, &[2]);
    let lattice = PathLattice::uniform(&g, 2).unwrap();
    let mut best = vec![f64::INFINITY; 16];
    for p0 in 0..4u16 {
        for p1 in 0..4u16 {
            for p2 in 0..4u16 {
                let a = lattice.path_action(&[p0, p1, p2]);
                let key = p0 as usize * 4 + p2 as usize;
                if a < best[key] {
                    best[key] = a;
                }
            }
        }
    }
    let oracle_lower: f64 = (0..16).map(|k| sh.mass[k] * best[k]).sum();
    let oracle_upper = flow_action(&straight_line_flow(&sh, 2).unwrap());
    let sol_sh = solve_exact(&sh, &rho, 1 << 20).unwrap();
    let oracle_tight = (oracle_lower - 0.125).abs() < 1e-12 && (oracle_upper - 0.125).abs() < 1e-12;
    let sh_ok = (sol_sh.action - 0.125).abs() <= 1e-9;

    let elapsed = t0.elapsed().as_secs_f64();
    report(
        1,
        "exact solver correctness",
        id_zero && oracle_tight && sh_ok && elapsed < 1.0,
        elapsed,
        &format!(
            "identity action {} (exact 0), half-turn action {:.12} vs oracle 1/8, runtime < 1 s",
            sol_id.action, sol_sh.action
        ),
    );
}

#[test]
fn criterion_2_entropic_agreement() {
    let t0 = Instant::now();
    let g = TorusGrid::new(1, 4).unwrap();
    let rho = DensityPath::uniform(&g, 2);
    let sweep = [0.1, 0.05, 0.025, 0.0125];
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let gamma = random_bistochastic(&g, 100 + seed, 0.8).unwrap();
        let exact = solve_exact(&gamma, &rho, 1 << 20).unwrap();
        let actions: Vec<f64> = sweep
            .iter()
            .map(|&r| solve_entropic(&gamma, &rho, r, 20_000, 1e-11).unwrap().action)
            .collect();
        let extrap = extrapolate_reg_sweep(&sweep, &actions);
        worst = worst.max((extrap - exact.action).abs());
    }
    let elapsed = t0.elapsed().as_secs_f64();
    report(
        2,
        "exact/entropic agreement",
        worst <= 5e-3 && elapsed < 30.0,
        elapsed,
        &format!("worst extrapolation error {worst:.2e} <= 5e-3 over 10 instances"),
    );
}

#[test]
fn criterion_3_duality_and_least_action() {
    let t0 = Instant::now();
    let g = TorusGrid::new(1, 4).unwrap();
    let mut worst_gap = 0.0f64;
    let mut worst_slack = 0.0f64;
    let mut instances = Vec::new();
    instances.push((BistochasticMeasure::identity(&g), 2usize));
    instances.push((BistochasticMeasure::shift(&g, &[2]), 2));
    for seed in 0..3u64 {
        instances.push((random_bistochastic(&g, 300 + seed, 0.8).unwrap(), 2));
    }
    instances.push((random_bistochastic(&g, 310, 0.8).unwrap(), 4));
    let count = instances.len();
    for (gamma, steps) in instances {
        let rho = DensityPath::uniform(&g, steps);
        let t_inst = Instant::now();
        let sol = solve_exact(&gamma, &rho, 1 << 20).unwrap();
        worst_gap = worst_gap.max(sol.duality_gap).max(sol.primal_residual);
        let rep = verify_least_action(&sol, 1e-9).unwrap();
        worst_slack = worst_slack.max(rep.worst_charged_slack);
        assert!(rep.min_uncharged_slack >= -1e-9);
        assert!(t_inst.elapsed().as_secs_f64() < 10.0);
    }
    let elapsed = t0.elapsed().as_secs_f64();
    report(
        3,
        "duality and least action",
        worst_gap <= 1e-9 && worst_slack <= 1e-9,
        elapsed,
        &format!(
            "worst duality gap {worst_gap:.2e} <= 1e-9, worst charged slack {worst_slack:.2e} <= 1e-9 over {count} instances"
        ),
    );
}

/// Random admissible comparison flow sharing the endpoint coupling: each
/// endpoint atom routes its mass over a few random interior itineraries.
fn random_comparison_flow(
    gamma: &BistochasticMeasure,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> GeneralizedFlow {
    let grid = &gamma.grid;
    let cells = grid.cells();
    let lattice = PathLattice::uniform(grid, steps).unwrap();
    let mut map: BTreeMap<Vec<u16>, f64> = BTreeMap::new();
    for i in 0..cells {
        for j in 0..cells {
            let m = gamma.get(i, j);
            if m <= 0.0 {
                continue;
            }
            let routes = 3;
            let mut weights: Vec<f64> = (0..routes).map(|_| rng.gen_range(0.1..1.0)).collect();
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            for w in weights {
                let mut path = vec![i as u16];
                for _ in 1..steps {
                    path.push(rng.gen_range(0..cells) as u16);
                }
                path.push(j as u16);
                *map.entry(path).or_insert(0.0) += m * w;
            }
        }
    }
    GeneralizedFlow::explicit(lattice, map)
}

#[test]
fn criterion_4_multiplier_inequality() {
    let t0 = Instant::now();
    let g = TorusGrid::new(1, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = f64::INFINITY;
    for seed in [7u64, 11] {
        let gamma = random_bistochastic(&g, seed, 0.8).unwrap();
        let rho = DensityPath::uniform(&g, 4);
        let sol = solve_exact(&gamma, &rho, 1 << 20).unwrap();
        for _ in 0..20 {
            let h = random_comparison_flow(&gamma, 4, &mut rng);
            let gap = lagrange_gap(&sol, &h).unwrap();
            worst = worst.min(gap);
        }
    }
    let elapsed = t0.elapsed().as_secs_f64();
    report(
        4,
        "multiplier inequality",
        worst >= -1e-9,
        elapsed,
        &format!("smallest multiplier gap {worst:.2e} >= -1e-9 over 40 comparison flows"),
    );
}

#[test]
fn criterion_5_counterexample_quantitative() {
    let t0 = Instant::now();
    let cfg = ExperimentConfig {
        counterexample_n: vec![2, 4, 8],
        counterexample_m: 32,
        ..ExperimentConfig::default()
    };
    let rep = run_counterexample(&cfg).unwrap();
    let mut ok = rep.series.distances_strictly_decreasing && rep.quantitative_bound_holds;
    let mut detail = String::new();
    for row in rep.series.rows.iter().filter(|r| r.n.is_some()) {
        let n = row.n.unwrap();
        let bound = (1.0 - 1.0 / n as f64).powi(2) / 16.0 - 2.0 / 32.0;
        ok &= row.action_computed >= bound;
        if n >= 2 {
            ok &= row.action_computed >= 0.0156;
        }
        detail.push_str(&format!(
            "n={n}: action {:.5} (bound {:.5}, dmk {:.4}); ",
            row.action_computed,
            bound.max(0.0),
            row.dmk
        ));
    }
    let elapsed = t0.elapsed().as_secs_f64();
    report(
        5,
        "extended-model discontinuity",
        ok && elapsed < 60.0,
        elapsed,
        &detail,
    );
}

#[test]
fn criterion_6_dacorogna_moser() {
    let t0 = Instant::now();
    let cosine = |n: usize| -> (DensityPath, DensityPath) {
        let g = TorusGrid::new(1, n).unwrap();
        let times = uniform_times(2);
        let f = DensityPath::uniform(&g, 2);
        let frames: Vec<Vec<f64>> = times
            .iter()
            .map(|_| {
                (0..n)
                    .map(|k| 1.0 + 0.2 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos())
                    .collect()
            })
            .collect();
        (f, DensityPath::new(g, times, frames).unwrap())
    };
    // identity clause: equal inputs give the exact identity map
    let (f32c, _) = cosine(32);
    let id_map = flow_map(&f32c, &f32c, 8).unwrap();
    let identity_exact =
        id_map.norm_excess == 0.0 && id_map.displacements.iter().flatten().all(|&d| d == 0.0);

    let (f32, g32) = cosine(32);
    let map32 = flow_map(&f32, &g32, 32).unwrap();
    let rep32 = verify_pushforward(&map32, &f32, &g32).unwrap();
    let (f64c, g64c) = cosine(64);
    let map64 = flow_map(&f64c, &g64c, 32).unwrap();
    let rep64 = verify_pushforward(&map64, &f64c, &g64c).unwrap();
    let gap_ok = rep32.max_w1 <= 2.0 / 32.0;
    let halves = rep64.max_w1 <= 0.75 * rep32.max_w1;
    let elapsed = t0.elapsed().as_secs_f64();
    report(
        6,
        "constructive rearrangement",
        identity_exact && gap_ok && halves && elapsed < 30.0,
        elapsed,
        &format!(
            "identity exact; push-forward gap {:.2e} <= 2/32 at n=32, {:.2e} at n=64 (ratio {:.2})",
            rep32.max_w1,
            rep64.max_w1,
            rep64.max_w1 / rep32.max_w1
        ),
    );
}

#[test]
fn criterion_7_surgery_certification() {
    let t0 = Instant::now();
    let cfg = ExperimentConfig::default();
    let rep = run_surgery_sweep(&cfg).unwrap();
    // the two-term scaling law is asserted where the transport term carries
    // signal; for nearly identical pairs the excess is pure eps and the fit
    // is reported only
    let fits_ok = rep.coeff_eps > 0.0
        && rep.coeff_transport > 0.0
        && rep
            .fixed_pair_fits
            .iter()
            .filter(|f| f.dmk >= 0.05)
            .all(|f| f.coeff_eps > 0.0 && f.coeff_transport >= 0.0 && f.log_residual < 0.15)
        && rep.fixed_pair_fits.iter().any(|f| f.dmk >= 0.05);
    let elapsed = t0.elapsed().as_secs_f64();
    report(
        7,
        "surgery certification",
        rep.all_residuals_pass && rep.all_certified_dominate && fits_ok && elapsed < 300.0,
        elapsed,
        &format!(
            "residuals <= 1e-6 on all {} runs; certified >= exact everywhere; pooled fit a={:.3} b={:.2e}; fixed-pair log-residuals {:?}",
            rep.rows.len(),
            rep.coeff_eps,
            rep.coeff_transport,
            rep.fixed_pair_fits
                .iter()
                .map(|f| (f.log_residual * 1000.0).round() / 1000.0)
                .collect::<Vec<_>>()
        ),
    );
}

#[test]
fn criterion_8_holder_envelopes() {
    let t0 = Instant::now();
    let action_cfg = ExperimentConfig {
        time_steps: 2,
        sample_count: 20,
        ..ExperimentConfig::default()
    };
    let action_rep = run_action_holder(&action_cfg).unwrap();
    let pressure_cfg = ExperimentConfig {
        time_steps: 4,
        sample_count: 20,
        ..ExperimentConfig::default()
    };
    let pressure_rep = run_pressure_holder(&pressure_cfg).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    report(
        8,
        "stability envelopes",
        action_rep.no_positive_trend
            && pressure_rep.no_positive_trend
            && action_rep.envelope_sup.is_finite()
            && pressure_rep.envelope_sup.is_finite()
            && elapsed < 600.0,
        elapsed,
        &format!(
            "action envelope sup {:.4} (kendall z {:.2}), pressure envelope sup {:.6} (kendall z {:.2}); no growth trend at 5%",
            action_rep.envelope_sup,
            action_rep.kendall_z,
            pressure_rep.envelope_sup,
            pressure_rep.kendall_z
        ),
    );
}

#[test]
fn criterion_9_norm_and_mollifier_suite() {
    let t0 = Instant::now();
    // norm axioms on random boundary-vanishing paths
    let g = TorusGrid::new(1, 8).unwrap();
    let times = uniform_times(4);
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut axioms_ok = true;
    for _ in 0..5 {
        let mut mk = |rng: &mut ChaCha8Rng| {
            let frames: Vec<Vec<f64>> = times
                .iter()
                .enumerate()
                .map(|(k, _)| {
                    if k == 0 || k == 4 {
                        vec![0.0; 8]
                    } else {
                        (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()
                    }
                })
                .collect();
            FieldPath::new(g.clone(), times.clone(), 1, frames).unwrap()
        };
        let a = mk(&mut rng);
        let b = mk(&mut rng);
        let s: f64 = rng.gen_range(-2.0..2.0);
        let scaled = FieldPath::new(
            g.clone(),
            times.clone(),
            1,
            a.frames.iter().map(|f| f.iter().map(|v| v * s).collect()).collect(),
        )
        .unwrap();
        let sum = FieldPath::new(
            g.clone(),
            times.clone(),
            1,
            a.frames
                .iter()
                .zip(&b.frames)
                .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect())
                .collect(),
        )
        .unwrap();
        let (na, nb) = (e_norm(&a).unwrap(), e_norm(&b).unwrap());
        axioms_ok &= (e_norm(&scaled).unwrap() - s.abs() * na).abs() < 1e-9;
        axioms_ok &= e_norm(&sum).unwrap() <= na + nb + 1e-9;
        axioms_ok &= na > 0.0;
    }

    // mollifier mass preservation and ramp exactness
    let mut mass_ok = true;
    for &(n, eps) in &[(16usize, 0.25f64), (32, 0.125), (64, 0.0625)] {
        let gg = TorusGrid::new(1, n).unwrap();
        let k = Mollifier::new(&gg, eps).unwrap();
        let wsum: f64 = k.support().iter().map(|(_, w)| w).sum();
        mass_ok &= (wsum - 1.0).abs() < 1e-12;
        let mut rho = vec![0.0; n];
        rho[1] = 0.7 * n as f64;
        rho[n / 2] = 0.3 * n as f64;
        let out = genflow::torus::mollify_density(&rho, &k).unwrap();
        let mass: f64 = out.iter().sum::<f64>() / n as f64;
        mass_ok &= (mass - 1.0).abs() < 1e-12 && out.iter().all(|&v| v >= 0.0);
    }
    let g16 = TorusGrid::new(1, 16).unwrap();
    let mut frames: Vec<Vec<f64>> = (0..=8).map(|_| g16.uniform_density()).collect();
    frames[4][0] = 2.0;
    frames[4][8] = 0.0;
    let rho = DensityPath::new(g16.clone(), uniform_times(8), frames).unwrap();
    let reps = regularize_density(&rho, 0.125).unwrap();
    let mut ramp_ok = true;
    for (k, &t) in reps.times.iter().enumerate() {
        if t <= 0.125 + 1e-12 || t >= 0.875 - 1e-12 {
            ramp_ok &= reps.frames[k].iter().all(|&v| (v - 1.0).abs() < 1e-12);
        }
    }

    // regularity-norm scaling of the regularized rough path: slope of
    // N(rho^eps) against eps on the dyadic sweep approaches -(d+1); the
    // 0.05 allowance covers the residual discrete-sampling deficit (the
    // fitted constant K = N eps^(d+1) is non-increasing toward the envelope,
    // so finite grids always measure slightly above the limit slope)
    let n = 4096;
    let gbig = TorusGrid::new(1, n).unwrap();
    let steps = 8;
    let tms = uniform_times(steps);
    let frames: Vec<Vec<f64>> = tms
        .iter()
        .enumerate()
        .map(|(k, _)| {
            if k == 0 || k == steps {
                gbig.uniform_density()
            } else {
                let mut f = vec![0.0; n];
                f[k % n] = n as f64;
                f
            }
        })
        .collect();
    let rough = DensityPath::new(gbig, tms, frames).unwrap();
    let sweep = [0.25, 0.125, 0.0625, 0.03125];
    let mut norms = Vec::new();
    for &eps in &sweep {
        let reg = regularize_density(&rough, eps).unwrap();
        norms.push(e_norm(&reg.as_field()).unwrap());
    }
    let slope = loglog_slope(&sweep, &norms);
    let ks: Vec<f64> = sweep.iter().zip(&norms).map(|(e, n)| n * e * e).collect();
    let k_bounded = ks.iter().all(|&k| k > 0.0 && k <= ks[0] * 1.05);
    let slope_ok = slope <= -2.0 + 0.05;

    let elapsed = t0.elapsed().as_secs_f64();
    report(
        9,
        "norm and mollifier suite",
        axioms_ok && mass_ok && ramp_ok && slope_ok && k_bounded && elapsed < 30.0,
        elapsed,
        &format!(
            "norm axioms ok; mass preserved <= 1e-12; ramps exactly uniform; scaling slope {slope:.3} <= -1.95 with bounded constant {ks:.1?}"
        ),
    );
}
