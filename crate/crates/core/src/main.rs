//! Command-line front end: experiment runners, single-instance solves, the
//! surgery pipeline, and the rearrangement demo, all emitting CSV tables and
//! a JSON manifest stamped with the config hash.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use genflow::brenier::{solve_entropic, solve_exact, verify_admissible};
use genflow::coupling::random_bistochastic;
use genflow::dacmoser::{flow_map, verify_pushforward};
use genflow::error::{Error, Result};
use genflow::experiments::{
    run_action_holder, run_counterexample, run_diameter, run_pressure_holder, run_surgery_sweep,
    ExperimentConfig,
};
use genflow::fields::{uniform_times, DensityPath};
use genflow::io::{
    config_hash, read_json, write_json, write_path_csv, write_table_csv, InstanceFile, ResultFile,
};
use genflow::surgery::{surgery_pipeline, SurgeryConfig};
use genflow::torus::TorusGrid;

#[derive(Parser)]
#[command(
    name = "genflow",
    about = "Numerical laboratory for generalized incompressible flows on the torus"
)]
struct Cli {
    /// Experiment configuration (JSON or TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for CSV tables and reports.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Exact,
    Entropic,
}

#[derive(Subcommand)]
enum Command {
    /// Stability of the optimal action under endpoint perturbations.
    ActionHolder,
    /// Stability of the pressure field under endpoint perturbations.
    PressureHolder,
    /// Discontinuity table for the label-extended model.
    Counterexample,
    /// Empirical diameter of the optimal action over random couplings.
    Diameter,
    /// Solve a single instance file.
    Solve {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, value_enum, default_value = "exact")]
        solver: SolverArg,
        #[arg(long, default_value_t = 0.05)]
        reg: f64,
    },
    /// Run the endpoint-surgery pipeline on a seeded coupling pair.
    Surgery {
        #[arg(long, default_value_t = 0.25)]
        eps: f64,
        /// Blend weight toward a second random coupling (0 keeps mu = nu).
        #[arg(long, default_value_t = 0.4)]
        blend: f64,
    },
    /// Rearrangement demo: transport the uniform density onto a cosine bump.
    Dacmoser {
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long, default_value_t = 0.2)]
        amplitude: f64,
        #[arg(long, default_value_t = 32)]
        ode_steps: usize,
    },
}

#[derive(Serialize)]
struct Manifest {
    subcommand: String,
    config: ExperimentConfig,
    config_sha256: String,
    outputs: Vec<String>,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = match &cli.config {
        None => ExperimentConfig::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            match path.extension().and_then(|e| e.to_str()) {
                Some("toml") => {
                    toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
                }
                _ => serde_json::from_str(&text)?,
            }
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn finish(
    out_dir: &Path,
    subcommand: &str,
    cfg: &ExperimentConfig,
    outputs: Vec<String>,
) -> Result<()> {
    let manifest = Manifest {
        subcommand: subcommand.to_string(),
        config: cfg.clone(),
        config_sha256: config_hash(cfg)?,
        outputs,
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    println!("wrote {}", out_dir.join("manifest.json").display());
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let cfg = load_config(&cli)?;
    std::fs::create_dir_all(&cli.out_dir)?;
    let out = cli.out_dir.as_path();

    match &cli.command {
        Command::ActionHolder => {
            let rep = run_action_holder(&cfg)?;
            let rows: Vec<Vec<f64>> = rep
                .rows
                .iter()
                .map(|r| vec![r.pair as f64, r.blend, r.dmk, r.delta_action, r.envelope])
                .collect();
            write_table_csv(
                &out.join("action_holder.csv"),
                &["pair", "blend", "dmk", "delta_action", "envelope"],
                &rows,
            )?;
            write_json(&out.join("action_holder.json"), &rep)?;
            println!(
                "envelope sup {:.4}, log-log slope {:.3}, kendall z {:.3} (no positive trend: {})",
                rep.envelope_sup, rep.loglog_slope, rep.kendall_z, rep.no_positive_trend
            );
            finish(
                out,
                "action-holder",
                &cfg,
                vec!["action_holder.csv".into(), "action_holder.json".into()],
            )
        }
        Command::PressureHolder => {
            let rep = run_pressure_holder(&cfg)?;
            let rows: Vec<Vec<f64>> = rep
                .rows
                .iter()
                .map(|r| {
                    vec![
                        r.pair as f64,
                        r.blend,
                        r.dmk,
                        r.sup_pairing,
                        r.lp_sup_pairing,
                        r.envelope,
                    ]
                })
                .collect();
            write_table_csv(
                &out.join("pressure_holder.csv"),
                &["pair", "blend", "dmk", "sup_pairing", "lp_sup_pairing", "envelope"],
                &rows,
            )?;
            write_json(&out.join("pressure_holder.json"), &rep)?;
            println!(
                "envelope sup {:.4}, kendall z {:.3} (no positive trend: {}), tdelta fit {:.2}",
                rep.envelope_sup,
                rep.kendall_z,
                rep.no_positive_trend,
                rep.diagnostics.tdelta_fit_exponent
            );
            finish(
                out,
                "pressure-holder",
                &cfg,
                vec!["pressure_holder.csv".into(), "pressure_holder.json".into()],
            )
        }
        Command::Counterexample => {
            let rep = run_counterexample(&cfg)?;
            let rows: Vec<Vec<f64>> = rep
                .series
                .rows
                .iter()
                .map(|r| {
                    vec![
                        r.n.map(|n| n as f64).unwrap_or(f64::INFINITY),
                        r.dmk,
                        r.action_lower,
                        r.action_computed,
                    ]
                })
                .collect();
            write_table_csv(
                &out.join("counterexample.csv"),
                &["n", "dmk", "action_lower", "action_computed"],
                &rows,
            )?;
            write_json(&out.join("counterexample.json"), &rep)?;
            println!(
                "distances decreasing: {}, headline bound holds: {}",
                rep.series.distances_strictly_decreasing, rep.series.headline_holds
            );
            finish(
                out,
                "counterexample",
                &cfg,
                vec!["counterexample.csv".into(), "counterexample.json".into()],
            )
        }
        Command::Diameter => {
            let rep = run_diameter(&cfg)?;
            let rows: Vec<Vec<f64>> = rep
                .actions
                .iter()
                .enumerate()
                .map(|(k, &a)| vec![k as f64, a])
                .collect();
            write_table_csv(&out.join("diameter.csv"), &["instance", "action"], &rows)?;
            write_json(&out.join("diameter.json"), &rep)?;
            println!(
                "max action {:.5}, mean {:.5}, doubled max {:.5} (stable: {})",
                rep.max_action, rep.mean_action, rep.doubled_max, rep.stable
            );
            finish(
                out,
                "diameter",
                &cfg,
                vec!["diameter.csv".into(), "diameter.json".into()],
            )
        }
        Command::Solve {
            instance,
            solver,
            reg,
        } => {
            let inst: InstanceFile = read_json(instance)?;
            let gamma = inst.coupling()?;
            let rho = inst.density()?;
            let result = match solver {
                SolverArg::Exact => {
                    let sol = solve_exact(&gamma, &rho, cfg.enumeration_budget)?;
                    let residuals = verify_admissible(&sol.flow, &gamma, &rho, 1e-9)?;
                    println!(
                        "exact action {:.8}, duality gap {:.2e}",
                        sol.action, sol.duality_gap
                    );
                    ResultFile {
                        action: sol.action,
                        pressure: sol.pressure,
                        residuals,
                        solver: "exact".into(),
                        duality_gap: Some(sol.duality_gap),
                        entropic: None,
                    }
                }
                SolverArg::Entropic => {
                    let sol = solve_entropic(&gamma, &rho, *reg, 20_000, 1e-9)?;
                    let residuals = verify_admissible(&sol.flow, &gamma, &rho, 1e-6)?;
                    println!(
                        "entropic action {:.8} (reg {reg}), converged: {}",
                        sol.action, sol.stats.converged
                    );
                    ResultFile {
                        action: sol.action,
                        pressure: sol.pressure,
                        residuals,
                        solver: "entropic".into(),
                        duality_gap: None,
                        entropic: Some(sol.stats),
                    }
                }
            };
            write_json(&out.join("result.json"), &result)?;
            write_path_csv(
                &out.join("pressure.csv"),
                &result.pressure.times,
                &result.pressure.frames,
            )?;
            finish(
                out,
                "solve",
                &cfg,
                vec!["result.json".into(), "pressure.csv".into()],
            )
        }
        Command::Surgery { eps, blend } => {
            let grid = cfg.grid()?;
            let mu = random_bistochastic(&grid, cfg.seed, cfg.heat)?;
            let raw = random_bistochastic(&grid, cfg.seed + 1, cfg.heat)?;
            let nu = mu.blend(&raw, *blend)?;
            let rho = DensityPath::uniform(&grid, cfg.time_steps);
            let scfg = SurgeryConfig {
                enumeration_budget: cfg.enumeration_budget,
                ..SurgeryConfig::default()
            };
            let outcm = surgery_pipeline(&mu, &nu, &rho, *eps, &scfg)?;
            #[derive(Serialize)]
            struct SurgeryReportDoc {
                budget: genflow::surgery::SurgeryBudget,
                conditions: genflow::surgery::SurgeryConditions,
                certified_action: f64,
                base_action: f64,
                dmk: f64,
                residuals: genflow::brenier::AdmissibilityReport,
                map_norm_excess: f64,
            }
            let doc = SurgeryReportDoc {
                budget: outcm.budget.clone(),
                conditions: outcm.conditions.clone(),
                certified_action: outcm.certified_action,
                base_action: outcm.base_action,
                dmk: outcm.dmk,
                residuals: outcm.residuals.clone(),
                map_norm_excess: outcm.map_norm_excess,
            };
            write_json(&out.join("surgery.json"), &doc)?;
            println!(
                "certified action {:.6} (base {:.6}, dmk {:.4}); residual max {:.2e}",
                outcm.certified_action,
                outcm.base_action,
                outcm.dmk,
                outcm.residuals.max_residual
            );
            // the full sweep table alongside the single run
            let sweep = run_surgery_sweep(&cfg)?;
            let rows: Vec<Vec<f64>> = sweep
                .rows
                .iter()
                .map(|r| vec![r.eps, r.blend, r.dmk, r.excess, r.certified, r.exact_target])
                .collect();
            write_table_csv(
                &out.join("surgery_sweep.csv"),
                &["eps", "blend", "dmk", "excess", "certified", "exact_target"],
                &rows,
            )?;
            write_json(&out.join("surgery_sweep.json"), &sweep)?;
            finish(
                out,
                "surgery",
                &cfg,
                vec![
                    "surgery.json".into(),
                    "surgery_sweep.csv".into(),
                    "surgery_sweep.json".into(),
                ],
            )
        }
        Command::Dacmoser {
            n,
            amplitude,
            ode_steps,
        } => {
            let grid = TorusGrid::new(1, *n)?;
            let times = uniform_times(2);
            let f = DensityPath::uniform(&grid, 2);
            let g_frames: Vec<Vec<f64>> = times
                .iter()
                .map(|_| {
                    (0..*n)
                        .map(|k| {
                            1.0 + amplitude
                                * (2.0 * std::f64::consts::PI * k as f64 / *n as f64).cos()
                        })
                        .collect()
                })
                .collect();
            let g = DensityPath::new(grid.clone(), times, g_frames)?;
            let map = flow_map(&f, &g, *ode_steps)?;
            let rep = verify_pushforward(&map, &f, &g)?;
            println!(
                "norm excess {:.5}, max push-forward gap {:.6} ({} cells)",
                map.norm_excess,
                rep.max_w1,
                rep.max_w1 / grid.spacing()
            );
            write_json(&out.join("straightening_map.json"), &map)?;
            write_json(&out.join("pushforward_report.json"), &rep)?;
            finish(
                out,
                "dacmoser",
                &cfg,
                vec![
                    "straightening_map.json".into(),
                    "pushforward_report.json".into(),
                ],
            )
        }
    }
}
