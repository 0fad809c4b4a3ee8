//! File formats: JSON instance/result documents, CSV emission for grid
//! densities, couplings, plans, field paths, and experiment tables. Cell
//! indexing is row-major over axes everywhere.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::brenier::{AdmissibilityReport, EntropicStats, PressureField};
use crate::coupling::{BistochasticMeasure, TransportPlan4};
use crate::error::{Error, Result};
use crate::fields::{DensityPath, FieldPath};
use crate::torus::TorusGrid;

/// A solvable instance: grid, knot times, endpoint coupling, density path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceFile {
    pub grid: TorusGrid,
    pub times: Vec<f64>,
    /// Row-major cells x cells endpoint coupling.
    pub gamma: Vec<f64>,
    /// Per-time density frames.
    pub rho: Vec<Vec<f64>>,
}

impl InstanceFile {
    pub fn new(gamma: &BistochasticMeasure, rho: &DensityPath) -> Self {
        InstanceFile {
            grid: gamma.grid.clone(),
            times: rho.times.clone(),
            gamma: gamma.mass.clone(),
            rho: rho.frames.clone(),
        }
    }

    pub fn coupling(&self) -> Result<BistochasticMeasure> {
        BistochasticMeasure::new(self.grid.clone(), self.gamma.clone())
    }

    pub fn density(&self) -> Result<DensityPath> {
        DensityPath::new(self.grid.clone(), self.times.clone(), self.rho.clone())
    }
}

/// Solver output written next to an instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultFile {
    pub action: f64,
    pub pressure: PressureField,
    pub residuals: AdmissibilityReport,
    pub solver: String,
    pub duality_gap: Option<f64>,
    pub entropic: Option<EntropicStats>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Grid density as CSV: one row per cell index, column "value".
pub fn write_density_csv(path: &Path, density: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["cell", "value"]).map_err(csv_err)?;
    for (c, v) in density.iter().enumerate() {
        w.write_record([c.to_string(), format!("{v}")]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Density or field path as CSV: one row per (t, cell[, component]).
pub fn write_path_csv(path: &Path, times: &[f64], frames: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["t", "cell", "value"]).map_err(csv_err)?;
    for (t, frame) in times.iter().zip(frames) {
        for (c, v) in frame.iter().enumerate() {
            w.write_record([format!("{t}"), c.to_string(), format!("{v}")])
                .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Coupling as CSV: (i, j, mass).
pub fn write_coupling_csv(path: &Path, m: &BistochasticMeasure) -> Result<()> {
    let cells = m.grid.cells();
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["i", "j", "mass"]).map_err(csv_err)?;
    for i in 0..cells {
        for j in 0..cells {
            let v = m.mass[i * cells + j];
            if v != 0.0 {
                w.write_record([i.to_string(), j.to_string(), format!("{v}")])
                    .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Sparse four-point plan as CSV: (x, y, X, Y, mass).
pub fn write_plan_csv(path: &Path, plan: &TransportPlan4) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["x", "y", "X", "Y", "mass"]).map_err(csv_err)?;
    for &(x, y, xx, yy, m) in &plan.entries {
        w.write_record([
            x.to_string(),
            y.to_string(),
            xx.to_string(),
            yy.to_string(),
            format!("{m}"),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Generic experiment table: header plus float rows.
pub fn write_table_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        w.write_record(&cells).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Serde(e.to_string())
}

/// Hex SHA-256 of the canonical JSON encoding, used to stamp manifests.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    use sha2::{Digest, Sha256};
    let text = serde_json::to_string(value)?;
    let digest = Sha256::digest(text.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Serializable view of a field path matching the {time_grid, frames} shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathDocument {
    pub time_grid: Vec<f64>,
    pub frames: Vec<Vec<f64>>,
    pub components: usize,
}

impl From<&FieldPath> for PathDocument {
    fn from(f: &FieldPath) -> Self {
        PathDocument {
            time_grid: f.times.clone(),
            frames: f.frames.clone(),
            components: f.components,
        }
    }
}

impl From<&DensityPath> for PathDocument {
    fn from(f: &DensityPath) -> Self {
        PathDocument {
            time_grid: f.times.clone(),
            frames: f.frames.clone(),
            components: 1,
        }
    }
}
