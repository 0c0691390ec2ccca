//! Per-grid error against ground-truth grid means, method comparison
//! across noise levels, and CSV exports for plotting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::geo::{haversine_distance, GeoPosition};
use crate::grid::{
    assign_grid, build_grid_table, displacement_histogram, GridTable, PositionSelector,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Noisy,
    Lut,
    Mlp,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Noisy, Method::Lut, Method::Mlp];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Noisy => "noisy",
            Method::Lut => "lut",
            Method::Mlp => "mlp",
        }
    }

    /// Label used in `positions.csv`.
    pub fn position_kind(self) -> &'static str {
        match self {
            Method::Noisy => "noisy",
            Method::Lut => "denoised_lut",
            Method::Mlp => "denoised_mlp",
        }
    }
}

/// One position per test sample, in sample order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodPredictions {
    pub method: Method,
    pub positions: Vec<GeoPosition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridError {
    pub grid: usize,
    pub count: usize,
    /// Aligned with [`EvalReport::methods`].
    pub mean_error_m: Vec<f64>,
}

/// A test sample whose grid has no ground-truth anchor; it was scored
/// against `anchor_grid` instead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlaggedSample {
    pub sample_id: u64,
    pub grid: usize,
    pub anchor_grid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tag: String,
    pub noise_rms_m: Option<f64>,
    pub grid_count: usize,
    pub methods: Vec<Method>,
    pub per_grid: Vec<GridError>,
    /// Unweighted mean of the per-grid errors, per method.
    pub overall_m: Vec<f64>,
    pub flagged: Vec<FlaggedSample>,
}

impl EvalReport {
    pub fn overall(&self, method: Method) -> Option<f64> {
        let i = self.methods.iter().position(|&m| m == method)?;
        Some(self.overall_m[i])
    }

    /// `grid,count,<method>_m...`
    pub fn write_pergrid_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let cols: Vec<String> = self
            .methods
            .iter()
            .map(|m| format!("{}_m", m.as_str()))
            .collect();
        writeln!(w, "grid,count,{}", cols.join(","))?;
        for g in &self.per_grid {
            let vals: Vec<String> = g.mean_error_m.iter().map(f64::to_string).collect();
            writeln!(w, "{},{},{}", g.grid, g.count, vals.join(","))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Scores every method on every test sample by the haversine distance from
/// its prediction to the ground-truth mean of the sample's grid, averages
/// per grid, then averages grids with equal weight.
///
/// Grids come from the labeled transmitter x-center. Samples whose grid has
/// no anchor are scored against the nearest anchored grid and flagged.
pub fn per_grid_error(
    test: &[Sample],
    predictions: &[MethodPredictions],
    anchor: &GridTable,
    tag: &str,
    noise_rms_m: Option<f64>,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if predictions.is_empty() {
        return Err(Error::Invalid("no predictions to evaluate".into()));
    }
    for p in predictions {
        if p.positions.len() != test.len() {
            return Err(Error::DimensionMismatch {
                context: "predictions per test sample",
                expected: test.len(),
                got: p.positions.len(),
            });
        }
    }
    let mut errors: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    let mut flagged = Vec::new();
    for (i, s) in test.iter().enumerate() {
        let grid = assign_grid(s.require_transmitter()?.x_center, anchor.grid_count)?;
        let anchor_grid = anchor
            .nearest_populated(grid)
            .ok_or_else(|| Error::Invalid("anchor table has no populated grid".into()))?;
        if anchor_grid != grid {
            flagged.push(FlaggedSample {
                sample_id: s.id,
                grid,
                anchor_grid,
            });
        }
        let center = anchor.cell(anchor_grid).expect("populated").mean_position;
        let cols = errors
            .entry(anchor_grid)
            .or_insert_with(|| vec![Vec::new(); predictions.len()]);
        for (col, p) in cols.iter_mut().zip(predictions) {
            col.push(haversine_distance(&center, &p.positions[i]));
        }
    }
    let per_grid: Vec<GridError> = errors
        .into_iter()
        .map(|(grid, cols)| GridError {
            grid,
            count: cols[0].len(),
            mean_error_m: cols.iter().map(|c| ordered_mean(c)).collect(),
        })
        .collect();
    let overall_m = (0..predictions.len())
        .map(|k| per_grid.iter().map(|g| g.mean_error_m[k]).sum::<f64>() / per_grid.len() as f64)
        .collect();
    Ok(EvalReport {
        tag: tag.to_string(),
        noise_rms_m,
        grid_count: anchor.grid_count,
        methods: predictions.iter().map(|p| p.method).collect(),
        per_grid,
        overall_m,
        flagged,
    })
}

/// Mean summed in ascending order so that it does not depend on the
/// order of the samples.
fn ordered_mean(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub noise_rms_m: f64,
    pub overall_m: Vec<f64>,
}

/// Overall error per noise level and method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub tag: String,
    pub methods: Vec<Method>,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn value(&self, noise_rms_m: f64, method: Method) -> Option<f64> {
        let k = self.methods.iter().position(|&m| m == method)?;
        self.rows
            .iter()
            .find(|r| r.noise_rms_m == noise_rms_m)
            .map(|r| r.overall_m[k])
    }

    /// `noise_rms_m,<method>_m...`
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let cols: Vec<String> = self
            .methods
            .iter()
            .map(|m| format!("{}_m", m.as_str()))
            .collect();
        writeln!(w, "noise_rms_m,{}", cols.join(","))?;
        for r in &self.rows {
            let vals: Vec<String> = r.overall_m.iter().map(f64::to_string).collect();
            writeln!(w, "{},{}", r.noise_rms_m, vals.join(","))?;
        }
        Ok(())
    }

    pub fn to_text_table(&self) -> String {
        let mut out = format!("{:<8}{:>12}", self.tag, "noise_rms_m");
        for m in &self.methods {
            let _ = write!(out, "{:>12}", format!("{}_m", m.as_str()));
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{:<8}{:>12.3}", "", r.noise_rms_m);
            for v in &r.overall_m {
                let _ = write!(out, "{v:>12.4}");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes")
    }
}

/// Stacks per-level reports into one table ordered by noise level. All
/// reports must share the same tag and method list and carry a level.
pub fn compare_methods(reports: &[EvalReport]) -> Result<Comparison> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Invalid("no reports to compare".into()))?;
    let mut rows = Vec::with_capacity(reports.len());
    for r in reports {
        if r.methods != first.methods || r.tag != first.tag {
            return Err(Error::Invalid(format!(
                "report {} ({:?}) does not match {} ({:?})",
                r.tag, r.methods, first.tag, first.methods
            )));
        }
        let noise_rms_m = r
            .noise_rms_m
            .ok_or_else(|| Error::Invalid(format!("report {} has no noise level", r.tag)))?;
        rows.push(ComparisonRow {
            noise_rms_m,
            overall_m: r.overall_m.clone(),
        });
    }
    rows.sort_by(|a, b| a.noise_rms_m.total_cmp(&b.noise_rms_m));
    if rows
        .windows(2)
        .any(|w| w[0].noise_rms_m == w[1].noise_rms_m)
    {
        return Err(Error::Invalid("duplicate noise level".into()));
    }
    Ok(Comparison {
        tag: first.tag.clone(),
        methods: first.methods.clone(),
        rows,
    })
}

/// Writes `positions.csv`, `pergrid.csv` and `histogram.csv` into `dir`.
///
/// `positions.csv` lists each test sample's ground truth followed by one
/// row per method. `histogram.csv` bins the noisy per-grid average
/// displacements of `characterized`.
pub fn export_plot_data(
    report: &EvalReport,
    test: &[Sample],
    predictions: &[MethodPredictions],
    characterized: &[Sample],
    bin_width_m: f64,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for p in predictions {
        if p.positions.len() != test.len() {
            return Err(Error::DimensionMismatch {
                context: "predictions per test sample",
                expected: test.len(),
                got: p.positions.len(),
            });
        }
    }
    let mut positions = Vec::new();
    writeln!(positions, "sample_id,kind,lat,lon").expect("in-memory write");
    for (i, s) in test.iter().enumerate() {
        let rows = std::iter::once(("gt", s.gt_position)).chain(
            predictions
                .iter()
                .map(|p| (p.method.position_kind(), p.positions[i])),
        );
        for (kind, pos) in rows {
            writeln!(positions, "{},{kind},{},{}", s.id, pos.lat_deg, pos.lon_deg)
                .expect("in-memory write");
        }
    }
    let mut pergrid = Vec::new();
    report
        .write_pergrid_csv(&mut pergrid)
        .expect("in-memory write");
    let table = build_grid_table(characterized, PositionSelector::Noisy, report.grid_count)?;
    let mut histogram = Vec::new();
    displacement_histogram(&table, bin_width_m)?
        .write_csv(&mut histogram)
        .expect("in-memory write");

    let mut written = Vec::new();
    for (name, bytes) in [
        ("positions.csv", positions),
        ("pergrid.csv", pergrid),
        ("histogram.csv", histogram),
    ] {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
