//! Position denoising from the identified transmitter's image position:
//! a per-grid lookup table of mean noisy positions, and a regression
//! network from bounding-box center to position.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::geo::GeoPosition;
use crate::grid::{assign_grid, build_grid_table_at, nearest_populated, PositionSelector};
use crate::nn::{load_weights, save_weights, Regressor, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LutEntry {
    pub count: usize,
    pub mean_position: GeoPosition,
}

/// Mean training noisy position per grid; `None` for grids never visited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookupTable {
    pub grid_count: usize,
    pub cells: Vec<Option<LutEntry>>,
}

impl LookupTable {
    pub fn populated(&self) -> impl Iterator<Item = (usize, &LutEntry)> {
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(g, c)| c.as_ref().map(|c| (g, c)))
    }

    /// `grid,count,mean_lat,mean_lon`, populated grids only.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "grid,count,mean_lat,mean_lon")?;
        for (g, e) in self.populated() {
            writeln!(
                w,
                "{g},{},{},{}",
                e.count, e.mean_position.lat_deg, e.mean_position.lon_deg
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(reader: R, grid_count: usize) -> Result<Self> {
        if grid_count == 0 {
            return Err(Error::InvalidGridCount);
        }
        let mut cells = vec![None; grid_count];
        let mut rdr = csv::Reader::from_reader(reader);
        for (i, rec) in rdr.records().enumerate() {
            let line = i as u64 + 2;
            let rec = rec.map_err(|e| parse_error(line, "row", e.to_string()))?;
            let field = |k: usize, name: &str| -> Result<&str> {
                rec.get(k)
                    .ok_or_else(|| parse_error(line, name, "missing".into()))
            };
            let num = |k: usize, name: &str| -> Result<f64> {
                field(k, name)?
                    .parse::<f64>()
                    .map_err(|e| parse_error(line, name, e.to_string()))
            };
            let grid: usize = field(0, "grid")?
                .parse()
                .map_err(|e: std::num::ParseIntError| parse_error(line, "grid", e.to_string()))?;
            let count: usize = field(1, "count")?
                .parse()
                .map_err(|e: std::num::ParseIntError| parse_error(line, "count", e.to_string()))?;
            if grid >= grid_count || count == 0 {
                return Err(parse_error(
                    line,
                    "grid",
                    format!("grid {grid} with count {count} does not fit {grid_count} grids"),
                ));
            }
            let mean_position = GeoPosition::new(num(2, "mean_lat")?, num(3, "mean_lon")?)?;
            cells[grid] = Some(LutEntry {
                count,
                mean_position,
            });
        }
        Ok(LookupTable { grid_count, cells })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, grid_count: usize) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        LookupTable::read_csv(std::io::BufReader::new(file), grid_count).map_err(|e| match e {
            Error::Parse {
                path: None,
                line,
                field,
                message,
            } => Error::Parse {
                path: Some(path.to_path_buf()),
                line,
                field,
                message,
            },
            other => other,
        })
    }
}

fn parse_error(line: u64, field: &str, message: String) -> Error {
    Error::Parse {
        path: None,
        line,
        field: field.to_string(),
        message,
    }
}

/// Groups training samples by the grid of `x_centers[i]` (the labeled or
/// identified transmitter x of `samples[i]`) and stores the mean noisy
/// position of each grid.
pub fn build_lut(samples: &[Sample], x_centers: &[f64], grid_count: usize) -> Result<LookupTable> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let table = build_grid_table_at(samples, x_centers, PositionSelector::Noisy, grid_count)?;
    let cells = table
        .cells
        .iter()
        .map(|c| {
            c.map(|c| LutEntry {
                count: c.count,
                mean_position: c.mean_position,
            })
        })
        .collect();
    Ok(LookupTable { grid_count, cells })
}

/// Labeled transmitter x-center of every sample.
pub fn labeled_x_centers(samples: &[Sample]) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| Ok(s.require_transmitter()?.x_center))
        .collect()
}

/// Stored mean of the query's grid, or of the nearest populated grid
/// (lower index on ties) when that grid was never visited.
pub fn lut_predict(lut: &LookupTable, x_center: f64) -> Result<GeoPosition> {
    let grid = assign_grid(x_center, lut.grid_count)?;
    let g = nearest_populated(&lut.cells, grid).ok_or(Error::EmptyLookupTable)?;
    Ok(lut.cells[g].expect("populated").mean_position)
}

/// Regression from a bounding-box center to a position.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    regressor: Regressor,
}

impl Denoiser {
    pub fn from_regressor(regressor: Regressor) -> Result<Self> {
        let dims = (regressor.model.input_dim(), regressor.model.output_dim());
        if dims != (2, 2) {
            return Err(Error::DimensionMismatch {
                context: "denoiser inputs and outputs",
                expected: 2,
                got: if dims.0 != 2 { dims.0 } else { dims.1 },
            });
        }
        Ok(Denoiser { regressor })
    }

    pub fn regressor(&self) -> &Regressor {
        &self.regressor
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_weights(&self.regressor, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Denoiser::from_regressor(load_weights(path)?)
    }
}

/// Fits center -> noisy (lat, lon), both standardized.
pub fn train_denoiser(
    samples: &[Sample],
    centers: &[(f64, f64)],
    hidden: &[usize],
    config: &TrainConfig,
) -> Result<(Denoiser, Vec<f64>)> {
    if centers.len() != samples.len() {
        return Err(Error::DimensionMismatch {
            context: "centers per sample",
            expected: samples.len(),
            got: centers.len(),
        });
    }
    let inputs: Vec<Vec<f64>> = centers.iter().map(|&(x, y)| vec![x, y]).collect();
    let targets = samples
        .iter()
        .map(|s| {
            let p = s.require_noisy()?;
            Ok(vec![p.lat_deg, p.lon_deg])
        })
        .collect::<Result<Vec<_>>>()?;
    let (reg, history) = Regressor::fit(&inputs, &targets, hidden, config)?;
    Ok((Denoiser::from_regressor(reg)?, history))
}

pub fn mlp_predict(model: &Denoiser, center: (f64, f64)) -> Result<GeoPosition> {
    let y = model.regressor.predict(&[center.0, center.1])?;
    GeoPosition::new(y[0], y[1])
}
