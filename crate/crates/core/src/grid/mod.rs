//! Vision-aided grouping of samples into vertical image grids and the
//! per-grid GPS error statistics derived from it.

mod gaussian;
mod histogram;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use self::gaussian::{fit_gaussian, fit_gaussian_curve, GaussianFit, GaussianParams};
pub use self::histogram::{displacement_histogram, DisplacementHistogram, DEFAULT_BIN_WIDTH_M};
use crate::dataset::{group_by_grid, Sample};
use crate::error::{Error, Result};
use crate::geo::{haversine_distance, GeoPosition};

/// Grid index of a normalized horizontal coordinate: `floor(Z * x)`, with
/// `x = 1.0` folded into the last grid.
pub fn assign_grid(x_center: f64, grid_count: usize) -> Result<usize> {
    if grid_count == 0 {
        return Err(Error::InvalidGridCount);
    }
    if !(0.0..=1.0).contains(&x_center) {
        return Err(Error::XCenterOutOfRange(x_center));
    }
    let z = grid_count as f64;
    let mut g = ((z * x_center).floor() as usize).min(grid_count - 1);
    // Guard against rounding in `z * x` straddling a boundary.
    if g > 0 && x_center < g as f64 / z {
        g -= 1;
    } else if g + 1 < grid_count && x_center >= (g + 1) as f64 / z {
        g += 1;
    }
    Ok(g)
}

/// Which position of a sample feeds the statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionSelector {
    GroundTruth,
    Noisy,
}

impl PositionSelector {
    pub fn select(self, sample: &Sample) -> Result<GeoPosition> {
        match self {
            PositionSelector::GroundTruth => Ok(sample.gt_position),
            PositionSelector::Noisy => sample.require_noisy(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub count: usize,
    pub mean_position: GeoPosition,
    /// Mean haversine distance from the members to `mean_position`.
    pub avg_displacement_m: f64,
}

/// Per-grid statistics; `None` marks an empty grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridTable {
    pub grid_count: usize,
    pub cells: Vec<Option<GridCell>>,
}

impl GridTable {
    pub fn cell(&self, grid: usize) -> Option<&GridCell> {
        self.cells.get(grid).and_then(Option::as_ref)
    }

    pub fn populated(&self) -> impl Iterator<Item = (usize, &GridCell)> {
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(g, c)| c.as_ref().map(|c| (g, c)))
    }

    pub fn total_count(&self) -> usize {
        self.populated().map(|(_, c)| c.count).sum()
    }

    /// Nearest populated grid to `grid`; ties go to the lower index.
    pub fn nearest_populated(&self, grid: usize) -> Option<usize> {
        nearest_populated(&self.cells, grid)
    }

    /// `grid,count,mean_lat,mean_lon,avg_displacement_m`, populated grids only.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "grid,count,mean_lat,mean_lon,avg_displacement_m")?;
        for (g, c) in self.populated() {
            writeln!(
                w,
                "{g},{},{},{},{}",
                c.count, c.mean_position.lat_deg, c.mean_position.lon_deg, c.avg_displacement_m
            )?;
        }
        Ok(())
    }
}

pub(crate) fn nearest_populated<T>(cells: &[Option<T>], grid: usize) -> Option<usize> {
    let n = cells.len();
    if grid < n && cells[grid].is_some() {
        return Some(grid);
    }
    (1..n).find_map(|step| {
        let below = grid
            .checked_sub(step)
            .filter(|&g| g < n && cells[g].is_some());
        below.or_else(|| Some(grid + step).filter(|&g| g < n && cells[g].is_some()))
    })
}

/// Groups samples by the grid of their transmitter detection and computes
/// each grid's mean position and average displacement.
pub fn build_grid_table(
    samples: &[Sample],
    selector: PositionSelector,
    grid_count: usize,
) -> Result<GridTable> {
    table_from_groups(
        samples,
        &group_by_grid(samples, grid_count)?,
        selector,
        grid_count,
    )
}

/// Like [`build_grid_table`], but grids come from `x_centers[i]` instead of
/// the labeled transmitter of `samples[i]`.
pub fn build_grid_table_at(
    samples: &[Sample],
    x_centers: &[f64],
    selector: PositionSelector,
    grid_count: usize,
) -> Result<GridTable> {
    if grid_count == 0 {
        return Err(Error::InvalidGridCount);
    }
    if x_centers.len() != samples.len() {
        return Err(Error::DimensionMismatch {
            context: "x-centers per sample",
            expected: samples.len(),
            got: x_centers.len(),
        });
    }
    let mut groups = vec![Vec::new(); grid_count];
    for (i, &x) in x_centers.iter().enumerate() {
        groups[assign_grid(x, grid_count)?].push(i);
    }
    table_from_groups(samples, &groups, selector, grid_count)
}

fn table_from_groups(
    samples: &[Sample],
    groups: &[Vec<usize>],
    selector: PositionSelector,
    grid_count: usize,
) -> Result<GridTable> {
    let mut cells = Vec::with_capacity(grid_count);
    for members in groups {
        if members.is_empty() {
            cells.push(None);
            continue;
        }
        let positions = members
            .iter()
            .map(|&i| selector.select(&samples[i]))
            .collect::<Result<Vec<_>>>()?;
        cells.push(Some(grid_cell(&positions)));
    }
    Ok(GridTable { grid_count, cells })
}

fn grid_cell(positions: &[GeoPosition]) -> GridCell {
    // Summing in a canonical order makes the statistics bit-identical under
    // any permutation of the input.
    let mut positions = positions.to_vec();
    positions.sort_by(|a, b| {
        a.lat_deg
            .total_cmp(&b.lat_deg)
            .then(a.lon_deg.total_cmp(&b.lon_deg))
    });
    let mean_position = GeoPosition::mean(&positions).expect("non-empty grid");
    let total: f64 = positions
        .iter()
        .map(|p| haversine_distance(&mean_position, p))
        .sum();
    GridCell {
        count: positions.len(),
        mean_position,
        avg_displacement_m: total / positions.len() as f64,
    }
}

/// Distance of one sample to its grid mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleDisplacement {
    pub sample_id: u64,
    pub grid: usize,
    pub displacement_m: f64,
}

/// Per-sample displacements to the grid means of `table`, which must have
/// been built from the same samples and selector.
pub fn per_sample_displacements(
    samples: &[Sample],
    selector: PositionSelector,
    table: &GridTable,
) -> Result<Vec<SampleDisplacement>> {
    samples
        .iter()
        .map(|s| {
            let grid = assign_grid(s.require_transmitter()?.x_center, table.grid_count)?;
            let cell = table.cell(grid).ok_or_else(|| {
                Error::Invalid(format!(
                    "grid {grid} of sample {} is not in the table",
                    s.id
                ))
            })?;
            Ok(SampleDisplacement {
                sample_id: s.id,
                grid,
                displacement_m: haversine_distance(&cell.mean_position, &selector.select(s)?),
            })
        })
        .collect()
}
