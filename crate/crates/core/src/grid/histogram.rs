use std::io::Write;

use serde::{Deserialize, Serialize};

use super::GridTable;
use crate::error::{Error, Result};

pub const DEFAULT_BIN_WIDTH_M: f64 = 0.05;

/// Counts of values in `[k * w, (k + 1) * w)` bins, starting at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementHistogram {
    pub bin_width_m: f64,
    pub counts: Vec<u64>,
}

impl DisplacementHistogram {
    pub fn from_values(values: &[f64], bin_width_m: f64) -> Result<Self> {
        if !(bin_width_m > 0.0 && bin_width_m.is_finite()) {
            return Err(Error::Invalid(format!(
                "bin width must be positive, got {bin_width_m}"
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Invalid(format!("cannot bin displacement {v}")));
        }
        let bin_of = |v: f64| (v / bin_width_m).floor() as usize;
        let len = values.iter().map(|&v| bin_of(v) + 1).max().unwrap_or(0);
        let mut counts = vec![0u64; len];
        for &v in values {
            counts[bin_of(v)] += 1;
        }
        Ok(DisplacementHistogram {
            bin_width_m,
            counts,
        })
    }

    pub fn bin_start(&self, bin: usize) -> f64 {
        bin as f64 * self.bin_width_m
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        (0..self.counts.len())
            .map(|k| (k as f64 + 0.5) * self.bin_width_m)
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn nonzero_bins(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// Index of the fullest bin (lowest index on ties).
    pub fn mode_bin(&self) -> Option<usize> {
        let max = *self.counts.iter().max()?;
        self.counts.iter().position(|&c| c == max)
    }

    /// `bin_start_m,count`
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bin_start_m,count")?;
        for (k, c) in self.counts.iter().enumerate() {
            writeln!(w, "{},{c}", self.bin_start(k))?;
        }
        Ok(())
    }
}

/// Histogram of the average displacements of the populated grids.
pub fn displacement_histogram(
    table: &GridTable,
    bin_width_m: f64,
) -> Result<DisplacementHistogram> {
    let values: Vec<f64> = table
        .populated()
        .map(|(_, c)| c.avg_displacement_m)
        .collect();
    if values.is_empty() {
        return Err(Error::Invalid("grid table has no populated grid".into()));
    }
    DisplacementHistogram::from_values(&values, bin_width_m)
}
