use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-feature affine map `z = (v - shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    pub fn new(shift: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        let n = Normalizer { shift, scale };
        n.validate()?;
        Ok(n)
    }

    pub fn identity(dim: usize) -> Self {
        Normalizer {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Mean and population standard deviation per column. Constant columns
    /// get scale 1 so they map to zero.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyDataset)?;
        let dim = first.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                context: "normalizer rows",
                expected: dim,
                got: bad.len(),
            });
        }
        let n = rows.len() as f64;
        let mut shift = vec![0.0; dim];
        for r in rows {
            for (s, v) in shift.iter_mut().zip(r) {
                *s += v;
            }
        }
        for s in &mut shift {
            *s /= n;
        }
        let mut scale = vec![0.0; dim];
        for r in rows {
            for ((q, v), m) in scale.iter_mut().zip(r).zip(&shift) {
                *q += (v - m).powi(2);
            }
        }
        for q in &mut scale {
            let sd = (*q / n).sqrt();
            *q = if sd > 0.0 && sd.is_finite() { sd } else { 1.0 };
        }
        Normalizer::new(shift, scale)
    }

    pub fn len(&self) -> usize {
        self.shift.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shift.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.shift.len() != self.scale.len() {
            return Err(Error::DimensionMismatch {
                context: "normalizer shift/scale",
                expected: self.shift.len(),
                got: self.scale.len(),
            });
        }
        if !self.shift.iter().all(|v| v.is_finite()) {
            return Err(Error::Invalid("normalizer shift must be finite".into()));
        }
        if !self.scale.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::Invalid("normalizer scale must be positive".into()));
        }
        Ok(())
    }

    pub fn normalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(x, (m, s))| x * s + m)
            .collect()
    }
}
