use serde::{Deserialize, Serialize};

use super::FeatureVector;
use crate::error::{Error, Result};

/// Per-feature centering and scaling learned from a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationTransform {
    pub means: Vec<f64>,
    /// Population standard deviations. Features constant on the training
    /// set get mean 0 and scale 1, so they pass through unchanged.
    pub scales: Vec<f64>,
}

impl StandardizationTransform {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::invalid("cannot standardize an empty training set"))?;
        let dim = first.len();
        if let Some(i) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::invalid(format!(
                "row {i} has {} features, expected {dim}",
                rows[i].len()
            )));
        }
        let n = rows.len() as f64;
        let mut means = Vec::with_capacity(dim);
        let mut scales = Vec::with_capacity(dim);
        for j in 0..dim {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let sd = (rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n).sqrt();
            // constant columns pass through untouched
            if sd > 0.0 && sd > 1e-12 * mean.abs() {
                means.push(mean);
                scales.push(sd);
            } else {
                means.push(0.0);
                scales.push(1.0);
            }
        }
        Ok(StandardizationTransform { means, scales })
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn apply(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.dim() {
            return Err(Error::invalid(format!(
                "expected {} features, got {}",
                self.dim(),
                row.len()
            )));
        }
        Ok(row
            .iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(x, (m, s))| (x - m) / s)
            .collect())
    }
}

pub fn standardize_fit(train: &[FeatureVector]) -> Result<StandardizationTransform> {
    let rows: Vec<Vec<f64>> = train.iter().map(|f| f.values.clone()).collect();
    StandardizationTransform::fit(&rows)
}

pub fn standardize_apply(
    tf: &StandardizationTransform,
    fv: &FeatureVector,
) -> Result<FeatureVector> {
    Ok(FeatureVector {
        names: fv.names.clone(),
        values: tf.apply(&fv.values)?,
        label: fv.label,
    })
}
