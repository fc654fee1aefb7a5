//! Functional principal components under the trapezoid inner product.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_GRID_POINTS: usize = 101;
pub const DEFAULT_COMPONENTS: usize = 4;

/// `points` uniform grid points over `domain`, endpoints included.
pub fn uniform_grid(domain: (f64, f64), points: usize) -> Result<Vec<f64>> {
    let (lo, hi) = domain;
    if points < 2 || !(hi > lo) {
        return Err(Error::invalid(format!(
            "grid needs at least 2 points on a nonempty interval, got {points} on [{lo}, {hi}]"
        )));
    }
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points)
        .map(|i| {
            if i + 1 == points {
                hi
            } else {
                lo + step * i as f64
            }
        })
        .collect())
}

/// Trapezoid weights for a strictly increasing grid.
pub fn trapezoid_weights(grid: &[f64]) -> Result<Vec<f64>> {
    if grid.len() < 2 {
        return Err(Error::invalid("grid needs at least 2 points"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("grid must be strictly increasing"));
    }
    let mut w = vec![0.0; grid.len()];
    for (i, pair) in grid.windows(2).enumerate() {
        let h = 0.5 * (pair[1] - pair[0]);
        w[i] += h;
        w[i + 1] += h;
    }
    Ok(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpcaModel {
    pub grid: Vec<f64>,
    pub mean_curve: Vec<f64>,
    /// One component per row, orthonormal under the grid inner product.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
}

impl FpcaModel {
    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        trapezoid_weights(&self.grid).expect("grid validated at fit time")
    }

    /// Grid inner product of two curves.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weights()
            .iter()
            .zip(a.iter().zip(b))
            .map(|(w, (x, y))| w * x * y)
            .sum()
    }

    pub fn scores(&self, curve: &[f64]) -> Result<Vec<f64>> {
        if curve.len() != self.grid.len() {
            return Err(Error::invalid(format!(
                "curve has {} points, grid has {}",
                curve.len(),
                self.grid.len()
            )));
        }
        let w = self.weights();
        let centered: Vec<f64> = curve
            .iter()
            .zip(&self.mean_curve)
            .zip(&w)
            .map(|((x, m), w)| (x - m) * w)
            .collect();
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(&centered).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Mean plus the score-weighted components.
    pub fn reconstruct(&self, scores: &[f64]) -> Result<Vec<f64>> {
        if scores.len() != self.num_components() {
            return Err(Error::invalid(format!(
                "expected {} scores, got {}",
                self.num_components(),
                scores.len()
            )));
        }
        let mut out = self.mean_curve.clone();
        for (s, c) in scores.iter().zip(&self.components) {
            for (o, v) in out.iter_mut().zip(c) {
                *o += s * v;
            }
        }
        Ok(out)
    }
}

/// Fits `m` components to the rows of `curves` sampled on `grid`.
pub fn fpca_fit(curves: &DMatrix<f64>, grid: &[f64], m: usize) -> Result<FpcaModel> {
    let (n, g) = curves.shape();
    if g != grid.len() {
        return Err(Error::invalid(format!(
            "curves have {g} columns but the grid has {} points",
            grid.len()
        )));
    }
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 curves, got {n}")));
    }
    if m > (n - 1).min(g) {
        return Err(Error::invalid(format!(
            "{m} components requested but at most {} are available from {n} curves on {g} points",
            (n - 1).min(g)
        )));
    }
    if curves.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("curves must be finite"));
    }
    let w = trapezoid_weights(grid)?;
    let sqrt_w = DVector::from_iterator(g, w.iter().map(|v| v.sqrt()));
    let mean = curves.row_mean();
    let mut centered = curves.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    // W^1/2 Xc^T Xc W^1/2 / (n - 1)
    let mut scaled = centered;
    for (j, s) in sqrt_w.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*s);
    }
    let cov = scaled.transpose() * &scaled / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });

    let mut components = Vec::with_capacity(m);
    let mut explained_variance = Vec::with_capacity(m);
    for &k in order.iter().take(m) {
        let u = eig.eigenvectors.column(k);
        let mut c: Vec<f64> = u.iter().zip(sqrt_w.iter()).map(|(u, s)| u / s).collect();
        // sign convention: positive weighted mass, else positive largest entry
        let mass: f64 = c.iter().zip(&w).map(|(c, w)| c * w).sum();
        let flip = if mass.abs() > 1e-8 {
            mass < 0.0
        } else {
            let big = c
                .iter()
                .copied()
                .fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            big < 0.0
        };
        if flip {
            c.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(c);
        explained_variance.push(eig.eigenvalues[k].max(0.0));
    }
    Ok(FpcaModel {
        grid: grid.to_vec(),
        mean_curve: mean.iter().copied().collect(),
        components,
        explained_variance,
    })
}

pub fn fpca_scores(fpca: &FpcaModel, curve: &[f64]) -> Result<Vec<f64>> {
    fpca.scores(curve)
}
