//! Classifier inputs built from fitted models, morphology, and raw beats.

mod fourier;
mod fpca;
mod standardize;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pda::{Mode, OdeModel};
use crate::signal::{Label, Morphology};

pub use fourier::{fourier_features, DEFAULT_FOURIER_COEFFS};
pub use fpca::{
    fpca_fit, fpca_scores, trapezoid_weights, uniform_grid, FpcaModel, DEFAULT_COMPONENTS,
    DEFAULT_GRID_POINTS,
};
pub use standardize::{standardize_apply, standardize_fit, StandardizationTransform};

/// Named feature values for one beat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub label: Option<Label>,
}

impl FeatureVector {
    pub fn new(names: Vec<String>, values: Vec<f64>, label: Option<Label>) -> Result<Self> {
        if names.len() != values.len() {
            return Err(Error::invalid(format!(
                "{} names for {} values",
                names.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "feature '{}' is not finite ({})",
                names[i], values[i]
            )));
        }
        Ok(FeatureVector {
            names,
            values,
            label,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn morphology_names() -> [String; 2] {
    ["r_height".to_string(), "qrs_width".to_string()]
}

/// `[w1, w0, r_height, qrs_width]` from a constant-coefficient model.
pub fn constant_features(model: &OdeModel, morph: &Morphology) -> Result<FeatureVector> {
    let (w1, w0) = model
        .constant_params()
        .ok_or_else(|| Error::invalid("constant features need a constant-mode model"))?;
    let mut names = vec!["w1".to_string(), "w0".to_string()];
    names.extend(morphology_names());
    FeatureVector::new(names, vec![w1, w0, morph.r_height, morph.qrs_width], None)
}

/// `w1(t)` and `w0(t)` of a time-varying model sampled on `grid`.
pub fn parameter_curves(model: &OdeModel, grid: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if model.mode() != Mode::TimeVarying {
        return Err(Error::invalid("parameter curves need a time-varying model"));
    }
    let (lo, hi) = model.basis.domain();
    let slack = 1e-9 * (hi - lo).max(1.0);
    if let Some(&t) = grid.iter().find(|&&t| t < lo - slack || t > hi + slack) {
        return Err(Error::invalid(format!(
            "grid point {t} lies outside the model domain [{lo}, {hi}]"
        )));
    }
    let mut w1 = Vec::with_capacity(grid.len());
    let mut w0 = Vec::with_capacity(grid.len());
    for &t in grid {
        let (a, b) = model.coefficients_at(t)?;
        w1.push(a);
        w0.push(b);
    }
    Ok((w1, w0))
}

/// FPCA scores of `w1(t)` and `w0(t)` followed by morphology.
pub fn varying_features(
    model: &OdeModel,
    fpca_w1: &FpcaModel,
    fpca_w0: &FpcaModel,
    morph: &Morphology,
) -> Result<FeatureVector> {
    let (w1, _) = parameter_curves(model, &fpca_w1.grid)?;
    let (_, w0) = parameter_curves(model, &fpca_w0.grid)?;
    let s1 = fpca_w1.scores(&w1)?;
    let s0 = fpca_w0.scores(&w0)?;
    let mut names: Vec<String> = (1..=s1.len()).map(|k| format!("w1_pc{k}")).collect();
    names.extend((1..=s0.len()).map(|k| format!("w0_pc{k}")));
    names.extend(morphology_names());
    let mut values = s1;
    values.extend(s0);
    values.extend([morph.r_height, morph.qrs_width]);
    FeatureVector::new(names, values, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::make_basis;
    use crate::pda::OdeParams;
    use nalgebra::DMatrix;

    fn model(params: OdeParams) -> OdeModel {
        OdeModel {
            params,
            basis: make_basis((0.0, 0.2), 0.012).unwrap(),
            lambda: 1e-8,
            iterations: 1,
            converged: true,
            sse_p: 0.0,
            noise_variance: 0.0,
        }
    }

    fn varying(shift: f64) -> OdeModel {
        let k = 20;
        let h1 = (0..k)
            .map(|i| 2.0 + shift * (i as f64 * 0.3).sin())
            .collect();
        let h0 = (0..k)
            .map(|i| 9000.0 + 300.0 * shift * (i as f64 * 0.7).cos() + 40.0 * i as f64)
            .collect();
        model(OdeParams::TimeVarying { h1, h0 })
    }

    #[test]
    fn constant_passthrough() {
        let m = model(OdeParams::Constant {
            w1: 2.598,
            w0: 9394.2,
        });
        let fv = constant_features(
            &m,
            &Morphology {
                r_height: 1.2,
                qrs_width: 0.08,
            },
        )
        .unwrap();
        assert_eq!(fv.values, vec![2.598, 9394.2, 1.2, 0.08]);
        assert_eq!(fv.names, vec!["w1", "w0", "r_height", "qrs_width"]);
        let fv = constant_features(
            &m,
            &Morphology {
                r_height: 0.0,
                qrs_width: 0.0,
            },
        )
        .unwrap();
        assert_eq!(&fv.values[2..], &[0.0, 0.0]);
        assert!(constant_features(
            &varying(0.0),
            &Morphology {
                r_height: 0.0,
                qrs_width: 0.0
            }
        )
        .is_err());
    }

    fn fpcas(models: &[OdeModel]) -> (FpcaModel, FpcaModel) {
        let grid = uniform_grid((0.0, 0.2), DEFAULT_GRID_POINTS).unwrap();
        let curves: Vec<(Vec<f64>, Vec<f64>)> = models
            .iter()
            .map(|m| parameter_curves(m, &grid).unwrap())
            .collect();
        let g = grid.len();
        let w1 = DMatrix::from_fn(curves.len(), g, |i, j| curves[i].0[j]);
        let w0 = DMatrix::from_fn(curves.len(), g, |i, j| curves[i].1[j]);
        (
            fpca_fit(&w1, &grid, 4).unwrap(),
            fpca_fit(&w0, &grid, 4).unwrap(),
        )
    }

    #[test]
    fn varying_feature_layout() {
        let models: Vec<OdeModel> = (0..6).map(|i| varying(i as f64 * 0.4 - 1.0)).collect();
        let (f1, f0) = fpcas(&models);
        let morph = Morphology {
            r_height: 1.0,
            qrs_width: 0.06,
        };
        let fv = varying_features(&models[2], &f1, &f0, &morph).unwrap();
        assert_eq!(fv.len(), 10);
        assert_eq!(fv.names[0], "w1_pc1");
        assert_eq!(fv.names[4], "w0_pc1");
        assert_eq!(&fv.values[8..], &[1.0, 0.06]);
        let constant = model(OdeParams::Constant { w1: 1.0, w0: 1.0 });
        assert!(varying_features(&constant, &f1, &f0, &morph).is_err());
    }

    #[test]
    fn mean_coefficients_score_zero() {
        let models: Vec<OdeModel> = (0..6).map(|i| varying(i as f64 * 0.4 - 1.0)).collect();
        let (f1, f0) = fpcas(&models);
        let k = 20;
        let mut h1 = vec![0.0; k];
        let mut h0 = vec![0.0; k];
        for m in &models {
            if let OdeParams::TimeVarying { h1: a, h0: b } = &m.params {
                for i in 0..k {
                    h1[i] += a[i] / models.len() as f64;
                    h0[i] += b[i] / models.len() as f64;
                }
            }
        }
        let mean_model = model(OdeParams::TimeVarying { h1, h0 });
        let fv = varying_features(
            &mean_model,
            &f1,
            &f0,
            &Morphology {
                r_height: 0.0,
                qrs_width: 0.0,
            },
        )
        .unwrap();
        let scale0 = f0.explained_variance[0].sqrt().max(1.0);
        assert!(fv.values[..4].iter().all(|s| s.abs() < 1e-9));
        assert!(fv.values[4..8].iter().all(|s| s.abs() < 1e-9 * scale0));
    }

    #[test]
    fn grid_outside_domain() {
        let m = varying(0.0);
        assert!(parameter_curves(&m, &[0.0, 0.3]).is_err());
    }

    #[test]
    fn feature_vector_checks() {
        assert!(FeatureVector::new(vec!["a".into()], vec![], None).is_err());
        assert!(FeatureVector::new(vec!["a".into()], vec![f64::NAN], None).is_err());
    }
}
