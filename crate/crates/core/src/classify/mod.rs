//! Beat classifiers, confusion metrics, and cross-validation.

mod cv;
mod metrics;
mod mlp;
mod svm;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Label;

pub use cv::{kfold_cv, stratified_folds, CvOutcome, FoldPlan};
pub use metrics::{evaluate, Metrics};
pub use mlp::{
    loss_and_gradient, mlp_predict, mlp_train, MlpModel, MlpParams, HIDDEN, INPUTS, NUM_WEIGHTS,
};
pub use svm::{
    svm_predict, svm_train, svm_train_traced, Kernel, KernelChoice, SvmModel, SvmParams, SvmTrace,
};

/// A predicted label with the raw classifier output: the SVM margin or the
/// network's sigmoid score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: Label,
    pub score: f64,
}

/// Either trained classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "classifier", rename_all = "lowercase")]
pub enum Classifier {
    Svm(SvmModel),
    Mlp(MlpModel),
}

impl Classifier {
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        match self {
            Classifier::Svm(m) => svm_predict(m, x),
            Classifier::Mlp(m) => mlp_predict(m, x),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Classifier::Svm(m) => m.dim(),
            Classifier::Mlp(_) => INPUTS,
        }
    }
}

pub(crate) fn check_training_set(x: &[Vec<f64>], y: &[Label]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "{} feature rows for {} labels",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let dim = x[0].len();
    if dim == 0 {
        return Err(Error::invalid("feature rows are empty"));
    }
    if let Some(i) = x.iter().position(|r| r.len() != dim) {
        return Err(Error::invalid(format!(
            "row {i} has {} features, expected {dim}",
            x[i].len()
        )));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("features must be finite"));
    }
    if !y.contains(&Label::Normal) || !y.contains(&Label::Abnormal) {
        return Err(Error::invalid(
            "training needs at least one record of each class",
        ));
    }
    Ok(())
}
