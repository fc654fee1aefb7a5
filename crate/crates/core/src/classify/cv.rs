use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::metrics::{evaluate, Metrics};
use crate::error::{Error, Result};
use crate::signal::Label;

/// Fold index for every record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub assignment: Vec<usize>,
    pub warnings: Vec<String>,
}

impl FoldPlan {
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let (test, train): (Vec<usize>, Vec<usize>) =
            (0..self.assignment.len()).partition(|&i| self.assignment[i] == fold);
        (train, test)
    }
}

/// Shuffles each class with the seed and deals it round-robin into `k` folds.
pub fn stratified_folds(labels: &[Label], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    if k > labels.len() {
        return Err(Error::invalid(format!(
            "{k} folds requested for {} records",
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    let mut warnings = Vec::new();
    let mut next = 0;
    for class in [Label::Normal, Label::Abnormal] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if !members.is_empty() && members.len() < k {
            warnings.push(format!(
                "{class} class has {} records for {k} folds; some folds will lack it",
                members.len()
            ));
        }
        members.shuffle(&mut rng);
        for i in members {
            assignment[i] = next % k;
            next += 1;
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(FoldPlan {
        k,
        assignment,
        warnings,
    })
}

/// Pooled out-of-fold results.
#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub metrics: Metrics,
    /// Out-of-fold prediction for every record, in input order.
    pub predictions: Vec<Label>,
    pub plan: FoldPlan,
}

/// Stratified k-fold cross-validation. `train_predict(train, test)` fits on
/// the training indices and labels the test indices; any per-fold fitting
/// such as standardization belongs inside it. A fold whose training part has
/// a single class predicts that class and records a warning.
pub fn kfold_cv<F>(labels: &[Label], k: usize, seed: u64, train_predict: F) -> Result<CvOutcome>
where
    F: Fn(&[usize], &[usize]) -> Result<Vec<Label>> + Sync,
{
    let mut plan = stratified_folds(labels, k, seed)?;
    let per_fold: Vec<(Vec<usize>, Vec<Label>, Option<String>)> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let (train, test) = plan.split(fold);
            if test.is_empty() {
                return Ok((test, Vec::new(), None));
            }
            let first = labels[train[0]];
            if train.iter().all(|&i| labels[i] == first) {
                let note = format!("fold {fold}: training part has only {first} records");
                return Ok((test.clone(), vec![first; test.len()], Some(note)));
            }
            let preds = train_predict(&train, &test)?;
            if preds.len() != test.len() {
                return Err(Error::invalid(format!(
                    "fold {fold}: {} predictions for {} test records",
                    preds.len(),
                    test.len()
                )));
            }
            Ok((test, preds, None))
        })
        .collect::<Result<_>>()?;
    let mut predictions = vec![Label::Normal; labels.len()];
    for (test, preds, note) in per_fold {
        for (i, p) in test.into_iter().zip(preds) {
            predictions[i] = p;
        }
        if let Some(note) = note {
            log::warn!("{note}");
            plan.warnings.push(note);
        }
    }
    let metrics = evaluate(&predictions, labels)?;
    Ok(CvOutcome {
        metrics,
        predictions,
        plan,
    })
}
