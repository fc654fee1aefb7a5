use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::signal::Label;

/// Confusion counts with abnormal as the positive class. Ratios with a zero
/// denominator are NaN (serialized as `null`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(with = "nan_as_null")]
    pub sensitivity: f64,
    #[serde(with = "nan_as_null")]
    pub specificity: f64,
    #[serde(with = "nan_as_null")]
    pub accuracy: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        f64::NAN
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    pub fn from_counts(tp: usize, fn_: usize, tn: usize, fp: usize) -> Self {
        Metrics {
            tp,
            fn_,
            tn,
            fp,
            sensitivity: ratio(tp, tp + fn_),
            specificity: ratio(tn, tn + fp),
            accuracy: ratio(tp + tn, tp + fn_ + tn + fp),
        }
    }

    pub fn positives(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> usize {
        self.tn + self.fp
    }

    pub fn total(&self) -> usize {
        self.positives() + self.negatives()
    }

    /// Sums two confusion tables.
    pub fn pooled(&self, other: &Metrics) -> Metrics {
        Metrics::from_counts(
            self.tp + other.tp,
            self.fn_ + other.fn_,
            self.tn + other.tn,
            self.fp + other.fp,
        )
    }
}

pub fn evaluate(preds: &[Label], truth: &[Label]) -> Result<Metrics> {
    if preds.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            preds.len(),
            truth.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let (mut tp, mut fn_, mut tn, mut fp) = (0, 0, 0, 0);
    for (p, t) in preds.iter().zip(truth) {
        match (t, p) {
            (Label::Abnormal, Label::Abnormal) => tp += 1,
            (Label::Abnormal, Label::Normal) => fn_ += 1,
            (Label::Normal, Label::Normal) => tn += 1,
            (Label::Normal, Label::Abnormal) => fp += 1,
        }
    }
    Ok(Metrics::from_counts(tp, fn_, tn, fp))
}

pub(crate) mod nan_as_null {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn round3(v: f64) -> f64 {
        (v * 1000.0).round() / 1000.0
    }

    #[test]
    fn record_119_row() {
        let m = Metrics::from_counts(444, 0, 1539, 0);
        assert_eq!((m.sensitivity, m.specificity, m.accuracy), (1.0, 1.0, 1.0));
    }

    #[test]
    fn record_100_row() {
        let m = Metrics::from_counts(2, 32, 2231, 2);
        assert_eq!(round3(m.sensitivity), 0.059);
        assert_eq!(round3(m.specificity), 0.999);
        assert_eq!(round3(m.accuracy), 0.985);
    }

    #[test]
    fn all_normal_predictions() {
        let truth = [
            Label::Abnormal,
            Label::Normal,
            Label::Normal,
            Label::Abnormal,
        ];
        let m = evaluate(&[Label::Normal; 4], &truth).unwrap();
        assert_eq!((m.sensitivity, m.specificity), (0.0, 1.0));
    }

    #[test]
    fn undefined_ratios_are_nan() {
        let m = evaluate(&[Label::Normal; 3], &[Label::Normal; 3]).unwrap();
        assert!(m.sensitivity.is_nan());
        assert_eq!(m.specificity, 1.0);
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"sensitivity\":null"));
        assert!(json.contains("\"fn\":0"));
        let back: Metrics = serde_json::from_str(&json).unwrap();
        assert!(back.sensitivity.is_nan());
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
    }

    #[test]
    fn evaluate_errors() {
        assert!(evaluate(&[Label::Normal], &[]).is_err());
        assert!(evaluate(&[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn accuracy_identity(tp in 0usize..500, fn_ in 0usize..500, tn in 0usize..500, fp in 0usize..500) {
            let m = Metrics::from_counts(tp, fn_, tn, fp);
            let (p, n) = (m.positives(), m.negatives());
            prop_assume!(p > 0 && n > 0);
            let identity = (p as f64 * m.sensitivity + n as f64 * m.specificity) / (p + n) as f64;
            prop_assert!((identity - m.accuracy).abs() <= 4.0 * f64::EPSILON);
        }
    }
}
