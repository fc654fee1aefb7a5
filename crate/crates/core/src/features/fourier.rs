use std::f64::consts::PI;

use super::FeatureVector;
use crate::error::{Error, Result};
use crate::signal::BeatRecord;

pub const DEFAULT_FOURIER_COEFFS: usize = 16;

/// Cosine and sine coefficients of harmonics `1..=n_coeffs/2` over the beat
/// window, interleaved as `[a1, b1, a2, b2, ...]`. The DC term is left out.
pub fn fourier_features(beat: &BeatRecord, n_coeffs: usize) -> Result<FeatureVector> {
    if n_coeffs == 0 || !n_coeffs.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "coefficient count must be even and positive, got {n_coeffs}"
        )));
    }
    let n = beat.len();
    if n < n_coeffs {
        return Err(Error::invalid(format!(
            "beat has {n} samples, fewer than the {n_coeffs} coefficients requested"
        )));
    }
    let scale = 2.0 / n as f64;
    let mut names = Vec::with_capacity(n_coeffs);
    let mut values = Vec::with_capacity(n_coeffs);
    for k in 1..=n_coeffs / 2 {
        let (mut a, mut b) = (0.0, 0.0);
        for (i, x) in beat.values.iter().enumerate() {
            let phase = 2.0 * PI * ((k * i) % n) as f64 / n as f64;
            a += x * phase.cos();
            b += x * phase.sin();
        }
        names.push(format!("a{k}"));
        values.push(a * scale);
        names.push(format!("b{k}"));
        values.push(b * scale);
    }
    FeatureVector::new(names, values, beat.label)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn beat(f: impl Fn(f64) -> f64) -> BeatRecord {
        let n = 72;
        let window = n as f64 / 360.0;
        BeatRecord::new(
            "f",
            360.0,
            (0..n).map(|i| f(i as f64 / 360.0 / window)).collect(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn single_cosine() {
        let fv = fourier_features(&beat(|u| (2.0 * PI * u).cos()), 16).unwrap();
        assert_eq!(fv.values.len(), 16);
        assert!((fv.values[0] - 1.0).abs() < 1e-6);
        assert!(fv.values[1..].iter().all(|v| v.abs() < 1e-6));
        assert_eq!(&fv.names[..4], &["a1", "b1", "a2", "b2"]);
    }

    #[test]
    fn constant_has_no_harmonics() {
        let fv = fourier_features(&beat(|_| 3.7), 16).unwrap();
        assert!(fv.values.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn parseval_on_band_limited_beat() {
        let signal = |u: f64| {
            0.8 * (2.0 * PI * u).cos() - 0.3 * (6.0 * PI * u).sin()
                + 0.5 * (14.0 * PI * u + 0.4).cos()
        };
        let b = beat(signal);
        let fv = fourier_features(&b, 16).unwrap();
        let power = b.values.iter().map(|v| v * v).sum::<f64>() / b.len() as f64;
        let coef_power = fv.values.iter().map(|v| v * v).sum::<f64>() / 2.0;
        assert!(((coef_power - power) / power).abs() < 0.05);
    }

    #[test]
    fn linear_in_values() {
        let x = beat(|u| (u * 9.0).sin() + u * u);
        let y = beat(|u| (u * 3.0).exp());
        let combo = BeatRecord::new(
            "c",
            360.0,
            x.values
                .iter()
                .zip(&y.values)
                .map(|(a, b)| 2.0 * a - 0.5 * b)
                .collect(),
            None,
        )
        .unwrap();
        let (fx, fy, fc) = (
            fourier_features(&x, 16).unwrap(),
            fourier_features(&y, 16).unwrap(),
            fourier_features(&combo, 16).unwrap(),
        );
        for i in 0..16 {
            assert!((fc.values[i] - (2.0 * fx.values[i] - 0.5 * fy.values[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn argument_errors() {
        let b = beat(|u| u);
        assert!(fourier_features(&b, 15).is_err());
        assert!(fourier_features(&b, 0).is_err());
        let short = BeatRecord::new("s", 360.0, vec![1.0; 10], None).unwrap();
        assert!(fourier_features(&short, 16).is_err());
    }
}
