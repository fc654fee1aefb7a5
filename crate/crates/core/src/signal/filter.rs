//! 5–12 Hz band-pass filtering.
//!
//! At 360 Hz the filter is an integer-coefficient Pan–Tompkins cascade with
//! its lengths rescaled from the original 200 Hz design:
//!
//! * low-pass `(1 - z^-11)^2 / (1 - z^-1)^2`, a triangular FIR of 21 taps
//!   (gain 121, first null at 32.7 Hz, half-power near 11 Hz);
//! * high-pass `z^-28 - (1/57) sum_{k<57} z^-k`, an all-pass delay minus a
//!   57-tap moving average (first null of the average at 6.3 Hz).
//!
//! Both stages are linear phase, so the cascade delays by exactly 38 samples.
//! The output is shifted back by that delay so annotation indices stay aligned,
//! and the ends are edge-padded to keep the length.
//!
//! Other sample rates use a second-order Butterworth band-pass (5–12 Hz)
//! run forward and backward.

use std::f64::consts::PI;

use super::ContinuousRecording;
use crate::error::{Error, Result};

/// Sample rate of the integer-coefficient path.
pub const PAN_TOMPKINS_RATE: f64 = 360.0;

const LOW_PASS_ZEROS: usize = 11;
const HIGH_PASS_LEN: usize = 57;

/// Group delay of the 360 Hz cascade, in samples.
pub const PAN_TOMPKINS_DELAY: usize = (LOW_PASS_ZEROS - 1) + (HIGH_PASS_LEN - 1) / 2;

const BAND_LOW_HZ: f64 = 5.0;
const BAND_HIGH_HZ: f64 = 12.0;

/// Integer taps of the cascade and their common divisor.
pub fn pan_tompkins_kernel() -> (Vec<i64>, i64) {
    let m = LOW_PASS_ZEROS as i64;
    let low: Vec<i64> = (0..2 * m - 1).map(|k| m - (k - (m - 1)).abs()).collect();
    let mid = (HIGH_PASS_LEN - 1) / 2;
    let high: Vec<i64> = (0..HIGH_PASS_LEN)
        .map(|k| {
            if k == mid {
                HIGH_PASS_LEN as i64 - 1
            } else {
                -1
            }
        })
        .collect();
    let mut taps = vec![0i64; low.len() + high.len() - 1];
    for (i, a) in low.iter().enumerate() {
        for (j, b) in high.iter().enumerate() {
            taps[i + j] += a * b;
        }
    }
    (taps, m * m * HIGH_PASS_LEN as i64)
}

fn pan_tompkins(values: &[f64]) -> Vec<f64> {
    let (taps, gain) = pan_tompkins_kernel();
    let h: Vec<f64> = taps.iter().map(|&t| t as f64 / gain as f64).collect();
    let n = values.len() as isize;
    let delay = PAN_TOMPKINS_DELAY as isize;
    let at = |i: isize| values[i.clamp(0, n - 1) as usize];
    (0..n)
        .map(|i| {
            // causal output at i + delay
            h.iter()
                .enumerate()
                .map(|(k, hk)| hk * at(i + delay - k as isize))
                .sum()
        })
        .collect()
}

/// Bilinear-transformed `B s / (s^2 + B s + w0^2)` with prewarped band edges.
fn butterworth_band_pass(fs: f64) -> ([f64; 3], [f64; 3]) {
    let k = 2.0 * fs;
    let lo = k * (PI * BAND_LOW_HZ / fs).tan();
    let hi = k * (PI * BAND_HIGH_HZ / fs).tan();
    let bw = hi - lo;
    let w0sq = lo * hi;
    let a0 = k * k + bw * k + w0sq;
    let b = [bw * k / a0, 0.0, -bw * k / a0];
    let a = [
        1.0,
        (2.0 * w0sq - 2.0 * k * k) / a0,
        (k * k - bw * k + w0sq) / a0,
    ];
    (b, a)
}

fn biquad(b: &[f64; 3], a: &[f64; 3], x: &[f64]) -> Vec<f64> {
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    x.iter()
        .map(|&x0| {
            let y0 = b[0] * x0 + b[1] * x1 + b[2] * x2 - a[1] * y1 - a[2] * y2;
            x2 = x1;
            x1 = x0;
            y2 = y1;
            y1 = y0;
            y0
        })
        .collect()
}

fn forward_backward(values: &[f64], fs: f64) -> Vec<f64> {
    let (b, a) = butterworth_band_pass(fs);
    let pad = fs.ceil() as usize;
    let first = values[0];
    let last = values[values.len() - 1];
    let mut ext = Vec::with_capacity(values.len() + 2 * pad);
    ext.extend(std::iter::repeat_n(first, pad));
    ext.extend_from_slice(values);
    ext.extend(std::iter::repeat_n(last, pad));
    let mut y = biquad(&b, &a, &ext);
    y.reverse();
    let mut y = biquad(&b, &a, &y);
    y.reverse();
    y[pad..pad + values.len()].to_vec()
}

/// Band-passes a recording at 5–12 Hz, keeping length and annotation alignment.
pub fn bandpass(recording: &ContinuousRecording) -> Result<ContinuousRecording> {
    let fs = recording.sample_rate;
    if !(fs > 0.0) || !fs.is_finite() {
        return Err(Error::invalid(format!(
            "sample rate must be positive, got {fs}"
        )));
    }
    let values = if recording.values.is_empty() {
        Vec::new()
    } else if (fs - PAN_TOMPKINS_RATE).abs() < 1e-9 {
        pan_tompkins(&recording.values)
    } else {
        if fs <= 2.0 * BAND_HIGH_HZ {
            return Err(Error::invalid(format!(
                "sample rate {fs} Hz is too low for a {BAND_HIGH_HZ} Hz band edge"
            )));
        }
        forward_backward(&recording.values, fs)
    };
    Ok(ContinuousRecording {
        source_id: recording.source_id.clone(),
        sample_rate: fs,
        values,
        annotations: recording.annotations.clone(),
    })
}
