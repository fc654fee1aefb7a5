//! Seeded synthetic beats drawn from the closed-form free response.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{BeatRecord, Label};
use crate::dynamics::free_response_at;
use crate::error::{Error, Result};

/// Free response of `x'' + w1 x' + w0 x = 0` sampled at `sample_rate` for
/// `duration` seconds, plus Gaussian noise from a ChaCha stream keyed by `seed`.
#[allow(clippy::too_many_arguments)]
pub fn synth_beat(
    w1: f64,
    w0: f64,
    x0: f64,
    v0: f64,
    sample_rate: f64,
    duration: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<BeatRecord> {
    if !(sample_rate > 0.0) || !sample_rate.is_finite() {
        return Err(Error::invalid(format!(
            "sample rate must be positive, got {sample_rate}"
        )));
    }
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::invalid(format!(
            "duration must be positive, got {duration}"
        )));
    }
    if !(noise_sd >= 0.0) || !noise_sd.is_finite() {
        return Err(Error::invalid(format!(
            "noise sd must be non-negative, got {noise_sd}"
        )));
    }
    if ![w1, w0, x0, v0].iter().all(|v| v.is_finite()) {
        return Err(Error::invalid(
            "coefficients and initial conditions must be finite",
        ));
    }
    let n = (duration * sample_rate).round() as usize;
    if n == 0 {
        return Err(Error::invalid("duration is shorter than one sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::invalid(e.to_string()))?;
    let values = (0..n)
        .map(|k| {
            let clean = free_response_at(w1, w0, x0, v0, k as f64 / sample_rate);
            if noise_sd > 0.0 {
                clean + noise.sample(&mut rng)
            } else {
                clean
            }
        })
        .collect();
    BeatRecord::new("synthetic", sample_rate, values, None)
}

/// How to draw one class of synthetic beats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub label: Label,
    pub count: usize,
    pub w1_range: (f64, f64),
    pub w0_range: (f64, f64),
    pub noise_sd: f64,
    #[serde(default = "default_x0")]
    pub x0: f64,
    #[serde(default)]
    pub v0: f64,
}

fn default_x0() -> f64 {
    1.0
}

impl ClassSpec {
    /// Lightly damped fast oscillations.
    pub fn normal(count: usize) -> Self {
        ClassSpec {
            label: Label::Normal,
            count,
            w1_range: (1.5, 3.5),
            w0_range: (8000.0, 11000.0),
            noise_sd: 0.05,
            x0: 1.0,
            v0: 0.0,
        }
    }

    /// Growing slower oscillations.
    pub fn abnormal(count: usize) -> Self {
        ClassSpec {
            label: Label::Abnormal,
            count,
            w1_range: (-8.0, -5.0),
            w0_range: (3500.0, 5500.0),
            noise_sd: 0.05,
            x0: 1.0,
            v0: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("w1", self.w1_range), ("w0", self.w0_range)] {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::invalid(format!(
                    "{} class: {name} range [{lo}, {hi}] is not a finite interval",
                    self.label
                )));
            }
        }
        let (lo, hi) = self.w1_range;
        match self.label {
            Label::Normal if lo <= 0.0 => Err(Error::invalid(format!(
                "normal class needs w1 > 0, range starts at {lo}"
            ))),
            Label::Abnormal if hi >= 0.0 => Err(Error::invalid(format!(
                "abnormal class needs w1 < 0, range ends at {hi}"
            ))),
            _ if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() => Err(Error::invalid(
                format!("{} class: noise sd must be non-negative", self.label),
            )),
            _ if !self.x0.is_finite() || !self.v0.is_finite() => Err(Error::invalid(format!(
                "{} class: initial conditions must be finite",
                self.label
            ))),
            _ => Ok(()),
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Labeled beats for every class, in class order. The same seed always gives
/// the same dataset.
pub fn synth_dataset(
    classes: &[ClassSpec],
    sample_rate: f64,
    duration: f64,
    seed: u64,
) -> Result<Vec<BeatRecord>> {
    for c in classes {
        c.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(classes.iter().map(|c| c.count).sum());
    for class in classes {
        for i in 0..class.count {
            let w1 = draw(&mut rng, class.w1_range);
            let w0 = draw(&mut rng, class.w0_range);
            let noise_seed: u64 = rng.gen();
            let mut beat = synth_beat(
                w1,
                w0,
                class.x0,
                class.v0,
                sample_rate,
                duration,
                class.noise_sd,
                noise_seed,
            )?;
            beat.source_id = format!("synthetic-{}-{i:04}", class.label.code());
            beat.label = Some(class.label);
            out.push(beat);
        }
    }
    Ok(out)
}
