//! Sampled curves, ECG-style preprocessing, and the synthetic beat generator.

mod filter;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use filter::{bandpass, pan_tompkins_kernel, PAN_TOMPKINS_DELAY, PAN_TOMPKINS_RATE};
pub use synth::{synth_beat, synth_dataset, ClassSpec};

/// Beat class. `Abnormal` is the positive class for all metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Abnormal,
}

impl Label {
    /// One-letter annotation code (`N` or `A`).
    pub fn code(self) -> &'static str {
        match self {
            Label::Normal => "N",
            Label::Abnormal => "A",
        }
    }

    pub fn from_code(code: &str) -> Option<Label> {
        match code.trim() {
            "N" => Some(Label::Normal),
            "A" => Some(Label::Abnormal),
            _ => None,
        }
    }

    pub fn is_abnormal(self) -> bool {
        self == Label::Abnormal
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::Normal => "normal",
            Label::Abnormal => "abnormal",
        })
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "normal" | "N" => Ok(Label::Normal),
            "abnormal" | "A" => Ok(Label::Abnormal),
            other => Err(Error::invalid(format!("unknown label '{other}'"))),
        }
    }
}

/// One uniformly sampled curve segment. Times are relative to the first sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBeat")]
pub struct BeatRecord {
    pub source_id: String,
    pub sample_rate: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub label: Option<Label>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBeat {
    source_id: String,
    sample_rate: f64,
    times: Vec<f64>,
    values: Vec<f64>,
    label: Option<Label>,
}

impl TryFrom<RawBeat> for BeatRecord {
    type Error = Error;

    fn try_from(raw: RawBeat) -> Result<Self> {
        let rec = BeatRecord {
            source_id: raw.source_id,
            sample_rate: raw.sample_rate,
            times: raw.times,
            values: raw.values,
            label: raw.label,
        };
        rec.validate()?;
        Ok(rec)
    }
}

impl BeatRecord {
    pub fn new(
        source_id: impl Into<String>,
        sample_rate: f64,
        values: Vec<f64>,
        label: Option<Label>,
    ) -> Result<Self> {
        let times = (0..values.len()).map(|k| k as f64 / sample_rate).collect();
        let rec = BeatRecord {
            source_id: source_id.into(),
            sample_rate,
            times,
            values,
            label,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0) || !self.sample_rate.is_finite() {
            return Err(Error::invalid(format!(
                "record '{}': sample rate must be positive",
                self.source_id
            )));
        }
        if self.times.len() != self.values.len() {
            return Err(Error::invalid(format!(
                "record '{}': {} times but {} values",
                self.source_id,
                self.times.len(),
                self.values.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "record '{}': values must be finite",
                self.source_id
            )));
        }
        let dt = 1.0 / self.sample_rate;
        for (k, w) in self.times.windows(2).enumerate() {
            if ((w[1] - w[0]) - dt).abs() > 1e-6 * dt {
                return Err(Error::invalid(format!(
                    "record '{}': times are not uniform at 1/sample_rate (index {})",
                    self.source_id,
                    k + 1
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Window length `len / sample_rate` in seconds.
    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate
    }

    /// `[first time, last time]`, the natural fitting domain.
    pub fn domain(&self) -> (f64, f64) {
        (
            self.times.first().copied().unwrap_or(0.0),
            self.times.last().copied().unwrap_or(0.0),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub sample_index: usize,
    pub label: Label,
}

/// A long single-lead recording with beat annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousRecording {
    pub source_id: String,
    pub sample_rate: f64,
    pub values: Vec<f64>,
    pub annotations: Vec<Annotation>,
}

impl ContinuousRecording {
    pub fn new(
        source_id: impl Into<String>,
        sample_rate: f64,
        values: Vec<f64>,
        annotations: Vec<Annotation>,
    ) -> Result<Self> {
        let rec = ContinuousRecording {
            source_id: source_id.into(),
            sample_rate,
            values,
            annotations,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0) || !self.sample_rate.is_finite() {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("recording values must be finite"));
        }
        for (i, a) in self.annotations.iter().enumerate() {
            if a.sample_index >= self.values.len() {
                return Err(Error::invalid(format!(
                    "annotation {i} at sample {} is past the end of the recording ({} samples)",
                    a.sample_index,
                    self.values.len()
                )));
            }
            if i > 0 && a.sample_index <= self.annotations[i - 1].sample_index {
                return Err(Error::invalid(format!(
                    "annotation {i} at sample {} is not strictly after the previous one",
                    a.sample_index
                )));
            }
        }
        Ok(())
    }
}

/// Beats cut from a recording, plus the number of annotations that were
/// skipped because their window ran past either end.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub beats: Vec<BeatRecord>,
    pub dropped: usize,
}

/// Cuts one window of `window` seconds centered on every annotation.
pub fn segment_beats(recording: &ContinuousRecording, window: f64) -> Result<Segmentation> {
    if !(window > 0.0) || !window.is_finite() {
        return Err(Error::invalid(format!(
            "window must be positive, got {window}"
        )));
    }
    let n = (window * recording.sample_rate).round() as usize;
    if n == 0 {
        return Err(Error::invalid("window is shorter than one sample"));
    }
    let half = n / 2;
    let mut beats = Vec::with_capacity(recording.annotations.len());
    let mut dropped = 0;
    for a in &recording.annotations {
        if a.sample_index < half || a.sample_index - half + n > recording.values.len() {
            dropped += 1;
            continue;
        }
        let start = a.sample_index - half;
        beats.push(BeatRecord::new(
            format!("{}:{}", recording.source_id, a.sample_index),
            recording.sample_rate,
            recording.values[start..start + n].to_vec(),
            Some(a.label),
        )?);
    }
    Ok(Segmentation { beats, dropped })
}

/// R-peak height and QRS width of one beat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Morphology {
    pub r_height: f64,
    pub qrs_width: f64,
}

/// Fraction of the R height that delimits the complex.
pub const WIDTH_THRESHOLD: f64 = 0.1;

/// `r_height` is the largest absolute value; `qrs_width` spans the first to
/// the last sample whose magnitude reaches 10% of it.
pub fn morphology(beat: &BeatRecord) -> Result<Morphology> {
    if beat.is_empty() {
        return Err(Error::invalid(format!(
            "beat '{}' is empty",
            beat.source_id
        )));
    }
    let r_height = beat.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if r_height == 0.0 {
        return Ok(Morphology {
            r_height: 0.0,
            qrs_width: 0.0,
        });
    }
    let threshold = WIDTH_THRESHOLD * r_height;
    let first = beat
        .values
        .iter()
        .position(|v| v.abs() >= threshold)
        .unwrap_or(0);
    let last = beat
        .values
        .iter()
        .rposition(|v| v.abs() >= threshold)
        .unwrap_or(first);
    Ok(Morphology {
        r_height,
        qrs_width: (last - first + 1) as f64 / beat.sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recording(n: usize, ann: &[usize]) -> ContinuousRecording {
        ContinuousRecording::new(
            "rec",
            360.0,
            vec![0.0; n],
            ann.iter()
                .map(|&i| Annotation {
                    sample_index: i,
                    label: Label::Normal,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn segments_interior_annotations() {
        let seg = segment_beats(&recording(2000, &[300, 900, 1500]), 0.2).unwrap();
        assert_eq!(seg.beats.len(), 3);
        assert!(seg.beats.iter().all(|b| b.len() == 72));
        assert_eq!(seg.dropped, 0);
        assert_eq!(seg.beats[1].source_id, "rec:900");
    }

    #[test]
    fn drops_boundary_windows() {
        let seg = segment_beats(&recording(2000, &[5, 1000, 1990]), 0.2).unwrap();
        assert_eq!(seg.beats.len(), 1);
        assert_eq!(seg.dropped, 2);
        let seg = segment_beats(&recording(2000, &[]), 0.2).unwrap();
        assert!(seg.beats.is_empty());
        assert!(segment_beats(&recording(10, &[]), 0.0).is_err());
    }

    #[test]
    fn window_alignment() {
        let mut rec = recording(1000, &[500]);
        rec.values[500] = 1.0;
        let seg = segment_beats(&rec, 0.2).unwrap();
        assert_eq!(seg.beats[0].values[36], 1.0);
    }

    #[test]
    fn annotation_validation() {
        let bad = ContinuousRecording::new(
            "x",
            360.0,
            vec![0.0; 10],
            vec![
                Annotation {
                    sample_index: 5,
                    label: Label::Normal,
                },
                Annotation {
                    sample_index: 5,
                    label: Label::Abnormal,
                },
            ],
        );
        assert!(bad.is_err());
        let past = ContinuousRecording::new(
            "x",
            360.0,
            vec![0.0; 10],
            vec![Annotation {
                sample_index: 10,
                label: Label::Normal,
            }],
        );
        assert!(past.is_err());
    }

    #[test]
    fn morphology_measures() {
        let tri: Vec<f64> = (0..72)
            .map(|k| 1.0 - ((k as f64 - 36.0) / 20.0).abs())
            .map(|v| v.max(0.0))
            .collect();
        let m = morphology(&BeatRecord::new("tri", 360.0, tri, None).unwrap()).unwrap();
        assert_eq!(m.r_height, 1.0);

        let rect: Vec<f64> = (0..72)
            .map(|k| if (27..45).contains(&k) { 1.0 } else { 0.0 })
            .collect();
        let m = morphology(&BeatRecord::new("rect", 360.0, rect, None).unwrap()).unwrap();
        assert!((m.qrs_width - 0.05).abs() <= 1.0 / 360.0);

        let inverted: Vec<f64> = (0..72).map(|k| if k == 30 { -2.0 } else { 0.0 }).collect();
        let m = morphology(&BeatRecord::new("inv", 360.0, inverted, None).unwrap()).unwrap();
        assert_eq!(m.r_height, 2.0);

        let m = morphology(&BeatRecord::new("zero", 360.0, vec![0.0; 72], None).unwrap()).unwrap();
        assert_eq!((m.r_height, m.qrs_width), (0.0, 0.0));
    }

    #[test]
    fn beat_json_validates() {
        let ok = r#"{"source_id":"a","sample_rate":2.0,"times":[0.0,0.5],"values":[1.0,2.0],"label":"normal"}"#;
        let b: BeatRecord = serde_json::from_str(ok).unwrap();
        assert_eq!(b.label, Some(Label::Normal));
        let uneven = r#"{"source_id":"a","sample_rate":2.0,"times":[0.0,0.7],"values":[1.0,2.0],"label":null}"#;
        assert!(serde_json::from_str::<BeatRecord>(uneven).is_err());
        let short =
            r#"{"source_id":"a","sample_rate":2.0,"times":[0.0],"values":[1.0,2.0],"label":null}"#;
        assert!(serde_json::from_str::<BeatRecord>(short).is_err());
    }
}
