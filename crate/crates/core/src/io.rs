//! File formats: recordings, annotations, JSON documents, and CSV tables.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::classify::Metrics;
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::signal::{Annotation, BeatRecord, ContinuousRecording, Label};

/// Version stamped on every JSON document written by this crate.
pub const SCHEMA_VERSION: u32 = 1;

/// JSON documents carry a schema name and version next to their payload.
pub trait Document: Serialize + DeserializeOwned {
    const SCHEMA: &'static str;
}

macro_rules! document {
    ($ty:ty, $name:literal) => {
        impl Document for $ty {
            const SCHEMA: &'static str = $name;
        }
    };
}
pub(crate) use document;

pub fn to_json<D: Document>(doc: &D) -> Result<String> {
    let mut s = serde_json::to_string_pretty(doc)?;
    s.push('\n');
    Ok(s)
}

pub fn from_json<D: Document>(text: &str, location: &str) -> Result<D> {
    #[derive(Deserialize)]
    struct Header {
        schema: Option<String>,
        schema_version: Option<u32>,
    }
    let at = |e: serde_json::Error| {
        Error::parse(
            format!("{location}:{}:{}", e.line(), e.column()),
            e.to_string(),
        )
    };
    // The header is checked first so a wrong document type is named as such.
    let header: Header = serde_json::from_str(text).map_err(at)?;
    let schema = header.schema.unwrap_or_default();
    if schema != D::SCHEMA {
        return Err(Error::parse(
            location,
            format!("expected a '{}' document, found '{schema}'", D::SCHEMA),
        ));
    }
    if let Some(version) = header.schema_version.filter(|v| *v != SCHEMA_VERSION) {
        return Err(Error::parse(
            location,
            format!("unsupported schema version {version} (this build reads {SCHEMA_VERSION})"),
        ));
    }
    serde_json::from_str(text).map_err(at)
}

/// Reads a whole file; the error names the path.
pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| with_path(e, path))
}

/// Writes a whole file; the error names the path.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| with_path(e, path))
}

fn with_path(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

pub fn write_document<D: Document>(doc: &D, path: &Path) -> Result<()> {
    write_bytes(path, to_json(doc)?.as_bytes())
}

pub fn read_document<D: Document>(path: &Path) -> Result<D> {
    let text = read_text(path)?;
    from_json(&text, &path.display().to_string())
}

/// An array of beats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeatDataset {
    pub schema: String,
    pub schema_version: u32,
    pub records: Vec<BeatRecord>,
}

document!(BeatDataset, "odeclass.beats");

impl BeatDataset {
    pub fn new(records: Vec<BeatRecord>) -> Self {
        BeatDataset {
            schema: Self::SCHEMA.to_string(),
            schema_version: SCHEMA_VERSION,
            records,
        }
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "recording".to_string())
}

/// Recording CSV: a `# sample_rate=<Hz>` line, then one value per line.
pub fn parse_recording(text: &str, location: &str) -> Result<(f64, Vec<f64>)> {
    let mut sample_rate = None;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let at = || format!("{location}:{}", i + 1);
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let header = line.trim_start_matches('#').trim();
        if let Some(rate) = header.strip_prefix("sample_rate=") {
            if sample_rate.is_some() || !values.is_empty() {
                return Err(Error::parse(
                    at(),
                    "sample_rate must appear once, before the values",
                ));
            }
            let rate: f64 = rate
                .trim()
                .parse()
                .map_err(|_| Error::parse(at(), format!("bad sample rate '{}'", rate.trim())))?;
            if !(rate > 0.0) || !rate.is_finite() {
                return Err(Error::parse(
                    at(),
                    format!("sample rate must be positive, got {rate}"),
                ));
            }
            sample_rate = Some(rate);
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        if sample_rate.is_none() {
            return Err(Error::parse(at(), "missing 'sample_rate=<Hz>' header"));
        }
        let v: f64 = line
            .parse()
            .map_err(|_| Error::parse(at(), format!("bad sample value '{line}'")))?;
        if !v.is_finite() {
            return Err(Error::parse(
                at(),
                format!("sample value must be finite, got {v}"),
            ));
        }
        values.push(v);
    }
    let rate =
        sample_rate.ok_or_else(|| Error::parse(location, "missing 'sample_rate=<Hz>' header"))?;
    Ok((rate, values))
}

pub fn format_recording(sample_rate: f64, values: &[f64]) -> String {
    let mut out = format!("# sample_rate={sample_rate}\n");
    for v in values {
        out.push_str(&format!("{v}\n"));
    }
    out
}

/// Annotation CSV rows `sample_index,label` with label `N` or `A`. A header
/// row is optional.
pub fn parse_annotations(text: &str, location: &str) -> Result<Vec<Annotation>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(i as u64 + 1);
        let at = || format!("{location}:{line}");
        if row.len() != 2 {
            return Err(Error::parse(
                at(),
                format!("expected 2 fields, found {}", row.len()),
            ));
        }
        if i == 0 && &row[0] == "sample_index" {
            continue;
        }
        let index: usize = row[0]
            .parse()
            .map_err(|_| Error::parse(at(), format!("bad sample index '{}'", &row[0])))?;
        let label = Label::from_code(&row[1]).ok_or_else(|| {
            Error::parse(at(), format!("label must be N or A, got '{}'", &row[1]))
        })?;
        out.push(Annotation {
            sample_index: index,
            label,
        });
    }
    Ok(out)
}

pub fn format_annotations(annotations: &[Annotation]) -> String {
    let mut out = String::from("sample_index,label\n");
    for a in annotations {
        out.push_str(&format!("{},{}\n", a.sample_index, a.label.code()));
    }
    out
}

pub fn read_recording(recording: &Path, annotations: &Path) -> Result<ContinuousRecording> {
    let (rate, values) = parse_recording(&read_text(recording)?, &recording.display().to_string())?;
    let ann = parse_annotations(&read_text(annotations)?, &annotations.display().to_string())?;
    ContinuousRecording::new(stem(recording), rate, values, ann)
        .map_err(|e| Error::parse(annotations.display().to_string(), e.to_string()))
}

/// Feature table: one column per feature name, then `label`.
pub fn write_feature_csv<W: Write>(rows: &[FeatureVector], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if let Some(first) = rows.first() {
        let mut header: Vec<&str> = first.names.iter().map(String::as_str).collect();
        header.push("label");
        w.write_record(&header)?;
    }
    for (i, r) in rows.iter().enumerate() {
        if rows[0].names != r.names {
            return Err(Error::invalid(format!(
                "feature row {i} has different columns"
            )));
        }
        let mut rec: Vec<String> = r.values.iter().map(|v| v.to_string()).collect();
        rec.push(r.label.map(|l| l.to_string()).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_feature_csv(text: &str, location: &str) -> Result<Vec<FeatureVector>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.last().map(String::as_str) != Some("label") {
        return Err(Error::parse(
            format!("{location}:1"),
            "last column must be 'label'",
        ));
    }
    let names = header[..header.len() - 1].to_vec();
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let at = || format!("{location}:{line}");
        let values = row
            .iter()
            .take(names.len())
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::parse(at(), format!("bad number '{v}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        let label = match row.get(names.len()) {
            Some("") | None => None,
            Some(l) => Some(
                l.parse::<Label>()
                    .map_err(|e| Error::parse(at(), e.to_string()))?,
            ),
        };
        out.push(
            FeatureVector::new(names.clone(), values, label)
                .map_err(|e| Error::parse(at(), e.to_string()))?,
        );
    }
    Ok(out)
}

/// One line of the per-file results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub file_id: String,
    pub n_normal: usize,
    pub n_abnormal: usize,
    pub pipeline: String,
    pub metrics: Metrics,
}

fn ratio_cell(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.6}")
    }
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "file_id",
        "n_normal",
        "n_abnormal",
        "pipeline",
        "sensitivity",
        "specificity",
        "accuracy",
        "tp",
        "fn",
        "tn",
        "fp",
    ])?;
    for r in rows {
        let m = &r.metrics;
        w.write_record([
            r.file_id.clone(),
            r.n_normal.to_string(),
            r.n_abnormal.to_string(),
            r.pipeline.clone(),
            ratio_cell(m.sensitivity),
            ratio_cell(m.specificity),
            ratio_cell(m.accuracy),
            m.tp.to_string(),
            m.fn_.to_string(),
            m.tn.to_string(),
            m.fp.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes any serializable rows as CSV with a header.
pub fn write_csv<W: Write, T: Serialize>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
