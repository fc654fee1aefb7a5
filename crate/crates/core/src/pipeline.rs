//! End-to-end runs: fit every beat, analyze the fitted dynamics, build
//! features, and train or cross-validate the classifiers.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::make_basis;
use crate::classify::{kfold_cv, mlp_train, svm_train, Classifier, CvOutcome};
use crate::config::{ClassifierKind, PipelineConfig};
use crate::dynamics::{impulse_response, stability, step_response, Regime, ResponseKind};
use crate::error::{Error, Result};
use crate::features::{
    constant_features, fourier_features, fpca_fit, parameter_curves, uniform_grid, FeatureVector,
    FpcaModel, DEFAULT_FOURIER_COEFFS, DEFAULT_GRID_POINTS,
};
use crate::io::{document, Document, MetricsRow, SCHEMA_VERSION};
use crate::pda::{fit, Mode, OdeModel};
use crate::signal::{
    bandpass, morphology, segment_beats, BeatRecord, ContinuousRecording, Label, Morphology,
};

/// Feature set and classifier pairing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PipelineKind {
    /// Constant coefficients and morphology into an SVM.
    #[serde(rename = "ODE")]
    Ode,
    /// FPCA scores of the coefficient curves and morphology into an SVM.
    #[serde(rename = "ODET")]
    Odet,
    /// Fourier coefficients into the 16-4-1 network.
    #[serde(rename = "NN")]
    Nn,
}

impl PipelineKind {
    pub fn name(self) -> &'static str {
        match self {
            PipelineKind::Ode => "ODE",
            PipelineKind::Odet => "ODET",
            PipelineKind::Nn => "NN",
        }
    }

    /// The model fit the pipeline needs, if any.
    pub fn fit_mode(self) -> Option<Mode> {
        match self {
            PipelineKind::Ode => Some(Mode::Constant),
            PipelineKind::Odet => Some(Mode::TimeVarying),
            PipelineKind::Nn => None,
        }
    }
}

impl std::fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PipelineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ode" => Ok(PipelineKind::Ode),
            "odet" => Ok(PipelineKind::Odet),
            "nn" => Ok(PipelineKind::Nn),
            _ => Err(Error::invalid(format!(
                "unknown pipeline '{s}' (expected ode, odet or nn)"
            ))),
        }
    }
}

/// Pipelines selected by the configuration, in report order.
pub fn configured_pipelines(config: &PipelineConfig) -> Vec<PipelineKind> {
    let mut out: Vec<PipelineKind> = match config.classifier {
        ClassifierKind::Svm => config
            .mode
            .modes()
            .into_iter()
            .map(|m| match m {
                Mode::Constant => PipelineKind::Ode,
                Mode::TimeVarying => PipelineKind::Odet,
            })
            .collect(),
        ClassifierKind::Mlp => vec![PipelineKind::Nn],
    };
    if config.nn_baseline && !out.contains(&PipelineKind::Nn) {
        out.push(PipelineKind::Nn);
    }
    out
}

/// Result of fitting one beat. Failures are recorded, not fatal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitEntry {
    pub source_id: String,
    pub label: Option<Label>,
    pub mode: Mode,
    pub model: Option<OdeModel>,
    pub error: Option<String>,
}

/// Fitted models for a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSet {
    pub schema: String,
    pub schema_version: u32,
    pub entries: Vec<FitEntry>,
}

document!(ModelSet, "odeclass.models");

impl ModelSet {
    pub fn new(entries: Vec<FitEntry>) -> Self {
        ModelSet {
            schema: Self::SCHEMA.to_string(),
            schema_version: SCHEMA_VERSION,
            entries,
        }
    }
}

fn fit_one(beat: &BeatRecord, config: &PipelineConfig, mode: Mode) -> FitEntry {
    let result = make_basis(beat.domain(), config.knot_spacing).and_then(|basis| {
        fit(
            std::slice::from_ref(beat),
            &basis,
            &config.fit_options(mode),
        )
    });
    let (model, error) = match result {
        Ok((model, _)) => {
            if !model.converged {
                log::debug!(
                    "{}: {mode} fit stopped after {} iterations without converging",
                    beat.source_id,
                    model.iterations
                );
            }
            (Some(model), None)
        }
        Err(e) => {
            log::warn!("{}: {mode} fit failed: {e}", beat.source_id);
            (None, Some(e.to_string()))
        }
    };
    FitEntry {
        source_id: beat.source_id.clone(),
        label: beat.label,
        mode,
        model,
        error,
    }
}

/// Fits one model per beat, in parallel, keeping input order.
pub fn fit_beats(beats: &[BeatRecord], config: &PipelineConfig, mode: Mode) -> Vec<FitEntry> {
    let entries: Vec<FitEntry> = beats.par_iter().map(|b| fit_one(b, config, mode)).collect();
    if let Some(w) = fit_summary(&entries) {
        log::warn!("{w}");
    }
    entries
}

/// One-line note on failed or non-converged fits, if there were any.
pub fn fit_summary(entries: &[FitEntry]) -> Option<String> {
    let failed = entries.iter().filter(|e| e.model.is_none()).count();
    let open = entries
        .iter()
        .filter(|e| e.model.as_ref().is_some_and(|m| !m.converged))
        .count();
    (failed + open > 0).then(|| {
        format!(
            "{} of {} fits failed and {open} stopped at max_iter without converging",
            failed,
            entries.len()
        )
    })
}

/// Fits every mode the configuration asks for.
pub fn fit_configured(beats: &[BeatRecord], config: &PipelineConfig) -> Vec<FitEntry> {
    config
        .mode
        .modes()
        .into_iter()
        .flat_map(|m| fit_beats(beats, config, m))
        .collect()
}

/// One row of the stability table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub source_id: String,
    pub label: String,
    pub w1: f64,
    pub w0: f64,
    pub root1_re: f64,
    pub root1_im: f64,
    pub root2_re: f64,
    pub root2_im: f64,
    pub regime: Regime,
    pub stable: bool,
    pub natural_frequency: Option<f64>,
    pub damping_ratio: Option<f64>,
    /// `ok`, or `unsupported` when the step response does not exist.
    pub step_response: String,
}

/// Stability of every successful constant-coefficient fit.
pub fn stability_rows(entries: &[FitEntry]) -> Vec<StabilityRow> {
    entries
        .iter()
        .filter_map(|e| {
            let (w1, w0) = e.model.as_ref()?.constant_params()?;
            let r = stability(w1, w0);
            Some(StabilityRow {
                source_id: e.source_id.clone(),
                label: e.label.map(|l| l.to_string()).unwrap_or_default(),
                w1,
                w0,
                root1_re: r.roots[0].re,
                root1_im: r.roots[0].im,
                root2_re: r.roots[1].re,
                root2_im: r.roots[1].im,
                regime: r.regime,
                stable: r.stable,
                natural_frequency: r.natural_frequency,
                damping_ratio: r.damping_ratio,
                step_response: if w0 == 0.0 { "unsupported" } else { "ok" }.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRow {
    pub source_id: String,
    pub kind: ResponseKind,
    pub t: f64,
    pub value: f64,
}

/// Step and impulse responses of every constant-coefficient fit on
/// `[0, response_duration]`. Unsupported step responses are skipped with a
/// warning; the impulse response is always emitted.
pub fn response_rows(
    entries: &[FitEntry],
    config: &PipelineConfig,
) -> Result<(Vec<ResponseRow>, Vec<String>)> {
    let times = uniform_grid((0.0, config.response_duration), config.response_points)?;
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for e in entries {
        let Some((w1, w0)) = e.model.as_ref().and_then(|m| m.constant_params()) else {
            continue;
        };
        let mut curves = Vec::with_capacity(2);
        match step_response(w1, w0, &times) {
            Ok(c) => curves.push(c),
            Err(err) => warnings.push(format!("{}: step response unsupported: {err}", e.source_id)),
        }
        curves.push(impulse_response(w1, w0, &times)?);
        for c in curves {
            rows.extend(
                c.times
                    .iter()
                    .zip(&c.values)
                    .map(|(&t, &value)| ResponseRow {
                        source_id: e.source_id.clone(),
                        kind: c.kind,
                        t,
                        value,
                    }),
            );
        }
    }
    Ok((rows, warnings))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpcaPair {
    pub w1: FpcaModel,
    pub w0: FpcaModel,
}

/// A trained classifier plus whatever feature transforms it was fitted with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainedPipeline {
    pub schema: String,
    pub schema_version: u32,
    pub pipeline: PipelineKind,
    pub feature_names: Vec<String>,
    pub fpca: Option<FpcaPair>,
    pub classifier: Classifier,
}

document!(TrainedPipeline, "odeclass.classifier");

#[derive(Debug, Clone)]
enum Inputs {
    Features(Vec<Vec<f64>>),
    Curves {
        grid: Vec<f64>,
        w1: Vec<Vec<f64>>,
        w0: Vec<Vec<f64>>,
        morph: Vec<Morphology>,
    },
}

/// Per-record inputs for one pipeline. Records whose fit failed are left out.
#[derive(Debug, Clone)]
pub struct PipelineData {
    pub kind: PipelineKind,
    pub ids: Vec<String>,
    pub labels: Vec<Option<Label>>,
    /// `(source_id, reason)` for each record left out.
    pub skipped: Vec<(String, String)>,
    names: Vec<String>,
    inputs: Inputs,
}

fn entries_for<'a>(
    beats: &[BeatRecord],
    entries: &'a [FitEntry],
    mode: Mode,
) -> Result<Vec<&'a FitEntry>> {
    let picked: Vec<&FitEntry> = entries.iter().filter(|e| e.mode == mode).collect();
    if picked.len() != beats.len()
        || picked
            .iter()
            .zip(beats)
            .any(|(e, b)| e.source_id != b.source_id)
    {
        return Err(Error::invalid(format!(
            "the {mode} models do not line up with the dataset ({} models for {} beats)",
            picked.len(),
            beats.len()
        )));
    }
    Ok(picked)
}

impl PipelineData {
    pub fn prepare(kind: PipelineKind, beats: &[BeatRecord], entries: &[FitEntry]) -> Result<Self> {
        let mut ids = Vec::new();
        let mut labels = Vec::new();
        let mut skipped = Vec::new();
        match kind {
            PipelineKind::Nn => {
                let mut rows = Vec::new();
                let mut names = Vec::new();
                for b in beats {
                    let fv = fourier_features(b, DEFAULT_FOURIER_COEFFS)?;
                    names = fv.names;
                    rows.push(fv.values);
                    ids.push(b.source_id.clone());
                    labels.push(b.label);
                }
                Ok(PipelineData {
                    kind,
                    ids,
                    labels,
                    skipped,
                    names,
                    inputs: Inputs::Features(rows),
                })
            }
            PipelineKind::Ode => {
                let mut rows = Vec::new();
                let mut names = Vec::new();
                for (b, e) in beats
                    .iter()
                    .zip(entries_for(beats, entries, Mode::Constant)?)
                {
                    let Some(model) = &e.model else {
                        skipped.push((b.source_id.clone(), e.error.clone().unwrap_or_default()));
                        continue;
                    };
                    let fv = constant_features(model, &morphology(b)?)?;
                    names = fv.names;
                    rows.push(fv.values);
                    ids.push(b.source_id.clone());
                    labels.push(b.label);
                }
                Ok(PipelineData {
                    kind,
                    ids,
                    labels,
                    skipped,
                    names,
                    inputs: Inputs::Features(rows),
                })
            }
            PipelineKind::Odet => {
                let picked = entries_for(beats, entries, Mode::TimeVarying)?;
                let mut grid: Option<Vec<f64>> = None;
                let (mut w1, mut w0, mut morph) = (Vec::new(), Vec::new(), Vec::new());
                for (b, e) in beats.iter().zip(picked) {
                    let Some(model) = &e.model else {
                        skipped.push((b.source_id.clone(), e.error.clone().unwrap_or_default()));
                        continue;
                    };
                    let g = match &grid {
                        Some(g) => g,
                        None => {
                            grid.insert(uniform_grid(model.basis.domain(), DEFAULT_GRID_POINTS)?)
                        }
                    };
                    if model.basis.domain() != (g[0], g[g.len() - 1]) {
                        return Err(Error::invalid(format!(
                            "{}: time-varying features need beats of equal length",
                            b.source_id
                        )));
                    }
                    let (a, c) = parameter_curves(model, g)?;
                    w1.push(a);
                    w0.push(c);
                    morph.push(morphology(b)?);
                    ids.push(b.source_id.clone());
                    labels.push(b.label);
                }
                Ok(PipelineData {
                    kind,
                    ids,
                    labels,
                    skipped,
                    names: Vec::new(),
                    inputs: Inputs::Curves {
                        grid: grid.unwrap_or_default(),
                        w1,
                        w0,
                        morph,
                    },
                })
            }
        }
    }

    /// Wraps an existing feature table. Rows must share the column names.
    pub fn from_features(kind: PipelineKind, rows: &[FeatureVector]) -> Result<Self> {
        let names = rows.first().map(|r| r.names.clone()).unwrap_or_default();
        if let Some(r) = rows.iter().find(|r| r.names != names) {
            return Err(Error::invalid(format!(
                "feature columns differ: {:?} vs {names:?}",
                r.names
            )));
        }
        Ok(PipelineData {
            kind,
            ids: (0..rows.len()).map(|i| format!("row{}", i + 1)).collect(),
            labels: rows.iter().map(|r| r.label).collect(),
            skipped: Vec::new(),
            names,
            inputs: Inputs::Features(rows.iter().map(|r| r.values.clone()).collect()),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn labels_at(&self, idx: &[usize]) -> Result<Vec<Label>> {
        idx.iter()
            .map(|&i| {
                self.labels[i]
                    .ok_or_else(|| Error::invalid(format!("record '{}' has no label", self.ids[i])))
            })
            .collect()
    }

    fn fit_fpca(&self, idx: &[usize], components: usize) -> Result<Option<FpcaPair>> {
        let Inputs::Curves { grid, w1, w0, .. } = &self.inputs else {
            return Ok(None);
        };
        if idx.len() < 2 {
            return Err(Error::invalid("FPCA needs at least 2 training records"));
        }
        let m = components.min(idx.len() - 1).min(grid.len());
        if m < components {
            log::warn!(
                "only {m} principal components available from {} curves",
                idx.len()
            );
        }
        let stack = |curves: &Vec<Vec<f64>>| {
            DMatrix::from_fn(idx.len(), grid.len(), |r, c| curves[idx[r]][c])
        };
        Ok(Some(FpcaPair {
            w1: fpca_fit(&stack(w1), grid, m)?,
            w0: fpca_fit(&stack(w0), grid, m)?,
        }))
    }

    fn design(
        &self,
        idx: &[usize],
        fpca: Option<&FpcaPair>,
    ) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
        match &self.inputs {
            Inputs::Features(rows) => Ok((
                self.names.clone(),
                idx.iter().map(|&i| rows[i].clone()).collect(),
            )),
            Inputs::Curves { w1, w0, morph, .. } => {
                let f =
                    fpca.ok_or_else(|| Error::invalid("time-varying features need FPCA models"))?;
                let mut names: Vec<String> = (1..=f.w1.num_components())
                    .map(|k| format!("w1_pc{k}"))
                    .collect();
                names.extend((1..=f.w0.num_components()).map(|k| format!("w0_pc{k}")));
                names.extend(["r_height".to_string(), "qrs_width".to_string()]);
                let rows = idx
                    .iter()
                    .map(|&i| {
                        let mut v = f.w1.scores(&w1[i])?;
                        v.extend(f.w0.scores(&w0[i])?);
                        v.extend([morph[i].r_height, morph[i].qrs_width]);
                        Ok(v)
                    })
                    .collect::<Result<_>>()?;
                Ok((names, rows))
            }
        }
    }

    /// Trains on the records at `idx`; FPCA and standardization see only them.
    pub fn train(&self, idx: &[usize], config: &PipelineConfig) -> Result<TrainedPipeline> {
        let y = self.labels_at(idx)?;
        let fpca = self.fit_fpca(idx, config.fpca_components)?;
        let (feature_names, x) = self.design(idx, fpca.as_ref())?;
        let classifier = match self.kind {
            PipelineKind::Nn => Classifier::Mlp(mlp_train(&x, &y, &config.mlp_params())?),
            _ => Classifier::Svm(svm_train(&x, &y, &config.svm_params())?),
        };
        Ok(TrainedPipeline {
            schema: TrainedPipeline::SCHEMA.to_string(),
            schema_version: SCHEMA_VERSION,
            pipeline: self.kind,
            feature_names,
            fpca,
            classifier,
        })
    }

    pub fn train_all(&self, config: &PipelineConfig) -> Result<TrainedPipeline> {
        self.train(&(0..self.len()).collect::<Vec<_>>(), config)
    }

    pub fn predict(&self, trained: &TrainedPipeline, idx: &[usize]) -> Result<Vec<Label>> {
        if trained.pipeline != self.kind {
            return Err(Error::invalid(format!(
                "classifier was trained for the {} pipeline, not {}",
                trained.pipeline, self.kind
            )));
        }
        let (names, x) = self.design(idx, trained.fpca.as_ref())?;
        if names != trained.feature_names {
            return Err(Error::invalid(format!(
                "feature columns {names:?} do not match the classifier's {:?}",
                trained.feature_names
            )));
        }
        x.iter()
            .map(|r| trained.classifier.predict(r).map(|p| p.label))
            .collect()
    }

    /// Feature table over every record. Time-varying scores use FPCA fitted
    /// to all records.
    pub fn feature_vectors(&self, config: &PipelineConfig) -> Result<Vec<FeatureVector>> {
        let idx: Vec<usize> = (0..self.len()).collect();
        let fpca = if self.len() >= 2 {
            self.fit_fpca(&idx, config.fpca_components)?
        } else {
            None
        };
        if fpca.is_none() && matches!(self.inputs, Inputs::Curves { .. }) {
            return Ok(Vec::new());
        }
        let (names, rows) = self.design(&idx, fpca.as_ref())?;
        rows.into_iter()
            .zip(&self.labels)
            .map(|(v, l)| FeatureVector::new(names.clone(), v, *l))
            .collect()
    }

    /// Stratified k-fold with every transform refitted inside each fold.
    pub fn cross_validate(&self, config: &PipelineConfig) -> Result<CvOutcome> {
        let labels = self.labels_at(&(0..self.len()).collect::<Vec<_>>())?;
        kfold_cv(&labels, config.folds, config.seed, |train, test| {
            let model = self.train(train, config)?;
            self.predict(&model, test)
        })
    }

    /// Errors unless every record is labeled and both classes can fill the folds.
    pub fn check_evaluable(&self, config: &PipelineConfig) -> Result<()> {
        let (n_normal, n_abnormal) = class_counts(self.labels.iter().copied());
        if n_normal + n_abnormal < self.len() {
            return Err(Error::invalid("every record needs a label for evaluation"));
        }
        if n_normal == 0 || n_abnormal == 0 {
            return Err(Error::invalid(format!(
                "evaluation needs both classes, got {n_normal} normal and {n_abnormal} abnormal"
            )));
        }
        if self.len() < config.folds {
            return Err(Error::invalid(format!(
                "{} records are too few for {}-fold evaluation",
                self.len(),
                config.folds
            )));
        }
        Ok(())
    }

    /// Cross-validated metrics as one table row, plus fold warnings.
    pub fn metrics_row(
        &self,
        config: &PipelineConfig,
        file_id: &str,
    ) -> Result<(MetricsRow, Vec<String>)> {
        self.check_evaluable(config)?;
        let (n_normal, n_abnormal) = class_counts(self.labels.iter().copied());
        let cv = self.cross_validate(config)?;
        let notes = cv
            .plan
            .warnings
            .iter()
            .map(|w| format!("{}: {w}", self.kind))
            .collect();
        let row = MetricsRow {
            file_id: file_id.to_string(),
            n_normal,
            n_abnormal,
            pipeline: self.kind.name().to_string(),
            metrics: cv.metrics,
        };
        Ok((row, notes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub config: PipelineConfig,
}

impl Provenance {
    pub fn new(config: &PipelineConfig) -> Self {
        Provenance {
            config_hash: config.hash(),
            seed: config.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSummary {
    pub source: String,
    pub beats: usize,
    pub n_normal: usize,
    pub n_abnormal: usize,
    /// Annotations whose window ran past the recording.
    pub dropped_annotations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub schema: String,
    pub schema_version: u32,
    pub provenance: Provenance,
    pub input: InputSummary,
    pub fits: Vec<FitEntry>,
    pub stability: Vec<StabilityRow>,
    pub metrics: Vec<MetricsRow>,
    pub warnings: Vec<String>,
}

document!(RunReport, "odeclass.report");

pub enum PipelineInput {
    Dataset {
        name: String,
        beats: Vec<BeatRecord>,
    },
    Recording(ContinuousRecording),
}

fn class_counts(labels: impl IntoIterator<Item = Option<Label>>) -> (usize, usize) {
    labels.into_iter().fold((0, 0), |(n, a), l| match l {
        Some(Label::Normal) => (n + 1, a),
        Some(Label::Abnormal) => (n, a + 1),
        None => (n, a),
    })
}

/// Cross-validated metrics for every configured pipeline. Pipelines that
/// cannot be evaluated are skipped with a warning.
pub fn evaluate_pipelines(
    beats: &[BeatRecord],
    entries: &[FitEntry],
    config: &PipelineConfig,
    file_id: &str,
    warnings: &mut Vec<String>,
) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    for kind in configured_pipelines(config) {
        let data = PipelineData::prepare(kind, beats, entries)?;
        for (id, why) in &data.skipped {
            warnings.push(format!("{kind}: {id} left out ({why})"));
        }
        if let Err(e) = data.check_evaluable(config) {
            warnings.push(format!("{kind}: not evaluated: {e}"));
            continue;
        }
        let (row, notes) = data.metrics_row(config, file_id)?;
        warnings.extend(notes);
        rows.push(row);
    }
    Ok(rows)
}

/// Filter and segment (for recordings), fit, analyze, and cross-validate.
pub fn run_pipeline(input: PipelineInput, config: &PipelineConfig) -> Result<RunReport> {
    config.validate()?;
    let mut warnings = Vec::new();
    let (source, beats, dropped) = match input {
        PipelineInput::Dataset { name, beats } => (name, beats, 0),
        PipelineInput::Recording(rec) => {
            let filtered = bandpass(&rec)?;
            let seg = segment_beats(&filtered, config.window)?;
            if seg.dropped > 0 {
                warnings.push(format!(
                    "{} annotations dropped at the recording boundary",
                    seg.dropped
                ));
            }
            (rec.source_id, seg.beats, seg.dropped)
        }
    };
    let fits = fit_configured(&beats, config);
    for mode in config.mode.modes() {
        let of_mode: Vec<FitEntry> = fits.iter().filter(|e| e.mode == mode).cloned().collect();
        if let Some(w) = fit_summary(&of_mode) {
            warnings.push(format!("{mode}: {w}"));
        }
    }
    let stability = stability_rows(&fits);
    let file_id = if source.is_empty() {
        config.file_id.clone()
    } else {
        source.clone()
    };
    let metrics = evaluate_pipelines(&beats, &fits, config, &file_id, &mut warnings)?;
    let (n_normal, n_abnormal) = class_counts(beats.iter().map(|b| b.label));
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(RunReport {
        schema: RunReport::SCHEMA.to_string(),
        schema_version: SCHEMA_VERSION,
        provenance: Provenance::new(config),
        input: InputSummary {
            source,
            beats: beats.len(),
            n_normal,
            n_abnormal,
            dropped_annotations: dropped,
        },
        fits,
        stability,
        metrics,
        warnings,
    })
}
