use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgMatches, Args, Command, CommandFactory, FromArgMatches, Parser, Subcommand};

use odeclass::classify::evaluate as score_predictions;
use odeclass::config::{PipelineConfig, KEYS};
use odeclass::io::{
    read_document, read_feature_csv, read_recording, read_text, to_json, write_bytes, write_csv,
    write_feature_csv, write_metrics_csv, BeatDataset, MetricsRow,
};
use odeclass::pda::{fit, Mode};
use odeclass::pipeline::{
    configured_pipelines, fit_beats, fit_configured, response_rows, run_pipeline, stability_rows,
    FitEntry, ModelSet, PipelineData, PipelineInput, PipelineKind, TrainedPipeline,
};
use odeclass::signal::{BeatRecord, Label};
use odeclass::{basis::make_basis, Error};

/// Fit second-order ODE models to beats, analyze their dynamics, and
/// classify them.
#[derive(Parser)]
#[command(name = "odeclass", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Config file (TOML); flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output path; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic labeled beat dataset.
    Simulate,
    /// Fit an ODE model to every beat of a dataset.
    Fit {
        dataset: PathBuf,
        /// Fit one model to all beats together.
        #[arg(long)]
        pooled: bool,
    },
    /// Stability table and step/impulse responses for fitted models.
    Analyze { models: PathBuf },
    /// Feature table for one pipeline.
    Features {
        dataset: PathBuf,
        /// Reuse fitted models instead of fitting again.
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long)]
        pipeline: Option<PipelineKind>,
    },
    /// Train a classifier on a whole dataset or feature table.
    Train {
        #[command(flatten)]
        source: Source,
        /// Fitted models for the dataset.
        #[arg(long, requires = "dataset")]
        models: Option<PathBuf>,
        #[arg(long)]
        pipeline: Option<PipelineKind>,
    },
    /// Cross-validated metrics, or held-out metrics for a trained classifier.
    Evaluate {
        #[command(flatten)]
        source: Source,
        /// Fitted models for the dataset.
        #[arg(long, requires = "dataset")]
        models: Option<PathBuf>,
        /// Score this trained classifier instead of cross-validating.
        #[arg(long)]
        trained: Option<PathBuf>,
        #[arg(long)]
        pipeline: Option<PipelineKind>,
    },
    /// Filter, segment, fit, analyze, and cross-validate in one run.
    Pipeline {
        #[arg(long, conflicts_with = "recording")]
        dataset: Option<PathBuf>,
        /// Recording CSV; needs --annotations.
        #[arg(long, requires = "annotations")]
        recording: Option<PathBuf>,
        #[arg(long, requires = "recording")]
        annotations: Option<PathBuf>,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Beat dataset.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Feature table.
    #[arg(long)]
    features: Option<PathBuf>,
}

/// Every config key becomes a `--key-name` flag on every subcommand.
fn command() -> Command {
    let mut cmd = Cli::command();
    let names: Vec<String> = cmd
        .get_subcommands()
        .map(|s| s.get_name().to_string())
        .collect();
    for name in names {
        cmd = cmd.mut_subcommand(name, |mut sub| {
            sub = Common::augment_args(sub);
            for (key, help) in KEYS {
                let flag = key.replace('_', "-");
                sub = sub.arg(
                    Arg::new(*key)
                        .long(flag)
                        .value_name("VALUE")
                        .help(*help)
                        .help_heading("Config overrides"),
                );
            }
            sub
        });
    }
    cmd
}

fn overrides(m: &ArgMatches) -> Vec<(String, String)> {
    KEYS.iter()
        .filter_map(|(key, _)| {
            m.get_one::<String>(key)
                .map(|v| (key.to_string(), v.clone()))
        })
        .collect()
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> odeclass::Result<()> {
    match out {
        Some(p) => write_bytes(p, bytes)?,
        None => std::io::stdout().lock().write_all(bytes)?,
    }
    Ok(())
}

fn read_beats(path: &Path) -> odeclass::Result<Vec<BeatRecord>> {
    Ok(read_document::<BeatDataset>(path)?.records)
}

fn read_features(path: &Path) -> odeclass::Result<Vec<odeclass::features::FeatureVector>> {
    read_feature_csv(&read_text(path)?, &path.display().to_string())
}

fn file_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Models for `kind`, loaded or fitted on the spot.
fn entries_for(
    kind: PipelineKind,
    beats: &[BeatRecord],
    models: Option<&Path>,
    config: &PipelineConfig,
) -> odeclass::Result<Vec<FitEntry>> {
    match (kind.fit_mode(), models) {
        (None, _) => Ok(Vec::new()),
        (Some(_), Some(p)) => Ok(read_document::<ModelSet>(p)?.entries),
        (Some(mode), None) => Ok(fit_beats(beats, config, mode)),
    }
}

fn load_data(
    kind: PipelineKind,
    source: &Source,
    models: Option<&Path>,
    config: &PipelineConfig,
) -> odeclass::Result<(PipelineData, String)> {
    if let Some(f) = &source.features {
        return Ok((
            PipelineData::from_features(kind, &read_features(f)?)?,
            file_label(f),
        ));
    }
    let path = source.dataset.as_deref().expect("clap requires a source");
    let beats = read_beats(path)?;
    let entries = entries_for(kind, &beats, models, config)?;
    let data = PipelineData::prepare(kind, &beats, &entries)?;
    for (id, why) in &data.skipped {
        log::warn!("{kind}: {id} left out ({why})");
    }
    Ok((data, file_label(path)))
}

fn default_pipeline(config: &PipelineConfig) -> PipelineKind {
    configured_pipelines(config)[0]
}

fn pooled_fit(
    beats: &[BeatRecord],
    config: &PipelineConfig,
    mode: Mode,
) -> odeclass::Result<FitEntry> {
    let first = beats
        .first()
        .ok_or_else(|| Error::InvalidArgument("pooled fit needs at least one beat".into()))?;
    let basis = make_basis(first.domain(), config.knot_spacing)?;
    let (model, _) = fit(beats, &basis, &config.fit_options(mode))?;
    if !model.converged {
        log::warn!(
            "pooled {mode} fit did not converge in {} iterations",
            model.iterations
        );
    }
    Ok(FitEntry {
        source_id: "pooled".into(),
        label: None,
        mode,
        model: Some(model),
        error: None,
    })
}

fn run(cmd: Cmd, common: Common, config: PipelineConfig) -> odeclass::Result<()> {
    let out = common.out.as_deref();
    match cmd {
        Cmd::Simulate => {
            let beats = odeclass::signal::synth_dataset(
                &config.class_specs(),
                config.sample_rate,
                config.window,
                config.seed,
            )?;
            emit(out, to_json(&BeatDataset::new(beats))?.as_bytes())
        }
        Cmd::Fit { dataset, pooled } => {
            let beats = read_beats(&dataset)?;
            let entries = if pooled {
                config
                    .mode
                    .modes()
                    .into_iter()
                    .filter(|_| !beats.is_empty())
                    .map(|m| pooled_fit(&beats, &config, m))
                    .collect::<odeclass::Result<Vec<_>>>()?
            } else {
                fit_configured(&beats, &config)
            };
            let failed = entries.iter().filter(|e| e.model.is_none()).count();
            let flagged = entries
                .iter()
                .filter(|e| e.model.as_ref().is_some_and(|m| !m.converged))
                .count();
            log::info!(
                "{} fits, {failed} failed, {flagged} not converged",
                entries.len()
            );
            emit(out, to_json(&ModelSet::new(entries))?.as_bytes())
        }
        Cmd::Analyze { models } => {
            let dir =
                out.ok_or_else(|| Error::InvalidArgument("analyze needs --out <dir>".into()))?;
            let entries = read_document::<ModelSet>(&models)?.entries;
            let stability = stability_rows(&entries);
            if stability.is_empty() && !entries.is_empty() {
                log::warn!("no constant-coefficient models; the stability table is empty");
            }
            let (responses, warnings) = response_rows(&entries, &config)?;
            for w in warnings {
                log::warn!("{w}");
            }
            fs::create_dir_all(dir)
                .map_err(|e| Error::InvalidArgument(format!("{}: {e}", dir.display())))?;
            let mut table = Vec::new();
            write_csv(&stability, &mut table)?;
            write_bytes(&dir.join("stability.csv"), &table)?;
            let mut curves = Vec::new();
            write_csv(&responses, &mut curves)?;
            write_bytes(&dir.join("responses.csv"), &curves)
        }
        Cmd::Features {
            dataset,
            models,
            pipeline,
        } => {
            let kind = pipeline.unwrap_or_else(|| default_pipeline(&config));
            let source = Source {
                dataset: Some(dataset),
                features: None,
            };
            let (data, _) = load_data(kind, &source, models.as_deref(), &config)?;
            let mut buf = Vec::new();
            write_feature_csv(&data.feature_vectors(&config)?, &mut buf)?;
            emit(out, &buf)
        }
        Cmd::Train {
            source,
            models,
            pipeline,
        } => {
            let kind = pipeline.unwrap_or_else(|| default_pipeline(&config));
            let (data, _) = load_data(kind, &source, models.as_deref(), &config)?;
            emit(out, to_json(&data.train_all(&config)?)?.as_bytes())
        }
        Cmd::Evaluate {
            source,
            models,
            trained,
            pipeline,
        } => {
            let mut rows = Vec::new();
            if let Some(path) = trained {
                let trained = read_document::<TrainedPipeline>(&path)?;
                let (data, file_id) =
                    load_data(trained.pipeline, &source, models.as_deref(), &config)?;
                let idx: Vec<usize> = (0..data.len()).collect();
                let preds = data.predict(&trained, &idx)?;
                let truth: Vec<Label> = data
                    .labels
                    .iter()
                    .map(|l| {
                        l.ok_or_else(|| {
                            Error::InvalidArgument("evaluation needs labeled records".into())
                        })
                    })
                    .collect::<odeclass::Result<_>>()?;
                let metrics = score_predictions(&preds, &truth)?;
                rows.push(MetricsRow {
                    file_id,
                    n_normal: metrics.negatives(),
                    n_abnormal: metrics.positives(),
                    pipeline: trained.pipeline.name().to_string(),
                    metrics,
                });
            } else {
                let kinds = match pipeline {
                    Some(k) => vec![k],
                    None => configured_pipelines(&config),
                };
                for kind in kinds {
                    let (data, file_id) = load_data(kind, &source, models.as_deref(), &config)?;
                    let (row, notes) = data.metrics_row(&config, &file_id)?;
                    for n in notes {
                        log::warn!("{n}");
                    }
                    rows.push(row);
                }
            }
            let mut buf = Vec::new();
            write_metrics_csv(&rows, &mut buf)?;
            emit(out, &buf)
        }
        Cmd::Pipeline {
            dataset,
            recording,
            annotations,
        } => {
            let input = match (dataset, recording, annotations) {
                (Some(d), None, None) => PipelineInput::Dataset {
                    name: config.file_id.clone(),
                    beats: read_beats(&d)?,
                },
                (None, Some(r), Some(a)) => PipelineInput::Recording(read_recording(&r, &a)?),
                _ => {
                    return Err(Error::InvalidArgument(
                        "give either --dataset or --recording with --annotations".into(),
                    ))
                }
            };
            emit(out, to_json(&run_pipeline(input, &config)?)?.as_bytes())
        }
    }
}

/// 2 for bad input or usage, 1 for failures inside the numerics.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::RankDeficient(..) | Error::DegenerateData(..) | Error::UnsupportedPole(..) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let matches = command().get_matches();
    let (_, sub) = matches.subcommand().expect("a subcommand is required");
    let (cli, common) = Cli::from_arg_matches(&matches)
        .and_then(|cli| Common::from_arg_matches(sub).map(|c| (cli, c)))
        .unwrap_or_else(|e| e.exit());
    let config = match PipelineConfig::load(common.config.as_deref(), &overrides(sub)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(cli.command, common, config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
