//! Declarative experiment plans: the schema of the JSON configuration file
//! consumed by the command-line driver, and the runners that execute each
//! section and persist its artifacts.
//!
//! One file describes a whole campaign. Each top-level section holds either
//! a single job object or a list of them:
//!
//! ```json
//! {
//!   "simulate":      { ...sweep job... },
//!   "train":         [ { ...training job... }, ... ],
//!   "build_dataset": { ...dataset job... },
//!   "llr_calib":     { ...calibration job... },
//!   "iq_hist":       { ...histogram job... },
//!   "complexity":    { "system": "i" },
//!   "boundary":      { ...boundary job... }
//! }
//! ```
//!
//! A subcommand runs the jobs of its section and ignores the others, so the
//! same file drives `simulate`, `train`, and the rest. Every job accepts an
//! optional `name` that stems its output files; names must be unique within
//! a section. Wherever a job takes a `system`, the preset names `"i"` and
//! `"ii"` stand in for the full field map.
//!
//! Each job writes its results (CSV tables, checkpoints, dataset recipes)
//! plus a `<name>.run.json` metadata file carrying the resolved
//! configuration, its fingerprint, the seed, the source revision, and the
//! produced file list — enough to reproduce the run.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::det::attdet::{AttDet, AttDetConfig};
use crate::det::detnet::{DetNet, DetNetConfig};
use crate::det::fcnn::{Fcnn, FcnnConfig};
use crate::det::Detector;
use crate::model::{AssignmentSource, SystemConfig, UwModel};
use crate::rng::{substream, StreamDomain};
use crate::sim::ber::{run_sweep, SweepConfig};
use crate::sim::boundary::{boundary_map, BoundaryConfig};
use crate::sim::calib::{run_calibration, write_calibration_csv, CalibrationConfig};
use crate::sim::complexity::report_for;
use crate::sim::dataset::{build_training_set, TrainingSet, TrainingSetSpec};
use crate::sim::hist::{run_histogram, write_histogram_csv, write_marginals_csv, HistogramConfig};
use crate::sim::train::{train, write_curve_csv, TrainConfig};
use crate::sim::{commit_hash, configured_workers, fnv1a, write_csv, EqualizerKind};
use crate::{Error, Result};

/// One subcommand of the experiment driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Train,
    BuildDataset,
    LlrCalib,
    IqHist,
    Complexity,
    Boundary,
}

impl Command {
    /// The section key this command reads from the plan file.
    pub fn section(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Train => "train",
            Command::BuildDataset => "build_dataset",
            Command::LlrCalib => "llr_calib",
            Command::IqHist => "iq_hist",
            Command::Complexity => "complexity",
            Command::Boundary => "boundary",
        }
    }
}

/// A bit-error-rate sweep job (`simulate` section): the sweep configuration
/// plus an optional output-file stem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepJob {
    /// Output-file stem; defaults to `"ber"`.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(flatten)]
    pub sweep: SweepConfig,
}

/// A detector-training job (`train` section).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainJob {
    /// Output-file stem; defaults to the detector name.
    #[serde(default)]
    pub name: Option<String>,
    pub system: SystemConfig,
    /// Which trainable detector to fit (`"detnet"`, `"fcnn"`, `"attdet"`).
    pub detector: EqualizerKind,
    /// Recipe for the training data.
    pub dataset: TrainingSetSpec,
    /// Optimization-loop knobs; defaults match the reference protocol. Its
    /// `seed` is ignored — the job-level `seed` keys everything.
    #[serde(default)]
    pub optimization: TrainConfig,
    /// Override the iterative detector's input preconditioning (ablation
    /// switch). Only valid for `"detnet"`.
    #[serde(default)]
    pub precondition: Option<bool>,
    /// Keys the dataset, parameter initialization, shuffling, and dropout.
    #[serde(default)]
    pub seed: u64,
}

/// A dataset-construction job (`build_dataset` section): persists the
/// recipe so later trainings can materialize it bit-identically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetJob {
    /// Output-file stem; defaults to `"dataset"`.
    #[serde(default)]
    pub name: Option<String>,
    pub system: SystemConfig,
    #[serde(flatten)]
    pub spec: TrainingSetSpec,
    #[serde(default)]
    pub seed: u64,
}

/// An LLR-reliability analysis job (`llr_calib` section).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibJob {
    /// Output-file stem; defaults to `"llr_calibration"`.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(flatten)]
    pub calib: CalibrationConfig,
}

/// A conditional I/Q histogram job (`iq_hist` section).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistJob {
    /// Output-file stem; defaults to `"iq_histogram"`.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(flatten)]
    pub hist: HistogramConfig,
}

/// A closed-form cost-table job (`complexity` section).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComplexityJob {
    /// Output-file stem; defaults to `"complexity"`.
    #[serde(default)]
    pub name: Option<String>,
    pub system: SystemConfig,
}

/// A toy-channel decision-map job (`boundary` section).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryJob {
    /// Output-file stem; defaults to `"boundary"`.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(flatten)]
    pub boundary: BoundaryConfig,
}

/// A parsed plan file: every section, empty when absent.
#[derive(Debug, Clone, Default)]
pub struct ExperimentPlan {
    pub simulate: Vec<SweepJob>,
    pub train: Vec<TrainJob>,
    pub build_dataset: Vec<DatasetJob>,
    pub llr_calib: Vec<CalibJob>,
    pub iq_hist: Vec<HistJob>,
    pub complexity: Vec<ComplexityJob>,
    pub boundary: Vec<BoundaryJob>,
}

const SECTIONS: [&str; 7] = [
    "simulate",
    "train",
    "build_dataset",
    "llr_calib",
    "iq_hist",
    "complexity",
    "boundary",
];

/// Parse one section: absent → empty, a single object → one job, a list →
/// many. Errors carry the section (and index) they occurred in.
fn section<T: DeserializeOwned>(root: &serde_json::Value, key: &str) -> Result<Vec<T>> {
    let bad = |at: String, e: serde_json::Error| {
        Error::InvalidConfig(format!("config section `{at}`: {e}"))
    };
    match root.get(key) {
        None | Some(serde_json::Value::Null) => Ok(Vec::new()),
        Some(serde_json::Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, item)| {
                serde_json::from_value(item.clone()).map_err(|e| bad(format!("{key}[{i}]"), e))
            })
            .collect(),
        Some(item) => Ok(vec![
            serde_json::from_value(item.clone()).map_err(|e| bad(key.to_string(), e))?
        ]),
    }
}

impl ExperimentPlan {
    /// Parse a plan from JSON text. Unknown top-level keys are rejected so
    /// a misspelled section cannot silently run nothing.
    pub fn from_json(text: &str) -> Result<Self> {
        let root: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("config file is not valid JSON: {e}")))?;
        let map = root.as_object().ok_or_else(|| {
            Error::InvalidConfig("config file must hold a JSON object at the top level".into())
        })?;
        for key in map.keys() {
            if !SECTIONS.contains(&key.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "unknown config section {key:?}; expected one of: {}",
                    SECTIONS.join(", ")
                )));
            }
        }
        Ok(ExperimentPlan {
            simulate: section(&root, "simulate")?,
            train: section(&root, "train")?,
            build_dataset: section(&root, "build_dataset")?,
            llr_calib: section(&root, "llr_calib")?,
            iq_hist: section(&root, "iq_hist")?,
            complexity: section(&root, "complexity")?,
            boundary: section(&root, "boundary")?,
        })
    }

    /// Read and parse a plan file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        ExperimentPlan::from_json(&text)
    }
}

/// What one job produced: its resolved name, the files written, and a short
/// human-readable summary for terminal output.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub name: String,
    pub files: Vec<PathBuf>,
    pub summary: String,
}

/// Reproduction metadata written next to every job's results.
#[derive(Serialize)]
struct RunMetadata<'a> {
    command: &'a str,
    name: &'a str,
    /// FNV-1a fingerprint of the resolved job configuration — matches the
    /// `config_hash` comment in the job's CSV outputs.
    config_hash: String,
    seed: u64,
    commit: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    workers: Option<usize>,
    elapsed_seconds: f64,
    /// File names written by the job, relative to the output directory.
    outputs: Vec<String>,
    /// Headline numbers of the run, shape depending on the command.
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    stats: serde_json::Value,
    /// The job as executed, presets resolved.
    config: serde_json::Value,
}

/// Serialize a job for fingerprinting and the metadata echo.
fn job_json<T: Serialize>(job: &T) -> Result<String> {
    serde_json::to_string(job).map_err(|e| Error::Serde(e.to_string()))
}

#[allow(clippy::too_many_arguments)]
fn write_run_metadata(
    out_dir: &Path,
    command: &str,
    name: &str,
    config_json: &str,
    seed: u64,
    workers: Option<usize>,
    started: Instant,
    outputs: &[PathBuf],
    stats: serde_json::Value,
) -> Result<PathBuf> {
    let meta = RunMetadata {
        command,
        name,
        config_hash: format!("{:016x}", fnv1a(config_json.as_bytes())),
        seed,
        commit: commit_hash(),
        workers,
        elapsed_seconds: started.elapsed().as_secs_f64(),
        outputs: outputs
            .iter()
            .map(|p| {
                p.file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| p.display().to_string())
            })
            .collect(),
        stats,
        config: serde_json::from_str(config_json).map_err(|e| Error::Serde(e.to_string()))?,
    };
    let path = out_dir.join(format!("{name}.run.json"));
    let mut text =
        serde_json::to_string_pretty(&meta).map_err(|e| Error::Serde(e.to_string()))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(path)
}

/// Run a bit-error-rate sweep and write `<name>.csv`.
pub fn run_simulate(job: &SweepJob, out_dir: &Path) -> Result<RunArtifacts> {
    let started = Instant::now();
    let name = job.name.clone().unwrap_or_else(|| "ber".into());
    let cfg_json = job_json(&job.sweep)?;
    let result = run_sweep(&job.sweep)?;
    let csv = out_dir.join(format!("{name}.csv"));
    result.write_csv(&csv)?;

    let last = result.points.last();
    let summary = match last {
        Some(p) => {
            let per_eq: Vec<String> = job
                .sweep
                .equalizers
                .iter()
                .zip(&p.ber)
                .map(|(eq, ber)| format!("{eq} {ber:.3e}"))
                .collect();
            format!(
                "{} points; at {} dB: {}",
                result.points.len(),
                p.ebn0_db,
                per_eq.join(", ")
            )
        }
        None => "no points".into(),
    };
    let files = vec![csv];
    let meta = write_run_metadata(
        out_dir,
        "simulate",
        &name,
        &cfg_json,
        job.sweep.seed,
        Some(configured_workers()?),
        started,
        &files,
        serde_json::Value::Null,
    )?;
    let mut files = files;
    files.push(meta);
    Ok(RunArtifacts {
        name,
        files,
        summary,
    })
}

/// Train a detector and write `<name>.checkpoint.json` plus
/// `<name>.curve.csv`.
pub fn run_train(job: &TrainJob, out_dir: &Path) -> Result<RunArtifacts> {
    let started = Instant::now();
    let name = job
        .name
        .clone()
        .unwrap_or_else(|| job.detector.name().to_string());
    if job.optimization.seed != 0 && job.optimization.seed != job.seed {
        return Err(Error::InvalidConfig(
            "set the job-level `seed`; `optimization.seed` is derived from it".into(),
        ));
    }
    let cfg_json = job_json(job)?;
    let model = UwModel::new(job.system, &AssignmentSource::Systematic)?;
    let set = build_training_set(&job.system, &job.dataset, job.seed)?;
    let init: u64 = substream(job.seed, StreamDomain::Init, 0).gen();
    let mut det: Box<dyn Detector> = match job.detector {
        EqualizerKind::DetNet => {
            let mut c = DetNetConfig::preset_for(&job.system)?;
            if let Some(p) = job.precondition {
                c.precondition = p;
            }
            Box::new(DetNet::new(c, init))
        }
        EqualizerKind::Fcnn => {
            reject_precondition(job)?;
            Box::new(Fcnn::new(FcnnConfig::preset_for(&job.system)?, init))
        }
        EqualizerKind::AttDet => {
            reject_precondition(job)?;
            Box::new(AttDet::new(AttDetConfig::preset_for(&job.system)?, init))
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "`{}` is not trainable; pick detnet, fcnn, or attdet",
                other.name()
            )))
        }
    };
    let mut opt = job.optimization.clone();
    opt.seed = job.seed;
    let outcome = train(det.as_mut(), &model, &set, &opt)?;

    let ck_path = out_dir.join(format!("{name}.checkpoint.json"));
    outcome.checkpoint.save(&ck_path)?;
    let curve_path = out_dir.join(format!("{name}.curve.csv"));
    write_curve_csv(&curve_path, &outcome.curve, &cfg_json, job.seed)?;

    let main_epochs = outcome.curve.iter().filter(|s| s.phase == "main").count();
    let summary = format!(
        "best validation loss {:.4e} at epoch {}; {} main epochs{}",
        outcome.best_val_loss,
        outcome.best_epoch,
        main_epochs,
        if outcome.stopped_early {
            ", stopped early"
        } else {
            ""
        }
    );
    let stats = serde_json::json!({
        "best_epoch": outcome.best_epoch,
        "best_val_loss": outcome.best_val_loss,
        "main_epochs": main_epochs,
        "stopped_early": outcome.stopped_early,
    });
    let files = vec![ck_path, curve_path];
    let meta = write_run_metadata(
        out_dir, "train", &name, &cfg_json, job.seed, None, started, &files, stats,
    )?;
    let mut files = files;
    files.push(meta);
    Ok(RunArtifacts {
        name,
        files,
        summary,
    })
}

fn reject_precondition(job: &TrainJob) -> Result<()> {
    if job.precondition.is_some() {
        return Err(Error::InvalidConfig(format!(
            "`precondition` only applies to detnet, not {}",
            job.detector.name()
        )));
    }
    Ok(())
}

/// Build a training-set recipe and write `<name>.dataset.json`.
pub fn run_build_dataset(job: &DatasetJob, out_dir: &Path) -> Result<RunArtifacts> {
    let started = Instant::now();
    let name = job.name.clone().unwrap_or_else(|| "dataset".into());
    let cfg_json = job_json(job)?;
    let set = build_training_set(&job.system, &job.spec, job.seed)?;
    let path = out_dir.join(format!("{name}.dataset.json"));
    set.save(&path)?;

    let summary = format!(
        "{} channels ({} mined), {} noise-free warm-up channels",
        set.samples.len(),
        job.spec.bad_count(),
        set.pretrain.len()
    );
    let stats = serde_json::json!({
        "channels": set.samples.len(),
        "mined_channels": job.spec.bad_count(),
        "pretrain_channels": set.pretrain.len(),
    });
    let files = vec![path];
    let meta = write_run_metadata(
        out_dir,
        "build-dataset",
        &name,
        &cfg_json,
        job.seed,
        None,
        started,
        &files,
        stats,
    )?;
    let mut files = files;
    files.push(meta);
    Ok(RunArtifacts {
        name,
        files,
        summary,
    })
}

/// Run an LLR-reliability analysis and write `<name>.csv`.
pub fn run_llr_calib(job: &CalibJob, out_dir: &Path) -> Result<RunArtifacts> {
    let started = Instant::now();
    let name = job.name.clone().unwrap_or_else(|| "llr_calibration".into());
    let cfg_json = job_json(&job.calib)?;
    let report = run_calibration(&job.calib)?;
    let csv = out_dir.join(format!("{name}.csv"));
    write_calibration_csv(&report, &job.calib, &csv)?;

    let summary = format!(
        "slope {:.3}, mean |LLR| {:.2}, {}/{} bins saturated, {} samples",
        report.slope,
        report.mean_abs_llr,
        report.saturated_bins,
        report.bins.len(),
        report.samples
    );
    let stats = serde_json::json!({
        "slope": report.slope,
        "mean_abs_llr": report.mean_abs_llr,
        "saturated_bins": report.saturated_bins,
        "empty_bins": report.empty_bins,
        "samples": report.samples,
    });
    let files = vec![csv];
    let meta = write_run_metadata(
        out_dir,
        "llr-calib",
        &name,
        &cfg_json,
        job.calib.seed,
        None,
        started,
        &files,
        stats,
    )?;
    let mut files = files;
    files.push(meta);
    Ok(RunArtifacts {
        name,
        files,
        summary,
    })
}

/// Run a conditional I/Q histogram and write `<name>.csv` plus
/// `<name>.marginals.csv`.
pub fn run_iq_hist(job: &HistJob, out_dir: &Path) -> Result<RunArtifacts> {
    let started = Instant::now();
    let name = job.name.clone().unwrap_or_else(|| "iq_histogram".into());
    let cfg_json = job_json(&job.hist)?;
    let report = run_histogram(&job.hist)?;
    let grid_csv = out_dir.join(format!("{name}.csv"));
    write_histogram_csv(&report, &job.hist, &grid_csv)?;
    let marg_csv = out_dir.join(format!("{name}.marginals.csv"));
    write_marginals_csv(&report, &job.hist, &marg_csv)?;

    let summary = format!(
        "{} samples, concentration {:.3}, Jarque–Bera re/im {:.2}/{:.2}, {} outside the grid",
        report.samples,
        report.concentration,
        report.jarque_bera_re,
        report.jarque_bera_im,
        report.outside
    );
    let stats = serde_json::json!({
        "samples": report.samples,
        "concentration": report.concentration,
        "jarque_bera_re": report.jarque_bera_re,
        "jarque_bera_im": report.jarque_bera_im,
        "marginals_pass_normality": report.marginals_pass_normality(),
        "outside": report.outside,
    });
    let files = vec![grid_csv, marg_csv];
    let meta = write_run_metadata(
        out_dir,
        "iq-hist",
        &name,
        &cfg_json,
        job.hist.seed,
        None,
        started,
        &files,
        stats,
    )?;
    let mut files = files;
    files.push(meta);
    Ok(RunArtifacts {
        name,
        files,
        summary,
    })
}

/// Evaluate the closed-form cost table and write `<name>.csv`. The summary
/// carries the rendered table for terminal display.
pub fn run_complexity(job: &ComplexityJob, out_dir: &Path) -> Result<RunArtifacts> {
    let started = Instant::now();
    let name = job.name.clone().unwrap_or_else(|| "complexity".into());
    let cfg_json = job_json(job)?;
    let report = report_for(&job.system)?;

    let columns = ["equalizer", "scope", "exact", "rounded"]
        .map(String::from)
        .to_vec();
    let rows: Vec<Vec<String>> = report
        .rows()
        .iter()
        .map(|r| {
            let exact = if r.exact.fract() == 0.0 {
                format!("{}", r.exact as i64)
            } else {
                format!("{:.2}", r.exact)
            };
            vec![
                r.equalizer.clone(),
                r.scope.to_string(),
                exact,
                r.rounded.to_string(),
            ]
        })
        .collect();
    let csv = out_dir.join(format!("{name}.csv"));
    write_csv(&csv, &cfg_json, 0, &columns, &rows)?;

    let stats = serde_json::to_value(&report).map_err(|e| Error::Serde(e.to_string()))?;
    let files = vec![csv];
    let meta = write_run_metadata(
        out_dir,
        "complexity",
        &name,
        &cfg_json,
        0,
        None,
        started,
        &files,
        stats,
    )?;
    let mut files = files;
    files.push(meta);
    Ok(RunArtifacts {
        name,
        files,
        summary: report.render_text(),
    })
}

/// Classify the toy-channel grid and write `<name>.csv`.
pub fn run_boundary(job: &BoundaryJob, out_dir: &Path) -> Result<RunArtifacts> {
    let started = Instant::now();
    let name = job.name.clone().unwrap_or_else(|| "boundary".into());
    let cfg_json = job_json(&job.boundary)?;
    let map = boundary_map(&job.boundary)?;
    let csv = out_dir.join(format!("{name}.csv"));
    map.write_csv(&csv)?;

    let mut counts = [0usize; 4];
    for &l in &map.labels {
        counts[l as usize] += 1;
    }
    let n = job.boundary.points;
    let summary = format!(
        "{n}×{n} grid; label counts {}/{}/{}/{}",
        counts[0], counts[1], counts[2], counts[3]
    );
    let stats = serde_json::json!({
        "grid_points": map.labels.len(),
        "label_counts": counts,
    });
    let files = vec![csv];
    let meta = write_run_metadata(
        out_dir, "boundary", &name, &cfg_json, 0, None, started, &files, stats,
    )?;
    let mut files = files;
    files.push(meta);
    Ok(RunArtifacts {
        name,
        files,
        summary,
    })
}

/// Resolved names of a section's jobs, in order.
fn job_names<T>(jobs: &[T], default: impl Fn(&T) -> String) -> Vec<String> {
    jobs.iter().map(default).collect()
}

/// Run every job of one section (optionally a single named job), creating
/// the output directory first. Duplicate job names are rejected because
/// they would overwrite each other's files.
pub fn run_command(
    plan: &ExperimentPlan,
    cmd: Command,
    only: Option<&str>,
    out_dir: &Path,
) -> Result<Vec<RunArtifacts>> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    // Resolve the section's job names up front for uniqueness and filtering.
    let names: Vec<String> = match cmd {
        Command::Simulate => job_names(&plan.simulate, |j: &SweepJob| {
            j.name.clone().unwrap_or_else(|| "ber".into())
        }),
        Command::Train => job_names(&plan.train, |j: &TrainJob| {
            j.name.clone().unwrap_or_else(|| j.detector.name().into())
        }),
        Command::BuildDataset => job_names(&plan.build_dataset, |j: &DatasetJob| {
            j.name.clone().unwrap_or_else(|| "dataset".into())
        }),
        Command::LlrCalib => job_names(&plan.llr_calib, |j: &CalibJob| {
            j.name.clone().unwrap_or_else(|| "llr_calibration".into())
        }),
        Command::IqHist => job_names(&plan.iq_hist, |j: &HistJob| {
            j.name.clone().unwrap_or_else(|| "iq_histogram".into())
        }),
        Command::Complexity => job_names(&plan.complexity, |j: &ComplexityJob| {
            j.name.clone().unwrap_or_else(|| "complexity".into())
        }),
        Command::Boundary => job_names(&plan.boundary, |j: &BoundaryJob| {
            j.name.clone().unwrap_or_else(|| "boundary".into())
        }),
    };
    if names.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "config file has no `{}` section",
            cmd.section()
        )));
    }
    for (i, a) in names.iter().enumerate() {
        if names[..i].contains(a) {
            return Err(Error::InvalidConfig(format!(
                "two `{}` jobs share the name {a:?}; give them distinct names",
                cmd.section()
            )));
        }
    }
    let selected: Vec<usize> = match only {
        None => (0..names.len()).collect(),
        Some(pick) => {
            let hits: Vec<usize> = (0..names.len()).filter(|&i| names[i] == pick).collect();
            if hits.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "`{}` has no job named {pick:?}; available: {}",
                    cmd.section(),
                    names.join(", ")
                )));
            }
            hits
        }
    };

    selected
        .into_iter()
        .map(|i| match cmd {
            Command::Simulate => run_simulate(&plan.simulate[i], out_dir),
            Command::Train => run_train(&plan.train[i], out_dir),
            Command::BuildDataset => run_build_dataset(&plan.build_dataset[i], out_dir),
            Command::LlrCalib => run_llr_calib(&plan.llr_calib[i], out_dir),
            Command::IqHist => run_iq_hist(&plan.iq_hist[i], out_dir),
            Command::Complexity => run_complexity(&plan.complexity[i], out_dir),
            Command::Boundary => run_boundary(&plan.boundary[i], out_dir),
        })
        .collect()
}

/// Reload a saved dataset recipe (exposed for tooling symmetry with
/// [`run_build_dataset`]).
pub fn load_dataset(path: &Path) -> Result<TrainingSet> {
    TrainingSet::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::dataset::OperatingPoint;

    fn tmp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("uwlab-plan-{tag}"));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn plan_parses_single_jobs_and_lists() {
        let text = r#"{
            "simulate": {
                "system": "i",
                "equalizers": ["lmmse", "dfe"],
                "ebn0_db": [10.0, 14.0],
                "bursts": 3,
                "symbols_per_burst": 5,
                "coded": false,
                "seed": 7
            },
            "boundary": [
                { "name": "a", "equalizer": "vector_ml", "sigma2": 0.5,
                  "lo": -3.0, "hi": 3.0, "points": 11 },
                { "name": "b", "equalizer": "lmmse", "sigma2": 0.5,
                  "lo": -3.0, "hi": 3.0, "points": 11 }
            ]
        }"#;
        let plan = ExperimentPlan::from_json(text).unwrap();
        assert_eq!(plan.simulate.len(), 1);
        assert_eq!(plan.simulate[0].sweep.system.n_data, 8);
        assert_eq!(plan.boundary.len(), 2);
        assert!(plan.train.is_empty());
    }

    #[test]
    fn partial_jobs_fill_in_documented_defaults() {
        let plan = ExperimentPlan::from_json(
            r#"{
                "simulate": { "system": "i", "equalizers": ["lmmse"], "ebn0_db": [14.0] },
                "llr_calib": { "system": "i", "equalizer": "map", "ebn0_db": 2.0 },
                "iq_hist": { "system": "ii", "equalizer": "mmse", "ebn0_db": 4.0 },
                "boundary": { "equalizer": "dfe", "sigma2": 0.5 }
            }"#,
        )
        .unwrap();
        let s = &plan.simulate[0].sweep;
        assert_eq!((s.bursts, s.symbols_per_burst, s.coded, s.seed), (500, 200, false, 0));
        let c = &plan.llr_calib[0].calib;
        assert_eq!((c.bursts, c.symbols_per_burst, c.n_bins), (100, 50, 50));
        let h = &plan.iq_hist[0].hist;
        assert_eq!(h.conditioning_bits, (1, 1));
        assert_eq!((h.bins, h.lo, h.hi), (60, -1.5, 1.5));
        assert_eq!(h.system.n_data, 32);
        let b = &plan.boundary[0].boundary;
        assert_eq!((b.lo, b.hi, b.points), (-3.0, 3.0, 121));
    }

    #[test]
    fn plan_rejects_unknown_sections_and_bad_jobs() {
        let err = ExperimentPlan::from_json(r#"{"simlate": {}}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("unknown config section"), "{err}");
        assert!(err.contains("simulate"), "{err}");

        // a malformed job names its section
        let err = ExperimentPlan::from_json(r#"{"boundary": {"equalizer": "nope"}}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("`boundary`"), "{err}");

        let err = ExperimentPlan::from_json(r#"{"complexity": [{"system": "iii"}]}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("complexity[0]"), "{err}");
        assert!(err.contains("unknown system preset"), "{err}");
    }

    #[test]
    fn boundary_runner_writes_grid_and_metadata() {
        let dir = tmp_dir("boundary");
        let plan = ExperimentPlan::from_json(
            r#"{"boundary": {"equalizer": "vector_ml", "sigma2": 0.5,
                "lo": -3.0, "hi": 3.0, "points": 15}}"#,
        )
        .unwrap();
        let arts = run_command(&plan, Command::Boundary, None, &dir).unwrap();
        assert_eq!(arts.len(), 1);
        assert_eq!(arts[0].name, "boundary");

        let csv = std::fs::read_to_string(dir.join("boundary.csv")).unwrap();
        assert!(csv.starts_with("# config_hash="));
        assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 1 + 15 * 15);

        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("boundary.run.json")).unwrap())
                .unwrap();
        assert_eq!(meta["command"], "boundary");
        assert_eq!(meta["outputs"][0], "boundary.csv");
        assert_eq!(meta["config"]["points"], 15);
        assert_eq!(meta["stats"]["grid_points"], 225);
        // the metadata fingerprint matches the CSV header's
        let hash_line = csv.lines().next().unwrap();
        assert_eq!(
            hash_line,
            format!("# config_hash={}", meta["config_hash"].as_str().unwrap())
        );
    }

    #[test]
    fn complexity_runner_writes_frozen_table() {
        let dir = tmp_dir("complexity");
        let plan = ExperimentPlan::from_json(r#"{"complexity": {"system": "i"}}"#).unwrap();
        let arts = run_command(&plan, Command::Complexity, None, &dir).unwrap();
        assert!(arts[0].summary.contains("100000"));
        let csv = std::fs::read_to_string(dir.join("complexity.csv")).unwrap();
        assert!(csv.contains("detnet,vector,100048,100000"), "{csv}");
        assert!(csv.contains("fcnn,vector,866448,866400"), "{csv}");
        assert!(csv.contains("lmmse,burst,8789.33,8800"), "{csv}");
        let meta: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.join("complexity.run.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(meta["stats"]["attdet"], 614420); // exact form; table rounds to 614400
    }

    #[test]
    fn duplicate_job_names_are_rejected_and_only_filters() {
        let dir = tmp_dir("names");
        let two = ExperimentPlan::from_json(
            r#"{"boundary": [
                {"name": "x", "equalizer": "vector_ml", "sigma2": 0.5, "lo": -3.0, "hi": 3.0, "points": 5},
                {"name": "x", "equalizer": "lmmse", "sigma2": 0.5, "lo": -3.0, "hi": 3.0, "points": 5}
            ]}"#,
        )
        .unwrap();
        let err = run_command(&two, Command::Boundary, None, &dir)
            .unwrap_err()
            .to_string();
        assert!(err.contains("share the name"), "{err}");

        let ab = ExperimentPlan::from_json(
            r#"{"boundary": [
                {"name": "a", "equalizer": "vector_ml", "sigma2": 0.5, "lo": -3.0, "hi": 3.0, "points": 5},
                {"name": "b", "equalizer": "lmmse", "sigma2": 0.5, "lo": -3.0, "hi": 3.0, "points": 5}
            ]}"#,
        )
        .unwrap();
        let arts = run_command(&ab, Command::Boundary, Some("b"), &dir).unwrap();
        assert_eq!(arts.len(), 1);
        assert_eq!(arts[0].name, "b");
        assert!(dir.join("b.csv").exists());
        assert!(!dir.join("a.csv").exists());

        let err = run_command(&ab, Command::Boundary, Some("c"), &dir)
            .unwrap_err()
            .to_string();
        assert!(err.contains("no job named"), "{err}");
        assert!(err.contains("a, b"), "{err}");

        let err = run_command(&ab, Command::Simulate, None, &dir)
            .unwrap_err()
            .to_string();
        assert!(err.contains("no `simulate` section"), "{err}");
    }

    #[test]
    fn simulate_runner_writes_rows_per_point() {
        let dir = tmp_dir("simulate");
        let plan = ExperimentPlan::from_json(
            r#"{"simulate": {
                "system": "i",
                "equalizers": ["lmmse"],
                "ebn0_db": [10.0, 14.0],
                "bursts": 3,
                "symbols_per_burst": 5,
                "coded": false,
                "seed": 7
            }}"#,
        )
        .unwrap();
        let arts = run_command(&plan, Command::Simulate, None, &dir).unwrap();
        assert!(arts[0].summary.contains("2 points"), "{}", arts[0].summary);
        let csv = std::fs::read_to_string(dir.join("ber.csv")).unwrap();
        let data: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(data[0], "EbN0_dB,ber_lmmse,se_lmmse");
        assert_eq!(data.len(), 3);
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("ber.run.json")).unwrap())
                .unwrap();
        assert!(meta["workers"].as_u64().unwrap() >= 1);
    }

    #[test]
    fn dataset_runner_saves_a_loadable_recipe() {
        let dir = tmp_dir("dataset");
        let plan = ExperimentPlan::from_json(
            r#"{"build_dataset": {
                "system": "i",
                "channels": 20,
                "bad_fraction": 0.1,
                "oversample": 3,
                "operating_point": {"uniform_db_linear": {"lo_db": 9.0, "hi_db": 18.0}},
                "pretrain_channels": 4,
                "code_rate": 1.0,
                "seed": 11
            }}"#,
        )
        .unwrap();
        let arts = run_command(&plan, Command::BuildDataset, None, &dir).unwrap();
        assert!(arts[0].summary.contains("20 channels (2 mined)"));
        let set = load_dataset(&dir.join("dataset.dataset.json")).unwrap();
        assert_eq!(set.samples.len(), 20);
        assert_eq!(set.pretrain.len(), 4);
        assert_eq!(set.seed, 11);
        assert_eq!(
            set.spec.operating_point,
            OperatingPoint::UniformDbLinear {
                lo_db: 9.0,
                hi_db: 18.0
            }
        );
    }

    #[test]
    fn train_runner_emits_checkpoint_curve_and_metadata() {
        let dir = tmp_dir("train");
        let plan = ExperimentPlan::from_json(
            r#"{"train": {
                "system": "i",
                "detector": "detnet",
                "dataset": {
                    "channels": 24,
                    "bad_fraction": 0.0,
                    "oversample": 1,
                    "operating_point": {"fixed": 14.0},
                    "pretrain_channels": 6,
                    "code_rate": 1.0
                },
                "optimization": {
                    "epochs": 2, "batch": 12, "lr_final_fraction": 0.05,
                    "patience": 5, "pretrain_epochs": 1,
                    "learning_rate": null, "normalize": true,
                    "validation_channels": 8, "seed": 0
                },
                "seed": 3
            }}"#,
        )
        .unwrap();
        let arts = run_command(&plan, Command::Train, None, &dir).unwrap();
        assert_eq!(arts[0].name, "detnet");
        let ck = crate::nn::checkpoint::Checkpoint::load(&dir.join("detnet.checkpoint.json"))
            .unwrap();
        assert_eq!(ck.detector["kind"], "detnet");
        assert_eq!(ck.seed, 3);
        let curve = std::fs::read_to_string(dir.join("detnet.curve.csv")).unwrap();
        assert!(curve.contains("pretrain"));
        assert!(curve.contains("main"));
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("detnet.run.json")).unwrap())
                .unwrap();
        assert_eq!(meta["stats"]["main_epochs"], 2);
    }

    #[test]
    fn train_runner_rejects_conflicting_seeds_and_bad_detectors() {
        let dir = tmp_dir("train-bad");
        let base = r#"{"train": {
            "system": "i",
            "detector": "DET",
            "dataset": {
                "channels": 8, "bad_fraction": 0.0, "oversample": 1,
                "operating_point": {"fixed": 14.0},
                "pretrain_channels": 2, "code_rate": 1.0
            },
            EXTRA
            "seed": 3
        }}"#;

        let text = base.replace("DET", "lmmse").replace("EXTRA", "");
        let plan = ExperimentPlan::from_json(&text).unwrap();
        let err = run_command(&plan, Command::Train, None, &dir)
            .unwrap_err()
            .to_string();
        assert!(err.contains("not trainable"), "{err}");

        let text = base
            .replace("DET", "fcnn")
            .replace("EXTRA", r#""precondition": false,"#);
        let plan = ExperimentPlan::from_json(&text).unwrap();
        let err = run_command(&plan, Command::Train, None, &dir)
            .unwrap_err()
            .to_string();
        assert!(err.contains("only applies to detnet"), "{err}");

        let text = base
            .replace("DET", "detnet")
            .replace("EXTRA", r#""optimization": {"seed": 9},"#);
        let err = ExperimentPlan::from_json(&text)
            .and_then(|plan| run_command(&plan, Command::Train, None, &dir))
            .unwrap_err()
            .to_string();
        assert!(err.contains("job-level `seed`"), "{err}");
    }
}
