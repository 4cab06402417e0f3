//! End-to-end runs: estimator -> note extraction -> evaluation -> artifacts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::em::{em_estimate, EmConfig, EmInit};
use crate::engine::{filter, smooth, FilterConfig, PriorSetup};
use crate::error::{Error, Result};
use crate::io;
use crate::priors::{MhConfig, PriorMatrix};
use crate::rng::{domain, stream};
use crate::spectrogram::normalize_frames;
use crate::transcription::{evaluate, extract_notes, EvalReport, NoteEvent};

/// Which estimator a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Particle filter without priors.
    Pf,
    /// Particle filter with Metropolis-Hastings prior injection.
    PfPriors,
    /// Fixed-template EM.
    Em,
    /// Deterministic annealing EM.
    Daem,
}

impl Estimator {
    /// Stable name used in manifests and CLI arguments.
    pub fn as_str(&self) -> &'static str {
        match self {
            Estimator::Pf => "pf",
            Estimator::PfPriors => "pf_priors",
            Estimator::Em => "em",
            Estimator::Daem => "daem",
        }
    }
}

/// Everything a run needs; serialized verbatim into the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    /// Estimator selection.
    pub estimator: Estimator,
    /// Spectrogram CSV path.
    pub input: PathBuf,
    /// Template dictionary CSV path.
    pub templates: PathBuf,
    /// Reference notes JSON; evaluation is skipped when absent.
    pub reference: Option<PathBuf>,
    /// Prior matrix CSVs (required for `pf_priors`).
    pub priors: Vec<PathBuf>,
    /// Output directory for artifacts.
    pub out_dir: PathBuf,
    /// Particle filter settings (seed is shared by every estimator).
    pub filter: FilterConfig,
    /// Metropolis-Hastings settings for prior injection.
    pub mh: MhConfig,
    /// EM settings for the `em`/`daem` estimators.
    pub em: EmConfig,
    /// Absolute detection threshold; defaults to 0.1 x max activity.
    pub threshold: Option<f64>,
    /// Minimum note duration for pruning.
    pub min_duration_s: f64,
    /// Onset tolerance for evaluation.
    pub onset_tol_s: f64,
    /// Number of smoothing realizations to average for the activity
    /// (particle estimators only); 0 uses the filter posterior means.
    pub smooth_realizations: usize,
    /// EM initialization.
    pub em_init: EmInit,
}

impl RunConfig {
    /// A config with library defaults; paths must still be filled in.
    pub fn new(estimator: Estimator, input: PathBuf, templates: PathBuf, out_dir: PathBuf) -> Self {
        Self {
            estimator,
            input,
            templates,
            reference: None,
            priors: Vec::new(),
            out_dir,
            filter: FilterConfig::default(),
            mh: MhConfig::default(),
            em: EmConfig::em(),
            threshold: None,
            min_duration_s: crate::transcription::DEFAULT_MIN_DURATION_S,
            onset_tol_s: crate::transcription::DEFAULT_ONSET_TOL_S,
            smooth_realizations: 0,
            em_init: EmInit::Uniform,
        }
    }
}

/// Record of a completed run.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    /// Format tag, `manifest_v1`.
    pub schema: &'static str,
    /// Crate version that produced the run.
    pub version: &'static str,
    /// The full configuration, for reproduction.
    pub config: RunConfig,
    /// Number of pitches in the dictionary.
    pub n_pitches: usize,
    /// Number of frames processed.
    pub n_frames: usize,
    /// The detection threshold actually applied.
    pub threshold_used: f64,
    /// Frames whose particle weights collapsed (particle estimators).
    pub collapsed_frames: Vec<usize>,
    /// Whether evaluation ran (false when no reference was given).
    pub metrics_computed: bool,
    /// Wall-clock time of the run in milliseconds.
    pub wall_clock_ms: u128,
}

/// Paths and results of a completed run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    /// Extracted note events.
    pub notes: Vec<NoteEvent>,
    /// Evaluation against the reference, when one was given.
    pub metrics: Option<EvalReport>,
    /// Detection threshold actually applied.
    pub threshold_used: f64,
    /// Where the manifest was written.
    pub manifest_path: PathBuf,
    /// Where the activity matrix was written.
    pub activity_path: PathBuf,
    /// Where the notes JSON was written.
    pub notes_path: PathBuf,
    /// Where metrics were written, when computed.
    pub metrics_path: Option<PathBuf>,
}

fn stage<T>(result: Result<T>, name: &'static str) -> Result<T> {
    result.map_err(|e| e.in_stage(name))
}

/// Execute a run end to end and write its artifacts.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    let started = Instant::now();
    let spec = stage(io::load_spectrogram(&cfg.input), "load-input")?;
    let dict = stage(io::load_templates(&cfg.templates), "load-templates")?;
    let input = stage(normalize_frames(&spec), "load-input")?;

    let mut collapsed_frames = Vec::new();
    let activity: Array2<f64> = match cfg.estimator {
        Estimator::Pf | Estimator::PfPriors => {
            let loaded_priors: Vec<PriorMatrix> = if cfg.estimator == Estimator::PfPriors {
                if cfg.priors.is_empty() {
                    return Err(Error::InvalidParameter(
                        "pf_priors needs at least one prior matrix".into(),
                    )
                    .in_stage("load-priors"));
                }
                cfg.priors
                    .iter()
                    .map(|p| io::load_prior_matrix(p))
                    .collect::<Result<_>>()
                    .map_err(|e| e.in_stage("load-priors"))?
            } else {
                Vec::new()
            };
            let setup = PriorSetup {
                priors: &loaded_priors,
                mh: cfg.mh,
            };
            let mut filter_cfg = cfg.filter.clone();
            if cfg.smooth_realizations > 0 {
                filter_cfg.store_ensembles = true;
            }
            let priors_opt = (cfg.estimator == Estimator::PfPriors).then_some(&setup);
            let output = stage(filter(&input, &dict, &filter_cfg, priors_opt), "estimate")?;
            collapsed_frames = output.collapsed_frames.clone();
            if cfg.smooth_realizations > 0 {
                let mut acc: Array2<f64> =
                    Array2::zeros((dict.dims().n_pitches, input.n_frames()));
                for r in 0..cfg.smooth_realizations {
                    let mut rng = stream(filter_cfg.seed, domain::SMOOTH, r as u64, 0);
                    let traj = stage(smooth(&output, &mut rng), "smooth")?;
                    acc += &traj.activity();
                }
                acc /= cfg.smooth_realizations as f64;
                // Smoothing trajectories live on the simplex; reapply energies.
                for (t, &energy) in output.frame_energies.iter().enumerate() {
                    acc.column_mut(t).mapv_inplace(|v| v * energy);
                }
                acc
            } else {
                output.activity
            }
        }
        Estimator::Em | Estimator::Daem => {
            let mut em_cfg = cfg.em.clone();
            if cfg.estimator == Estimator::Daem && em_cfg.daem_temperatures == vec![1.0] {
                em_cfg.daem_temperatures = EmConfig::daem().daem_temperatures;
            }
            let output = stage(
                em_estimate(&input, &dict, &em_cfg, cfg.em_init, cfg.filter.seed),
                "estimate",
            )?;
            output.activity
        }
    };

    let max_activity = activity.iter().cloned().fold(0.0f64, f64::max);
    let threshold_used = cfg.threshold.unwrap_or_else(|| {
        if max_activity > 0.0 {
            0.1 * max_activity
        } else {
            f64::INFINITY
        }
    });
    let notes = extract_notes(
        activity.view(),
        spec.frame_hop_seconds,
        threshold_used,
        cfg.min_duration_s,
    );

    let metrics = match &cfg.reference {
        Some(path) => {
            let reference = stage(io::load_notes_json(path), "load-reference")?;
            Some(stage(
                evaluate(&notes, &reference, cfg.onset_tol_s),
                "evaluate",
            )?)
        }
        None => None,
    };

    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::from(e).in_stage("write-artifacts"))?;
    let activity_path = cfg.out_dir.join("activity.csv");
    let notes_path = cfg.out_dir.join("notes.json");
    let notes_csv_path = cfg.out_dir.join("notes.csv");
    let manifest_path = cfg.out_dir.join("manifest.json");
    stage(
        io::save_activity(activity.view(), spec.frame_hop_seconds, &activity_path),
        "write-artifacts",
    )?;
    stage(io::save_notes_json(&notes, &notes_path), "write-artifacts")?;
    stage(io::save_notes_csv(&notes, &notes_csv_path), "write-artifacts")?;
    let metrics_path = match &metrics {
        Some(report) => {
            let path = cfg.out_dir.join("metrics.json");
            let json = serde_json::to_string_pretty(report).map_err(Error::from)?;
            std::fs::write(&path, json).map_err(|e| Error::from(e).in_stage("write-artifacts"))?;
            Some(path)
        }
        None => None,
    };

    let manifest = RunManifest {
        schema: "manifest_v1",
        version: env!("CARGO_PKG_VERSION"),
        config: cfg.clone(),
        n_pitches: dict.dims().n_pitches,
        n_frames: input.n_frames(),
        threshold_used,
        collapsed_frames,
        metrics_computed: metrics.is_some(),
        wall_clock_ms: started.elapsed().as_millis(),
    };
    let manifest_json = serde_json::to_string_pretty(&manifest).map_err(Error::from)?;
    std::fs::write(&manifest_path, manifest_json)
        .map_err(|e| Error::from(e).in_stage("write-artifacts"))?;

    Ok(RunSummary {
        notes,
        metrics,
        threshold_used,
        manifest_path,
        activity_path,
        notes_path,
        metrics_path,
    })
}

/// Convenience for tests and the CLI: where a run's manifest lives.
pub fn manifest_path(out_dir: &Path) -> PathBuf {
    out_dir.join("manifest.json")
}
