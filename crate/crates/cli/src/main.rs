//! Command-line surface for the siplca estimators.
//!
//! Subcommands: `run` (estimate + transcribe + evaluate), `synth` (render a
//! synthetic scenario), `train-priors` (build prior matrices), `eval` (score
//! note lists), `bench-particles` (runtime/accuracy sweep over particle
//! counts) and `split` (seeded train/test split of corpus pieces). Selected
//! numeric flags can also be set through `SIPLCA_*` environment variables;
//! explicit flags win.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;

use siplca::em::{EmConfig, EmInit};
use siplca::engine::{filter, FilterConfig, GammaShapes};
use siplca::io;
use siplca::priors::{
    build_cooccurrence_prior, build_resonance_prior, build_transition_prior, MhConfig,
    TrainingCorpus,
};
use siplca::rng::{domain, stream};
use siplca::run::{run, Estimator, RunConfig};
use siplca::spectrogram::normalize_frames;
use siplca::synth::synthesize;
use siplca::transcription::{evaluate, extract_notes};

#[derive(Parser)]
#[command(name = "siplca", version, about = "Shift-invariant PLCA estimation by particle filtering", long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an estimator on a spectrogram and write artifacts.
    Run(RunArgs),
    /// Render a synthetic scenario to spectrogram + ground truth files.
    Synth(SynthArgs),
    /// Build a prior matrix from training data.
    TrainPriors(TrainPriorsArgs),
    /// Score an estimated note list against a reference.
    Eval(EvalArgs),
    /// Sweep particle counts, reporting runtime and F-measure.
    BenchParticles(BenchArgs),
    /// Split corpus piece files into train and test lists.
    Split(SplitArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Pf,
    PfPriors,
    Em,
    Daem,
}

impl From<EstimatorArg> for Estimator {
    fn from(v: EstimatorArg) -> Self {
        match v {
            EstimatorArg::Pf => Estimator::Pf,
            EstimatorArg::PfPriors => Estimator::PfPriors,
            EstimatorArg::Em => Estimator::Em,
            EstimatorArg::Daem => Estimator::Daem,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EmInitArg {
    Uniform,
    Random,
}

impl From<EmInitArg> for EmInit {
    fn from(v: EmInitArg) -> Self {
        match v {
            EmInitArg::Uniform => EmInit::Uniform,
            EmInitArg::Random => EmInit::Random,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Spectrogram CSV.
    #[arg(long)]
    input: PathBuf,
    /// Template dictionary CSV.
    #[arg(long)]
    templates: PathBuf,
    /// Output directory.
    #[arg(long, env = "SIPLCA_OUT")]
    out: PathBuf,
    /// Estimator to run.
    #[arg(long, value_enum, default_value = "pf")]
    estimator: EstimatorArg,
    /// Reference notes JSON; enables evaluation.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Prior matrix CSVs (repeatable; required for pf-priors).
    #[arg(long = "priors")]
    priors: Vec<PathBuf>,
    /// Number of particles.
    #[arg(long, env = "SIPLCA_PARTICLES", default_value_t = 500)]
    particles: usize,
    /// Observation noise standard deviation.
    #[arg(long, env = "SIPLCA_SIGMA", default_value_t = 0.05)]
    sigma: f64,
    /// Master seed.
    #[arg(long, env = "SIPLCA_SEED", default_value_t = 0)]
    seed: u64,
    /// Worker threads for per-particle work.
    #[arg(long, env = "SIPLCA_WORKERS", default_value_t = 1)]
    workers: usize,
    /// Absolute detection threshold (default: 0.1 x max activity).
    #[arg(long, env = "SIPLCA_THRESHOLD")]
    threshold: Option<f64>,
    /// Minimum note duration in seconds.
    #[arg(long, default_value_t = 0.05)]
    min_duration: f64,
    /// Onset tolerance in seconds for evaluation.
    #[arg(long, default_value_t = 0.05)]
    onset_tol: f64,
    /// Average this many smoothing realizations instead of filter means.
    #[arg(long, default_value_t = 0)]
    smooth: usize,
    /// Gamma walk shape for the pitch-activity concentrations.
    #[arg(long, default_value_t = 50.0)]
    gamma_theta: f64,
    /// Gamma walk shape for the mode-weight concentrations.
    #[arg(long, default_value_t = 50.0)]
    gamma_mode: f64,
    /// Gamma walk shape for the shift-weight concentrations.
    #[arg(long, default_value_t = 50.0)]
    gamma_shift: f64,
    /// Metropolis-Hastings iterations per particle and frame.
    #[arg(long, default_value_t = 10)]
    mh_iterations: usize,
    /// MH proposal spread as a fraction of the total activity.
    #[arg(long, default_value_t = 0.02)]
    mh_spread: f64,
    /// EM iteration budget per temperature stage.
    #[arg(long, default_value_t = 100)]
    em_iters: usize,
    /// EM relative log-likelihood convergence tolerance.
    #[arg(long, default_value_t = 1e-6)]
    em_tol: f64,
    /// Sparsity exponent applied to activations each EM iteration.
    #[arg(long, default_value_t = 1.02)]
    sparsity: f64,
    /// EM initialization.
    #[arg(long, value_enum, default_value = "uniform")]
    em_init: EmInitArg,
}

#[derive(Args)]
struct SynthArgs {
    /// Scenario JSON.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory.
    #[arg(long, env = "SIPLCA_OUT")]
    out: PathBuf,
    /// Noise seed.
    #[arg(long, env = "SIPLCA_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum PriorKindArg {
    CoOccurrence,
    Transition,
    Resonance,
}

#[derive(Args)]
struct TrainPriorsArgs {
    /// Which prior to build.
    #[arg(long, value_enum)]
    kind: PriorKindArg,
    /// Note-event JSON files, one per training piece (co-occurrence and
    /// transition kinds).
    #[arg(long = "notes")]
    notes: Vec<PathBuf>,
    /// Analysis frame hop in seconds used to rasterize the pieces.
    #[arg(long, default_value_t = siplca::spectrogram::CANONICAL_HOP_SECONDS)]
    hop: f64,
    /// Instrument pitch range.
    #[arg(long)]
    pitches: Option<usize>,
    /// Free-resonating isolated-note spectra CSV (resonance kind).
    #[arg(long)]
    free: Option<PathBuf>,
    /// Muted-string isolated-note spectra CSV (resonance kind).
    #[arg(long)]
    muted: Option<PathBuf>,
    /// Output prior matrix CSV.
    #[arg(long, env = "SIPLCA_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Estimated notes JSON.
    #[arg(long)]
    estimated: PathBuf,
    /// Reference notes JSON.
    #[arg(long)]
    reference: PathBuf,
    /// Onset tolerance in seconds.
    #[arg(long, default_value_t = 0.05)]
    onset_tol: f64,
    /// Optional path for the metrics JSON (printed to stdout regardless).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Spectrogram CSV.
    #[arg(long)]
    input: PathBuf,
    /// Template dictionary CSV.
    #[arg(long)]
    templates: PathBuf,
    /// Reference notes JSON.
    #[arg(long)]
    reference: PathBuf,
    /// Particle counts to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = vec![10, 100, 500])]
    particles: Vec<usize>,
    /// Seeds per particle count.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Observation noise standard deviation.
    #[arg(long, env = "SIPLCA_SIGMA", default_value_t = 0.05)]
    sigma: f64,
    /// Absolute detection threshold (default: 0.1 x max activity).
    #[arg(long, env = "SIPLCA_THRESHOLD")]
    threshold: Option<f64>,
    /// Optional path for the sweep results JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    /// Piece files to split.
    #[arg(long = "pieces", required = true)]
    pieces: Vec<PathBuf>,
    /// Fraction of pieces assigned to the test list.
    #[arg(long, default_value_t = 0.3)]
    test_fraction: f64,
    /// Shuffle seed.
    #[arg(long, env = "SIPLCA_SEED", default_value_t = 0)]
    seed: u64,
    /// Output directory for train.txt and test.txt.
    #[arg(long, env = "SIPLCA_OUT")]
    out: PathBuf,
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Run(args) => cmd_run(args),
        Command::Synth(args) => cmd_synth(args),
        Command::TrainPriors(args) => cmd_train_priors(args),
        Command::Eval(args) => cmd_eval(args),
        Command::BenchParticles(args) => cmd_bench(args),
        Command::Split(args) => cmd_split(args),
    }
}

fn cmd_run(args: RunArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::new(
        args.estimator.into(),
        args.input,
        args.templates,
        args.out,
    );
    cfg.reference = args.reference;
    cfg.priors = args.priors;
    cfg.filter = FilterConfig {
        n_particles: args.particles,
        sigma: args.sigma,
        gamma_shapes: GammaShapes {
            theta: args.gamma_theta,
            mode: args.gamma_mode,
            shift: args.gamma_shift,
        },
        seed: args.seed,
        store_ensembles: args.smooth > 0,
        workers: args.workers,
    };
    cfg.mh = MhConfig {
        iterations: args.mh_iterations,
        proposal_spread_frac: args.mh_spread,
    };
    cfg.em = EmConfig {
        max_iters: args.em_iters,
        convergence_tol: args.em_tol,
        sparsity_exponent: args.sparsity,
        ..if matches!(cfg.estimator, Estimator::Daem) {
            EmConfig::daem()
        } else {
            EmConfig::em()
        }
    };
    cfg.threshold = args.threshold;
    cfg.min_duration_s = args.min_duration;
    cfg.onset_tol_s = args.onset_tol;
    cfg.smooth_realizations = args.smooth;
    cfg.em_init = args.em_init.into();

    let summary = run(&cfg)?;
    println!(
        "estimator {} extracted {} notes (threshold {:.6})",
        cfg.estimator.as_str(),
        summary.notes.len(),
        summary.threshold_used
    );
    if let Some(m) = &summary.metrics {
        println!(
            "metrics: TPR {:.4} PPV {:.4} F {:.4} (TP {} FP {} FN {})",
            m.tpr, m.ppv, m.f_measure, m.true_positives, m.false_positives, m.false_negatives
        );
    } else {
        println!("metrics: skipped (no reference)");
    }
    println!("manifest: {}", summary.manifest_path.display());
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> anyhow::Result<()> {
    let file = io::load_scenario(&args.scenario)?;
    let dict = io::resolve_templates(&file, &args.scenario)?;
    let mut rng = stream(args.seed, domain::SYNTH, 0, 0);
    let out = synthesize(&file.scenario, &dict, &mut rng)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let spec_path = args.out.join("spectrogram.csv");
    let notes_path = args.out.join("truth_notes.json");
    let activity_path = args.out.join("truth_activity.csv");
    let templates_path = args.out.join("templates.csv");
    io::save_spectrogram(&out.spectrogram, &spec_path)?;
    io::save_notes_json(&out.notes, &notes_path)?;
    io::save_activity(
        out.activity.view(),
        file.scenario.hop_seconds,
        &activity_path,
    )?;
    io::save_templates(&dict, &templates_path)?;
    println!(
        "synthesized {} frames x {} bins, {} truth notes",
        out.spectrogram.n_frames(),
        out.spectrogram.n_bins(),
        out.notes.len()
    );
    for p in [&spec_path, &notes_path, &activity_path, &templates_path] {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn load_corpus(args: &TrainPriorsArgs) -> anyhow::Result<TrainingCorpus> {
    if args.notes.is_empty() {
        bail!("--notes is required for this prior kind");
    }
    let pieces = args
        .notes
        .iter()
        .map(|p| io::load_notes_json(p))
        .collect::<siplca::Result<Vec<_>>>()?;
    let n_pitches = match args.pitches {
        Some(n) => n,
        None => pieces
            .iter()
            .flatten()
            .map(|e| e.pitch)
            .max()
            .unwrap_or(0),
    };
    Ok(TrainingCorpus::new(pieces, args.hop, n_pitches)?)
}

fn cmd_train_priors(args: TrainPriorsArgs) -> anyhow::Result<()> {
    let prior = match args.kind {
        PriorKindArg::CoOccurrence => build_cooccurrence_prior(&load_corpus(&args)?)?,
        PriorKindArg::Transition => build_transition_prior(&load_corpus(&args)?)?,
        PriorKindArg::Resonance => {
            let (free, muted) = match (&args.free, &args.muted) {
                (Some(f), Some(m)) => (io::load_spectra(f)?, io::load_spectra(m)?),
                _ => bail!("resonance priors need --free and --muted spectra"),
            };
            build_resonance_prior(&free, &muted)?
        }
    };
    io::save_prior_matrix(&prior, &args.out)?;
    println!(
        "wrote {} prior ({} pitches) to {}",
        prior.kind.as_str(),
        prior.n_pitches(),
        args.out.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<()> {
    let estimated = io::load_notes_json(&args.estimated)?;
    let reference = io::load_notes_json(&args.reference)?;
    let report = evaluate(&estimated, &reference, args.onset_tol)?;
    let json = serde_json::to_string_pretty(&report)?;
    println!("{json}");
    if let Some(path) = args.out {
        std::fs::write(&path, json)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct BenchRow {
    n_particles: usize,
    mean_wall_ms: f64,
    mean_f_measure: f64,
    f_measures: Vec<f64>,
}

fn cmd_bench(args: BenchArgs) -> anyhow::Result<()> {
    let spec = io::load_spectrogram(&args.input)?;
    let dict = io::load_templates(&args.templates)?;
    let reference = io::load_notes_json(&args.reference)?;
    let input = normalize_frames(&spec)?;

    let mut rows = Vec::new();
    for &n in &args.particles {
        let mut walls = Vec::new();
        let mut fs = Vec::new();
        for seed in 0..args.seeds {
            let cfg = FilterConfig {
                n_particles: n,
                sigma: args.sigma,
                seed,
                ..FilterConfig::default()
            };
            let started = Instant::now();
            let output = filter(&input, &dict, &cfg, None)?;
            walls.push(started.elapsed().as_secs_f64() * 1e3);
            let max = output.activity.iter().cloned().fold(0.0f64, f64::max);
            let threshold = args.threshold.unwrap_or(0.1 * max.max(f64::MIN_POSITIVE));
            let notes = extract_notes(
                output.activity.view(),
                spec.frame_hop_seconds,
                threshold,
                0.05,
            );
            fs.push(evaluate(&notes, &reference, 0.05)?.f_measure);
        }
        let row = BenchRow {
            n_particles: n,
            mean_wall_ms: walls.iter().sum::<f64>() / walls.len() as f64,
            mean_f_measure: fs.iter().sum::<f64>() / fs.len() as f64,
            f_measures: fs,
        };
        println!(
            "N = {:>6}  mean wall {:>9.1} ms  mean F {:.4}",
            row.n_particles, row.mean_wall_ms, row.mean_f_measure
        );
        rows.push(row);
    }
    if let Some(path) = args.out {
        std::fs::write(&path, serde_json::to_string_pretty(&rows)?)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_split(args: SplitArgs) -> anyhow::Result<()> {
    if !(0.0..=1.0).contains(&args.test_fraction) {
        bail!("--test-fraction must lie in [0, 1]");
    }
    let mut pieces = args.pieces.clone();
    let mut rng = stream(args.seed, domain::SPLIT, 0, 0);
    pieces.shuffle(&mut rng);
    let n_test = ((pieces.len() as f64) * args.test_fraction).round() as usize;
    let (test, train) = pieces.split_at(n_test.min(pieces.len()));
    std::fs::create_dir_all(&args.out)?;
    let train_path = args.out.join("train.txt");
    let test_path = args.out.join("test.txt");
    let listing = |paths: &[PathBuf]| -> String {
        paths
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join("\n")
            + "\n"
    };
    std::fs::write(&train_path, listing(train))?;
    std::fs::write(&test_path, listing(test))?;
    println!(
        "split {} pieces into {} train / {} test",
        pieces.len(),
        train.len(),
        test.len()
    );
    println!("wrote {}", train_path.display());
    println!("wrote {}", test_path.display());
    Ok(())
}
