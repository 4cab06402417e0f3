//! Inter-pitch prior matrices and Metropolis-Hastings prior injection.
//!
//! Each prior is an `n_pitches x n_pitches` matrix `S` used in an exponential
//! quadratic form `P(p) ~ exp(-p' S K)`: large entries of `S` penalize the
//! corresponding pitch pairs. The sparse kinds (chord co-occurrence and
//! sympathetic resonance) take `K` equal to the current activity; the
//! transition kind takes `K` equal to the previous frame's activity.
//!
//! Count-based matrices are passed through the inversion `x -> 1 - x/max(x)`
//! so that frequently observed pitch combinations map to *small* penalties;
//! the quadratic form decreases in `S`, so "likely" must mean "near zero".
//!
//! Prior injection runs a short Metropolis-Hastings chain per particle on the
//! activity vector, targeting likelihood times prior, starting from the
//! particle filter draw. The proposal is an additive Gaussian perturbation
//! projected onto the zero-sum subspace, so the total activity (the frame
//! energy) is preserved; the accepted state's log prior is folded into the
//! particle weight.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::engine::Particle;
use crate::error::{Error, Result};
use crate::model::{observation_log_density, pitch_mixing_matrix, TemplateDictionary};
use crate::transcription::NoteEvent;

/// Which knowledge source a prior matrix encodes; decides its target vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    /// Frame-wise chord content counts (sparse prior, target = current `A`).
    CoOccurrence,
    /// Sympathetic-resonance coefficients (sparse prior, target = current `A`).
    Resonance,
    /// Harmonic transition probabilities (sequential prior, target = previous `A`).
    Transition,
}

impl PriorKind {
    /// Stable textual name used in the CSV header.
    pub fn as_str(&self) -> &'static str {
        match self {
            PriorKind::CoOccurrence => "co_occurrence",
            PriorKind::Resonance => "resonance",
            PriorKind::Transition => "transition",
        }
    }

    /// Parse the textual name used in the CSV header.
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "co_occurrence" => Some(PriorKind::CoOccurrence),
            "resonance" => Some(PriorKind::Resonance),
            "transition" => Some(PriorKind::Transition),
            _ => None,
        }
    }
}

/// An inter-pitch influence matrix with its kind.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorMatrix {
    /// Nonnegative `n_pitches x n_pitches` penalty matrix.
    pub matrix: Array2<f64>,
    /// Knowledge source; selects the target vector rule.
    pub kind: PriorKind,
}

impl PriorMatrix {
    /// Number of pitches the matrix covers.
    pub fn n_pitches(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Note events of a training repertoire, one list per piece, sampled on the
/// analysis frame grid.
#[derive(Debug, Clone)]
pub struct TrainingCorpus {
    /// Note events per piece.
    pub pieces: Vec<Vec<NoteEvent>>,
    /// Frame hop used to rasterize the events.
    pub hop_seconds: f64,
    /// Pitch range of the instrument.
    pub n_pitches: usize,
}

impl TrainingCorpus {
    /// Validate and wrap a set of pieces.
    pub fn new(pieces: Vec<Vec<NoteEvent>>, hop_seconds: f64, n_pitches: usize) -> Result<Self> {
        if !(hop_seconds > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "hop_seconds must be positive, got {hop_seconds}"
            )));
        }
        if n_pitches == 0 {
            return Err(Error::InvalidParameter("n_pitches must be positive".into()));
        }
        if pieces.iter().all(|p| p.is_empty()) {
            return Err(Error::EmptyCorpus);
        }
        for piece in &pieces {
            for e in piece {
                if e.pitch == 0 || e.pitch > n_pitches {
                    return Err(Error::InvalidParameter(format!(
                        "note pitch {} outside [1, {n_pitches}]",
                        e.pitch
                    )));
                }
                if !(e.onset_s < e.offset_s) {
                    return Err(Error::InvalidParameter(format!(
                        "note onset {} not before offset {}",
                        e.onset_s, e.offset_s
                    )));
                }
            }
        }
        Ok(Self {
            pieces,
            hop_seconds,
            n_pitches,
        })
    }

    /// Active 0-based pitch indices at each frame time `t * hop`.
    pub(crate) fn rasterize(&self, piece: &[NoteEvent]) -> Vec<Vec<usize>> {
        let max_offset = piece.iter().fold(0.0f64, |acc, e| acc.max(e.offset_s));
        let n_frames = (max_offset / self.hop_seconds).ceil() as usize;
        let mut frames = vec![Vec::new(); n_frames];
        for (t, active) in frames.iter_mut().enumerate() {
            let time = t as f64 * self.hop_seconds;
            for e in piece {
                if e.onset_s <= time && time < e.offset_s {
                    active.push(e.pitch - 1);
                }
            }
            active.sort_unstable();
            active.dedup();
        }
        frames
    }
}

/// `x -> 1 - x / max(x)` over the whole matrix; all ones if the matrix is
/// identically zero (never-observed pairs carry the maximum penalty).
fn invert_counts(matrix: &mut Array2<f64>) {
    let max = matrix.iter().cloned().fold(0.0f64, f64::max);
    if max > 0.0 {
        matrix.mapv_inplace(|x| 1.0 - x / max);
    } else {
        matrix.fill(1.0);
    }
}

/// Chord-content prior: count frames where pitches i and j sound together,
/// invert so frequent pairs get low penalty, and zero the diagonal.
pub fn build_cooccurrence_prior(corpus: &TrainingCorpus) -> Result<PriorMatrix> {
    let n = corpus.n_pitches;
    let mut counts = Array2::zeros((n, n));
    for piece in &corpus.pieces {
        for active in corpus.rasterize(piece) {
            for &i in &active {
                for &j in &active {
                    if i != j {
                        counts[[i, j]] += 1.0;
                    }
                }
            }
        }
    }
    invert_counts(&mut counts);
    for i in 0..n {
        counts[[i, i]] = 0.0;
    }
    Ok(PriorMatrix {
        matrix: counts,
        kind: PriorKind::CoOccurrence,
    })
}

/// Sympathetic-resonance prior from free-resonating and muted isolated-note
/// spectra (`n_pitches x n_bins`, each row unit L2 norm).
///
/// For each pitch i the entrywise difference between its free and muted
/// spectrum is binarized at 0.5 (inclusive) to mark the bins where sympathetic
/// energy appears; `S(i,j)` is the muted spectrum of j summed over those bins.
pub fn build_resonance_prior(
    free_spectra: &Array2<f64>,
    muted_spectra: &Array2<f64>,
) -> Result<PriorMatrix> {
    if free_spectra.dim() != muted_spectra.dim() {
        return Err(Error::DimensionMismatch(format!(
            "free spectra {:?} vs muted spectra {:?}",
            free_spectra.dim(),
            muted_spectra.dim()
        )));
    }
    let (n, n_bins) = free_spectra.dim();
    if n == 0 || n_bins == 0 {
        return Err(Error::InvalidParameter("spectra must be non-empty".into()));
    }
    for (name, spectra) in [("free", free_spectra), ("muted", muted_spectra)] {
        for (i, row) in spectra.rows().into_iter().enumerate() {
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidParameter(format!(
                    "{name} spectrum {i} has L2 norm {norm}, expected 1"
                )));
            }
        }
    }
    let mut matrix = Array2::zeros((n, n));
    for i in 0..n {
        let marked: Vec<usize> = (0..n_bins)
            .filter(|&f| (free_spectra[[i, f]] - muted_spectra[[i, f]]).abs() >= 0.5)
            .collect();
        for j in 0..n {
            if i == j {
                continue;
            }
            matrix[[i, j]] = marked.iter().map(|&f| muted_spectra[[j, f]]).sum();
        }
    }
    Ok(PriorMatrix {
        matrix,
        kind: PriorKind::Resonance,
    })
}

/// Witten-Bell smoothed pitch transition probabilities, one row per source
/// pitch, built from consecutive frame pairs of the corpus. Seen successors
/// get `c / (n + T)`, the reserved mass `T / (n + T)` is spread uniformly over
/// unseen successors, and rows with no observed transitions fall back to
/// uniform. Every row sums to one.
pub fn transition_probabilities(corpus: &TrainingCorpus) -> Result<Array2<f64>> {
    let n = corpus.n_pitches;
    let mut counts = vec![vec![0u64; n]; n];
    let mut frame_pairs = 0usize;
    for piece in &corpus.pieces {
        let frames = corpus.rasterize(piece);
        for window in frames.windows(2) {
            frame_pairs += 1;
            for &i in &window[0] {
                for &j in &window[1] {
                    counts[i][j] += 1;
                }
            }
        }
    }
    if frame_pairs == 0 {
        return Err(Error::InvalidParameter(
            "transition prior needs a corpus with at least 2 frames".into(),
        ));
    }
    let mut probs = Array2::zeros((n, n));
    for i in 0..n {
        let total: u64 = counts[i].iter().sum();
        let seen = counts[i].iter().filter(|&&c| c > 0).count();
        if total == 0 {
            for j in 0..n {
                probs[[i, j]] = 1.0 / n as f64;
            }
            continue;
        }
        let unseen = n - seen;
        let denom = (total + seen as u64) as f64;
        for j in 0..n {
            probs[[i, j]] = if counts[i][j] > 0 {
                if unseen > 0 {
                    counts[i][j] as f64 / denom
                } else {
                    // No unseen successors to reserve mass for: plain MLE.
                    counts[i][j] as f64 / total as f64
                }
            } else {
                seen as f64 / (denom * unseen as f64)
            };
        }
    }
    Ok(probs)
}

/// Harmonic-transition prior: Witten-Bell transition probabilities inverted
/// into penalties (frequent transitions approach zero).
pub fn build_transition_prior(corpus: &TrainingCorpus) -> Result<PriorMatrix> {
    let mut probs = transition_probabilities(corpus)?;
    invert_counts(&mut probs);
    Ok(PriorMatrix {
        matrix: probs,
        kind: PriorKind::Transition,
    })
}

/// Log of the unnormalized exponential quadratic prior: `-p' S K`.
pub fn prior_log_density(
    p: ArrayView1<'_, f64>,
    prior: &PriorMatrix,
    target: ArrayView1<'_, f64>,
) -> Result<f64> {
    let (rows, cols) = prior.matrix.dim();
    if p.len() != rows || target.len() != cols {
        return Err(Error::DimensionMismatch(format!(
            "prior matrix is {rows}x{cols}, p has {} entries, target has {}",
            p.len(),
            target.len()
        )));
    }
    let mut quad = 0.0;
    for i in 0..rows {
        let pi = p[i];
        if pi == 0.0 {
            continue;
        }
        let mut row_dot = 0.0;
        for j in 0..cols {
            row_dot += prior.matrix[[i, j]] * target[j];
        }
        quad += pi * row_dot;
    }
    Ok(-quad)
}

/// Targets available when evaluating priors at one frame.
#[derive(Debug, Clone, Copy)]
pub struct PriorContext<'a> {
    /// The prior matrices in effect.
    pub priors: &'a [PriorMatrix],
    /// Previous frame's activity estimate; `None` at the first frame, which
    /// skips transition priors.
    pub previous_activity: Option<&'a Array1<f64>>,
}

impl<'a> PriorContext<'a> {
    /// Context with no priors (plain particle filtering).
    pub fn none() -> PriorContext<'static> {
        PriorContext {
            priors: &[],
            previous_activity: None,
        }
    }
}

/// Sum of the individual prior log-densities for an activity vector.
/// Transition priors are skipped when no previous activity is available.
pub fn combined_log_prior(activity: &Array1<f64>, ctx: &PriorContext<'_>) -> Result<f64> {
    let mut total = 0.0;
    for prior in ctx.priors {
        match prior.kind {
            PriorKind::Transition => {
                if let Some(prev) = ctx.previous_activity {
                    total += prior_log_density(activity.view(), prior, prev.view())?;
                }
            }
            _ => {
                total += prior_log_density(activity.view(), prior, activity.view())?;
            }
        }
    }
    Ok(total)
}

/// Metropolis-Hastings settings for prior injection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MhConfig {
    /// Number of MH iterations per particle and frame.
    pub iterations: usize,
    /// Proposal standard deviation as a fraction of the total activity.
    pub proposal_spread_frac: f64,
}

impl Default for MhConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            proposal_spread_frac: 0.02,
        }
    }
}

/// Accept/reject step in the log domain; a log-ratio of zero (identical
/// proposal) always accepts.
pub(crate) fn mh_accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

/// Gaussian perturbation of the activity projected onto the zero-sum
/// subspace; negative coordinates are clamped to zero and the vector rescaled
/// so the total activity is preserved.
fn propose_activity<R: Rng + ?Sized>(
    current: &Array1<f64>,
    spread: f64,
    rng: &mut R,
) -> Array1<f64> {
    let n = current.len();
    let normal = Normal::new(0.0, spread).expect("nonnegative spread");
    let eps: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
    let mean = eps.iter().sum::<f64>() / n as f64;
    let mut proposal = current.clone();
    for (p, e) in proposal.iter_mut().zip(&eps) {
        *p += e - mean;
    }
    if proposal.iter().any(|&v| v < 0.0) {
        let total: f64 = current.sum();
        proposal.mapv_inplace(|v| v.max(0.0));
        let clamped_sum: f64 = proposal.sum();
        if clamped_sum > 0.0 {
            proposal.mapv_inplace(|v| v * total / clamped_sum);
        } else {
            return current.clone();
        }
    }
    proposal
}

/// Run a Metropolis-Hastings chain on a particle's activity vector, targeting
/// the product of the observation likelihood and the combined prior. The
/// chain starts from the particle filter draw; mode and shift weights pass
/// through untouched. The accepted state's combined log prior is folded into
/// the particle for the subsequent weighting pass.
pub fn mh_perturb<R: Rng + ?Sized>(
    mut particle: Particle,
    observed: ArrayView1<'_, f64>,
    dict: &TemplateDictionary,
    ctx: &PriorContext<'_>,
    sigma: f64,
    mh: &MhConfig,
    rng: &mut R,
) -> Result<Particle> {
    mh_perturb_in_place(&mut particle, observed, dict, ctx, sigma, mh, rng)?;
    Ok(particle)
}

/// In-place form of [`mh_perturb`]; the filter uses it to avoid cloning
/// particles.
pub(crate) fn mh_perturb_in_place<R: Rng + ?Sized>(
    particle: &mut Particle,
    observed: ArrayView1<'_, f64>,
    dict: &TemplateDictionary,
    ctx: &PriorContext<'_>,
    sigma: f64,
    mh: &MhConfig,
    rng: &mut R,
) -> Result<()> {
    let total: f64 = particle.params.pitch_activity.sum();
    if mh.iterations == 0 || total <= 0.0 {
        particle.log_prior = combined_log_prior(&particle.params.pitch_activity, ctx)?;
        return Ok(());
    }
    // B and C stay fixed during the chain, so reconstruction reduces to one
    // matrix-vector product per proposal.
    let mix = pitch_mixing_matrix(&particle.params, dict);
    let spread = mh.proposal_spread_frac * total;
    let log_target = |a: &Array1<f64>| -> Result<f64> {
        let predicted = mix.dot(a);
        Ok(observation_log_density(observed, predicted.view(), sigma)?
            + combined_log_prior(a, ctx)?)
    };
    let mut current = particle.params.pitch_activity.clone();
    let mut current_lt = log_target(&current)?;
    for _ in 0..mh.iterations {
        let proposal = propose_activity(&current, spread, rng);
        let proposal_lt = log_target(&proposal)?;
        if mh_accept(proposal_lt - current_lt, rng) {
            current = proposal;
            current_lt = proposal_lt;
        }
    }
    particle.log_prior = combined_log_prior(&current, ctx)?;
    particle.params.pitch_activity = current;
    Ok(())
}
