//! Synthetic spectrogram scenarios with known ground truth.
//!
//! A scenario lists note events (each with an amplitude, playing mode and
//! shift), a frame grid and a noise level. Synthesis rasterizes the notes
//! onto the frame grid, reconstructs each frame through the observation model
//! and adds clamped Gaussian noise. The emitted ground truth (activity matrix
//! and note list) is the rasterized version, so it is consistent with the
//! generated spectrogram by construction.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ParameterState, TemplateDictionary};
use crate::spectrogram::Spectrogram;
use crate::transcription::NoteEvent;

/// One synthetic note.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioNote {
    /// Pitch index in `[1, n_pitches]`.
    pub pitch: usize,
    /// Onset in seconds.
    pub onset_s: f64,
    /// Offset in seconds.
    pub offset_s: f64,
    /// Activity contributed while the note sounds.
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    /// Playing mode in `[1, n_modes]`.
    #[serde(default = "default_mode")]
    pub mode: usize,
    /// Shift offset; must be in the dictionary's shift range.
    #[serde(default)]
    pub shift: i64,
}

fn default_amplitude() -> f64 {
    1.0
}

fn default_mode() -> usize {
    1
}

/// A synthetic ground-truth scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticScenario {
    /// The notes to render.
    pub notes: Vec<ScenarioNote>,
    /// Frame hop in seconds.
    pub hop_seconds: f64,
    /// Bin-axis metadata carried into the spectrogram.
    pub bins_per_octave: u32,
    /// Standard deviation of the additive Gaussian noise (clamped at 0).
    pub noise_sigma: f64,
    /// Total duration; defaults to the last offset plus one hop.
    #[serde(default)]
    pub duration_s: Option<f64>,
}

/// Synthesis artifacts: the spectrogram plus the rasterized ground truth.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    /// Generated spectrogram (reconstruction + noise).
    pub spectrogram: Spectrogram,
    /// True pitch activity on the frame grid, `n_pitches x n_frames`.
    pub activity: Array2<f64>,
    /// Rasterized ground-truth note events.
    pub notes: Vec<NoteEvent>,
}

/// Render a scenario through the observation model.
pub fn synthesize<R: Rng + ?Sized>(
    scenario: &SyntheticScenario,
    dict: &TemplateDictionary,
    rng: &mut R,
) -> Result<SynthOutput> {
    let dims = dict.dims();
    if !(scenario.hop_seconds > 0.0) {
        return Err(Error::InvalidParameter("hop_seconds must be positive".into()));
    }
    if scenario.noise_sigma < 0.0 {
        return Err(Error::InvalidParameter("noise_sigma must be nonnegative".into()));
    }
    let mut min_amplitude = f64::INFINITY;
    for note in &scenario.notes {
        if note.pitch == 0 || note.pitch > dims.n_pitches {
            return Err(Error::InvalidParameter(format!(
                "note pitch {} outside dictionary range [1, {}]",
                note.pitch, dims.n_pitches
            )));
        }
        if note.mode == 0 || note.mode > dims.n_modes {
            return Err(Error::InvalidParameter(format!(
                "note mode {} outside dictionary range [1, {}]",
                note.mode, dims.n_modes
            )));
        }
        if dict.shift_index(note.shift).is_none() {
            return Err(Error::InvalidParameter(format!(
                "note shift {} not in dictionary shift range {:?}",
                note.shift,
                dict.shift_range()
            )));
        }
        if !(note.onset_s < note.offset_s) {
            return Err(Error::InvalidParameter(format!(
                "note onset {} not before offset {}",
                note.onset_s, note.offset_s
            )));
        }
        if !(note.amplitude > 0.0) {
            return Err(Error::InvalidParameter("note amplitude must be positive".into()));
        }
        min_amplitude = min_amplitude.min(note.amplitude);
    }

    let hop = scenario.hop_seconds;
    let last_offset = scenario
        .notes
        .iter()
        .fold(0.0f64, |acc, n| acc.max(n.offset_s));
    let duration = scenario.duration_s.unwrap_or(last_offset + hop);
    let n_frames = (duration / hop).ceil().max(1.0) as usize;
    let n_bins = dict.n_bins();

    let mut values = Array2::zeros((n_bins, n_frames));
    let mut activity = Array2::zeros((dims.n_pitches, n_frames));
    let noise = if scenario.noise_sigma > 0.0 {
        Some(Normal::new(0.0, scenario.noise_sigma).expect("positive sigma"))
    } else {
        None
    };

    for t in 0..n_frames {
        let time = t as f64 * hop;
        // Accumulate amplitudes per pitch / mode / shift for the active notes.
        let mut a = Array1::zeros(dims.n_pitches);
        let mut b_acc = Array2::zeros((dims.n_pitches, dims.n_modes));
        let mut c_acc = Array3::zeros((dims.n_pitches, dims.n_modes, dims.n_shifts));
        for note in &scenario.notes {
            if note.onset_s <= time && time < note.offset_s {
                let i = note.pitch - 1;
                let m = note.mode - 1;
                let d = dict.shift_index(note.shift).expect("validated");
                a[i] += note.amplitude;
                b_acc[[i, m]] += note.amplitude;
                c_acc[[i, m, d]] += note.amplitude;
            }
        }
        activity.column_mut(t).assign(&a);

        let state = ParameterState {
            pitch_activity: a,
            mode_weights: normalize_rows(b_acc),
            shift_weights: normalize_fibers(c_acc),
        };
        let frame = crate::model::reconstruct_frame(&state, dict)?;
        for f in 0..n_bins {
            let mut v = frame[f];
            if let Some(noise) = &noise {
                v += noise.sample(rng);
            }
            values[[f, t]] = v.max(0.0);
        }
    }

    let spectrogram = Spectrogram::new(values, hop, scenario.bins_per_octave)?;
    let truth_threshold = if min_amplitude.is_finite() {
        min_amplitude * 0.5
    } else {
        0.5
    };
    let notes = crate::transcription::extract_notes(activity.view(), hop, truth_threshold, 0.0);
    Ok(SynthOutput {
        spectrogram,
        activity,
        notes,
    })
}

fn normalize_rows(mut m: Array2<f64>) -> Array2<f64> {
    let n_cols = m.ncols();
    for mut row in m.rows_mut() {
        let sum: f64 = row.sum();
        if sum > 0.0 {
            row.mapv_inplace(|v| v / sum);
        } else {
            row.fill(1.0 / n_cols as f64);
        }
    }
    m
}

fn normalize_fibers(mut c: Array3<f64>) -> Array3<f64> {
    let (n_i, n_m, n_d) = c.dim();
    for i in 0..n_i {
        for m in 0..n_m {
            let sum: f64 = (0..n_d).map(|d| c[[i, m, d]]).sum();
            if sum > 0.0 {
                for d in 0..n_d {
                    c[[i, m, d]] /= sum;
                }
            } else {
                for d in 0..n_d {
                    c[[i, m, d]] = 1.0 / n_d as f64;
                }
            }
        }
    }
    c
}

/// Recipes for generating template dictionaries for synthetic experiments.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateGen {
    /// Disjoint-support templates: each pitch owns a block of bins with a
    /// triangular bump padded so the shift range never leaks across blocks.
    Disjoint {
        /// Number of pitches.
        n_pitches: usize,
        /// Bins per pitch block.
        block_bins: usize,
    },
    /// Overlapping harmonic combs on a log-frequency axis.
    Harmonic {
        /// Number of pitches.
        n_pitches: usize,
        /// Total bins.
        n_bins: usize,
        /// Bins per octave of the synthetic axis.
        bins_per_octave: u32,
        /// Bin of the lowest pitch's fundamental.
        base_bin: usize,
        /// Bins between consecutive pitches' fundamentals.
        spacing_bins: usize,
        /// Number of partials per template.
        n_partials: usize,
        /// Geometric amplitude decay per partial.
        decay: f64,
        /// Mass floor added to every bin before normalization; keeps EM
        /// log-likelihoods finite on noisy input.
        floor: f64,
    },
}

/// Build a dictionary from a recipe (single playing mode).
pub fn generate_dictionary(
    gen: &TemplateGen,
    shift_range: Vec<i64>,
) -> Result<TemplateDictionary> {
    match *gen {
        TemplateGen::Disjoint {
            n_pitches,
            block_bins,
        } => {
            if n_pitches == 0 || block_bins < 5 {
                return Err(Error::InvalidParameter(
                    "disjoint templates need at least 5 bins per block".into(),
                ));
            }
            let max_shift = shift_range.iter().map(|s| s.unsigned_abs() as usize).max();
            let margin = max_shift.unwrap_or(0);
            if block_bins <= 2 * margin + 1 {
                return Err(Error::InvalidParameter(
                    "block too narrow for the shift range".into(),
                ));
            }
            let n_bins = n_pitches * block_bins;
            let support = block_bins - 2 * margin;
            let mut t = Array3::zeros((n_pitches, 1, n_bins));
            for i in 0..n_pitches {
                let start = i * block_bins + margin;
                // Triangular bump across the in-block support.
                let mut total = 0.0;
                for k in 0..support {
                    let x = 1.0 + (support as f64 / 2.0 - (k as f64 - support as f64 / 2.0).abs());
                    t[[i, 0, start + k]] = x;
                    total += x;
                }
                for k in 0..support {
                    t[[i, 0, start + k]] /= total;
                }
            }
            TemplateDictionary::new(t, shift_range)
        }
        TemplateGen::Harmonic {
            n_pitches,
            n_bins,
            bins_per_octave,
            base_bin,
            spacing_bins,
            n_partials,
            decay,
            floor,
        } => {
            if n_pitches == 0 || n_partials == 0 || n_bins == 0 {
                return Err(Error::InvalidParameter(
                    "harmonic templates need pitches, partials and bins".into(),
                ));
            }
            if !(decay > 0.0 && decay <= 1.0) || floor < 0.0 {
                return Err(Error::InvalidParameter(
                    "decay must be in (0, 1] and floor nonnegative".into(),
                ));
            }
            let mut t = Array3::from_elem((n_pitches, 1, n_bins), floor);
            for i in 0..n_pitches {
                let fundamental = base_bin + i * spacing_bins;
                for p in 1..=n_partials {
                    let offset = (bins_per_octave as f64 * (p as f64).log2()).round() as usize;
                    let center = fundamental + offset;
                    let amp = decay.powi(p as i32 - 1);
                    // Narrow triangular peak.
                    for (db, w) in [(-1i64, 0.25), (0, 0.5), (1, 0.25)] {
                        let bin = center as i64 + db;
                        if bin >= 0 && (bin as usize) < n_bins {
                            t[[i, 0, bin as usize]] += amp * w;
                        }
                    }
                }
                let total: f64 = t.slice(ndarray::s![i, 0, ..]).sum();
                t.slice_mut(ndarray::s![i, 0, ..])
                    .mapv_inplace(|v| v / total);
            }
            TemplateDictionary::new(t, shift_range)
        }
    }
}
