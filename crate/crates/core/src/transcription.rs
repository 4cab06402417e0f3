//! Note-event extraction and note-level scoring.
//!
//! Pitch-activity matrices are turned into note events by thresholding each
//! pitch row and pruning short runs, and scored against a reference with
//! onset-tolerance matching: an estimated note is correct when its pitch
//! matches and its onset lies within the tolerance of a reference onset
//! (50 ms by default), each reference matching at most one estimate.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default onset tolerance in seconds.
pub const DEFAULT_ONSET_TOL_S: f64 = 0.05;

/// Default minimum note duration in seconds.
pub const DEFAULT_MIN_DURATION_S: f64 = 0.05;

/// One note: 1-based pitch index, onset and offset in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    /// Pitch index in `[1, n_pitches]`.
    pub pitch: usize,
    /// Onset time in seconds.
    pub onset_s: f64,
    /// Offset time in seconds.
    pub offset_s: f64,
}

/// Note-level confusion counts and derived metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Matched estimated notes.
    pub true_positives: usize,
    /// Unmatched estimated notes.
    pub false_positives: usize,
    /// Unmatched reference notes.
    pub false_negatives: usize,
    /// Recall `TP / (TP + FN)`.
    pub tpr: f64,
    /// Precision `TP / (TP + FP)`.
    pub ppv: f64,
    /// Harmonic mean of precision and recall.
    pub f_measure: f64,
}

impl EvalReport {
    /// Derive the rate metrics from raw counts.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let tpr = if tp + fn_ > 0 {
            tp as f64 / (tp + fn_) as f64
        } else {
            0.0
        };
        let ppv = if tp + fp > 0 {
            tp as f64 / (tp + fp) as f64
        } else {
            0.0
        };
        let f_measure = if ppv + tpr > 0.0 {
            2.0 * ppv * tpr / (ppv + tpr)
        } else {
            0.0
        };
        Self {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            tpr,
            ppv,
            f_measure,
        }
    }
}

/// Threshold each pitch row of an activity matrix into note events.
///
/// A maximal run of frames with activity `>= threshold` becomes one event
/// spanning from the first frame's start to the last frame's end; events
/// shorter than `min_duration_s` are discarded.
pub fn extract_notes(
    activity: ArrayView2<'_, f64>,
    hop_s: f64,
    threshold: f64,
    min_duration_s: f64,
) -> Vec<NoteEvent> {
    let (n_pitches, n_frames) = activity.dim();
    let mut events = Vec::new();
    for pitch_row in 0..n_pitches {
        let mut run_start: Option<usize> = None;
        for t in 0..=n_frames {
            let active = t < n_frames && activity[[pitch_row, t]] >= threshold;
            match (active, run_start) {
                (true, None) => run_start = Some(t),
                (false, Some(start)) => {
                    let onset_s = start as f64 * hop_s;
                    let offset_s = t as f64 * hop_s;
                    if offset_s - onset_s >= min_duration_s {
                        events.push(NoteEvent {
                            pitch: pitch_row + 1,
                            onset_s,
                            offset_s,
                        });
                    }
                    run_start = None;
                }
                _ => {}
            }
        }
    }
    events.sort_by(|a, b| {
        a.onset_s
            .partial_cmp(&b.onset_s)
            .unwrap()
            .then(a.pitch.cmp(&b.pitch))
    });
    events
}

/// Score estimated notes against a reference with one-to-one onset matching.
///
/// Matching is done per pitch by a sweep over estimates in onset order, each
/// taking the earliest unmatched reference within the tolerance. For this
/// interval structure the sweep yields a maximum matching, so the true
/// positive count (and hence the F-measure) is symmetric in swapping the two
/// lists. The tolerance bound is inclusive.
pub fn evaluate(
    estimated: &[NoteEvent],
    reference: &[NoteEvent],
    onset_tol_s: f64,
) -> Result<EvalReport> {
    if !(onset_tol_s > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "onset tolerance must be positive, got {onset_tol_s}"
        )));
    }
    let max_pitch = estimated
        .iter()
        .chain(reference)
        .map(|e| e.pitch)
        .max()
        .unwrap_or(0);
    let mut tp = 0usize;
    for pitch in 1..=max_pitch {
        let mut est: Vec<f64> = estimated
            .iter()
            .filter(|e| e.pitch == pitch)
            .map(|e| e.onset_s)
            .collect();
        let mut refs: Vec<f64> = reference
            .iter()
            .filter(|e| e.pitch == pitch)
            .map(|e| e.onset_s)
            .collect();
        est.sort_by(|a, b| a.partial_cmp(b).unwrap());
        refs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut next_ref = 0usize;
        let mut taken = vec![false; refs.len()];
        for &e in &est {
            // Skip references that ended too early for any later estimate.
            while next_ref < refs.len() && refs[next_ref] < e - onset_tol_s {
                next_ref += 1;
            }
            let mut k = next_ref;
            while k < refs.len() && refs[k] <= e + onset_tol_s {
                if !taken[k] {
                    taken[k] = true;
                    tp += 1;
                    break;
                }
                k += 1;
            }
        }
    }
    Ok(EvalReport::from_counts(
        tp,
        estimated.len() - tp,
        reference.len() - tp,
    ))
}
