//! Time-frequency input data.
//!
//! A spectrogram is treated as a joint distribution over (frequency bin,
//! frame): each frame column is normalized to a per-frame distribution and the
//! original column sum is kept as the frame energy, so estimators can work on
//! distributions and reapply the energy to the pitch activations afterwards.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Log-frequency resolution used by the canonical front end (60 bins/octave).
pub const CANONICAL_BINS_PER_OCTAVE: u32 = 60;

/// Frame hop of the canonical front end (23 ms window, 50% hop).
pub const CANONICAL_HOP_SECONDS: f64 = 0.0115;

/// A nonnegative magnitude spectrogram with its frame-grid metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// Magnitudes, `n_bins x n_frames`.
    pub values: Array2<f64>,
    /// Seconds between consecutive frames.
    pub frame_hop_seconds: f64,
    /// Log-frequency resolution of the bin axis.
    pub bins_per_octave: u32,
}

impl Spectrogram {
    /// Validate and wrap a magnitude matrix.
    pub fn new(values: Array2<f64>, frame_hop_seconds: f64, bins_per_octave: u32) -> Result<Self> {
        if frame_hop_seconds <= 0.0 || !frame_hop_seconds.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "frame_hop_seconds must be positive, got {frame_hop_seconds}"
            )));
        }
        if bins_per_octave == 0 {
            return Err(Error::InvalidParameter(
                "bins_per_octave must be positive".into(),
            ));
        }
        check_nonnegative(&values)?;
        Ok(Self {
            values,
            frame_hop_seconds,
            bins_per_octave,
        })
    }

    /// Number of frequency bins (rows).
    pub fn n_bins(&self) -> usize {
        self.values.nrows()
    }

    /// Number of frames (columns).
    pub fn n_frames(&self) -> usize {
        self.values.ncols()
    }
}

/// A spectrogram whose nonzero columns each sum to one, plus the original
/// per-frame energies.
#[derive(Debug, Clone)]
pub struct NormalizedSpectrogram {
    /// Column-normalized spectrogram.
    pub spectrogram: Spectrogram,
    /// Original column sums; zero for all-zero frames.
    pub frame_energies: Vec<f64>,
}

impl NormalizedSpectrogram {
    /// Number of frames.
    pub fn n_frames(&self) -> usize {
        self.spectrogram.n_frames()
    }
}

fn check_nonnegative(values: &Array2<f64>) -> Result<()> {
    for ((bin, frame), &v) in values.indexed_iter() {
        if !(v >= 0.0) {
            return Err(Error::NegativeEntry {
                bin,
                frame,
                value: v,
            });
        }
    }
    Ok(())
}

/// Divide each column by its sum so nonzero frames become distributions.
///
/// All-zero frames are left as zero columns with energy 0; estimators skip
/// them and carry their state forward.
pub fn normalize_frames(spec: &Spectrogram) -> Result<NormalizedSpectrogram> {
    check_nonnegative(&spec.values)?;
    let mut values = spec.values.clone();
    let mut energies = Vec::with_capacity(spec.n_frames());
    for mut col in values.columns_mut() {
        let sum: f64 = col.sum();
        if sum > 0.0 {
            col.mapv_inplace(|v| v / sum);
        }
        energies.push(sum);
    }
    Ok(NormalizedSpectrogram {
        spectrogram: Spectrogram {
            values,
            frame_hop_seconds: spec.frame_hop_seconds,
            bins_per_octave: spec.bins_per_octave,
        },
        frame_energies: energies,
    })
}
