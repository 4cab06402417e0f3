//! The shift-invariant PLCA observation model.
//!
//! A frame distribution is reconstructed as
//!
//! ```text
//! P(f,t) = sum over (i, m, df) of A(i) * B(i,m) * C(i,m,df) * T(i,m)[f - df]
//! ```
//!
//! where `A` is the pitch activity (scaled by the frame energy), `B` the
//! playing-mode weights, `C` the per-bin shift weights and `T(i,m)` a fixed
//! unit-sum spectral template. Templates shifted past either end of the bin
//! axis are truncated, not wrapped; wrapping has no meaning on a log-frequency
//! axis. The observation likelihood is an i.i.d. Gaussian on each bin of the
//! residual between the observed frame and the reconstruction.

use ndarray::{Array1, Array2, Array3, ArrayView1};

use crate::error::{Error, Result};

/// Tolerance used when validating unit-sum invariants.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Latent dimensions of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Number of pitches `N_I`.
    pub n_pitches: usize,
    /// Number of playing modes `N_m`.
    pub n_modes: usize,
    /// Number of shift offsets `N_df`.
    pub n_shifts: usize,
}

/// Fixed spectral templates, one unit-sum vector per (pitch, mode), plus the
/// set of log-frequency shifts the model may apply to them.
#[derive(Debug, Clone)]
pub struct TemplateDictionary {
    templates: Array3<f64>, // n_pitches x n_modes x n_bins
    shift_range: Vec<i64>,
}

impl TemplateDictionary {
    /// The canonical semitone shift range at 20-cent resolution.
    pub fn canonical_shift_range() -> Vec<i64> {
        vec![-2, -1, 0, 1, 2]
    }

    /// Validate and wrap a template tensor (`n_pitches x n_modes x n_bins`).
    ///
    /// Each template must sum to one within [`SIMPLEX_TOL`] and the shift
    /// range must be symmetric around zero.
    pub fn new(templates: Array3<f64>, shift_range: Vec<i64>) -> Result<Self> {
        let (n_pitches, n_modes, n_bins) = templates.dim();
        if n_pitches == 0 || n_modes == 0 || n_bins == 0 {
            return Err(Error::InvalidParameter(
                "template dictionary must be non-empty".into(),
            ));
        }
        if shift_range.is_empty() {
            return Err(Error::InvalidParameter("shift range must be non-empty".into()));
        }
        let mut sorted = shift_range.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != shift_range.len() || sorted != shift_range {
            return Err(Error::InvalidParameter(
                "shift range must be strictly increasing".into(),
            ));
        }
        for &s in &shift_range {
            if !shift_range.contains(&-s) {
                return Err(Error::InvalidParameter(format!(
                    "shift range must be symmetric around 0; missing {}",
                    -s
                )));
            }
        }
        for i in 0..n_pitches {
            for m in 0..n_modes {
                let t = templates.slice(ndarray::s![i, m, ..]);
                if t.iter().any(|&v| v < 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "template ({i},{m}) has negative entries"
                    )));
                }
                let sum: f64 = t.sum();
                if (sum - 1.0).abs() > SIMPLEX_TOL {
                    return Err(Error::InvalidParameter(format!(
                        "template ({i},{m}) sums to {sum}, expected 1"
                    )));
                }
            }
        }
        Ok(Self {
            templates,
            shift_range,
        })
    }

    /// Latent dimensions implied by the dictionary.
    pub fn dims(&self) -> ModelDims {
        let (n_pitches, n_modes, _) = self.templates.dim();
        ModelDims {
            n_pitches,
            n_modes,
            n_shifts: self.shift_range.len(),
        }
    }

    /// Number of frequency bins.
    pub fn n_bins(&self) -> usize {
        self.templates.dim().2
    }

    /// The template for (pitch, mode), a unit-sum vector of length `n_bins`.
    pub fn template(&self, pitch: usize, mode: usize) -> ArrayView1<'_, f64> {
        self.templates.slice(ndarray::s![pitch, mode, ..])
    }

    /// The ordered shift offsets.
    pub fn shift_range(&self) -> &[i64] {
        &self.shift_range
    }

    /// Index of a shift offset within the range, if present.
    pub fn shift_index(&self, shift: i64) -> Option<usize> {
        self.shift_range.iter().position(|&s| s == shift)
    }

    /// Raw template tensor (`n_pitches x n_modes x n_bins`).
    pub fn raw(&self) -> &Array3<f64> {
        &self.templates
    }
}

/// Per-frame factor set: pitch activations `A`, mode weights `B` and shift
/// weights `C`.
///
/// `A` is a scaled distribution — it carries the frame energy, i.e.
/// `A(i) = P(t) * P(i|t)` — while each `B` row and each `C` fiber is a
/// probability distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterState {
    /// Pitch activity, length `n_pitches`, nonnegative.
    pub pitch_activity: Array1<f64>,
    /// Mode weights, `n_pitches x n_modes`, rows sum to one.
    pub mode_weights: Array2<f64>,
    /// Shift weights, `n_pitches x n_modes x n_shifts`, fibers sum to one.
    pub shift_weights: Array3<f64>,
}

impl ParameterState {
    /// Uniform state with the given total activity mass.
    pub fn uniform(dims: ModelDims, energy: f64) -> Self {
        Self {
            pitch_activity: Array1::from_elem(dims.n_pitches, energy / dims.n_pitches as f64),
            mode_weights: Array2::from_elem(
                (dims.n_pitches, dims.n_modes),
                1.0 / dims.n_modes as f64,
            ),
            shift_weights: Array3::from_elem(
                (dims.n_pitches, dims.n_modes, dims.n_shifts),
                1.0 / dims.n_shifts as f64,
            ),
        }
    }

    /// Latent dimensions of this state.
    pub fn dims(&self) -> ModelDims {
        let (n_pitches, n_modes, n_shifts) = self.shift_weights.dim();
        ModelDims {
            n_pitches,
            n_modes,
            n_shifts,
        }
    }

    /// Check nonnegativity of `A` and the simplex invariants of `B` and `C`.
    pub fn validate(&self) -> Result<()> {
        let dims = self.dims();
        if self.pitch_activity.len() != dims.n_pitches
            || self.mode_weights.dim() != (dims.n_pitches, dims.n_modes)
        {
            return Err(Error::DimensionMismatch(
                "parameter state fields disagree on latent dimensions".into(),
            ));
        }
        if self.pitch_activity.iter().any(|&a| !(a >= 0.0)) {
            return Err(Error::InvalidParameter(
                "pitch activity has negative entries".into(),
            ));
        }
        for (i, row) in self.mode_weights.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::InvalidParameter(format!(
                    "mode weight row {i} sums to {sum}, expected 1"
                )));
            }
        }
        for i in 0..dims.n_pitches {
            for m in 0..dims.n_modes {
                let fiber = self.shift_weights.slice(ndarray::s![i, m, ..]);
                let sum: f64 = fiber.sum();
                if (sum - 1.0).abs() > SIMPLEX_TOL {
                    return Err(Error::InvalidParameter(format!(
                        "shift weight fiber ({i},{m}) sums to {sum}, expected 1"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Reconstruct the predicted frame spectrum from a parameter state.
///
/// Shifted template mass falling outside the bin axis is dropped, so the
/// output sums to the total activity only when no truncation occurs.
pub fn reconstruct_frame(state: &ParameterState, dict: &TemplateDictionary) -> Result<Array1<f64>> {
    let dims = state.dims();
    if dims != dict.dims() || state.pitch_activity.len() != dims.n_pitches {
        return Err(Error::DimensionMismatch(format!(
            "state dims {dims:?} do not match dictionary dims {:?}",
            dict.dims()
        )));
    }
    let n_bins = dict.n_bins();
    let mut out = Array1::zeros(n_bins);
    for i in 0..dims.n_pitches {
        let a = state.pitch_activity[i];
        if a == 0.0 {
            continue;
        }
        for m in 0..dims.n_modes {
            let am = a * state.mode_weights[[i, m]];
            if am == 0.0 {
                continue;
            }
            let template = dict.template(i, m);
            for (d, &shift) in dict.shift_range().iter().enumerate() {
                let w = am * state.shift_weights[[i, m, d]];
                if w == 0.0 {
                    continue;
                }
                add_shifted(&mut out, &template, shift, w);
            }
        }
    }
    Ok(out)
}

/// `out[g + shift] += w * template[g]` for bins that stay on the axis.
fn add_shifted(out: &mut Array1<f64>, template: &ArrayView1<'_, f64>, shift: i64, w: f64) {
    let n = out.len() as i64;
    for (g, &tv) in template.iter().enumerate() {
        let dst = g as i64 + shift;
        if dst >= 0 && dst < n {
            out[dst as usize] += w * tv;
        }
    }
}

/// Collapse modes and shifts into a per-pitch mixing matrix `M` of shape
/// `n_bins x n_pitches`, so `reconstruct_frame(state) == M . A` as long as
/// `B` and `C` stay fixed. Used to make repeated reconstructions over
/// candidate `A` vectors cheap.
pub(crate) fn pitch_mixing_matrix(
    state: &ParameterState,
    dict: &TemplateDictionary,
) -> Array2<f64> {
    let dims = state.dims();
    let n_bins = dict.n_bins();
    let mut mix = Array2::zeros((n_bins, dims.n_pitches));
    for i in 0..dims.n_pitches {
        let mut col = Array1::zeros(n_bins);
        for m in 0..dims.n_modes {
            let bm = state.mode_weights[[i, m]];
            if bm == 0.0 {
                continue;
            }
            let template = dict.template(i, m);
            for (d, &shift) in dict.shift_range().iter().enumerate() {
                let w = bm * state.shift_weights[[i, m, d]];
                if w == 0.0 {
                    continue;
                }
                add_shifted(&mut col, &template, shift, w);
            }
        }
        mix.column_mut(i).assign(&col);
    }
    mix
}

/// Sum over bins of the Gaussian log-density of `observed` around `predicted`
/// with standard deviation `sigma`.
pub fn observation_log_density(
    observed: ArrayView1<'_, f64>,
    predicted: ArrayView1<'_, f64>,
    sigma: f64,
) -> Result<f64> {
    if observed.len() != predicted.len() {
        return Err(Error::DimensionMismatch(format!(
            "observed has {} bins, predicted has {}",
            observed.len(),
            predicted.len()
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let n = observed.len() as f64;
    let var = sigma * sigma;
    let sq_norm: f64 = observed
        .iter()
        .zip(predicted.iter())
        .map(|(&o, &p)| (o - p) * (o - p))
        .sum();
    Ok(-0.5 * n * (2.0 * std::f64::consts::PI * var).ln() - sq_norm / (2.0 * var))
}
