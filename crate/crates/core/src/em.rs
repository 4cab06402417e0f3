//! EM and DAEM reference estimators for the same model, plus rank-1
//! template extraction from isolated-note spectrograms.
//!
//! Templates are fixed; per frame, the multiplicative updates alternate
//! between posterior responsibilities over the latent (pitch, mode, shift)
//! triple and renormalized marginals for `A`, `B` and `C`. The annealed
//! variant raises the responsibilities to a temperature in (0, 1] before
//! normalizing and walks the temperature schedule up to 1. An optional
//! sparsity stand-in raises `A` to a small exponent and renormalizes after
//! each iteration; exponents above 1 trade away the EM monotonicity
//! guarantee.

use ndarray::{Array1, Array2, Array3};

use crate::error::{Error, Result};
use crate::model::{ModelDims, ParameterState, TemplateDictionary};
use crate::rng::{domain, stream};
use crate::spectrogram::{NormalizedSpectrogram, Spectrogram};

/// Settings for the EM/DAEM estimator.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EmConfig {
    /// Iteration budget per temperature stage.
    pub max_iters: usize,
    /// Relative log-likelihood change that counts as converged.
    pub convergence_tol: f64,
    /// Annealing schedule; strictly increasing, ending at 1.
    pub daem_temperatures: Vec<f64>,
    /// Exponent (>= 1) applied to `A` each iteration; 1 disables sparsity.
    pub sparsity_exponent: f64,
}

impl EmConfig {
    /// Plain EM: a single stage at temperature 1.
    pub fn em() -> Self {
        Self {
            max_iters: 100,
            convergence_tol: 1e-6,
            daem_temperatures: vec![1.0],
            sparsity_exponent: 1.02,
        }
    }

    /// Deterministic annealing schedule (0.6, 0.8, 1.0).
    pub fn daem() -> Self {
        Self {
            daem_temperatures: vec![0.6, 0.8, 1.0],
            ..Self::em()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be positive".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::InvalidParameter(
                "convergence_tol must be positive".into(),
            ));
        }
        if self.sparsity_exponent < 1.0 {
            return Err(Error::InvalidParameter(
                "sparsity_exponent must be at least 1".into(),
            ));
        }
        let temps = &self.daem_temperatures;
        if temps.is_empty() || *temps.last().unwrap() != 1.0 {
            return Err(Error::InvalidParameter(
                "temperature schedule must end at 1".into(),
            ));
        }
        for pair in temps.windows(2) {
            if pair[0] >= pair[1] {
                return Err(Error::InvalidParameter(
                    "temperatures must be strictly increasing".into(),
                ));
            }
        }
        if temps.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
            return Err(Error::InvalidParameter(
                "temperatures must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

impl Default for EmConfig {
    fn default() -> Self {
        Self::em()
    }
}

/// How per-frame parameters are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmInit {
    /// Uniform factors (the common default).
    Uniform,
    /// Dirichlet(1) draws from the run seed.
    Random,
}

/// Per-frame estimates with their log-likelihood traces.
#[derive(Debug, Clone)]
pub struct EmOutput {
    /// Final parameter state per frame, `A` scaled by the frame energy.
    pub states: Vec<ParameterState>,
    /// Log-likelihood after each iteration, per frame (the first entry is the
    /// likelihood of the initialization), concatenated over stages.
    pub log_likelihood: Vec<Vec<f64>>,
    /// Whether each frame converged within the iteration budget.
    pub converged: Vec<bool>,
    /// Pitch activity matrix, `n_pitches x n_frames`.
    pub activity: Array2<f64>,
}

// Reconstructions below this are clamped before taking logs; bins outside
// every template's support otherwise produce -inf and poison the trace.
const LL_FLOOR: f64 = 1e-300;

struct FrameWorkspace {
    responsibilities: Array3<f64>,
    accum: Array3<f64>,
}

fn frame_log_likelihood(
    observed: ndarray::ArrayView1<'_, f64>,
    state: &ParameterState,
    dict: &TemplateDictionary,
) -> f64 {
    let recon = crate::model::reconstruct_frame(state, dict).expect("validated dims");
    observed
        .iter()
        .zip(recon.iter())
        .filter(|(&y, _)| y > 0.0)
        .map(|(&y, &p)| y * p.max(LL_FLOOR).ln())
        .sum()
}

#[allow(clippy::too_many_arguments)]
fn em_step(
    observed: ndarray::ArrayView1<'_, f64>,
    state: &mut ParameterState,
    dict: &TemplateDictionary,
    dims: ModelDims,
    temperature: f64,
    sparsity_exponent: f64,
    ws: &mut FrameWorkspace,
) {
    ws.accum.fill(0.0);
    for (f, &y) in observed.iter().enumerate() {
        if y == 0.0 {
            continue;
        }
        // E-step at this bin: tempered joint responsibilities.
        let mut total = 0.0;
        for i in 0..dims.n_pitches {
            for m in 0..dims.n_modes {
                let base = state.pitch_activity[i] * state.mode_weights[[i, m]];
                for (d, &shift) in dict.shift_range().iter().enumerate() {
                    let src = f as i64 - shift;
                    let tv = if src >= 0 && src < dict.n_bins() as i64 {
                        dict.template(i, m)[src as usize]
                    } else {
                        0.0
                    };
                    let mut r = base * state.shift_weights[[i, m, d]] * tv;
                    if temperature != 1.0 && r > 0.0 {
                        r = r.powf(temperature);
                    }
                    ws.responsibilities[[i, m, d]] = r;
                    total += r;
                }
            }
        }
        if total <= 0.0 {
            continue;
        }
        ws.accum.scaled_add(y / total, &ws.responsibilities);
    }

    // M-step: renormalized marginals of the expected counts.
    for i in 0..dims.n_pitches {
        let mut pitch_total = 0.0;
        for m in 0..dims.n_modes {
            let mut mode_total = 0.0;
            for d in 0..dims.n_shifts {
                mode_total += ws.accum[[i, m, d]];
            }
            if mode_total > 0.0 {
                for d in 0..dims.n_shifts {
                    state.shift_weights[[i, m, d]] = ws.accum[[i, m, d]] / mode_total;
                }
            }
            state.mode_weights[[i, m]] = mode_total;
            pitch_total += mode_total;
        }
        if pitch_total > 0.0 {
            for m in 0..dims.n_modes {
                state.mode_weights[[i, m]] /= pitch_total;
            }
        } else {
            state
                .mode_weights
                .row_mut(i)
                .fill(1.0 / dims.n_modes as f64);
        }
        state.pitch_activity[i] = pitch_total;
    }
    let a_total: f64 = state.pitch_activity.sum();
    if a_total > 0.0 {
        state.pitch_activity.mapv_inplace(|a| a / a_total);
    }
    if sparsity_exponent != 1.0 {
        state
            .pitch_activity
            .mapv_inplace(|a| a.powf(sparsity_exponent));
        let s: f64 = state.pitch_activity.sum();
        if s > 0.0 {
            state.pitch_activity.mapv_inplace(|a| a / s);
        }
    }
}

/// Estimate per-frame parameters by fixed-template multiplicative updates.
///
/// Frames are independent given the dictionary. Non-converged frames are
/// returned with their flag cleared, not as errors.
pub fn em_estimate(
    input: &NormalizedSpectrogram,
    dict: &TemplateDictionary,
    cfg: &EmConfig,
    init: EmInit,
    seed: u64,
) -> Result<EmOutput> {
    cfg.validate()?;
    if input.spectrogram.n_bins() != dict.n_bins() {
        return Err(Error::DimensionMismatch(format!(
            "spectrogram has {} bins, dictionary has {}",
            input.spectrogram.n_bins(),
            dict.n_bins()
        )));
    }
    let dims = dict.dims();
    let n_frames = input.n_frames();
    let mut states = Vec::with_capacity(n_frames);
    let mut traces = Vec::with_capacity(n_frames);
    let mut converged_flags = Vec::with_capacity(n_frames);
    let mut activity = Array2::zeros((dims.n_pitches, n_frames));
    let mut ws = FrameWorkspace {
        responsibilities: Array3::zeros((dims.n_pitches, dims.n_modes, dims.n_shifts)),
        accum: Array3::zeros((dims.n_pitches, dims.n_modes, dims.n_shifts)),
    };

    for t in 0..n_frames {
        let energy = input.frame_energies[t];
        if energy == 0.0 {
            let mut state = ParameterState::uniform(dims, 0.0);
            state.pitch_activity.fill(0.0);
            states.push(state);
            traces.push(Vec::new());
            converged_flags.push(true);
            continue;
        }
        let observed = input.spectrogram.values.column(t);
        let mut state = match init {
            EmInit::Uniform => ParameterState::uniform(dims, 1.0),
            EmInit::Random => {
                let mut rng = stream(seed, domain::EM_INIT, t as u64, 0);
                let hidden = crate::engine::HiddenState {
                    theta: Array1::ones(dims.n_pitches),
                    delta1: Array2::ones((dims.n_pitches, dims.n_modes)),
                    delta2: Array3::ones((dims.n_pitches, dims.n_modes, dims.n_shifts)),
                };
                crate::engine::sample_parameters(&hidden, 1.0, &mut rng)
            }
        };

        let mut trace = vec![frame_log_likelihood(observed, &state, dict)];
        let mut converged = false;
        for &temperature in &cfg.daem_temperatures {
            converged = false;
            for _ in 0..cfg.max_iters {
                em_step(
                    observed,
                    &mut state,
                    dict,
                    dims,
                    temperature,
                    cfg.sparsity_exponent,
                    &mut ws,
                );
                let ll = frame_log_likelihood(observed, &state, dict);
                let prev = *trace.last().unwrap();
                trace.push(ll);
                if (ll - prev).abs() <= cfg.convergence_tol * prev.abs().max(1.0) {
                    converged = true;
                    break;
                }
            }
        }

        state.pitch_activity.mapv_inplace(|a| a * energy);
        activity.column_mut(t).assign(&state.pitch_activity);
        states.push(state);
        traces.push(trace);
        converged_flags.push(converged);
    }

    Ok(EmOutput {
        states,
        log_likelihood: traces,
        converged: converged_flags,
        activity,
    })
}

/// Rank-1 PLCA template from an isolated-note spectrogram: the single
/// spectral factor is the normalized row-marginal, which is the closed-form
/// fixed point for one component.
pub fn extract_template(note_spec: &Spectrogram) -> Result<Array1<f64>> {
    let mut marginal = Array1::zeros(note_spec.n_bins());
    for ((f, _), &v) in note_spec.values.indexed_iter() {
        if v < 0.0 {
            return Err(Error::InvalidParameter(
                "spectrogram has negative entries".into(),
            ));
        }
        marginal[f] += v;
    }
    let total: f64 = marginal.sum();
    if total <= 0.0 {
        return Err(Error::InvalidParameter(
            "cannot extract a template from an all-zero spectrogram".into(),
        ));
    }
    marginal.mapv_inplace(|v| v / total);
    Ok(marginal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrogram::normalize_frames;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn plain_cfg() -> EmConfig {
        EmConfig {
            sparsity_exponent: 1.0,
            ..EmConfig::em()
        }
    }

    fn disjoint_dict() -> TemplateDictionary {
        let mut t = Array3::zeros((2, 1, 6));
        t.slice_mut(ndarray::s![0, 0, ..])
            .assign(&array![0.5, 0.3, 0.2, 0.0, 0.0, 0.0]);
        t.slice_mut(ndarray::s![1, 0, ..])
            .assign(&array![0.0, 0.0, 0.0, 0.2, 0.3, 0.5]);
        TemplateDictionary::new(t, vec![0]).unwrap()
    }

    #[test]
    fn exact_single_template_recovers_energies_quickly() {
        let mut t = Array3::zeros((1, 1, 4));
        t.slice_mut(ndarray::s![0, 0, ..])
            .assign(&array![0.1, 0.4, 0.3, 0.2]);
        let dict = TemplateDictionary::new(t, vec![0]).unwrap();
        let energies = [2.0, 0.5, 3.25];
        let mut values = Array2::zeros((4, 3));
        for (tix, &e) in energies.iter().enumerate() {
            for f in 0..4 {
                values[[f, tix]] = dict.template(0, 0)[f] * e;
            }
        }
        let input = normalize_frames(&Spectrogram::new(values, 0.01, 60).unwrap()).unwrap();
        let cfg = EmConfig {
            max_iters: 2,
            ..plain_cfg()
        };
        let out = em_estimate(&input, &dict, &cfg, EmInit::Uniform, 0).unwrap();
        for (tix, &e) in energies.iter().enumerate() {
            assert_abs_diff_eq!(out.activity[[0, tix]], e, epsilon = 1e-9);
        }
        assert!(out.converged.iter().all(|&c| c));
    }

    #[test]
    fn disjoint_mixture_recovers_weights() {
        // Disjoint-support closed form: responsibilities are exact, so A
        // converges to the support masses (0.3, 0.7).
        let dict = disjoint_dict();
        let mut values = Array2::zeros((6, 1));
        for f in 0..6 {
            values[[f, 0]] =
                0.3 * dict.template(0, 0)[f] + 0.7 * dict.template(1, 0)[f];
        }
        let input = normalize_frames(&Spectrogram::new(values, 0.01, 60).unwrap()).unwrap();
        let out = em_estimate(&input, &dict, &plain_cfg(), EmInit::Uniform, 0).unwrap();
        assert_abs_diff_eq!(out.activity[[0, 0]], 0.3, epsilon = 1e-6);
        assert_abs_diff_eq!(out.activity[[1, 0]], 0.7, epsilon = 1e-6);
    }

    #[test]
    fn disjoint_fixed_point_is_stationary() {
        // One EM step from the exact fixed point must not move it: with
        // disjoint supports the responsibilities recover the same masses.
        let dict = disjoint_dict();
        let mut values = Array2::zeros((6, 1));
        for f in 0..6 {
            values[[f, 0]] =
                0.3 * dict.template(0, 0)[f] + 0.7 * dict.template(1, 0)[f];
        }
        let input = normalize_frames(&Spectrogram::new(values, 0.01, 60).unwrap()).unwrap();
        // One step from uniform lands exactly on (0.3, 0.7); a second step
        // must not move it.
        let one_step = EmConfig {
            max_iters: 1,
            convergence_tol: 1e-30,
            ..plain_cfg()
        };
        let two_steps = EmConfig {
            max_iters: 2,
            ..one_step.clone()
        };
        let out1 = em_estimate(&input, &dict, &one_step, EmInit::Uniform, 0).unwrap();
        let out2 = em_estimate(&input, &dict, &two_steps, EmInit::Uniform, 0).unwrap();
        assert_abs_diff_eq!(out1.activity[[0, 0]], 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(
            out1.activity[[0, 0]],
            out2.activity[[0, 0]],
            epsilon = 1e-15
        );
    }

    #[test]
    fn log_likelihood_is_monotone_at_unit_temperature() {
        // Shifted, overlapping templates on a noisy frame.
        let mut t = Array3::zeros((2, 1, 8));
        t.slice_mut(ndarray::s![0, 0, ..])
            .assign(&array![0.3, 0.3, 0.2, 0.1, 0.1, 0.0, 0.0, 0.0]);
        t.slice_mut(ndarray::s![1, 0, ..])
            .assign(&array![0.0, 0.1, 0.1, 0.2, 0.2, 0.2, 0.1, 0.1]);
        let dict = TemplateDictionary::new(t, vec![-1, 0, 1]).unwrap();
        let values = Array2::from_shape_vec(
            (8, 2),
            vec![
                0.12, 0.2, 0.18, 0.15, 0.1, 0.08, 0.09, 0.08, //
                0.05, 0.15, 0.2, 0.2, 0.15, 0.1, 0.1, 0.05,
            ],
        )
        .unwrap();
        let input = normalize_frames(&Spectrogram::new(values, 0.01, 60).unwrap()).unwrap();
        let out = em_estimate(&input, &dict, &plain_cfg(), EmInit::Random, 11).unwrap();
        for trace in &out.log_likelihood {
            for pair in trace.windows(2) {
                assert!(
                    pair[1] >= pair[0] - 1e-9,
                    "log-likelihood decreased: {} -> {}",
                    pair[0],
                    pair[1]
                );
            }
        }
    }

    #[test]
    fn daem_schedule_runs_and_final_stage_is_monotone() {
        let dict = disjoint_dict();
        let mut values = Array2::zeros((6, 1));
        for f in 0..6 {
            values[[f, 0]] =
                0.4 * dict.template(0, 0)[f] + 0.6 * dict.template(1, 0)[f];
        }
        let input = normalize_frames(&Spectrogram::new(values, 0.01, 60).unwrap()).unwrap();
        let cfg = EmConfig {
            sparsity_exponent: 1.0,
            ..EmConfig::daem()
        };
        let out = em_estimate(&input, &dict, &cfg, EmInit::Uniform, 0).unwrap();
        assert_abs_diff_eq!(out.activity[[1, 0]], 0.6, epsilon = 1e-6);
    }

    #[test]
    fn random_and_uniform_inits_can_reach_different_fixed_points() {
        // Two-run comparison oracle: a frame explained equally well by pitch
        // 1 shifted up and pitch 2 shifted down. Uniform init keeps the
        // symmetry; random init breaks it.
        let mut t = Array3::zeros((2, 1, 8));
        t[[0, 0, 3]] = 1.0;
        t[[1, 0, 5]] = 1.0;
        let dict = TemplateDictionary::new(t, vec![-1, 0, 1]).unwrap();
        let mut values = Array2::zeros((8, 1));
        values[[4, 0]] = 1.0;
        let input = normalize_frames(&Spectrogram::new(values, 0.01, 60).unwrap()).unwrap();
        let cfg = EmConfig {
            max_iters: 200,
            ..plain_cfg()
        };
        let uniform = em_estimate(&input, &dict, &cfg, EmInit::Uniform, 0).unwrap();
        // Symmetry preserved: both pitches share the mass.
        assert_abs_diff_eq!(uniform.activity[[0, 0]], 0.5, epsilon = 1e-9);
        let random = em_estimate(&input, &dict, &cfg, EmInit::Random, 3).unwrap();
        assert!(
            (random.activity[[0, 0]] - 0.5).abs() > 1e-3,
            "random init stayed symmetric: {}",
            random.activity[[0, 0]]
        );
        // Both runs end monotone all the same.
        for out in [&uniform, &random] {
            for trace in &out.log_likelihood {
                for pair in trace.windows(2) {
                    assert!(pair[1] >= pair[0] - 1e-9);
                }
            }
        }
    }

    #[test]
    fn zero_frames_are_skipped() {
        let dict = disjoint_dict();
        let values = Array2::zeros((6, 2));
        let input = normalize_frames(&Spectrogram::new(values, 0.01, 60).unwrap()).unwrap();
        let out = em_estimate(&input, &dict, &plain_cfg(), EmInit::Uniform, 0).unwrap();
        assert!(out.activity.iter().all(|&v| v == 0.0));
        assert!(out.converged.iter().all(|&c| c));
    }

    #[test]
    fn config_validation() {
        let mut cfg = EmConfig::em();
        cfg.daem_temperatures = vec![0.5, 0.9];
        let dict = disjoint_dict();
        let values = Array2::from_elem((6, 1), 0.1);
        let input = normalize_frames(&Spectrogram::new(values, 0.01, 60).unwrap()).unwrap();
        assert!(em_estimate(&input, &dict, &cfg, EmInit::Uniform, 0).is_err());
        cfg.daem_temperatures = vec![0.8, 0.6, 1.0];
        assert!(em_estimate(&input, &dict, &cfg, EmInit::Uniform, 0).is_err());
        cfg.daem_temperatures = vec![1.0];
        cfg.sparsity_exponent = 0.5;
        assert!(em_estimate(&input, &dict, &cfg, EmInit::Uniform, 0).is_err());
    }

    #[test]
    fn template_from_single_column() {
        let values = Array2::from_shape_vec((3, 1), vec![1.0, 3.0, 4.0]).unwrap();
        let spec = Spectrogram::new(values, 0.01, 60).unwrap();
        let tmpl = extract_template(&spec).unwrap();
        assert_abs_diff_eq!(tmpl[0], 0.125, epsilon = 1e-12);
        assert_abs_diff_eq!(tmpl[1], 0.375, epsilon = 1e-12);
        assert_abs_diff_eq!(tmpl[2], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn template_is_invariant_to_repeated_columns() {
        let one = Array2::from_shape_vec((3, 1), vec![1.0, 3.0, 4.0]).unwrap();
        let two = Array2::from_shape_vec((3, 2), vec![1.0, 1.0, 3.0, 3.0, 4.0, 4.0]).unwrap();
        let a = extract_template(&Spectrogram::new(one, 0.01, 60).unwrap()).unwrap();
        let b = extract_template(&Spectrogram::new(two, 0.01, 60).unwrap()).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn template_matches_marginalization_oracle() {
        // Marginalization oracle: normalized sum over columns.
        let mut values = Array2::zeros((16, 8));
        let mut x = 0.55_f64;
        for v in values.iter_mut() {
            x = (x * 13.7 + 0.31).fract();
            *v = x;
        }
        let spec = Spectrogram::new(values.clone(), 0.01, 60).unwrap();
        let tmpl = extract_template(&spec).unwrap();
        let total: f64 = values.iter().sum();
        for f in 0..16 {
            let row: f64 = (0..8).map(|t| values[[f, t]]).sum();
            assert_abs_diff_eq!(tmpl[f], row / total, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(tmpl.sum(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_spectrogram_is_rejected() {
        let spec = Spectrogram::new(Array2::zeros((3, 2)), 0.01, 60).unwrap();
        assert!(extract_template(&spec).is_err());
    }
}
