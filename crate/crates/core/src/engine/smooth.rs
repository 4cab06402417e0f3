//! Backward particle smoother.
//!
//! Given the stored weighted ensembles of a filter run, the smoother draws the
//! final state from the last frame's weights and walks backwards, reweighting
//! each frame's particles by the Gamma transition density towards the state
//! already chosen for the next frame. Each call returns one independent
//! realization from the joint smoothing distribution; the Dirichlet factor of
//! the transition cancels in the backward weights because the chosen next
//! state is fixed, so only the hidden-state density enters.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};

use super::{gamma_transition_log_density, FilterOutput, GammaHyperparams, Particle};

/// One sampled state sequence from the smoothing distribution.
#[derive(Debug, Clone)]
pub struct SmoothedTrajectory {
    /// Chosen particle per frame, in time order.
    pub particles: Vec<Particle>,
}

impl SmoothedTrajectory {
    /// Pitch activity of the trajectory, `n_pitches x n_frames`.
    pub fn activity(&self) -> Array2<f64> {
        let n_pitches = self.particles[0].params.pitch_activity.len();
        let mut out = Array2::zeros((n_pitches, self.particles.len()));
        for (t, p) in self.particles.iter().enumerate() {
            out.column_mut(t).assign(&p.params.pitch_activity);
        }
        out
    }
}

fn categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u <= acc {
            return i;
        }
    }
    probs.len() - 1
}

fn normalize_log(weights: &[f64]) -> Vec<f64> {
    let max = weights
        .iter()
        .cloned()
        .filter(|w| w.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return vec![1.0 / weights.len() as f64; weights.len()];
    }
    let mut out: Vec<f64> = weights.iter().map(|&w| (w - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for w in &mut out {
        *w /= sum;
    }
    out
}

/// Draw one realization `x_{1:T}` from the smoothing distribution.
///
/// Requires the filter to have been run with `store_ensembles`; call multiple
/// times (advancing the RNG) for i.i.d. smoothing realizations.
pub fn smooth<R: Rng + ?Sized>(
    output: &FilterOutput,
    rng: &mut R,
) -> Result<SmoothedTrajectory> {
    let frames = output.frames.as_ref().ok_or(Error::MissingEnsembles)?;
    if frames.is_empty() {
        return Err(Error::MissingEnsembles);
    }
    let dims = frames[0].particles[0].hidden.dims();
    let hyper = GammaHyperparams::from_shapes(dims, &output.gamma_shapes)?;

    let last = frames.len() - 1;
    let mut chosen: Vec<Particle> = Vec::with_capacity(frames.len());
    let idx = categorical(&frames[last].normalized_weights, rng);
    chosen.push(frames[last].particles[idx].clone());

    for t in (0..last).rev() {
        let next_hidden = &chosen.last().expect("nonempty").hidden;
        let ensemble = &frames[t];
        let mut log_weights = Vec::with_capacity(ensemble.len());
        for (p, &w) in ensemble
            .particles
            .iter()
            .zip(&ensemble.normalized_weights)
        {
            let lw = if w > 0.0 {
                w.ln() + gamma_transition_log_density(next_hidden, &p.hidden, &hyper)?
            } else {
                f64::NEG_INFINITY
            };
            log_weights.push(lw);
        }
        let probs = normalize_log(&log_weights);
        let idx = categorical(&probs, rng);
        chosen.push(ensemble.particles[idx].clone());
    }
    chosen.reverse();
    Ok(SmoothedTrajectory { particles: chosen })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{GammaShapes, HiddenState, ParticleEnsemble};
    use crate::model::{ModelDims, ParameterState};
    use crate::rng::{domain, stream};
    use ndarray::{Array1, Array3};

    fn dims() -> ModelDims {
        ModelDims {
            n_pitches: 2,
            n_modes: 1,
            n_shifts: 1,
        }
    }

    fn particle(theta0: f64, tag: f64) -> Particle {
        let d = dims();
        Particle {
            hidden: HiddenState {
                theta: ndarray::array![theta0, 1.0],
                delta1: ndarray::Array2::from_elem((d.n_pitches, 1), 1.0),
                delta2: Array3::from_elem((d.n_pitches, 1, 1), 1.0),
            },
            params: ParameterState {
                pitch_activity: ndarray::array![tag, 0.0],
                mode_weights: ndarray::Array2::from_elem((d.n_pitches, 1), 1.0),
                shift_weights: Array3::from_elem((d.n_pitches, 1, 1), 1.0),
            },
            log_weight: 0.0,
            log_prior: 0.0,
        }
    }

    fn output_from_frames(frames: Vec<ParticleEnsemble>, shapes: GammaShapes) -> FilterOutput {
        let n = frames.len();
        FilterOutput {
            activity: Array2::zeros((2, n)),
            frames: Some(frames),
            collapsed_frames: vec![],
            frame_energies: vec![1.0; n],
            gamma_shapes: shapes,
        }
    }

    #[test]
    fn missing_ensembles_is_rejected() {
        let out = FilterOutput {
            activity: Array2::zeros((2, 1)),
            frames: None,
            collapsed_frames: vec![],
            frame_energies: vec![1.0],
            gamma_shapes: GammaShapes::default(),
        };
        let mut rng = stream(1, domain::SMOOTH, 0, 0);
        assert!(matches!(
            smooth(&out, &mut rng),
            Err(Error::MissingEnsembles)
        ));
    }

    #[test]
    fn single_frame_draws_from_final_weights() {
        // Point mass on the second particle: smoothing must pick it.
        let ensemble = ParticleEnsemble {
            particles: vec![particle(1.0, 1.0), particle(2.0, 2.0)],
            normalized_weights: vec![0.0, 1.0],
        };
        let out = output_from_frames(vec![ensemble], GammaShapes::default());
        for k in 0..10 {
            let mut rng = stream(2, domain::SMOOTH, k, 0);
            let traj = smooth(&out, &mut rng).unwrap();
            assert_eq!(traj.particles.len(), 1);
            assert_eq!(traj.particles[0].params.pitch_activity[0], 2.0);
        }
    }

    #[test]
    fn tight_transition_selects_multiplicatively_closest_particle() {
        // Density-dominance oracle on 3 hand-built particles: with a huge
        // shape the Gamma transition concentrates its mass at ratio 1, so the
        // particle whose theta is multiplicatively closest to the chosen next
        // state must win the backward draw.
        let earlier = ParticleEnsemble {
            particles: vec![particle(1.0, 1.0), particle(2.0, 2.0), particle(4.0, 3.0)],
            normalized_weights: vec![1.0 / 3.0; 3],
        };
        let final_frame = ParticleEnsemble {
            particles: vec![particle(2.05, 9.0)],
            normalized_weights: vec![1.0],
        };
        let shapes = GammaShapes {
            theta: 1e6,
            mode: 1e6,
            shift: 1e6,
        };
        let out = output_from_frames(vec![earlier, final_frame], shapes);
        for k in 0..10 {
            let mut rng = stream(3, domain::SMOOTH, k, 0);
            let traj = smooth(&out, &mut rng).unwrap();
            // Ratios to 2.05: 2.05, 1.025, 0.5125 -> the middle particle.
            assert_eq!(traj.particles[0].params.pitch_activity[0], 2.0);
            assert_eq!(traj.particles[1].params.pitch_activity[0], 9.0);
        }
    }

    #[test]
    fn same_rng_stream_reproduces_the_trajectory() {
        let frames: Vec<ParticleEnsemble> = (0..4)
            .map(|_| ParticleEnsemble {
                particles: vec![particle(1.0, 1.0), particle(1.5, 2.0), particle(0.7, 3.0)],
                normalized_weights: vec![0.2, 0.5, 0.3],
            })
            .collect();
        let out = output_from_frames(frames, GammaShapes::default());
        let mut rng_a = stream(4, domain::SMOOTH, 0, 0);
        let mut rng_b = stream(4, domain::SMOOTH, 0, 0);
        let a = smooth(&out, &mut rng_a).unwrap();
        let b = smooth(&out, &mut rng_b).unwrap();
        let tags_a: Vec<f64> = a
            .particles
            .iter()
            .map(|p| p.params.pitch_activity[0])
            .collect();
        let tags_b: Vec<f64> = b
            .particles
            .iter()
            .map(|p| p.params.pitch_activity[0])
            .collect();
        assert_eq!(tags_a, tags_b);
    }

    #[test]
    fn activity_matrix_lists_frames_in_time_order() {
        let e0 = ParticleEnsemble {
            particles: vec![particle(1.0, 5.0)],
            normalized_weights: vec![1.0],
        };
        let e1 = ParticleEnsemble {
            particles: vec![particle(1.0, 7.0)],
            normalized_weights: vec![1.0],
        };
        let out = output_from_frames(vec![e0, e1], GammaShapes::default());
        let mut rng = stream(5, domain::SMOOTH, 0, 0);
        let traj = smooth(&out, &mut rng).unwrap();
        let act = traj.activity();
        assert_eq!(act[[0, 0]], 5.0);
        assert_eq!(act[[0, 1]], 7.0);
        let _ = Array1::<f64>::zeros(1);
    }
}
