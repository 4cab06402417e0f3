//! The bootstrap particle filter over spectrogram frames.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::TemplateDictionary;
use crate::priors::{MhConfig, PriorContext, PriorMatrix};
use crate::rng::{domain, stream};
use crate::spectrogram::NormalizedSpectrogram;

use super::{
    compute_log_weight, init_ensemble, multinomial_resample, normalize_weights, propagate_hidden,
    sample_parameters, GammaHyperparams, GammaShapes, Particle, ParticleEnsemble, WeightStatus,
};

/// Particle filter settings.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FilterConfig {
    /// Number of particles.
    pub n_particles: usize,
    /// Observation noise standard deviation on unit-normalized frames.
    pub sigma: f64,
    /// Gamma-walk shapes per parameter group.
    pub gamma_shapes: GammaShapes,
    /// Master seed; every stream the filter uses derives from it.
    pub seed: u64,
    /// Separate seed for the initial ensemble draw, isolating initialization
    /// randomness from the per-frame dynamics; `None` uses `seed`.
    pub init_seed: Option<u64>,
    /// Keep the weighted ensemble of every frame for smoothing.
    pub store_ensembles: bool,
    /// Worker threads for per-particle work; 0 or 1 runs on the caller's
    /// thread. Results are identical for any worker count.
    pub workers: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            n_particles: 500,
            sigma: 0.05,
            gamma_shapes: GammaShapes::default(),
            seed: 0,
            init_seed: None,
            store_ensembles: false,
            workers: 1,
        }
    }
}

impl FilterConfig {
    fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::InvalidParameter(
                "n_particles must be at least 1".into(),
            ));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Prior matrices plus the Metropolis-Hastings settings used to inject them.
#[derive(Debug, Clone)]
pub struct PriorSetup<'a> {
    /// Prior matrices in effect.
    pub priors: &'a [PriorMatrix],
    /// MH chain settings.
    pub mh: MhConfig,
}

/// Filtering results: per-frame posterior-mean activity plus, optionally, the
/// stored weighted ensembles needed by the smoother.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    /// Posterior-mean pitch activity (weighted mean before resampling),
    /// `n_pitches x n_frames`.
    pub activity: Array2<f64>,
    /// Weighted ensemble of each frame (before resampling) when
    /// `store_ensembles` was set.
    pub frames: Option<Vec<ParticleEnsemble>>,
    /// Frames whose weights collapsed and were reset to uniform.
    pub collapsed_frames: Vec<usize>,
    /// Frame energies of the input.
    pub frame_energies: Vec<f64>,
    /// Gamma shapes the filter ran with (the smoother reuses them).
    pub gamma_shapes: GammaShapes,
}

fn for_each_particle<F>(
    pool: Option<&rayon::ThreadPool>,
    particles: &mut [Particle],
    f: F,
) -> Result<()>
where
    F: Fn(usize, &mut Particle) -> Result<()> + Sync + Send,
{
    match pool {
        Some(pool) => pool.install(|| {
            particles
                .par_iter_mut()
                .enumerate()
                .try_for_each(|(i, p)| f(i, p))
        }),
        None => particles
            .iter_mut()
            .enumerate()
            .try_for_each(|(i, p)| f(i, p)),
    }
}

/// Run the particle filter over every frame of a normalized spectrogram.
///
/// Each frame propagates the hidden states, samples fresh parameters on the
/// simplex, optionally applies the Metropolis-Hastings prior perturbation,
/// weights with the Gaussian observation density against the unit-normalized
/// frame, emits the weighted-mean activity rescaled by the frame energy, and
/// resamples. All-zero frames are skipped with the state carried forward.
/// Weight collapses are recovered by resetting to uniform weights and
/// recorded in the output.
pub fn filter(
    input: &NormalizedSpectrogram,
    dict: &TemplateDictionary,
    cfg: &FilterConfig,
    priors: Option<&PriorSetup<'_>>,
) -> Result<FilterOutput> {
    cfg.validate()?;
    let dims = dict.dims();
    if input.spectrogram.n_bins() != dict.n_bins() {
        return Err(Error::DimensionMismatch(format!(
            "spectrogram has {} bins, dictionary has {}",
            input.spectrogram.n_bins(),
            dict.n_bins()
        )));
    }
    if let Some(setup) = priors {
        for p in setup.priors {
            if p.n_pitches() != dims.n_pitches {
                return Err(Error::DimensionMismatch(format!(
                    "prior matrix covers {} pitches, model has {}",
                    p.n_pitches(),
                    dims.n_pitches
                )));
            }
        }
    }

    let hyper = GammaHyperparams::from_shapes(dims, &cfg.gamma_shapes)?;
    let pool = if cfg.workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.workers)
                .build()
                .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?,
        )
    } else {
        None
    };

    let n_frames = input.n_frames();
    let mut ensemble =
        init_ensemble(cfg.n_particles, dims, cfg.init_seed.unwrap_or(cfg.seed))?;
    let mut activity = Array2::zeros((dims.n_pitches, n_frames));
    let mut stored = if cfg.store_ensembles {
        Some(Vec::with_capacity(n_frames))
    } else {
        None
    };
    let mut collapsed_frames = Vec::new();
    let mut previous_activity: Option<Array1<f64>> = None;

    for t in 0..n_frames {
        let energy = input.frame_energies[t];
        if energy == 0.0 {
            // Degenerate frame: carry the state, emit zero activity.
            previous_activity = Some(Array1::zeros(dims.n_pitches));
            if let Some(stored) = stored.as_mut() {
                stored.push(ensemble.clone());
            }
            continue;
        }
        let observed = input.spectrogram.values.column(t);
        let seed = cfg.seed;
        let sigma = cfg.sigma;
        let hyper_ref = &hyper;
        let prev_ref = previous_activity.as_ref();
        // Weighting happens on the simplex (the observed frame is
        // unit-normalized); the frame energy is reapplied to the emitted
        // activity below.
        for_each_particle(pool.as_ref(), &mut ensemble.particles, |i, p| {
            let mut rng = stream(seed, domain::STEP, t as u64, i as u64);
            p.hidden = propagate_hidden(&p.hidden, hyper_ref, &mut rng);
            p.params = sample_parameters(&p.hidden, 1.0, &mut rng);
            p.log_prior = 0.0;
            if let Some(setup) = priors {
                let ctx = PriorContext {
                    priors: setup.priors,
                    previous_activity: prev_ref,
                };
                crate::priors::mh_perturb_in_place(
                    p, observed, dict, &ctx, sigma, &setup.mh, &mut rng,
                )?;
            }
            p.log_weight = compute_log_weight(p, observed, dict, sigma)?;
            Ok(())
        })?;

        if normalize_weights(&mut ensemble) == WeightStatus::Collapsed {
            collapsed_frames.push(t);
        }

        let mean = ensemble.mean_activity();
        activity.column_mut(t).assign(&(energy * &mean));
        previous_activity = Some(mean);

        if let Some(stored) = stored.as_mut() {
            stored.push(ensemble.clone());
        }

        let mut resample_rng = stream(cfg.seed, domain::RESAMPLE, t as u64, 0);
        ensemble = multinomial_resample(&ensemble, &mut resample_rng)?;
    }

    Ok(FilterOutput {
        activity,
        frames: stored,
        collapsed_frames,
        frame_energies: input.frame_energies.clone(),
        gamma_shapes: cfg.gamma_shapes,
    })
}
