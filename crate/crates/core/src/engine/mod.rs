//! Sequential Monte Carlo engine.
//!
//! The hidden state is a set of positive Dirichlet concentrations
//! `H_t = (theta, delta1, delta2)` driven by multiplicative Gamma walks with
//! shape equal to rate, so each coordinate is a martingale. Conditioned on the
//! hidden state, the frame parameters are Dirichlet draws: `A ~ Dir(theta)`
//! (rescaled by the frame energy), each `B` row `~ Dir(delta1 row)` and each
//! `C` fiber `~ Dir(delta2 fiber)`.
//!
//! The filter is a bootstrap filter: the proposal is the transition prior, so
//! importance weights reduce to the observation likelihood. Weights live in
//! the log domain and are normalized by max-subtraction; the linear-domain
//! arithmetic underflows at realistic bin counts.

mod filter;
mod smooth;

pub use filter::{filter, FilterConfig, FilterOutput, PriorSetup};
pub use smooth::{smooth, SmoothedTrajectory};

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{ModelDims, ParameterState, TemplateDictionary};
use crate::rng::{domain, stream};

/// Floor applied to hidden-state entries; keeps Gamma shapes and rates finite.
pub const HIDDEN_FLOOR: f64 = 1e-8;

/// Dirichlet concentrations for one particle: `theta` drives the pitch
/// activity, `delta1` the mode weight rows, `delta2` the shift weight fibers.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    /// Concentrations for `A`, length `n_pitches`.
    pub theta: Array1<f64>,
    /// Concentrations for `B` rows, `n_pitches x n_modes`.
    pub delta1: Array2<f64>,
    /// Concentrations for `C` fibers, `n_pitches x n_modes x n_shifts`.
    pub delta2: Array3<f64>,
}

impl HiddenState {
    /// Latent dimensions of this state.
    pub fn dims(&self) -> ModelDims {
        let (n_pitches, n_modes, n_shifts) = self.delta2.dim();
        ModelDims {
            n_pitches,
            n_modes,
            n_shifts,
        }
    }

    fn validate_positive(&self) -> Result<()> {
        let ok = self.theta.iter().all(|&v| v > 0.0)
            && self.delta1.iter().all(|&v| v > 0.0)
            && self.delta2.iter().all(|&v| v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(
                "hidden state entries must be strictly positive".into(),
            ))
        }
    }
}

/// Scalar Gamma-walk shapes, one per parameter group. Rates always equal
/// shapes so the walks are unbiased.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GammaShapes {
    /// Shape for the `theta` walk.
    pub theta: f64,
    /// Shape for the `delta1` walk.
    pub mode: f64,
    /// Shape for the `delta2` walk.
    pub shift: f64,
}

impl Default for GammaShapes {
    fn default() -> Self {
        Self {
            theta: 50.0,
            mode: 50.0,
            shift: 50.0,
        }
    }
}

/// Per-coordinate Gamma-walk shapes. Rates equal shapes throughout, which
/// makes every coordinate's transition unbiased: `E[x_{t+1} | x_t] = x_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaHyperparams {
    /// Per-pitch shape for the `theta` walk.
    pub theta_shape: Array1<f64>,
    /// Per-(pitch, mode) shape for the `delta1` walk.
    pub mode_shape: Array2<f64>,
    /// Per-(pitch, mode, shift) shape for the `delta2` walk.
    pub shift_shape: Array3<f64>,
}

impl GammaHyperparams {
    /// Same shape for every coordinate.
    pub fn uniform(dims: ModelDims, shape: f64) -> Result<Self> {
        Self::from_shapes(
            dims,
            &GammaShapes {
                theta: shape,
                mode: shape,
                shift: shape,
            },
        )
    }

    /// Broadcast one scalar shape per parameter group.
    pub fn from_shapes(dims: ModelDims, shapes: &GammaShapes) -> Result<Self> {
        for (name, v) in [
            ("theta", shapes.theta),
            ("mode", shapes.mode),
            ("shift", shapes.shift),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "gamma {name} shape must be positive and finite, got {v}"
                )));
            }
        }
        Ok(Self {
            theta_shape: Array1::from_elem(dims.n_pitches, shapes.theta),
            mode_shape: Array2::from_elem((dims.n_pitches, dims.n_modes), shapes.mode),
            shift_shape: Array3::from_elem(
                (dims.n_pitches, dims.n_modes, dims.n_shifts),
                shapes.shift,
            ),
        })
    }
}

/// One weighted sample of the state space.
#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    /// Dirichlet concentrations.
    pub hidden: HiddenState,
    /// Parameter draw conditioned on `hidden`.
    pub params: ParameterState,
    /// Unnormalized log importance weight of the latest weighting pass.
    pub log_weight: f64,
    /// Log prior correction folded in by the Metropolis-Hastings step; zero
    /// when prior injection is off. Added to the observation log-density by
    /// [`weight_ensemble`].
    pub log_prior: f64,
}

/// A set of `N` particles with normalized weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    /// The particles.
    pub particles: Vec<Particle>,
    /// Normalized weights, same length as `particles`.
    pub normalized_weights: Vec<f64>,
}

impl ParticleEnsemble {
    /// Number of particles.
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    /// True when the ensemble has no particles.
    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Check that the weights form a simplex within `1e-9`.
    pub fn validate_weights(&self) -> Result<()> {
        let sum: f64 = self.normalized_weights.iter().sum();
        if self.normalized_weights.iter().any(|&w| w < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::UnnormalizedWeights(sum));
        }
        Ok(())
    }

    /// Weighted mean of the pitch activity across particles.
    pub fn mean_activity(&self) -> Array1<f64> {
        let n_pitches = self.particles[0].params.pitch_activity.len();
        let mut mean = Array1::zeros(n_pitches);
        for (p, &w) in self.particles.iter().zip(&self.normalized_weights) {
            mean.scaled_add(w, &p.params.pitch_activity);
        }
        mean
    }

    /// Effective sample size `1 / sum(w^2)`.
    pub fn effective_sample_size(&self) -> f64 {
        let sq: f64 = self.normalized_weights.iter().map(|w| w * w).sum();
        if sq > 0.0 {
            1.0 / sq
        } else {
            0.0
        }
    }
}

/// Outcome of a weighting pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightStatus {
    /// Weights were normalized from finite log-densities.
    Weighted,
    /// Every log-weight underflowed to `-inf`; weights were reset to uniform.
    Collapsed,
}

/// Draw a Dirichlet sample with the given concentrations into `out` via
/// normalized Gamma draws, carried in the log domain so that tiny
/// concentrations yield proper sparse corner draws instead of underflowing.
/// Small shapes use the boost `G(c) = G(c+1) * U^(1/c)`, whose logarithm
/// stays finite where the linear-domain draw would round to zero.
fn sample_dirichlet<R: Rng + ?Sized>(conc: &[f64], out: &mut [f64], rng: &mut R) {
    debug_assert_eq!(conc.len(), out.len());
    let mut max = f64::NEG_INFINITY;
    for (o, &c) in out.iter_mut().zip(conc) {
        let log_draw = if c < 1.0 {
            let boosted = Gamma::new(c + 1.0, 1.0).expect("positive shape").sample(rng);
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            boosted.ln() + u.ln() / c
        } else {
            let draw: f64 = Gamma::new(c, 1.0).expect("positive shape").sample(rng);
            draw.ln()
        };
        *o = log_draw;
        max = max.max(log_draw);
    }
    if !max.is_finite() {
        // Unreachable in practice; keep a well-defined result regardless.
        let total: f64 = conc.iter().sum();
        for (o, &c) in out.iter_mut().zip(conc) {
            *o = c / total;
        }
        return;
    }
    let mut sum = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Sample frame parameters conditioned on a hidden state.
///
/// `A` is drawn on the simplex and rescaled by `frame_energy`, so it carries
/// `P(t) * P(i|t)`; `B` rows and `C` fibers are plain Dirichlet draws.
pub fn sample_parameters<R: Rng + ?Sized>(
    hidden: &HiddenState,
    frame_energy: f64,
    rng: &mut R,
) -> ParameterState {
    let dims = hidden.dims();
    let mut activity = vec![0.0; dims.n_pitches];
    sample_dirichlet(hidden.theta.as_slice().unwrap(), &mut activity, rng);
    for a in activity.iter_mut() {
        *a *= frame_energy;
    }

    let mut modes = Array2::zeros((dims.n_pitches, dims.n_modes));
    let mut shifts = Array3::zeros((dims.n_pitches, dims.n_modes, dims.n_shifts));
    let mut row_buf = vec![0.0; dims.n_modes];
    let mut fiber_buf = vec![0.0; dims.n_shifts];
    for i in 0..dims.n_pitches {
        let conc = self::row_slice(&hidden.delta1, i);
        sample_dirichlet(conc, &mut row_buf, rng);
        for (m, &v) in row_buf.iter().enumerate() {
            modes[[i, m]] = v;
        }
        for m in 0..dims.n_modes {
            let conc: Vec<f64> = (0..dims.n_shifts).map(|d| hidden.delta2[[i, m, d]]).collect();
            sample_dirichlet(&conc, &mut fiber_buf, rng);
            for (d, &v) in fiber_buf.iter().enumerate() {
                shifts[[i, m, d]] = v;
            }
        }
    }
    ParameterState {
        pitch_activity: Array1::from_vec(activity),
        mode_weights: modes,
        shift_weights: shifts,
    }
}

fn row_slice(m: &Array2<f64>, i: usize) -> &[f64] {
    m.row(i).to_slice().expect("row-major layout")
}

/// Multiply every hidden coordinate by an independent `Gamma(shape, shape)`
/// draw and clamp at [`HIDDEN_FLOOR`].
pub fn propagate_hidden<R: Rng + ?Sized>(
    hidden: &HiddenState,
    hyper: &GammaHyperparams,
    rng: &mut R,
) -> HiddenState {
    let walk = |x: f64, shape: f64, rng: &mut R| -> f64 {
        let mult = Gamma::new(shape, 1.0 / shape).expect("positive shape").sample(rng);
        (x * mult).max(HIDDEN_FLOOR)
    };
    let theta = Array1::from_iter(
        hidden
            .theta
            .iter()
            .zip(hyper.theta_shape.iter())
            .map(|(&x, &s)| walk(x, s, rng)),
    );
    let mut delta1 = hidden.delta1.clone();
    for (v, &s) in delta1.iter_mut().zip(hyper.mode_shape.iter()) {
        *v = walk(*v, s, rng);
    }
    let mut delta2 = hidden.delta2.clone();
    for (v, &s) in delta2.iter_mut().zip(hyper.shift_shape.iter()) {
        *v = walk(*v, s, rng);
    }
    HiddenState {
        theta,
        delta1,
        delta2,
    }
}

/// Initialize an ensemble with hidden entries drawn i.i.d. from the state
/// prior (`Gamma(1,1)`), parameters sampled at unit frame energy, and uniform
/// weights. Fully determined by `seed`.
pub fn init_ensemble(n_particles: usize, dims: ModelDims, seed: u64) -> Result<ParticleEnsemble> {
    if n_particles == 0 {
        return Err(Error::InvalidParameter(
            "n_particles must be at least 1".into(),
        ));
    }
    let prior = Gamma::new(1.0, 1.0).expect("valid prior");
    let mut particles = Vec::with_capacity(n_particles);
    for p in 0..n_particles {
        let mut rng = stream(seed, domain::INIT, p as u64, 0);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 {
            let v: f64 = prior.sample(rng);
            v.max(HIDDEN_FLOOR)
        };
        let theta = Array1::from_iter((0..dims.n_pitches).map(|_| draw(&mut rng)));
        let delta1 =
            Array2::from_shape_fn((dims.n_pitches, dims.n_modes), |_| draw(&mut rng));
        let delta2 = Array3::from_shape_fn(
            (dims.n_pitches, dims.n_modes, dims.n_shifts),
            |_| draw(&mut rng),
        );
        let hidden = HiddenState {
            theta,
            delta1,
            delta2,
        };
        let params = sample_parameters(&hidden, 1.0, &mut rng);
        particles.push(Particle {
            hidden,
            params,
            log_weight: 0.0,
            log_prior: 0.0,
        });
    }
    let w = 1.0 / n_particles as f64;
    Ok(ParticleEnsemble {
        normalized_weights: vec![w; n_particles],
        particles,
    })
}

/// Observation log-density of one particle's reconstruction, plus the prior
/// correction it carries.
pub(crate) fn compute_log_weight(
    particle: &Particle,
    observed: ndarray::ArrayView1<'_, f64>,
    dict: &TemplateDictionary,
    sigma: f64,
) -> Result<f64> {
    let predicted = crate::model::reconstruct_frame(&particle.params, dict)?;
    let obs_ld = crate::model::observation_log_density(observed, predicted.view(), sigma)?;
    Ok(obs_ld + particle.log_prior)
}

/// Normalize log-weights with max-subtraction. Returns `Collapsed` (and
/// resets to uniform) when every log-weight is `-inf` or NaN.
pub(crate) fn normalize_weights(ensemble: &mut ParticleEnsemble) -> WeightStatus {
    let max = ensemble
        .particles
        .iter()
        .map(|p| p.log_weight)
        .filter(|w| w.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        let w = 1.0 / ensemble.len() as f64;
        ensemble.normalized_weights = vec![w; ensemble.len()];
        return WeightStatus::Collapsed;
    }
    let mut sum = 0.0;
    for (p, w) in ensemble
        .particles
        .iter()
        .zip(ensemble.normalized_weights.iter_mut())
    {
        let v = (p.log_weight - max).exp();
        *w = if v.is_finite() { v } else { 0.0 };
        sum += *w;
    }
    for w in ensemble.normalized_weights.iter_mut() {
        *w /= sum;
    }
    WeightStatus::Weighted
}

/// Set each particle's log-weight to the observation log-density of its
/// reconstruction (plus any folded log prior) and normalize.
pub fn weight_ensemble(
    mut ensemble: ParticleEnsemble,
    observed: ndarray::ArrayView1<'_, f64>,
    dict: &TemplateDictionary,
    sigma: f64,
) -> Result<(ParticleEnsemble, WeightStatus)> {
    if ensemble.is_empty() {
        return Err(Error::InvalidParameter("ensemble is empty".into()));
    }
    for p in &mut ensemble.particles {
        p.log_weight = compute_log_weight(p, observed, dict, sigma)?;
    }
    let status = normalize_weights(&mut ensemble);
    Ok((ensemble, status))
}

/// Resample `N` particles with replacement, selection probability
/// proportional to weight, using one uniform start stepped by `1/N` along the
/// cumulative weights. Output order follows the CDF traversal and all weights
/// reset to `1/N`.
pub fn multinomial_resample<R: Rng + ?Sized>(
    ensemble: &ParticleEnsemble,
    rng: &mut R,
) -> Result<ParticleEnsemble> {
    ensemble.validate_weights()?;
    let n = ensemble.len();
    let mut cdf = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &w in &ensemble.normalized_weights {
        acc += w;
        cdf.push(acc);
    }
    let u1 = rng.random::<f64>() / n as f64;
    let mut particles = Vec::with_capacity(n);
    let mut i = 0;
    for j in 0..n {
        let u = u1 + j as f64 / n as f64;
        while u > cdf[i] && i + 1 < n {
            i += 1;
        }
        let mut p = ensemble.particles[i].clone();
        p.log_weight = 0.0;
        p.log_prior = 0.0;
        particles.push(p);
    }
    let w = 1.0 / n as f64;
    Ok(ParticleEnsemble {
        particles,
        normalized_weights: vec![w; n],
    })
}

/// Log-density of the Gamma transition `next | prev`, summed over every
/// hidden coordinate. Each coordinate follows
/// `Gamma(shape, rate = shape / prev)`, the conditional form of the
/// multiplicative walk.
pub fn gamma_transition_log_density(
    next: &HiddenState,
    prev: &HiddenState,
    hyper: &GammaHyperparams,
) -> Result<f64> {
    if next.dims() != prev.dims() {
        return Err(Error::DimensionMismatch(
            "hidden states disagree on dimensions".into(),
        ));
    }
    next.validate_positive()?;
    prev.validate_positive()?;
    let mut total = 0.0;
    let mut add = |x: f64, x_prev: f64, shape: f64| {
        let rate = shape / x_prev;
        total += shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x;
    };
    for ((&x, &xp), &s) in next
        .theta
        .iter()
        .zip(prev.theta.iter())
        .zip(hyper.theta_shape.iter())
    {
        add(x, xp, s);
    }
    for ((&x, &xp), &s) in next
        .delta1
        .iter()
        .zip(prev.delta1.iter())
        .zip(hyper.mode_shape.iter())
    {
        add(x, xp, s);
    }
    for ((&x, &xp), &s) in next
        .delta2
        .iter()
        .zip(prev.delta2.iter())
        .zip(hyper.shift_shape.iter())
    {
        add(x, xp, s);
    }
    Ok(total)
}
