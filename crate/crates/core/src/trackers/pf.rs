//! Bootstrap particle filter over the wrapped azimuth state.
//!
//! Particles carry (theta, theta_dot); the degenerate white-noise
//! acceleration model lets theta be sampled directly and theta_dot follow
//! deterministically. Weights multiply per-frame likelihoods; systematic
//! resampling triggers when the effective sample size drops below
//! `tau_eff * N`. Particle angles stay unwrapped internally (steering
//! vectors and circular means are periodic anyway), which keeps the
//! velocity recursion valid across the 0/2pi seam.

use crate::angles::wrap_to_tau;
use crate::doa::MacCounter;

use super::{FrameDiag, MotionModel};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PfConfig {
    pub n_particles: usize,
    /// Watson concentration. The sweep favors sharp likelihoods (~5) when
    /// the observation contains one dominant source (MIMO-AR, clean single
    /// speaker) and tempered ones (~0.1) for concatenative tracking of
    /// mixtures, where overconfident weights teleport onto interferers.
    pub kappa: f64,
    /// Resampling threshold on N_eff / N.
    pub tau_eff: f64,
    /// EMA factor of the noise covariance (MISO-AR likelihood).
    pub alpha_ema: f64,
    /// Concatenative-mode measurement gate: frames whose aggregated
    /// narrowband resultant falls below this are treated as uninformative
    /// (noise-only) and skip the weight update; particles still propagate.
    pub min_resultant: f64,
    pub motion: MotionModel,
    /// Estimate with the weights as they were before this frame's
    /// measurement update (exposed for the ambiguous listing order).
    pub estimate_with_pre_update_weights: bool,
}

impl Default for PfConfig {
    fn default() -> Self {
        Self {
            n_particles: 50,
            kappa: 5.0,
            tau_eff: 0.5,
            alpha_ema: 0.95,
            min_resultant: 0.5,
            motion: MotionModel::default(),
            estimate_with_pre_update_weights: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PfState {
    pub theta: Vec<f64>,
    pub theta_dot: Vec<f64>,
    pub weights: Vec<f64>,
    /// Set when a weight update underflowed and weights were reset.
    pub degenerate_resets: u64,
}

impl PfState {
    /// All particles at the starting direction, zero rate, uniform weights.
    pub fn init(theta0: f64, n_particles: usize) -> Self {
        Self {
            theta: vec![wrap_to_tau(theta0); n_particles],
            theta_dot: vec![0.0; n_particles],
            weights: vec![1.0 / n_particles as f64; n_particles],
            degenerate_resets: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.theta.len()
    }

    /// Effective sample size `1 / sum(w^2)`.
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Weighted circular mean of the particle angles.
    pub fn estimate(&self) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (t, w) in self.theta.iter().zip(&self.weights) {
            re += w * t.cos();
            im += w * t.sin();
        }
        wrap_to_tau(im.atan2(re))
    }
}

/// Multiply weights by `exp(loglik)` (log-sum-exp shifted) and normalize.
/// A total underflow resets to uniform and counts as a degenerate event.
pub fn pf_weight_update(state: &mut PfState, logliks: &[f64]) {
    let max_ll = logliks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max_ll.is_finite() {
        let uniform = 1.0 / state.n() as f64;
        state.weights.fill(uniform);
        state.degenerate_resets += 1;
        return;
    }
    let mut total = 0.0;
    for (w, ll) in state.weights.iter_mut().zip(logliks) {
        *w *= (ll - max_ll).exp();
        total += *w;
    }
    if total <= 0.0 || !total.is_finite() {
        let uniform = 1.0 / state.n() as f64;
        state.weights.fill(uniform);
        state.degenerate_resets += 1;
    } else {
        state.weights.iter_mut().for_each(|w| *w /= total);
    }
}

/// Systematic resampling positions `(u + i) / N` against the cumulative
/// weights; `u` is uniform on [0, 1).
pub fn systematic_resample_indices(weights: &[f64], u: f64) -> Vec<usize> {
    let n = weights.len();
    let mut indices = Vec::with_capacity(n);
    let mut cumulative = weights[0];
    let mut j = 0usize;
    for i in 0..n {
        let position = (u + i as f64) / n as f64;
        while position > cumulative && j + 1 < n {
            j += 1;
            cumulative += weights[j];
        }
        indices.push(j);
    }
    indices
}

/// Resample in place when `N_eff < tau_eff * N`; returns (n_eff, resampled).
pub fn pf_maybe_resample(state: &mut PfState, tau_eff: f64, u: f64) -> (f64, bool) {
    let n_eff = state.effective_sample_size();
    if n_eff >= tau_eff * state.n() as f64 {
        return (n_eff, false);
    }
    let idx = systematic_resample_indices(&state.weights, u);
    state.theta = idx.iter().map(|&i| state.theta[i]).collect();
    state.theta_dot = idx.iter().map(|&i| state.theta_dot[i]).collect();
    let uniform = 1.0 / state.n() as f64;
    state.weights.fill(uniform);
    (n_eff, true)
}

/// Propagate every particle one frame: sample the azimuth from the
/// white-noise acceleration transition and recover the rate from the
/// deterministic link `theta_dot_t = 2/dT (theta_t - theta_prev) -
/// theta_dot_prev`.
pub fn pf_propagate(
    state: &mut PfState,
    model: &MotionModel,
    noise: &mut dyn FnMut(usize) -> f64,
) {
    let dt = model.dt;
    for i in 0..state.n() {
        let prev = state.theta[i];
        let nu = noise(i) * model.sigma_nu;
        let next = prev + dt * state.theta_dot[i] + 0.5 * dt * dt * nu;
        state.theta_dot[i] = 2.0 / dt * (next - prev) - state.theta_dot[i];
        state.theta[i] = next;
    }
}

/// What a PF step consumes at frame `t`.
pub enum PfStepOrder {
    /// Concatenative: propagate, weight with the current likelihood,
    /// estimate from the filtering distribution.
    PropagateThenWeight,
    /// Autoregressive: weight with the previous frame's likelihood,
    /// resample, propagate, estimate from the predictive distribution.
    WeightThenPropagate,
}

/// One bootstrap step. `loglik(theta)` evaluates the measurement model for
/// a particle angle (`None` skips the update, e.g. silent frames).
#[allow(clippy::too_many_arguments)]
pub fn pf_step(
    state: &mut PfState,
    loglik: Option<&dyn Fn(f64) -> f64>,
    order: PfStepOrder,
    cfg: &PfConfig,
    noise: &mut dyn FnMut(usize) -> f64,
    resample_u: f64,
    counter: &mut MacCounter,
) -> (f64, FrameDiag) {
    counter.add(3 * state.n() as u64);
    let mut diag = FrameDiag { skipped: loglik.is_none(), ..FrameDiag::default() };
    let pre_update_weights = if cfg.estimate_with_pre_update_weights {
        Some(state.weights.clone())
    } else {
        None
    };
    match order {
        PfStepOrder::PropagateThenWeight => {
            let (n_eff, resampled) = pf_maybe_resample(state, cfg.tau_eff, resample_u);
            pf_propagate(state, &cfg.motion, noise);
            if let Some(ll) = loglik {
                let logliks: Vec<f64> = state.theta.iter().map(|&t| ll(t)).collect();
                pf_weight_update(state, &logliks);
            }
            diag.n_eff = Some(n_eff);
            diag.resampled = resampled;
        }
        PfStepOrder::WeightThenPropagate => {
            if let Some(ll) = loglik {
                let logliks: Vec<f64> = state.theta.iter().map(|&t| ll(t)).collect();
                pf_weight_update(state, &logliks);
            }
            let (n_eff, resampled) = pf_maybe_resample(state, cfg.tau_eff, resample_u);
            pf_propagate(state, &cfg.motion, noise);
            diag.n_eff = Some(n_eff);
            diag.resampled = resampled;
        }
    }
    let theta_hat = match pre_update_weights {
        Some(w) => {
            let saved = std::mem::replace(&mut state.weights, w);
            let est = state.estimate();
            state.weights = saved;
            est
        }
        None => state.estimate(),
    };
    (theta_hat, diag)
}
