//! Wrapped Kalman filter on the [azimuth, azimuth-rate] state.
//!
//! The measurement is the aggregated broadband azimuth; circularity is
//! handled by mode matching, realized as wrapping the innovation to the
//! mode nearest the prediction. Covariance updates use the Joseph form.

use nalgebra::{Matrix2, Vector2};

use crate::angles::{wrap_to_pi, wrap_to_tau};
use crate::doa::{AggregateDoa, MacCounter, NarrowbandMethod};
use crate::error::{Error, Result};

use super::{FrameDiag, MotionModel};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct KfConfig {
    /// Measurement noise std of the aggregated azimuth (rad).
    pub sigma_phi: f64,
    pub motion: MotionModel,
    pub method: NarrowbandMethod,
    /// Minimum normalized resultant an aggregated measurement needs before
    /// the update is applied; noise-only frames aggregate to ~0.1-0.3,
    /// speech frames to >0.85.
    pub min_resultant: f64,
    /// Initial azimuth std (rad); the starting direction is trusted.
    pub init_sigma_theta: f64,
    /// Initial azimuth-rate std (rad/s).
    pub init_sigma_rate: f64,
}

impl Default for KfConfig {
    fn default() -> Self {
        Self {
            sigma_phi: 15f64.to_radians(),
            motion: MotionModel::default(),
            method: NarrowbandMethod::default(),
            min_resultant: 0.5,
            init_sigma_theta: 1f64.to_radians(),
            init_sigma_rate: 30f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KfState {
    /// [theta (rad, wrapped to [0, 2pi)), theta_dot (rad/s)].
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

impl KfState {
    pub fn init(theta0: f64, cfg: &KfConfig) -> Self {
        Self {
            mean: Vector2::new(wrap_to_tau(theta0), 0.0),
            cov: Matrix2::new(
                cfg.init_sigma_theta.powi(2),
                0.0,
                0.0,
                cfg.init_sigma_rate.powi(2),
            ),
        }
    }

    pub fn theta(&self) -> f64 {
        self.mean[0]
    }

    fn check_finite(&self) -> Result<()> {
        if self.mean.iter().chain(self.cov.iter()).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::numerical("Kalman state is not finite"))
        }
    }
}

pub fn kf_predict(state: &KfState, model: &MotionModel, counter: &mut MacCounter) -> KfState {
    let f = model.transition();
    let mean = f * state.mean;
    let cov = f * state.cov * f.transpose() + model.process_noise();
    counter.add(24);
    KfState { mean: Vector2::new(wrap_to_tau(mean[0]), mean[1]), cov }
}

/// Scalar measurement update with the innovation wrapped to the nearest
/// mode; Joseph-form covariance.
pub fn kf_update(
    state: &KfState,
    phi: f64,
    sigma_phi: f64,
    counter: &mut MacCounter,
) -> (KfState, f64) {
    let innovation = wrap_to_pi(phi - state.mean[0]);
    let s = state.cov[(0, 0)] + sigma_phi * sigma_phi;
    let k = Vector2::new(state.cov[(0, 0)] / s, state.cov[(1, 0)] / s);
    let mean = state.mean + k * innovation;
    let ikh = Matrix2::identity() - k * nalgebra::RowVector2::new(1.0, 0.0);
    let cov = ikh * state.cov * ikh.transpose()
        + (k * k.transpose()).scale(sigma_phi * sigma_phi);
    counter.add(30);
    (
        KfState { mean: Vector2::new(wrap_to_tau(mean[0]), mean[1]), cov },
        innovation,
    )
}

/// Concatenative step: predict with the motion model, then update with the
/// current aggregated measurement when it is usable. The estimate is the
/// filtering mean.
pub fn kf_step_concat(
    state: &KfState,
    measurement: Option<AggregateDoa>,
    cfg: &KfConfig,
    counter: &mut MacCounter,
) -> Result<(KfState, f64, FrameDiag)> {
    let predicted = kf_predict(state, &cfg.motion, counter);
    let usable = measurement.filter(|m| m.is_confident() && m.resultant >= cfg.min_resultant);
    let (next, diag) = match usable {
        Some(m) => {
            let (updated, innovation) = kf_update(&predicted, m.angle, cfg.sigma_phi, counter);
            (updated, FrameDiag { innovation: Some(innovation), ..FrameDiag::default() })
        }
        None => (predicted, FrameDiag { skipped: true, ..FrameDiag::default() }),
    };
    next.check_finite()?;
    let theta_hat = next.theta();
    Ok((next, theta_hat, diag))
}

/// Autoregressive step: first update with the previous frame's aggregated
/// measurement, then predict. The estimate is the predictive mean, so it
/// only ever depends on past observations.
pub fn kf_step_ar(
    state: &KfState,
    prev_measurement: Option<AggregateDoa>,
    cfg: &KfConfig,
    counter: &mut MacCounter,
) -> Result<(KfState, f64, FrameDiag)> {
    let usable =
        prev_measurement.filter(|m| m.is_confident() && m.resultant >= cfg.min_resultant);
    let (updated, diag) = match usable {
        Some(m) => {
            let (updated, innovation) = kf_update(state, m.angle, cfg.sigma_phi, counter);
            (updated, FrameDiag { innovation: Some(innovation), ..FrameDiag::default() })
        }
        None => (state.clone(), FrameDiag { skipped: true, ..FrameDiag::default() }),
    };
    let predicted = kf_predict(&updated, &cfg.motion, counter);
    predicted.check_finite()?;
    let theta_hat = predicted.theta();
    Ok((predicted, theta_hat, diag))
}
