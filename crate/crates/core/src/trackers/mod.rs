//! Recursive Bayesian azimuth trackers and the frame-causal tracking loop.
//!
//! Both filters share the white-noise acceleration motion model and run in
//! three configurations: concatenative (tracking from the noisy observation
//! only) and two autoregressive ones that fold the previously enhanced
//! frame back into the measurement model, either as a single-channel
//! reference (MISO-AR) or as a multichannel replacement observation
//! (MIMO-AR). Autoregressive estimates are predictive means: frame `t`
//! never reads observations from frame `t`.

pub mod kf;
pub mod pf;

use nalgebra::Matrix2;
use ndarray::{Array3, ArrayView2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::doa::{
    aggregate_uniform, aggregate_weighted, ema_noise_cov, gaussian_loglik, narrowband_frame,
    watson_loglik, MacCounter, NoiseCovariance, SpatialContext,
};
use crate::enhance::{EnhancedFrame, EnhancerHandle, OutputShape};
use crate::error::{Error, Result};
use crate::rng::derive_rng;
use crate::stft::Spectrogram;

pub use kf::{kf_predict, kf_step_ar, kf_step_concat, kf_update, KfConfig, KfState};
pub use pf::{
    pf_maybe_resample, pf_propagate, pf_step, pf_weight_update, systematic_resample_indices,
    PfConfig, PfState, PfStepOrder,
};

/// White-noise acceleration model over [theta, theta_dot].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionModel {
    /// Frame hop (s).
    pub dt: f64,
    /// Process noise std (rad/s^2).
    pub sigma_nu: f64,
}

impl Default for MotionModel {
    fn default() -> Self {
        // process-noise level from the validation sweep: walking speakers
        // close to the array need fast azimuth-rate adaptation
        Self { dt: 0.016, sigma_nu: 150f64.to_radians() }
    }
}

impl MotionModel {
    pub fn transition(&self) -> Matrix2<f64> {
        Matrix2::new(1.0, self.dt, 0.0, 1.0)
    }

    /// `sigma_nu^2 * G G^T` with `G = [dt^2/2, dt]`.
    pub fn process_noise(&self) -> Matrix2<f64> {
        let g = nalgebra::Vector2::new(self.dt * self.dt / 2.0, self.dt);
        (g * g.transpose()).scale(self.sigma_nu * self.sigma_nu)
    }
}

/// Pipeline configuration: what the tracker consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrackerMode {
    Concat,
    MisoAr,
    MimoAr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrackerKind {
    Kf(KfConfig),
    Pf(PfConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerSpec {
    pub kind: TrackerKind,
    pub mode: TrackerMode,
}

/// Per-frame tracker diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FrameDiag {
    /// PF effective sample size at the resampling decision.
    pub n_eff: Option<f64>,
    /// KF innovation (rad).
    pub innovation: Option<f64>,
    pub resampled: bool,
    /// Measurement update skipped (invalid or silent observation).
    pub skipped: bool,
}

/// Tracked azimuth sequence with diagnostics and the operation tally.
#[derive(Debug, Clone)]
pub struct DoaTrack {
    pub theta_hat: Vec<f64>,
    pub diag: Vec<FrameDiag>,
    pub macs: u64,
}

impl DoaTrack {
    pub fn n_frames(&self) -> usize {
        self.theta_hat.len()
    }

    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["frame", "theta_hat_deg", "n_eff_or_innovation", "resampled", "skipped"])?;
        for (t, (theta, d)) in self.theta_hat.iter().zip(&self.diag).enumerate() {
            let aux = d.n_eff.or(d.innovation.map(|i| i.to_degrees())).unwrap_or(f64::NAN);
            w.write_record([
                t.to_string(),
                format!("{:.6}", theta.to_degrees()),
                format!("{aux:.6}"),
                (d.resampled as u8).to_string(),
                (d.skipped as u8).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Everything `track_scene` produces: the track and, when an enhancer ran,
/// the enhanced frames (frames x bins x channels).
#[derive(Debug, Clone)]
pub struct TrackOutput {
    pub track: DoaTrack,
    pub enhanced: Option<Array3<Complex64>>,
}

impl TrackOutput {
    /// Wrap the enhanced frames as a spectrogram ready for synthesis.
    pub fn enhanced_spectrogram(
        &self,
        config: &crate::stft::StftConfig,
        n_samples: usize,
    ) -> Option<crate::stft::Spectrogram> {
        self.enhanced.as_ref().map(|data| crate::stft::Spectrogram {
            data: data.clone(),
            config: config.clone(),
            n_samples,
        })
    }
}

fn frame_energy(frame: &ArrayView2<'_, Complex64>) -> f64 {
    frame.iter().map(|v| v.norm_sqr()).sum()
}

// rng stream tags
const TAG_PROPAGATE: u64 = 0x11;
const TAG_RESAMPLE: u64 = 0x12;

/// Track one scene frame-causally from its mixture spectrogram.
///
/// `theta0` is the target's true azimuth at frame 0 (weak guidance). In the
/// autoregressive modes the enhancer output of frame `t-1` feeds the
/// tracker at frame `t`; the enhancer itself is steered by the running
/// estimate every frame. Deterministic given `scene_seed`.
pub fn track_scene(
    spec: &Spectrogram,
    tracker: &TrackerSpec,
    mut enhancer: Option<&mut EnhancerHandle>,
    theta0: f64,
    ctx: &SpatialContext,
    scene_seed: u64,
) -> Result<TrackOutput> {
    let n_frames = spec.n_frames();
    if n_frames == 0 {
        return Err(Error::parameter("empty spectrogram"));
    }
    if tracker.mode != TrackerMode::Concat && enhancer.is_none() {
        return Err(Error::Config("autoregressive modes need an enhancer".into()));
    }
    if tracker.mode == TrackerMode::MimoAr {
        if let Some(h) = enhancer.as_deref() {
            if h.shape != OutputShape::Mimo {
                return Err(Error::Config(
                    "MIMO-AR needs an enhancer with MIMO output".into(),
                ));
            }
        }
    }

    let mut counter = MacCounter::default();
    let mut theta_hat = Vec::with_capacity(n_frames);
    let mut diags = Vec::with_capacity(n_frames);
    let mut enhanced_frames: Vec<EnhancedFrame> = Vec::new();

    // recursive state
    let mut kf_state = match &tracker.kind {
        TrackerKind::Kf(cfg) => Some(KfState::init(theta0, cfg)),
        TrackerKind::Pf(_) => None,
    };
    let mut pf_state = match &tracker.kind {
        TrackerKind::Pf(cfg) => Some(PfState::init(theta0, cfg.n_particles)),
        TrackerKind::Kf(_) => None,
    };
    let mut r_ema: Option<NoiseCovariance> = None;

    for t in 0..n_frames {
        let y_t = spec.data.index_axis(ndarray::Axis(0), t);
        let estimate = if t == 0 {
            theta_hat.push(theta0);
            diags.push(FrameDiag::default());
            theta0
        } else {
            let y_prev = spec.data.index_axis(ndarray::Axis(0), t - 1);
            let (est, diag) = match (&tracker.kind, tracker.mode) {
                (TrackerKind::Kf(cfg), TrackerMode::Concat) => {
                    let frame = narrowband_frame(&y_t, ctx, cfg.method, &mut counter);
                    let meas = aggregate_uniform(&frame, &mut counter);
                    let (next, est, diag) =
                        kf_step_concat(kf_state.as_ref().unwrap(), meas, cfg, &mut counter)?;
                    kf_state = Some(next);
                    (est, diag)
                }
                (TrackerKind::Kf(cfg), TrackerMode::MisoAr) => {
                    let prev_enh = enhanced_frames.last().expect("enhancer ran");
                    let weights = prev_enh.power_weights(ctx.array.reference_index);
                    let frame = narrowband_frame(&y_prev, ctx, cfg.method, &mut counter);
                    let meas = aggregate_weighted(&frame, &weights, &mut counter);
                    let (next, est, diag) =
                        kf_step_ar(kf_state.as_ref().unwrap(), meas, cfg, &mut counter)?;
                    kf_state = Some(next);
                    (est, diag)
                }
                (TrackerKind::Kf(cfg), TrackerMode::MimoAr) => {
                    let prev_enh = enhanced_frames.last().expect("enhancer ran");
                    let s_prev = prev_enh.multichannel().expect("mimo output");
                    let frame =
                        narrowband_frame(&s_prev.view(), ctx, cfg.method, &mut counter);
                    let meas = aggregate_uniform(&frame, &mut counter);
                    let (next, est, diag) =
                        kf_step_ar(kf_state.as_ref().unwrap(), meas, cfg, &mut counter)?;
                    kf_state = Some(next);
                    (est, diag)
                }
                (TrackerKind::Pf(cfg), mode) => {
                    let state = pf_state.as_mut().unwrap();
                    let noise_rng_for = |frame: usize| {
                        move |n: usize| -> f64 {
                            use rand::Rng;
                            derive_rng(scene_seed, &[TAG_PROPAGATE, frame as u64, n as u64])
                                .sample(rand_distr::StandardNormal)
                        }
                    };
                    let resample_u: f64 = {
                        use rand::Rng;
                        derive_rng(scene_seed, &[TAG_RESAMPLE, t as u64]).gen()
                    };
                    match mode {
                        TrackerMode::Concat => {
                            let ll = |theta: f64| {
                                let mut c = MacCounter::default();
                                watson_loglik(&y_t, theta, ctx, cfg.kappa, &mut c)
                            };
                            counter
                                .add((cfg.n_particles * ctx.stft.max_bin() * ctx.n_mics()) as u64);
                            // noise-only frames carry no coherent direction;
                            // updating on them walks the cloud off target
                            let frame = narrowband_frame(
                                &y_t,
                                ctx,
                                crate::doa::NarrowbandMethod::LinearLs,
                                &mut counter,
                            );
                            let agg = aggregate_uniform(&frame, &mut counter);
                            let skip = frame_energy(&y_t) <= 0.0
                                || !agg.is_some_and(|a| {
                                    a.is_confident() && a.resultant >= cfg.min_resultant
                                });
                            let llopt: Option<&dyn Fn(f64) -> f64> =
                                if skip { None } else { Some(&ll) };
                            let (est, diag) = pf_step(
                                state,
                                llopt,
                                PfStepOrder::PropagateThenWeight,
                                cfg,
                                &mut noise_rng_for(t),
                                resample_u,
                                &mut counter,
                            );
                            (est, diag)
                        }
                        TrackerMode::MisoAr => {
                            let prev_enh = enhanced_frames.last().expect("enhancer ran");
                            let s_prev = prev_enh.reference(ctx.array.reference_index);
                            let prev_theta = theta_hat[t - 1];
                            let r_prev = r_ema.take().unwrap_or_else(|| {
                                let p = frame_energy(&y_prev)
                                    / (y_prev.len().max(1)) as f64;
                                NoiseCovariance::identity(ctx.n_mics(), p.max(1e-12))
                            });
                            let r_next = ema_noise_cov(
                                &r_prev,
                                &y_prev,
                                &s_prev,
                                prev_theta,
                                cfg.alpha_ema,
                                ctx,
                                &mut counter,
                            )?;
                            let r_inv = r_next.inverse_loaded()?;
                            r_ema = Some(r_next);
                            let silent =
                                s_prev.iter().map(|v| v.norm_sqr()).sum::<f64>() <= 0.0;
                            let ll = |theta: f64| {
                                let mut c = MacCounter::default();
                                gaussian_loglik(&y_prev, &s_prev, theta, &r_inv, ctx, &mut c)
                            };
                            counter
                                .add((cfg.n_particles * ctx.stft.max_bin() * ctx.n_mics()) as u64);
                            let llopt: Option<&dyn Fn(f64) -> f64> =
                                if silent { None } else { Some(&ll) };
                            let (est, diag) = pf_step(
                                state,
                                llopt,
                                PfStepOrder::WeightThenPropagate,
                                cfg,
                                &mut noise_rng_for(t),
                                resample_u,
                                &mut counter,
                            );
                            (est, diag)
                        }
                        TrackerMode::MimoAr => {
                            let prev_enh = enhanced_frames.last().expect("enhancer ran");
                            let s_prev = prev_enh.multichannel().expect("mimo output");
                            let s_view = s_prev.view();
                            let silent = frame_energy(&s_view) <= 0.0;
                            let ll = |theta: f64| {
                                let mut c = MacCounter::default();
                                watson_loglik(&s_view, theta, ctx, cfg.kappa, &mut c)
                            };
                            counter
                                .add((cfg.n_particles * ctx.stft.max_bin() * ctx.n_mics()) as u64);
                            let llopt: Option<&dyn Fn(f64) -> f64> =
                                if silent { None } else { Some(&ll) };
                            let (est, diag) = pf_step(
                                state,
                                llopt,
                                PfStepOrder::WeightThenPropagate,
                                cfg,
                                &mut noise_rng_for(t),
                                resample_u,
                                &mut counter,
                            );
                            (est, diag)
                        }
                    }
                }
            };
            theta_hat.push(est);
            diags.push(diag);
            est
        };

        if let Some(h) = enhancer.as_deref_mut() {
            enhanced_frames.push(h.enhance_frame(t, &y_t, estimate, ctx)?);
        }
    }

    let enhanced = enhancer.is_some().then(|| {
        let bins = spec.n_bins();
        let channels = match enhanced_frames[0] {
            EnhancedFrame::Miso(_) => 1,
            EnhancedFrame::Mimo(ref m) => m.shape()[1],
        };
        let mut out = Array3::default((n_frames, bins, channels));
        for (t, f) in enhanced_frames.iter().enumerate() {
            match f {
                EnhancedFrame::Miso(v) => {
                    for k in 0..bins {
                        out[(t, k, 0)] = v[k];
                    }
                }
                EnhancedFrame::Mimo(m) => {
                    for k in 0..bins {
                        for ch in 0..channels {
                            out[(t, k, ch)] = m[(k, ch)];
                        }
                    }
                }
            }
        }
        out
    });

    Ok(TrackOutput {
        track: DoaTrack { theta_hat, diag: diags, macs: counter.0 },
        enhanced,
    })
}

/// One grid point of a parameter sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma_nu_deg: f64,
    /// Measurement spread (KF, deg) or Watson concentration (PF).
    pub likelihood_param: f64,
    pub tau_eff: f64,
    pub alpha_ema: f64,
    pub mae_deg: f64,
    pub acc_pct: f64,
}

/// Scenes paired with ready-to-run inputs for sweeps and benchmarks.
pub struct SweepScene {
    pub spec: Spectrogram,
    pub theta0: f64,
    pub truth: Vec<f64>,
    pub enhancer: Option<EnhancerHandle>,
    pub seed: u64,
}

/// Grid evaluation over tracker hyperparameters; rows come back in grid
/// order, best MAE first in the returned index.
pub fn sweep_params(
    scenes: &[SweepScene],
    template: &TrackerSpec,
    sigma_nu_deg: &[f64],
    likelihood_param: &[f64],
    tau_eff: &[f64],
    alpha_ema: &[f64],
    ctx: &SpatialContext,
) -> Result<(Vec<SweepRow>, usize)> {
    let mut rows = Vec::new();
    for &nu in sigma_nu_deg {
        for &lp in likelihood_param {
            for &tau in tau_eff {
                for &alpha in alpha_ema {
                    let spec = apply_grid_point(template, nu, lp, tau, alpha);
                    let mut maes = Vec::new();
                    let mut accs = Vec::new();
                    for scene in scenes {
                        let mut enhancer = scene.enhancer.clone();
                        if let Some(h) = enhancer.as_mut() {
                            h.reset();
                        }
                        let out = track_scene(
                            &scene.spec,
                            &spec,
                            enhancer.as_mut(),
                            scene.theta0,
                            ctx,
                            scene.seed,
                        )?;
                        let n = out.track.theta_hat.len().min(scene.truth.len());
                        let m = crate::eval::track_metrics(
                            &out.track.theta_hat[..n],
                            &scene.truth[..n],
                            10.0,
                        )?;
                        maes.push(m.mae_deg);
                        accs.push(m.acc_pct);
                    }
                    rows.push(SweepRow {
                        sigma_nu_deg: nu,
                        likelihood_param: lp,
                        tau_eff: tau,
                        alpha_ema: alpha,
                        mae_deg: maes.iter().sum::<f64>() / maes.len().max(1) as f64,
                        acc_pct: accs.iter().sum::<f64>() / accs.len().max(1) as f64,
                    });
                }
            }
        }
    }
    let best = rows
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.mae_deg.total_cmp(&b.1.mae_deg))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::parameter("empty sweep grid"))?;
    Ok((rows, best))
}

fn apply_grid_point(
    template: &TrackerSpec,
    sigma_nu_deg: f64,
    likelihood_param: f64,
    tau_eff: f64,
    alpha_ema: f64,
) -> TrackerSpec {
    let mut spec = template.clone();
    match &mut spec.kind {
        TrackerKind::Kf(cfg) => {
            cfg.motion.sigma_nu = sigma_nu_deg.to_radians();
            cfg.sigma_phi = likelihood_param.to_radians();
        }
        TrackerKind::Pf(cfg) => {
            cfg.motion.sigma_nu = sigma_nu_deg.to_radians();
            cfg.kappa = likelihood_param;
            cfg.tau_eff = tau_eff;
            cfg.alpha_ema = alpha_ema;
        }
    }
    spec
}
