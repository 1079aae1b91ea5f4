//! Frame-causal spatially selective enhancement backends.
//!
//! These stand in for a learned spatial filter: an oracle (ground-truth
//! direct path), a corrupted oracle that models estimation error and
//! target confusion under bad guidance, plus classical delay-and-sum and
//! MVDR beamformers. Every backend processes frames strictly in order and
//! only ever sees current and past inputs.

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::angles::circular_diff;
use crate::doa::{ema_noise_cov, MacCounter, NoiseCovariance, SpatialContext};
use crate::error::{Error, Result};
use crate::rng::derive_rng;
use crate::scene::SceneBundle;
use crate::stft::analyze;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Backend {
    /// Ground-truth direct path of the target; ignores the steering angle.
    Oracle,
    /// Oracle plus complex Gaussian perturbation at `perturb_snr_db`; when
    /// steered within `confuse_threshold_deg` of the interferer it returns
    /// the interferer's frame with probability `p_confuse`.
    OracleCorrupted {
        perturb_snr_db: f64,
        p_confuse: f64,
        confuse_threshold_deg: f64,
    },
    DelayAndSum,
    Mvdr,
}

impl Backend {
    /// Corrupted oracle with the default calibration knobs.
    pub fn default_corrupted() -> Self {
        Backend::OracleCorrupted {
            perturb_snr_db: 15.0,
            p_confuse: 0.8,
            confuse_threshold_deg: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum OutputShape {
    Miso,
    Mimo,
}

/// One enhanced frame: the reference channel or all `M` channels, by bin.
#[derive(Debug, Clone)]
pub enum EnhancedFrame {
    Miso(Vec<Complex64>),
    Mimo(Array2<Complex64>),
}

impl EnhancedFrame {
    /// Reference-channel spectrum.
    pub fn reference(&self, reference_index: usize) -> Vec<Complex64> {
        match self {
            EnhancedFrame::Miso(v) => v.clone(),
            EnhancedFrame::Mimo(m) => m.column(reference_index).to_vec(),
        }
    }

    pub fn multichannel(&self) -> Option<&Array2<Complex64>> {
        match self {
            EnhancedFrame::Mimo(m) => Some(m),
            EnhancedFrame::Miso(_) => None,
        }
    }

    /// Per-bin `|S|^2` of the reference channel (aggregation weights).
    pub fn power_weights(&self, reference_index: usize) -> Vec<f64> {
        self.reference(reference_index).iter().map(|v| v.norm_sqr()).collect()
    }
}

/// Ground-truth data the oracle backends feed from.
#[derive(Debug, Clone)]
pub struct OracleData {
    /// Reference-channel direct-path STFT of the target, frames x bins.
    pub target_ref_stft: Array2<Complex64>,
    /// True target azimuth per frame.
    pub target_azimuth: Vec<f64>,
    pub interferer_ref_stft: Option<Array2<Complex64>>,
    pub interferer_azimuth: Option<Vec<f64>>,
}

impl OracleData {
    /// Extract oracle material for `target` from a scene bundle. With two
    /// speakers the other one becomes the interferer.
    pub fn from_bundle(bundle: &SceneBundle, target: usize, ctx: &SpatialContext) -> Result<Self> {
        let r = ctx.array.reference_index;
        let center = &bundle.meta.room.array_center;
        let spec = analyze(&bundle.direct_paths[target], &ctx.stft)?;
        let t_frames = spec.n_frames();
        let target_ref_stft = Array2::from_shape_fn((t_frames, spec.n_bins()), |(t, k)| {
            spec.data[(t, k, r)]
        });
        let target_azimuth: Vec<f64> = (0..t_frames)
            .map(|t| bundle.trajectories[target].azimuth(t.min(bundle.trajectories[target].len() - 1), center))
            .collect();
        let interferer = (0..bundle.direct_paths.len()).find(|&i| i != target);
        let (interferer_ref_stft, interferer_azimuth) = match interferer {
            Some(i) => {
                let ispec = analyze(&bundle.direct_paths[i], &ctx.stft)?;
                let stft = Array2::from_shape_fn((t_frames, ispec.n_bins()), |(t, k)| {
                    ispec.data[(t, k, r)]
                });
                let az = (0..t_frames)
                    .map(|t| {
                        bundle.trajectories[i]
                            .azimuth(t.min(bundle.trajectories[i].len() - 1), center)
                    })
                    .collect();
                (Some(stft), Some(az))
            }
            None => (None, None),
        };
        Ok(Self { target_ref_stft, target_azimuth, interferer_ref_stft, interferer_azimuth })
    }
}

/// Per-scene enhancer instance with backend-defined recursive state.
#[derive(Debug, Clone)]
pub struct EnhancerHandle {
    pub backend: Backend,
    pub shape: OutputShape,
    oracle: Option<OracleData>,
    /// EMA spatial covariance (MVDR state).
    r_ema: Option<NoiseCovariance>,
    alpha_ema: f64,
    seed: u64,
    next_frame: usize,
}

/// Relative diagonal loading of the MVDR covariance inverse.
const MVDR_LOADING: f64 = 1e-4;

impl EnhancerHandle {
    pub fn new(backend: Backend, shape: OutputShape, seed: u64) -> Self {
        Self { backend, shape, oracle: None, r_ema: None, alpha_ema: 0.95, seed, next_frame: 0 }
    }

    pub fn with_oracle(mut self, oracle: OracleData) -> Self {
        self.oracle = Some(oracle);
        self
    }

    pub fn requires_oracle(&self) -> bool {
        matches!(self.backend, Backend::Oracle | Backend::OracleCorrupted { .. })
    }

    /// Reset per-scene state so the handle can process a new stream.
    pub fn reset(&mut self) {
        self.r_ema = None;
        self.next_frame = 0;
    }

    /// Enhance frame `t`. Frames must arrive in order starting at 0.
    pub fn enhance_frame(
        &mut self,
        t: usize,
        y_frame: &ArrayView2<'_, Complex64>,
        theta_hat: f64,
        ctx: &SpatialContext,
    ) -> Result<EnhancedFrame> {
        if t != self.next_frame {
            return Err(Error::parameter(format!(
                "enhancer expects frame {} but got {t}",
                self.next_frame
            )));
        }
        self.next_frame += 1;
        match &self.backend {
            Backend::Oracle => self.oracle_frame(t, ctx, None),
            Backend::OracleCorrupted { perturb_snr_db, p_confuse, confuse_threshold_deg } => {
                let params = (*perturb_snr_db, *p_confuse, *confuse_threshold_deg);
                self.oracle_frame(t, ctx, Some((params, theta_hat)))
            }
            Backend::DelayAndSum => Ok(self.beamform(y_frame, theta_hat, ctx, None)),
            Backend::Mvdr => {
                let r = self
                    .r_ema
                    .get_or_insert_with(|| {
                        let m = ctx.n_mics();
                        let power = y_frame.iter().map(|v| v.norm_sqr()).sum::<f64>()
                            / y_frame.len() as f64;
                        NoiseCovariance::identity(m, power.max(1e-12))
                    })
                    .clone();
                let r_inv = loaded_inverse(&r, MVDR_LOADING)?;
                let out = self.beamform(y_frame, theta_hat, ctx, Some(&r_inv));
                // track the noise statistics from this frame's residual
                let s_hat = out.reference(ctx.array.reference_index);
                let mut counter = MacCounter::default();
                self.r_ema = Some(ema_noise_cov(
                    &r,
                    y_frame,
                    &s_hat,
                    theta_hat,
                    self.alpha_ema,
                    ctx,
                    &mut counter,
                )?);
                Ok(out)
            }
        }
    }

    fn oracle_frame(
        &self,
        t: usize,
        ctx: &SpatialContext,
        corruption: Option<((f64, f64, f64), f64)>,
    ) -> Result<EnhancedFrame> {
        let oracle = self
            .oracle
            .as_ref()
            .ok_or_else(|| Error::Config("oracle backend needs ground-truth data".into()))?;
        let n_bins = oracle.target_ref_stft.shape()[1];

        // decide which speaker's frame to return
        let mut use_interferer = false;
        let mut perturb_snr = f64::INFINITY;
        if let Some(((snr, p_confuse, threshold_deg), theta_hat)) = corruption {
            perturb_snr = snr;
            if let Some(int_az) = &oracle.interferer_azimuth {
                let off = circular_diff(theta_hat, int_az[t]).abs().to_degrees();
                if off < threshold_deg && p_confuse > 0.0 {
                    let mut rng = derive_rng(self.seed, &[0xc0f, t as u64]);
                    use_interferer = rng.gen_bool(p_confuse.clamp(0.0, 1.0));
                }
            }
        }
        let (stft, azimuth) = if use_interferer {
            (
                oracle.interferer_ref_stft.as_ref().expect("interferer data"),
                oracle.interferer_azimuth.as_ref().expect("interferer azimuth")[t],
            )
        } else {
            (&oracle.target_ref_stft, oracle.target_azimuth[t])
        };

        let mut noise_sigma = 0.0;
        if perturb_snr.is_finite() {
            let power: f64 = (0..n_bins).map(|k| stft[(t, k)].norm_sqr()).sum();
            // per-bin complex variance spreading the requested error power
            noise_sigma = (power * 10f64.powf(-perturb_snr / 10.0) / n_bins as f64).sqrt();
        }
        let mut rng = derive_rng(self.seed, &[0x9e, t as u64]);
        let mut draw = |sigma: f64| {
            if sigma == 0.0 {
                Complex64::default()
            } else {
                Complex64::new(
                    rng.sample::<f64, _>(StandardNormal) * sigma / 2f64.sqrt(),
                    rng.sample::<f64, _>(StandardNormal) * sigma / 2f64.sqrt(),
                )
            }
        };

        match self.shape {
            OutputShape::Miso => {
                let v = (0..n_bins).map(|k| stft[(t, k)] + draw(noise_sigma)).collect();
                Ok(EnhancedFrame::Miso(v))
            }
            OutputShape::Mimo => {
                // direct-path propagated speech d_k(theta_true) * S_k
                let m = ctx.n_mics();
                let mut out = Array2::default((n_bins, m));
                let steps = ctx.conj_steering_steps(azimuth);
                let mut conj_d = vec![Complex64::new(1.0, 0.0); m];
                for k in 0..n_bins {
                    if k > 0 {
                        for ch in 0..m {
                            conj_d[ch] *= steps[ch];
                        }
                    }
                    let s = stft[(t, k)];
                    for ch in 0..m {
                        out[(k, ch)] = conj_d[ch].conj() * s + draw(noise_sigma);
                    }
                }
                Ok(EnhancedFrame::Mimo(out))
            }
        }
    }

    fn beamform(
        &self,
        y_frame: &ArrayView2<'_, Complex64>,
        theta_hat: f64,
        ctx: &SpatialContext,
        r_inv: Option<&nalgebra::DMatrix<Complex64>>,
    ) -> EnhancedFrame {
        let m = ctx.n_mics();
        let n_bins = y_frame.shape()[0];
        let steps = ctx.conj_steering_steps(theta_hat);
        let mut conj_d = vec![Complex64::new(1.0, 0.0); m];
        let mut s_hat = vec![Complex64::default(); n_bins];
        let mut mimo = match self.shape {
            OutputShape::Mimo => Some(Array2::default((n_bins, m))),
            OutputShape::Miso => None,
        };
        for k in 0..n_bins {
            if k > 0 {
                for ch in 0..m {
                    conj_d[ch] *= steps[ch];
                }
            }
            let s = match r_inv {
                None => {
                    // delay and sum: (1/M) d^H Y
                    let mut acc = Complex64::default();
                    for ch in 0..m {
                        acc += conj_d[ch] * y_frame[(k, ch)];
                    }
                    acc / m as f64
                }
                Some(ri) => {
                    // MVDR: w = R^-1 d / (d^H R^-1 d), output w^H Y
                    let d = nalgebra::DVector::from_fn(m, |i, _| conj_d[i].conj());
                    let rd = ri * &d;
                    let denom = d.dotc(&rd);
                    let w = rd / denom;
                    let mut acc = Complex64::default();
                    for ch in 0..m {
                        acc += w[ch].conj() * y_frame[(k, ch)];
                    }
                    acc
                }
            };
            s_hat[k] = s;
            if let Some(out) = &mut mimo {
                for ch in 0..m {
                    out[(k, ch)] = conj_d[ch].conj() * s;
                }
            }
        }
        match mimo {
            Some(out) => EnhancedFrame::Mimo(out),
            None => EnhancedFrame::Miso(s_hat),
        }
    }
}

fn loaded_inverse(
    r: &NoiseCovariance,
    loading: f64,
) -> Result<nalgebra::DMatrix<Complex64>> {
    let m = r.matrix.nrows();
    let trace: f64 = (0..m).map(|i| r.matrix[(i, i)].re).sum();
    let loaded = &r.matrix
        + nalgebra::DMatrix::identity(m, m)
            * Complex64::new(loading * (trace / m as f64).max(1e-300), 0.0);
    loaded
        .try_inverse()
        .ok_or_else(|| Error::numerical("MVDR covariance is singular"))
}

/// MVDR weights for one steering vector (distortionless by construction).
pub fn mvdr_weights(
    r_inv: &nalgebra::DMatrix<Complex64>,
    steering: &[Complex64],
) -> Vec<Complex64> {
    let m = steering.len();
    let d = nalgebra::DVector::from_fn(m, |i, _| steering[i]);
    let rd = r_inv * &d;
    let denom = d.dotc(&rd);
    (rd / denom).iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::MicArray;
    use crate::stft::StftConfig;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::Rng;

    fn ctx() -> SpatialContext {
        SpatialContext::new(MicArray::default_three_mic(), StftConfig::default_16k())
    }

    fn random_ref_stft(frames: usize, bins: usize, seed: u64) -> Array2<Complex64> {
        let mut rng = derive_rng(seed, &[]);
        Array2::from_shape_fn((frames, bins), |_| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        })
    }

    fn oracle_data(ctx: &SpatialContext, frames: usize, seed: u64) -> OracleData {
        let bins = ctx.stft.n_bins();
        OracleData {
            target_ref_stft: random_ref_stft(frames, bins, seed),
            target_azimuth: (0..frames).map(|t| 0.5 + 0.01 * t as f64).collect(),
            interferer_ref_stft: Some(random_ref_stft(frames, bins, seed + 1)),
            interferer_azimuth: Some((0..frames).map(|t| 3.5 - 0.01 * t as f64).collect()),
        }
    }

    /// Far-field frame d_k(theta) * S_k from a reference spectrum row.
    fn project_frame(
        ctx: &SpatialContext,
        s_row: &[Complex64],
        azimuth: f64,
    ) -> Array2<Complex64> {
        let m = ctx.n_mics();
        let mut y = Array2::default((s_row.len(), m));
        for (k, &s) in s_row.iter().enumerate() {
            let sv = ctx
                .array
                .steering_vector(azimuth, k, ctx.stft.win_len, ctx.stft.sample_rate)
                .unwrap();
            for ch in 0..m {
                y[(k, ch)] = sv.values[ch] * s;
            }
        }
        y
    }

    #[test]
    fn oracle_mimo_realizes_the_steering_model() {
        let ctx = ctx();
        let data = oracle_data(&ctx, 4, 20);
        let mut h = EnhancerHandle::new(Backend::Oracle, OutputShape::Mimo, 1)
            .with_oracle(data.clone());
        let y = Array2::default((ctx.stft.n_bins(), 3));
        let out = h.enhance_frame(0, &y.view(), 9.99, &ctx).unwrap();
        let mimo = out.multichannel().unwrap();
        for k in 0..ctx.stft.n_bins() {
            let sv = ctx
                .array
                .steering_vector(data.target_azimuth[0], k, 512, 16_000.0)
                .unwrap();
            for ch in 0..3 {
                let expect = sv.values[ch] * data.target_ref_stft[(0, k)];
                assert!((mimo[(k, ch)] - expect).norm() < 1e-9);
            }
        }
        // reference channel of MIMO equals the MISO output
        let mut h2 = EnhancerHandle::new(Backend::Oracle, OutputShape::Miso, 1)
            .with_oracle(data.clone());
        let miso = h2.enhance_frame(0, &y.view(), 9.99, &ctx).unwrap();
        let r = ctx.array.reference_index;
        for (a, b) in out.reference(r).iter().zip(miso.reference(r).iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn corrupted_oracle_degenerates_to_oracle() {
        let ctx = ctx();
        let data = oracle_data(&ctx, 3, 21);
        let clean = Backend::OracleCorrupted {
            perturb_snr_db: f64::INFINITY,
            p_confuse: 0.0,
            confuse_threshold_deg: 10.0,
        };
        let mut a = EnhancerHandle::new(clean, OutputShape::Mimo, 7).with_oracle(data.clone());
        let mut b = EnhancerHandle::new(Backend::Oracle, OutputShape::Mimo, 7).with_oracle(data);
        let y = Array2::default((ctx.stft.n_bins(), 3));
        for t in 0..3 {
            let fa = a.enhance_frame(t, &y.view(), 0.5, &ctx).unwrap();
            let fb = b.enhance_frame(t, &y.view(), 0.5, &ctx).unwrap();
            match (fa, fb) {
                (EnhancedFrame::Mimo(x), EnhancedFrame::Mimo(y)) => assert_eq!(x, y),
                _ => panic!("shape mismatch"),
            }
        }
    }

    #[test]
    fn corrupted_oracle_confuses_when_misguided() {
        let ctx = ctx();
        let data = oracle_data(&ctx, 40, 22);
        let mut h = EnhancerHandle::new(
            Backend::OracleCorrupted {
                perturb_snr_db: f64::INFINITY,
                p_confuse: 1.0,
                confuse_threshold_deg: 10.0,
            },
            OutputShape::Miso,
            3,
        )
        .with_oracle(data.clone());
        let y = Array2::default((ctx.stft.n_bins(), 3));
        // steer directly at the interferer: must return interferer frames
        let theta = data.interferer_azimuth.as_ref().unwrap()[0];
        let out = h.enhance_frame(0, &y.view(), theta, &ctx).unwrap();
        let int_row: Vec<Complex64> = (0..ctx.stft.n_bins())
            .map(|k| data.interferer_ref_stft.as_ref().unwrap()[(0, k)])
            .collect();
        assert_eq!(out.reference(0), int_row);
        // steer at the target: target frame
        h.reset();
        let out = h.enhance_frame(0, &y.view(), data.target_azimuth[0], &ctx).unwrap();
        let tgt_row: Vec<Complex64> =
            (0..ctx.stft.n_bins()).map(|k| data.target_ref_stft[(0, k)]).collect();
        assert_eq!(out.reference(0), tgt_row);
    }

    #[test]
    fn corrupted_oracle_meets_requested_snr() {
        let ctx = ctx();
        let data = oracle_data(&ctx, 200, 23);
        let mut h = EnhancerHandle::new(
            Backend::OracleCorrupted {
                perturb_snr_db: 15.0,
                p_confuse: 0.0,
                confuse_threshold_deg: 10.0,
            },
            OutputShape::Miso,
            5,
        )
        .with_oracle(data.clone());
        let y = Array2::default((ctx.stft.n_bins(), 3));
        let (mut p_sig, mut p_err) = (0.0, 0.0);
        for t in 0..200 {
            let out = h.enhance_frame(t, &y.view(), 1.0, &ctx).unwrap();
            for (k, v) in out.reference(0).iter().enumerate() {
                let s = data.target_ref_stft[(t, k)];
                p_sig += s.norm_sqr();
                p_err += (v - s).norm_sqr();
            }
        }
        let snr = 10.0 * (p_sig / p_err).log10();
        assert!((snr - 15.0).abs() < 0.5, "snr {snr}");
    }

    #[test]
    fn delay_and_sum_reproduces_a_noiseless_source() {
        let ctx = ctx();
        let theta = 2.2;
        let s_row: Vec<Complex64> = (0..ctx.stft.n_bins())
            .map(|k| Complex64::new(0.3 + k as f64 * 0.001, -0.2))
            .collect();
        let y = project_frame(&ctx, &s_row, theta);
        let mut h = EnhancerHandle::new(Backend::DelayAndSum, OutputShape::Miso, 0);
        let out = h.enhance_frame(0, &y.view(), theta, &ctx).unwrap();
        for (k, v) in out.reference(0).iter().enumerate() {
            let rel = (v - s_row[k]).norm() / s_row[k].norm();
            assert!(rel < 1e-6, "bin {k} relative error {rel}");
        }
    }

    #[test]
    fn delay_and_sum_attenuates_off_target_steering() {
        let ctx = ctx();
        let theta = 0.8;
        let s_row: Vec<Complex64> =
            (0..ctx.stft.n_bins()).map(|_| Complex64::new(1.0, 0.0)).collect();
        let y = project_frame(&ctx, &s_row, theta);
        let mut on = EnhancerHandle::new(Backend::DelayAndSum, OutputShape::Miso, 0);
        let mut off = EnhancerHandle::new(Backend::DelayAndSum, OutputShape::Miso, 0);
        let e_on: f64 = on
            .enhance_frame(0, &y.view(), theta, &ctx)
            .unwrap()
            .reference(0)[40..=63]
            .iter()
            .map(|v| v.norm_sqr())
            .sum();
        let e_off: f64 = off
            .enhance_frame(0, &y.view(), theta + std::f64::consts::PI, &ctx)
            .unwrap()
            .reference(0)[40..=63]
            .iter()
            .map(|v| v.norm_sqr())
            .sum();
        assert!(
            e_off < 0.5 * e_on,
            "no attenuation near the aliasing limit: {e_off} vs {e_on}"
        );
    }

    #[test]
    fn mvdr_is_distortionless_and_recovers_a_clean_source() {
        let ctx = ctx();
        // weight constraint w^H d = 1 for a random Hermitian PSD covariance
        let mut rng = derive_rng(30, &[]);
        let a = nalgebra::DMatrix::from_fn(3, 3, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let r = NoiseCovariance { matrix: &a * a.adjoint() + nalgebra::DMatrix::identity(3, 3) };
        let r_inv = loaded_inverse(&r, MVDR_LOADING).unwrap();
        let sv = ctx.array.steering_vector(1.3, 50, 512, 16_000.0).unwrap();
        let w = mvdr_weights(&r_inv, &sv.values);
        let gain: Complex64 = w
            .iter()
            .zip(&sv.values)
            .map(|(wi, di)| wi.conj() * di)
            .sum();
        assert_abs_diff_eq!(gain.re, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(gain.im, 0.0, epsilon = 1e-10);

        // end to end on a noiseless source
        let theta = 4.4;
        let s_row: Vec<Complex64> =
            (0..ctx.stft.n_bins()).map(|k| Complex64::new(0.5, 0.1 * (k % 7) as f64)).collect();
        let y = project_frame(&ctx, &s_row, theta);
        let mut h = EnhancerHandle::new(Backend::Mvdr, OutputShape::Miso, 0);
        let out = h.enhance_frame(0, &y.view(), theta, &ctx).unwrap();
        for (k, v) in out.reference(0).iter().enumerate().skip(1) {
            let rel = (v - s_row[k]).norm() / s_row[k].norm();
            assert!(rel < 1e-3, "bin {k} relative error {rel}");
        }
    }

    #[test]
    fn frames_must_arrive_in_order() {
        let ctx = ctx();
        let mut h = EnhancerHandle::new(Backend::DelayAndSum, OutputShape::Miso, 0);
        let y = Array2::default((ctx.stft.n_bins(), 3));
        h.enhance_frame(0, &y.view(), 0.0, &ctx).unwrap();
        assert!(h.enhance_frame(2, &y.view(), 0.0, &ctx).is_err());
        h.reset();
        assert!(h.enhance_frame(0, &y.view(), 0.0, &ctx).is_ok());
    }

    #[test]
    fn beamformer_mimo_reference_matches_miso() {
        let ctx = ctx();
        let theta = 1.9;
        let s_row: Vec<Complex64> =
            (0..ctx.stft.n_bins()).map(|k| Complex64::new(1.0 / (k + 1) as f64, 0.2)).collect();
        let y = project_frame(&ctx, &s_row, theta);
        for backend in [Backend::DelayAndSum, Backend::Mvdr] {
            let mut a = EnhancerHandle::new(backend.clone(), OutputShape::Miso, 0);
            let mut b = EnhancerHandle::new(backend, OutputShape::Mimo, 0);
            let fa = a.enhance_frame(0, &y.view(), theta, &ctx).unwrap();
            let fb = b.enhance_frame(0, &y.view(), theta, &ctx).unwrap();
            let r = ctx.array.reference_index;
            for (x, z) in fa.reference(r).iter().zip(fb.reference(r).iter()) {
                assert!((x - z).norm() < 1e-12);
            }
        }
    }
}
