//! Per-frame spatial observation models.
//!
//! Narrowband azimuth estimates minimize the linear-phase least-squares IPD
//! error across microphone pairs; the default solver is the closed-form
//! relaxation over the direction cosines (the grid solver is kept for
//! verification and as an option). Broadband aggregation takes circular
//! means, uniform or speech-weighted. Likelihood evaluators for the particle
//! filter cover the complex Watson model on normalized snapshots and the
//! complex Gaussian model with a recursively estimated noise covariance.

use nalgebra::DMatrix;
use ndarray::ArrayView2;
use num_complex::Complex64;

use crate::angles::{circular_mean_weighted, wrap_to_pi, wrap_to_tau};
use crate::array::MicArray;
use crate::error::{Error, Result};
use crate::stft::StftConfig;

/// Aggregated measurements with a normalized resultant below this are
/// treated as uninformative and skipped by the trackers.
pub const RESULTANT_FLOOR: f64 = 0.1;

/// Per-bin validity: `|Y_tk|^2` must exceed this fraction of frame energy.
pub const BIN_ENERGY_FLOOR: f64 = 1e-12;

/// Relative diagonal loading applied before inverting noise covariances.
pub const COVARIANCE_LOADING: f64 = 1e-6;

/// Tally of multiply-accumulate operations in the estimator hot paths.
///
/// Complex multiply-accumulates count as one; the dominant terms are the
/// steering projections of the likelihoods and the per-bin IPD/LS work of
/// the narrowband estimator.
#[derive(Debug, Default, Clone, Copy)]
pub struct MacCounter(pub u64);

impl MacCounter {
    pub fn add(&mut self, n: u64) {
        self.0 += n;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum NarrowbandMethod {
    /// Closed-form least squares over the direction cosines.
    LinearLs,
    /// Brute-force minimization of the wrapped IPD error on an azimuth grid.
    GridSearch { resolution_deg: f64 },
}

impl Default for NarrowbandMethod {
    fn default() -> Self {
        NarrowbandMethod::LinearLs
    }
}

/// Precomputed geometry shared by all per-frame estimators.
#[derive(Debug, Clone)]
pub struct SpatialContext {
    pub array: MicArray,
    pub stft: StftConfig,
    /// Highest aliasing-free bin.
    pub k_alias: usize,
    /// Microphone pairs (m, m') with m < m'.
    pairs: Vec<(usize, usize)>,
    /// Pair delay tau_m - tau_m' = a*cos(theta) + b*sin(theta).
    pair_coeff: Vec<[f64; 2]>,
    /// Rows of the 2 x P pseudo-inverse of the pair coefficient matrix.
    pinv: [Vec<f64>; 2],
    /// Per-mic relative delay coefficients.
    mic_coeff: Vec<[f64; 2]>,
    /// Angular frequency per bin (rad/s).
    omega: Vec<f64>,
}

impl SpatialContext {
    pub fn new(array: MicArray, stft: StftConfig) -> Self {
        let m = array.n_mics();
        let c = array.sound_speed;
        let mut pairs = Vec::new();
        let mut pair_coeff = Vec::new();
        for i in 0..m {
            for j in (i + 1)..m {
                pairs.push((i, j));
                let (pi, pj) = (array.positions[i], array.positions[j]);
                pair_coeff.push([-(pi[0] - pj[0]) / c, -(pi[1] - pj[1]) / c]);
            }
        }
        // pseudo-inverse (A^T A)^{-1} A^T of the P x 2 coefficient matrix
        let (mut aa, mut ab, mut bb) = (0.0, 0.0, 0.0);
        for c in &pair_coeff {
            aa += c[0] * c[0];
            ab += c[0] * c[1];
            bb += c[1] * c[1];
        }
        let det = aa * bb - ab * ab;
        let inv = [[bb / det, -ab / det], [-ab / det, aa / det]];
        let pinv = [
            pair_coeff.iter().map(|c| inv[0][0] * c[0] + inv[0][1] * c[1]).collect(),
            pair_coeff.iter().map(|c| inv[1][0] * c[0] + inv[1][1] * c[1]).collect(),
        ];
        let r = array.reference_index;
        let mic_coeff = (0..m)
            .map(|i| {
                let (pi, pr) = (array.positions[i], array.positions[r]);
                [-(pi[0] - pr[0]) / c, -(pi[1] - pr[1]) / c]
            })
            .collect();
        let omega = (0..=stft.max_bin())
            .map(|k| std::f64::consts::TAU * stft.bin_frequency(k))
            .collect();
        let k_alias = array.aliasing_bin_limit(stft.sample_rate, stft.win_len);
        Self { array, stft, k_alias, pairs, pair_coeff, pinv, mic_coeff, omega }
    }

    pub fn n_mics(&self) -> usize {
        self.array.n_mics()
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// Relative delay of microphone `m` for a source at `azimuth`.
    pub fn mic_delay(&self, m: usize, azimuth: f64) -> f64 {
        let c = self.mic_coeff[m];
        c[0] * azimuth.cos() + c[1] * azimuth.sin()
    }

    /// Per-mic phase steps `exp(+j * d_omega * tau_m)` advancing the
    /// conjugate steering entries from one bin to the next.
    pub fn conj_steering_steps(&self, azimuth: f64) -> Vec<Complex64> {
        let d_omega = std::f64::consts::TAU * self.stft.sample_rate / self.stft.win_len as f64;
        (0..self.n_mics())
            .map(|m| Complex64::from_polar(1.0, d_omega * self.mic_delay(m, azimuth)))
            .collect()
    }

    fn wrapped_ipd_error(&self, psi: &[f64], omega: f64, azimuth: f64) -> f64 {
        let (cos_t, sin_t) = (azimuth.cos(), azimuth.sin());
        let mut err = 0.0;
        for (p, c) in self.pair_coeff.iter().enumerate() {
            let model = -omega * (c[0] * cos_t + c[1] * sin_t);
            let d = wrap_to_pi(psi[p] - model);
            err += d * d;
        }
        err
    }
}

/// Single-bin azimuth estimate from one STFT snapshot.
///
/// Returns `Ok(None)` for bin 0 (no phase information) or a silent bin;
/// bins above the aliasing limit are a parameter error.
pub fn narrowband_doa(
    y_bin: &[Complex64],
    ctx: &SpatialContext,
    bin: usize,
    method: NarrowbandMethod,
    counter: &mut MacCounter,
) -> Result<Option<f64>> {
    if bin > ctx.k_alias {
        return Err(Error::parameter(format!(
            "bin {bin} above the aliasing limit {}",
            ctx.k_alias
        )));
    }
    if bin == 0 {
        return Ok(None);
    }
    if y_bin.iter().map(|v| v.norm_sqr()).sum::<f64>() <= 0.0 {
        return Ok(None);
    }
    let omega = ctx.omega[bin];
    // measured wrapped IPDs per pair
    let psi: Vec<f64> = ctx
        .pairs
        .iter()
        .map(|&(i, j)| (y_bin[i] * y_bin[j].conj()).arg())
        .collect();
    counter.add(ctx.n_pairs() as u64);

    let est = match method {
        NarrowbandMethod::LinearLs => {
            // psi ~ -omega * (a*w1 + b*w2) with w the direction cosines
            let mut w = [0.0f64; 2];
            for (p, &v) in psi.iter().enumerate() {
                w[0] += ctx.pinv[0][p] * v;
                w[1] += ctx.pinv[1][p] * v;
            }
            counter.add(2 * ctx.n_pairs() as u64 + 2);
            // the -1/omega scale flips the quadrant, the magnitude cancels
            wrap_to_tau((-w[1]).atan2(-w[0]))
        }
        NarrowbandMethod::GridSearch { resolution_deg } => {
            let n_steps = (360.0 / resolution_deg).round() as usize;
            let mut best = (0.0f64, f64::INFINITY);
            for g in 0..n_steps {
                let cand = std::f64::consts::TAU * g as f64 / n_steps as f64;
                let err = ctx.wrapped_ipd_error(&psi, omega, cand);
                if err < best.1 {
                    best = (cand, err);
                }
            }
            counter.add((n_steps * ctx.n_pairs()) as u64);
            best.0
        }
    };
    Ok(Some(est))
}

/// Narrowband estimates for one frame, indexed by bin up to the aliasing
/// limit. `None` marks invalid bins (DC, silent, above the limit).
#[derive(Debug, Clone)]
pub struct NarrowbandFrame {
    pub phi: Vec<Option<f64>>,
}

pub fn narrowband_frame(
    y_frame: &ArrayView2<'_, Complex64>,
    ctx: &SpatialContext,
    method: NarrowbandMethod,
    counter: &mut MacCounter,
) -> NarrowbandFrame {
    let frame_energy: f64 = y_frame.iter().map(|v| v.norm_sqr()).sum();
    let floor = BIN_ENERGY_FLOOR * frame_energy;
    let mut phi = vec![None; ctx.k_alias + 1];
    if frame_energy <= 0.0 {
        return NarrowbandFrame { phi };
    }
    let m = ctx.n_mics();
    let mut y_bin = vec![Complex64::default(); m];
    for (k, slot) in phi.iter_mut().enumerate().skip(1) {
        for ch in 0..m {
            y_bin[ch] = y_frame[(k, ch)];
        }
        if y_bin.iter().map(|v| v.norm_sqr()).sum::<f64>() <= floor {
            continue;
        }
        *slot = narrowband_doa(&y_bin, ctx, k, method, counter).expect("bin within limit");
    }
    NarrowbandFrame { phi }
}

/// Broadband azimuth: circular mean of narrowband estimates.
#[derive(Debug, Clone, Copy)]
pub struct AggregateDoa {
    pub angle: f64,
    /// Normalized resultant length in [0, 1].
    pub resultant: f64,
    pub n_bins: usize,
}

impl AggregateDoa {
    /// Whether the resultant is long enough to trust the angle.
    pub fn is_confident(&self) -> bool {
        self.resultant >= RESULTANT_FLOOR
    }
}

pub fn aggregate_uniform(
    frame: &NarrowbandFrame,
    counter: &mut MacCounter,
) -> Option<AggregateDoa> {
    let angles: Vec<(f64, f64)> =
        frame.phi.iter().flatten().map(|&a| (a, 1.0)).collect();
    counter.add(2 * angles.len() as u64);
    let n_bins = angles.len();
    circular_mean_weighted(angles).map(|(angle, resultant)| AggregateDoa {
        angle,
        resultant,
        n_bins,
    })
}

/// Speech-weighted aggregation with per-bin weights `g_k` (typically the
/// enhanced magnitude squared `|S_tk|^2`), indexed by bin.
pub fn aggregate_weighted(
    frame: &NarrowbandFrame,
    weights: &[f64],
    counter: &mut MacCounter,
) -> Option<AggregateDoa> {
    let angles: Vec<(f64, f64)> = frame
        .phi
        .iter()
        .enumerate()
        .filter_map(|(k, phi)| {
            let w = *weights.get(k)?;
            phi.map(|a| (a, w)).filter(|&(_, w)| w > 0.0)
        })
        .collect();
    counter.add(2 * angles.len() as u64);
    let n_bins = angles.len();
    circular_mean_weighted(angles).map(|(angle, resultant)| AggregateDoa {
        angle,
        resultant,
        n_bins,
    })
}

/// Complex-Watson log-likelihood of a frame for one azimuth hypothesis:
/// `kappa * sum_k |<d_k(theta)/sqrt(M), Y_k/|Y_k|>|^2`, constants dropped,
/// invariant to global phase. All bins up to K/2 contribute.
pub fn watson_loglik(
    y_frame: &ArrayView2<'_, Complex64>,
    azimuth: f64,
    ctx: &SpatialContext,
    kappa: f64,
    counter: &mut MacCounter,
) -> f64 {
    let m = ctx.n_mics();
    let steps = ctx.conj_steering_steps(azimuth);
    let mut conj_d = vec![Complex64::new(1.0, 0.0); m];
    let mut acc = 0.0;
    let mut bins = 0u64;
    let max_bin = ctx.stft.max_bin();
    for k in 1..=max_bin {
        for ch in 0..m {
            conj_d[ch] *= steps[ch];
        }
        let mut z = Complex64::default();
        let mut norm_sqr = 0.0;
        for ch in 0..m {
            let y = y_frame[(k, ch)];
            z += conj_d[ch] * y;
            norm_sqr += y.norm_sqr();
        }
        if norm_sqr > 0.0 {
            acc += z.norm_sqr() / norm_sqr;
            bins += 1;
        }
    }
    counter.add(bins * m as u64);
    kappa * acc / m as f64
}

/// Proper complex-Gaussian log-likelihood with residuals
/// `v_k = Y_k - d_k(theta) * S_k` against a broadband noise covariance:
/// `-sum_k v_k^H R^{-1} v_k`, theta-independent constants dropped.
pub fn gaussian_loglik(
    y_frame: &ArrayView2<'_, Complex64>,
    s_ref: &[Complex64],
    azimuth: f64,
    r_inv: &DMatrix<Complex64>,
    ctx: &SpatialContext,
    counter: &mut MacCounter,
) -> f64 {
    let m = ctx.n_mics();
    let steps = ctx.conj_steering_steps(azimuth);
    let mut conj_d = vec![Complex64::new(1.0, 0.0); m];
    let mut v = vec![Complex64::default(); m];
    let mut acc = 0.0;
    let max_bin = ctx.stft.max_bin();
    for k in 1..=max_bin {
        for ch in 0..m {
            conj_d[ch] *= steps[ch];
        }
        let s = s_ref[k];
        for ch in 0..m {
            // d = conj(conj_d)
            v[ch] = y_frame[(k, ch)] - conj_d[ch].conj() * s;
        }
        // Hermitian quadratic form
        let mut q = 0.0;
        for i in 0..m {
            q += r_inv[(i, i)].re * v[i].norm_sqr();
            for j in (i + 1)..m {
                q += 2.0 * (v[i].conj() * r_inv[(i, j)] * v[j]).re;
            }
        }
        acc -= q;
    }
    counter.add((max_bin * m) as u64);
    acc
}

/// Broadband spatial noise covariance (M x M Hermitian PSD).
#[derive(Debug, Clone)]
pub struct NoiseCovariance {
    pub matrix: DMatrix<Complex64>,
}

impl NoiseCovariance {
    pub fn identity(m: usize, scale: f64) -> Self {
        Self { matrix: DMatrix::identity(m, m) * Complex64::new(scale, 0.0) }
    }

    /// Inverse after relative diagonal loading.
    pub fn inverse_loaded(&self) -> Result<DMatrix<Complex64>> {
        let m = self.matrix.nrows();
        let trace: f64 = (0..m).map(|i| self.matrix[(i, i)].re).sum();
        let loading = COVARIANCE_LOADING * (trace / m as f64).max(1e-300);
        let loaded = &self.matrix + DMatrix::identity(m, m) * Complex64::new(loading, 0.0);
        loaded
            .try_inverse()
            .ok_or_else(|| Error::numerical("noise covariance is singular"))
    }

    /// Largest Hermitian asymmetry and smallest eigenvalue (for checks).
    pub fn hermitian_defect(&self) -> f64 {
        let m = self.matrix.nrows();
        let mut worst = 0.0f64;
        for i in 0..m {
            for j in 0..m {
                worst = worst.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.matrix
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b))
    }
}

/// Exponential-moving-average covariance update from enhancement residuals,
/// pooled over bins: `R_t = (1 - alpha) * mean_k(V_k V_k^H) + alpha * R_prev`
/// with `V_k = Y_k - d_k(theta_hat) * S_hat_k`, Hermitian-symmetrized.
pub fn ema_noise_cov(
    prev: &NoiseCovariance,
    y_frame: &ArrayView2<'_, Complex64>,
    s_hat_ref: &[Complex64],
    theta_hat: f64,
    alpha_ema: f64,
    ctx: &SpatialContext,
    counter: &mut MacCounter,
) -> Result<NoiseCovariance> {
    if !(0.0..1.0).contains(&alpha_ema) {
        return Err(Error::parameter("alpha_ema must be in [0, 1)"));
    }
    let m = ctx.n_mics();
    let steps = ctx.conj_steering_steps(theta_hat);
    let mut conj_d = vec![Complex64::new(1.0, 0.0); m];
    let mut v = vec![Complex64::default(); m];
    let mut pooled = DMatrix::<Complex64>::zeros(m, m);
    let max_bin = ctx.stft.max_bin();
    for k in 1..=max_bin {
        for ch in 0..m {
            conj_d[ch] *= steps[ch];
        }
        let s = s_hat_ref[k];
        for ch in 0..m {
            v[ch] = y_frame[(k, ch)] - conj_d[ch].conj() * s;
        }
        for i in 0..m {
            for j in 0..m {
                pooled[(i, j)] += v[i] * v[j].conj();
            }
        }
    }
    counter.add((max_bin * (m + m * m)) as u64);
    pooled /= Complex64::new(max_bin as f64, 0.0);
    let mut r = pooled * Complex64::new(1.0 - alpha_ema, 0.0)
        + &prev.matrix * Complex64::new(alpha_ema, 0.0);
    // enforce Hermitian symmetry against rounding
    let rh = r.adjoint();
    r = (r + rh) * Complex64::new(0.5, 0.0);
    Ok(NoiseCovariance { matrix: r })
}
