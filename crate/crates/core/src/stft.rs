//! Frame-causal STFT analysis and weighted overlap-add synthesis.
//!
//! Analysis and synthesis share one square-root Hann window; at 50 % overlap
//! the squared-window sum is exactly one, so interior samples reconstruct
//! perfectly. Frame `t` covers samples `[t*hop, t*hop + win_len)`; the final
//! frames zero-pad past the signal end.

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multichannel waveform, shape `(channels, samples)`.
pub type Audio = Array2<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub sample_rate: f64,
    pub win_len: usize,
    pub hop: usize,
}

impl StftConfig {
    /// 32 ms window, 16 ms hop at 16 kHz.
    pub fn default_16k() -> Self {
        Self { sample_rate: 16_000.0, win_len: 512, hop: 256 }
    }

    pub fn n_bins(&self) -> usize {
        self.win_len / 2 + 1
    }

    /// Nyquist bin index K/2.
    pub fn max_bin(&self) -> usize {
        self.win_len / 2
    }

    pub fn frame_duration(&self) -> f64 {
        self.hop as f64 / self.sample_rate
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        n_samples.div_ceil(self.hop)
    }

    pub fn bin_frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate / self.win_len as f64
    }

    /// Square-root Hann analysis/synthesis window.
    pub fn window(&self) -> Vec<f64> {
        let n = self.win_len as f64;
        (0..self.win_len)
            .map(|i| (0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n).cos()).sqrt())
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.win_len == 0 || self.hop == 0 || self.win_len % 2 != 0 {
            return Err(Error::parameter("window length must be even and positive"));
        }
        if self.hop * 2 != self.win_len {
            return Err(Error::parameter("hop must be half the window length"));
        }
        Ok(())
    }
}

/// Multichannel complex spectrogram, shape `(frames, bins, channels)`.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub data: Array3<Complex64>,
    pub config: StftConfig,
    pub n_samples: usize,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn n_bins(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn n_channels(&self) -> usize {
        self.data.shape()[2]
    }

    /// Copy frame `t` into a `(bins, channels)` array.
    pub fn frame(&self, t: usize) -> Array2<Complex64> {
        self.data.index_axis(ndarray::Axis(0), t).to_owned()
    }

    /// Keep only the first `n_frames` frames (prefix of the stream).
    pub fn truncated(&self, n_frames: usize) -> Spectrogram {
        let n = n_frames.min(self.n_frames());
        Spectrogram {
            data: self.data.slice(ndarray::s![..n, .., ..]).to_owned(),
            config: self.config.clone(),
            n_samples: (n * self.config.hop).min(self.n_samples),
        }
    }
}

/// Forward transform. All channels must be at least one window long.
pub fn analyze(audio: &Audio, config: &StftConfig) -> Result<Spectrogram> {
    config.validate()?;
    let (n_channels, n_samples) = (audio.shape()[0], audio.shape()[1]);
    if n_channels == 0 || n_samples < config.win_len {
        return Err(Error::parameter(format!(
            "audio must have at least win_len = {} samples per channel",
            config.win_len
        )));
    }
    let win = config.window();
    let n_frames = config.n_frames(n_samples);
    let n_bins = config.n_bins();
    let fft = FftPlanner::new().plan_fft_forward(config.win_len);
    let mut buf = vec![Complex64::default(); config.win_len];
    let mut data = Array3::default((n_frames, n_bins, n_channels));

    for ch in 0..n_channels {
        let samples = audio.row(ch);
        for t in 0..n_frames {
            let start = t * config.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                let s = start + i;
                let x = if s < n_samples { samples[s] } else { 0.0 };
                *b = Complex64::new(x * win[i], 0.0);
            }
            fft.process(&mut buf);
            for k in 0..n_bins {
                data[(t, k, ch)] = buf[k];
            }
        }
    }
    Ok(Spectrogram { data, config: config.clone(), n_samples })
}

/// Inverse transform by weighted overlap-add; exact on interior samples.
pub fn synthesize(spec: &Spectrogram) -> Audio {
    let config = &spec.config;
    let (n_frames, n_bins, n_channels) =
        (spec.n_frames(), spec.n_bins(), spec.n_channels());
    let win = config.window();
    let fft = FftPlanner::new().plan_fft_inverse(config.win_len);
    let scale = 1.0 / config.win_len as f64;
    let ola_len = (n_frames.saturating_sub(1)) * config.hop + config.win_len;
    let mut out = Array2::zeros((n_channels, spec.n_samples));
    let mut buf = vec![Complex64::default(); config.win_len];
    let mut ola = vec![0.0f64; ola_len];

    for ch in 0..n_channels {
        ola.iter_mut().for_each(|v| *v = 0.0);
        for t in 0..n_frames {
            reconstruct_full_spectrum(&mut buf, spec, t, ch, n_bins);
            fft.process(&mut buf);
            let start = t * config.hop;
            for i in 0..config.win_len {
                ola[start + i] += buf[i].re * scale * win[i];
            }
        }
        for s in 0..spec.n_samples.min(ola_len) {
            out[(ch, s)] = ola[s];
        }
    }
    out
}

fn reconstruct_full_spectrum(
    buf: &mut [Complex64],
    spec: &Spectrogram,
    t: usize,
    ch: usize,
    n_bins: usize,
) {
    let n = buf.len();
    for k in 0..n_bins {
        buf[k] = spec.data[(t, k, ch)];
    }
    for k in n_bins..n {
        buf[k] = spec.data[(t, n - k, ch)].conj();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::Rng;

    fn random_audio(channels: usize, samples: usize, seed: u64) -> Audio {
        let mut rng = crate::rng::derive_rng(seed, &[0]);
        Array2::from_shape_fn((channels, samples), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn zero_in_zero_out() {
        let cfg = StftConfig::default_16k();
        let audio = Array2::zeros((2, 4096));
        let spec = analyze(&audio, &cfg).unwrap();
        assert!(spec.data.iter().all(|v| v.norm() == 0.0));
        let back = synthesize(&spec);
        assert!(back.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn frame_count_and_shape() {
        let cfg = StftConfig::default_16k();
        let audio = random_audio(3, 16_000, 1);
        let spec = analyze(&audio, &cfg).unwrap();
        assert_eq!(spec.n_frames(), 16_000usize.div_ceil(256));
        assert_eq!(spec.n_bins(), 257);
        assert_eq!(spec.n_channels(), 3);
    }

    /// Naive O(N^2) DFT of one windowed frame: the independent oracle for
    /// the sinusoid-concentration check.
    fn naive_frame_dft(frame: &[f64], win: &[f64]) -> Vec<Complex64> {
        let n = frame.len();
        (0..=n / 2)
            .map(|k| {
                (0..n)
                    .map(|i| {
                        let ph = -std::f64::consts::TAU * (k * i) as f64 / n as f64;
                        Complex64::from_polar(frame[i] * win[i], ph)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn exact_bin_sinusoid_concentrates_near_its_bin() {
        let cfg = StftConfig::default_16k();
        let k0 = 40usize;
        let f = cfg.bin_frequency(k0);
        let n = 2048;
        let audio = Array2::from_shape_fn((1, n), |(_, s)| {
            (std::f64::consts::TAU * f * s as f64 / cfg.sample_rate).cos()
        });

        // oracle: closed-form DFT of the windowed sinusoid, first frame
        let win = cfg.window();
        let frame: Vec<f64> = (0..cfg.win_len).map(|i| audio[(0, i)]).collect();
        let oracle = naive_frame_dft(&frame, &win);
        let oracle_energy: Vec<f64> = oracle.iter().map(|v| v.norm_sqr()).collect();
        let total: f64 = oracle_energy.iter().sum();
        let center = oracle_energy[k0] / total;
        let neighborhood = oracle_energy[k0 - 1..=k0 + 1].iter().sum::<f64>() / total;
        // sqrt-Hann leaks into the adjacent bins: ~81 % at the bin itself,
        // >99 % once they are included
        assert!((center - 0.81).abs() < 0.01, "center fraction {center}");
        assert!(neighborhood > 0.99, "3-bin fraction {neighborhood}");

        // implementation agrees with the oracle frame
        let spec = analyze(&audio, &cfg).unwrap();
        for k in 0..spec.n_bins() {
            assert_abs_diff_eq!(spec.data[(0, k, 0)].re, oracle[k].re, epsilon = 1e-6);
            assert_abs_diff_eq!(spec.data[(0, k, 0)].im, oracle[k].im, epsilon = 1e-6);
        }
        let impl_energy: Vec<f64> =
            (0..spec.n_bins()).map(|k| spec.data[(0, k, 0)].norm_sqr()).collect();
        let impl_total: f64 = impl_energy.iter().sum();
        assert!(impl_energy[k0 - 1..=k0 + 1].iter().sum::<f64>() / impl_total > 0.99);
        let argmax = impl_energy
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(argmax, k0);
    }

    #[test]
    fn round_trip_reconstructs_interior() {
        let cfg = StftConfig::default_16k();
        for seed in 0..3u64 {
            let audio = random_audio(2, 8192, 10 + seed);
            let spec = analyze(&audio, &cfg).unwrap();
            let back = synthesize(&spec);
            assert_eq!(back.shape(), audio.shape());
            let peak = audio.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
            let mut worst = 0.0f64;
            for ch in 0..2 {
                for s in cfg.hop..audio.shape()[1] {
                    worst = worst.max((audio[(ch, s)] - back[(ch, s)]).abs());
                }
            }
            assert!(worst / peak < 1e-6, "relative error {}", worst / peak);
        }
    }

    #[test]
    fn linearity() {
        let cfg = StftConfig::default_16k();
        let x = random_audio(1, 4096, 21);
        let y = random_audio(1, 4096, 22);
        let (a, b) = (0.7, -1.3);
        let combined = analyze(&(a * &x + b * &y), &cfg).unwrap();
        let sx = analyze(&x, &cfg).unwrap();
        let sy = analyze(&y, &cfg).unwrap();
        for (i, v) in combined.data.iter().enumerate() {
            let expect = a * sx.data.as_slice().unwrap()[i] + b * sy.data.as_slice().unwrap()[i];
            assert!((v - expect).norm() < 1e-9);
        }
    }

    #[test]
    fn frame_causality() {
        let cfg = StftConfig::default_16k();
        let audio = random_audio(1, 4096, 30);
        let spec = analyze(&audio, &cfg).unwrap();
        // perturb everything from sample t*hop + win_len on: frames <= t unchanged
        let t = 5;
        let boundary = t * cfg.hop + cfg.win_len;
        let mut perturbed = audio.clone();
        for s in boundary..perturbed.shape()[1] {
            perturbed[(0, s)] += 10.0;
        }
        let spec2 = analyze(&perturbed, &cfg).unwrap();
        for ft in 0..=t {
            for k in 0..spec.n_bins() {
                assert_eq!(spec.data[(ft, k, 0)], spec2.data[(ft, k, 0)]);
            }
        }
    }

    #[test]
    fn single_frame_synthesis_length() {
        let cfg = StftConfig::default_16k();
        let data = Array3::from_elem((1, cfg.n_bins(), 1), Complex64::new(1.0, 0.0));
        let spec = Spectrogram { data, config: cfg.clone(), n_samples: cfg.win_len };
        let out = synthesize(&spec);
        assert_eq!(out.shape(), &[1, cfg.win_len]);
    }

    #[test]
    fn short_audio_rejected() {
        let cfg = StftConfig::default_16k();
        let audio = Array2::zeros((1, 100));
        assert!(analyze(&audio, &cfg).is_err());
    }
}
