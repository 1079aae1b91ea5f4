//! Planar microphone array geometry and far-field steering vectors.
//!
//! Sources are assumed to lie in the array plane (azimuth-only model). The
//! steering vector collects per-microphone phase delays relative to a
//! reference microphone: `d_k(theta)[m] = exp(-j * w_k * tau_m(theta))` with
//! `tau_m = -(u(theta) . (p_m - p_ref)) / c` and `u(theta)` the unit vector
//! pointing from the array toward the source.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SOUND_SPEED: f64 = 343.0;

/// Planar microphone array. Coordinates are meters relative to the array
/// center; all microphones share one horizontal plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicArray {
    pub positions: Vec<[f64; 2]>,
    pub reference_index: usize,
    pub sound_speed: f64,
}

/// Per-bin steering vector for one azimuth hypothesis.
#[derive(Debug, Clone)]
pub struct SteeringVector {
    pub values: Vec<Complex64>,
    pub bin_index: usize,
    pub azimuth: f64,
}

impl MicArray {
    pub fn new(positions: Vec<[f64; 2]>, reference_index: usize, sound_speed: f64) -> Result<Self> {
        if positions.len() < 2 {
            return Err(Error::parameter("array needs at least 2 microphones"));
        }
        if reference_index >= positions.len() {
            return Err(Error::parameter(format!(
                "reference index {} out of range for {} microphones",
                reference_index,
                positions.len()
            )));
        }
        if sound_speed <= 0.0 {
            return Err(Error::parameter("sound speed must be positive"));
        }
        Ok(Self { positions, reference_index, sound_speed })
    }

    /// Uniform circular array with microphone 0 placed at azimuth 0.
    pub fn circular(n_mics: usize, diameter: f64) -> Result<Self> {
        let radius = diameter / 2.0;
        let positions = (0..n_mics)
            .map(|m| {
                let phi = std::f64::consts::TAU * m as f64 / n_mics as f64;
                [radius * phi.cos(), radius * phi.sin()]
            })
            .collect();
        Self::new(positions, 0, SOUND_SPEED)
    }

    /// The 3-microphone, 10 cm circular array used throughout.
    pub fn default_three_mic() -> Self {
        Self::circular(3, 0.10).expect("static geometry")
    }

    pub fn n_mics(&self) -> usize {
        self.positions.len()
    }

    /// Far-field delay of microphone `m` relative to the reference, in
    /// seconds, for a source at `azimuth`.
    pub fn relative_delay(&self, mic: usize, azimuth: f64) -> f64 {
        let p = self.positions[mic];
        let r = self.positions[self.reference_index];
        let (ux, uy) = (azimuth.cos(), azimuth.sin());
        -((p[0] - r[0]) * ux + (p[1] - r[1]) * uy) / self.sound_speed
    }

    pub fn steering_vector(
        &self,
        azimuth: f64,
        bin: usize,
        fft_size: usize,
        sample_rate: f64,
    ) -> Result<SteeringVector> {
        if bin > fft_size / 2 {
            return Err(Error::parameter(format!(
                "bin {bin} above Nyquist bin {}",
                fft_size / 2
            )));
        }
        let omega = std::f64::consts::TAU * bin as f64 * sample_rate / fft_size as f64;
        let values = (0..self.n_mics())
            .map(|m| Complex64::from_polar(1.0, -omega * self.relative_delay(m, azimuth)))
            .collect();
        Ok(SteeringVector { values, bin_index: bin, azimuth })
    }

    /// Maximum inter-microphone distance.
    pub fn max_spacing(&self) -> f64 {
        let mut d_max = 0.0f64;
        for (i, a) in self.positions.iter().enumerate() {
            for b in &self.positions[i + 1..] {
                let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                d_max = d_max.max(d);
            }
        }
        d_max
    }

    /// Largest bin whose center frequency stays at or below the spatial
    /// aliasing limit `c / (2 * d_max)`, clamped to the Nyquist bin.
    pub fn aliasing_bin_limit(&self, sample_rate: f64, fft_size: usize) -> usize {
        let nyquist_bin = fft_size / 2;
        let d_max = self.max_spacing();
        if d_max <= 0.0 {
            return nyquist_bin;
        }
        let f_limit = self.sound_speed / (2.0 * d_max);
        let bin_width = sample_rate / fft_size as f64;
        ((f_limit / bin_width).floor() as usize).min(nyquist_bin)
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let raw: ArrayFile =
            toml::from_str(&text).map_err(|e| Error::Config(format!("array config: {e}")))?;
        Self::new(
            raw.positions,
            raw.reference_index,
            raw.sound_speed.unwrap_or(SOUND_SPEED),
        )
    }

    pub fn to_toml_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let raw = ArrayFile {
            positions: self.positions.clone(),
            reference_index: self.reference_index,
            sound_speed: Some(self.sound_speed),
        };
        let text = toml::to_string_pretty(&raw)
            .map_err(|e| Error::Config(format!("array config: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ArrayFile {
    positions: Vec<[f64; 2]>,
    reference_index: usize,
    sound_speed: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::TAU;

    const FS: f64 = 16_000.0;
    const FFT: usize = 512;

    #[test]
    fn zero_frequency_has_zero_phase() {
        let array = MicArray::default_three_mic();
        for az in [0.0, 0.7, 2.9, 5.5] {
            let sv = array.steering_vector(az, 0, FFT, FS).unwrap();
            for v in &sv.values {
                assert_abs_diff_eq!(v.re, 1.0, epsilon = 1e-15);
                assert_abs_diff_eq!(v.im, 0.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn reference_entry_is_unity() {
        let array = MicArray::default_three_mic();
        for bin in [1, 17, 63, 200, 256] {
            for i in 0..36 {
                let az = TAU * i as f64 / 36.0;
                let sv = array.steering_vector(az, bin, FFT, FS).unwrap();
                let r = sv.values[array.reference_index];
                assert_abs_diff_eq!((r - Complex64::new(1.0, 0.0)).norm(), 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn unit_modulus_per_element() {
        let array = MicArray::default_three_mic();
        for bin in [1, 50, 256] {
            for i in 0..24 {
                let az = TAU * i as f64 / 24.0;
                let sv = array.steering_vector(az, bin, FFT, FS).unwrap();
                for v in &sv.values {
                    assert_abs_diff_eq!(v.norm(), 1.0, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn default_array_aliasing_limit_matches_expected_bin() {
        let array = MicArray::default_three_mic();
        // inter-mic spacing 0.10*sin(60 deg) = 0.0866 m, limit ~1980 Hz
        let spacing = array.max_spacing();
        assert_abs_diff_eq!(spacing, 0.10 * (60.0f64).to_radians().sin(), epsilon = 1e-12);
        let f_limit = array.sound_speed / (2.0 * spacing);
        assert!((f_limit - 1980.4).abs() < 0.5, "limit {f_limit}");
        assert_eq!(array.aliasing_bin_limit(FS, FFT), 63);
    }

    #[test]
    fn aliasing_limit_clamps_and_scales() {
        // degenerate tight pair: limit beyond Nyquist, clamp to fft/2
        let tiny = MicArray::new(vec![[0.0, 0.0], [1e-6, 0.0]], 0, SOUND_SPEED).unwrap();
        assert_eq!(tiny.aliasing_bin_limit(FS, FFT), FFT / 2);
        // doubling the FFT size doubles the bin limit (same physical frequency)
        let array = MicArray::default_three_mic();
        let k1 = array.aliasing_bin_limit(FS, FFT);
        let k2 = array.aliasing_bin_limit(FS, 2 * FFT);
        assert_eq!(k2, 2 * k1);
    }

    #[test]
    fn steering_continuity_in_azimuth() {
        let array = MicArray::default_three_mic();
        let eps = 1e-6;
        for bin in [1, 63, 256] {
            for i in 0..36 {
                let az = TAU * i as f64 / 36.0;
                let a = array.steering_vector(az, bin, FFT, FS).unwrap();
                let b = array.steering_vector(az + eps, bin, FFT, FS).unwrap();
                let dist: f64 = a
                    .values
                    .iter()
                    .zip(&b.values)
                    .map(|(x, y)| (x - y).norm_sqr())
                    .sum::<f64>()
                    .sqrt();
                assert!(dist < 1e-4, "bin {bin} az {az}: {dist}");
            }
        }
    }

    #[test]
    fn elementwise_conjugate_product_is_one() {
        let array = MicArray::default_three_mic();
        let sv = array.steering_vector(1.1, 40, FFT, FS).unwrap();
        for v in &sv.values {
            let p = v * v.conj();
            assert_abs_diff_eq!(p.re, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(p.im, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rotation_by_array_symmetry_permutes_channels() {
        // rotating the symmetric 3-mic array and the azimuth by 120 deg
        // relabels the channels: d(theta + 120)[m] = d(theta)[m-1 mod 3]
        let array = MicArray::default_three_mic();
        let third = TAU / 3.0;
        for bin in [5, 40, 63] {
            for i in 0..12 {
                let az = TAU * i as f64 / 12.0;
                let a = array.steering_vector(az, bin, FFT, FS).unwrap();
                let b = array.steering_vector(az + third, bin, FFT, FS).unwrap();
                // mic m at azimuth+120 sees what mic (m+2)%3 saw at azimuth,
                // relative to the rotated reference (mic 2's old delay).
                let ref_shift = a.values[2].conj();
                for m in 0..3 {
                    let expect = a.values[(m + 2) % 3] * ref_shift;
                    assert_abs_diff_eq!((b.values[m] - expect).norm(), 0.0, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn bin_out_of_range_rejected() {
        let array = MicArray::default_three_mic();
        assert!(array.steering_vector(0.0, FFT / 2 + 1, FFT, FS).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let dir = std::env::temp_dir().join("doatrack_array_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("array.toml");
        let array = MicArray::default_three_mic();
        array.to_toml_file(&path).unwrap();
        let loaded = MicArray::from_toml_file(&path).unwrap();
        assert_eq!(array, loaded);
    }

    #[test]
    fn invalid_geometry_rejected() {
        assert!(MicArray::new(vec![[0.0, 0.0]], 0, SOUND_SPEED).is_err());
        assert!(MicArray::new(vec![[0.0, 0.0], [0.1, 0.0]], 2, SOUND_SPEED).is_err());
    }
}
