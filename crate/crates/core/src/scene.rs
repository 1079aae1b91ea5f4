//! Free-field multichannel scene synthesis.
//!
//! Moving sources are rendered with time-varying fractional delays that
//! realize exactly the far-field inter-channel structure of the steering
//! vectors, plus a 1/distance amplitude law. Diffuse noise is a
//! superposition of independent white Gaussian plane waves. Mixtures are
//! SNR-controlled at the reference microphone and bundled with their
//! ground-truth components.

use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::array::MicArray;
use crate::error::{Error, Result};
use crate::motion::{generate_trajectory, RoomSpec, SfmParams, Trajectory};
use crate::rng::derive_rng;
use crate::stft::{Audio, StftConfig};
use crate::wav::{read_wav, write_wav, WavFormat};

/// Amplitude floor: sources closer than this to the array center are not
/// boosted further (matches the array clearance of the motion model).
pub const DISTANCE_FLOOR: f64 = 0.5;

const SINC_HALF_TAPS: i64 = 16;

/// Windowed-sinc fractional-delay kernel (32 taps).
fn sinc_kernel(x: f64) -> f64 {
    if x.abs() >= SINC_HALF_TAPS as f64 {
        return 0.0;
    }
    let s = if x.abs() < 1e-12 {
        1.0
    } else {
        (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
    };
    s * (0.5 + 0.5 * (std::f64::consts::PI * x / SINC_HALF_TAPS as f64).cos())
}

fn interp_sample(signal: &[f64], q: f64) -> f64 {
    let n0 = q.floor() as i64;
    let mut acc = 0.0;
    for i in (n0 - SINC_HALF_TAPS + 1)..=(n0 + SINC_HALF_TAPS) {
        if i < 0 || i as usize >= signal.len() {
            continue;
        }
        acc += signal[i as usize] * sinc_kernel(q - i as f64);
    }
    acc
}

/// Render a dry mono source along a trajectory into the array channels.
///
/// Channel `m` receives the dry signal delayed by the bulk propagation time
/// to the array center plus the far-field relative delay of microphone `m`,
/// scaled by `1/max(distance, 0.5 m)` equally across channels.
pub fn spatialize(
    dry: &[f64],
    trajectory: &Trajectory,
    array: &MicArray,
    array_center: &[f64; 2],
    sample_rate: f64,
) -> Result<Audio> {
    let n = dry.len();
    let hop = trajectory.frame_hop;
    if (trajectory.len() as f64) * hop * sample_rate < n as f64 {
        return Err(Error::parameter(
            "trajectory does not cover the audio duration",
        ));
    }
    let m = array.n_mics();
    let mut out = Array2::zeros((m, n));
    for s in 0..n {
        let t = s as f64 / sample_rate;
        let p = trajectory.position_at_time(t);
        let (dx, dy) = (p[0] - array_center[0], p[1] - array_center[1]);
        let dist = (dx * dx + dy * dy).sqrt();
        let azimuth = dy.atan2(dx);
        let gain = 1.0 / dist.max(DISTANCE_FLOOR);
        let bulk = dist / array.sound_speed;
        for ch in 0..m {
            let delay = bulk + array.relative_delay(ch, azimuth);
            let q = s as f64 - delay * sample_rate;
            out[(ch, s)] = gain * interp_sample(dry, q);
        }
    }
    Ok(out)
}

/// Spatially diffuse, spectrally white Gaussian noise: `n_waves` independent
/// plane waves from uniform azimuths, each rendered with its far-field
/// delays, normalized to unit power per channel.
///
/// Constant delays are applied as spectral phase ramps, so each wave is
/// synthesized directly in the frequency domain.
pub fn diffuse_noise(
    duration: f64,
    array: &MicArray,
    sample_rate: f64,
    seed: u64,
    n_waves: usize,
) -> Result<Audio> {
    if duration <= 0.0 {
        return Err(Error::parameter("duration must be positive"));
    }
    let n = (duration * sample_rate).round() as usize;
    let m = array.n_mics();
    let n_half = n / 2;
    let mut rng = derive_rng(seed, &[0xd1f ^ 0]);
    let mut spectra = vec![vec![Complex64::default(); n]; m];

    for _ in 0..n_waves {
        let azimuth = rng.gen_range(0.0..std::f64::consts::TAU);
        let delays: Vec<f64> = (0..m).map(|ch| array.relative_delay(ch, azimuth)).collect();
        for k in 1..n_half {
            let g = Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            let f = k as f64 * sample_rate / n as f64;
            for ch in 0..m {
                let phase = -std::f64::consts::TAU * f * delays[ch];
                spectra[ch][k] += g * Complex64::from_polar(1.0, phase);
            }
        }
    }

    let fft = FftPlanner::new().plan_fft_inverse(n);
    let mut out = Array2::zeros((m, n));
    for ch in 0..m {
        for k in 1..n_half {
            spectra[ch][n - k] = spectra[ch][k].conj();
        }
        fft.process(&mut spectra[ch]);
        let power = spectra[ch].iter().map(|v| v.re * v.re).sum::<f64>() / n as f64;
        let norm = 1.0 / power.sqrt().max(1e-30);
        for s in 0..n {
            out[(ch, s)] = spectra[ch][s].re * norm;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneMeta {
    pub seed: u64,
    pub room: RoomSpec,
    pub snr_db: f64,
    pub duration: f64,
    pub sample_rate: f64,
    pub n_speakers: usize,
    /// True azimuth of each speaker at frame 0 (the weak-guidance cue).
    pub initial_azimuths: Vec<f64>,
}

/// Mixture plus everything needed to score it: per-speaker direct paths,
/// trajectories and the scenario description.
#[derive(Debug, Clone)]
pub struct SceneBundle {
    pub mixture: Audio,
    pub direct_paths: Vec<Audio>,
    pub trajectories: Vec<Trajectory>,
    pub noise: Audio,
    pub meta: SceneMeta,
}

/// Scale the noise so that the speech-to-noise ratio at the reference
/// microphone equals `snr_db`, then assemble the bundle.
pub fn mix(
    direct_paths: Vec<Audio>,
    noise: Audio,
    trajectories: Vec<Trajectory>,
    snr_db: f64,
    array: &MicArray,
    meta: SceneMeta,
) -> Result<SceneBundle> {
    if direct_paths.is_empty() {
        return Err(Error::parameter("need at least one speaker"));
    }
    if !snr_db.is_finite() {
        return Err(Error::parameter("snr must be finite"));
    }
    let n = direct_paths[0].shape()[1];
    if direct_paths.iter().any(|d| d.shape() != direct_paths[0].shape())
        || noise.shape() != direct_paths[0].shape()
    {
        return Err(Error::parameter("scene components are not aligned"));
    }
    let r = array.reference_index;
    let mut speech_ref = vec![0.0f64; n];
    for d in &direct_paths {
        for s in 0..n {
            speech_ref[s] += d[(r, s)];
        }
    }
    let p_speech = speech_ref.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if p_speech <= 0.0 {
        return Err(Error::parameter("silent speech: cannot set an SNR"));
    }
    let p_noise = noise.row(r).iter().map(|v| v * v).sum::<f64>() / n as f64;
    if p_noise <= 0.0 {
        return Err(Error::parameter("silent noise: cannot set an SNR"));
    }
    let gain = (p_speech / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let noise = noise * gain;

    let mut mixture = noise.clone();
    for d in &direct_paths {
        mixture += d;
    }
    Ok(SceneBundle { mixture, direct_paths, trajectories, noise, meta })
}

/// Dry source material for scene synthesis.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum SpeechSource {
    /// Built-in speech-shaped generator (amplitude-modulated filtered noise
    /// with pauses); no corpus needed.
    Synthetic,
    /// Directory of mono 16 kHz WAV files; one is picked per speaker by seed.
    CorpusDir(std::path::PathBuf),
}

/// Speech-like test signal: band-passed white noise under a syllabic
/// on/off envelope.
pub fn synthetic_speech(duration: f64, sample_rate: f64, seed: u64) -> Vec<f64> {
    let n = (duration * sample_rate).round() as usize;
    let mut rng = derive_rng(seed, &[0x5e_ec]);
    let mut out = vec![0.0f64; n];

    // band-pass shaping: one-pole high-pass ~150 Hz, one-pole low-pass ~5.5 kHz
    let hp_a = (-std::f64::consts::TAU * 150.0 / sample_rate).exp();
    let lp_a = (-std::f64::consts::TAU * 5500.0 / sample_rate).exp();
    let (mut hp_prev_x, mut hp_prev_y, mut lp_state) = (0.0, 0.0, 0.0);

    // syllabic envelope: alternating bursts and pauses, 20 ms smoothing
    let env_a = (-1.0 / (0.020 * sample_rate)).exp();
    let mut env = 0.0f64;
    let mut seg_left = 0usize;
    let mut seg_target = 0.0f64;

    for sample in out.iter_mut() {
        if seg_left == 0 {
            let pause = rng.gen_bool(0.3);
            if pause {
                seg_target = 0.0;
                seg_left = (rng.gen_range(0.08..0.35) * sample_rate) as usize;
            } else {
                seg_target = rng.gen_range(0.4..1.0);
                seg_left = (rng.gen_range(0.12..0.45) * sample_rate) as usize;
            }
        }
        seg_left -= 1;
        env = env_a * env + (1.0 - env_a) * seg_target;

        let x: f64 = rng.sample(StandardNormal);
        let hp = hp_a * (hp_prev_y + x - hp_prev_x);
        hp_prev_x = x;
        hp_prev_y = hp;
        lp_state = lp_a * lp_state + (1.0 - lp_a) * hp;
        *sample = lp_state * env;
    }

    // normalize to 0.1 RMS over active samples
    let active: Vec<f64> =
        out.iter().copied().filter(|v| v.abs() > 1e-12).collect();
    if !active.is_empty() {
        let rms = (active.iter().map(|v| v * v).sum::<f64>() / active.len() as f64).sqrt();
        if rms > 0.0 {
            let g = 0.1 / rms;
            out.iter_mut().for_each(|v| *v *= g);
        }
    }
    out
}

fn load_corpus_speech(
    dir: &Path,
    duration: f64,
    sample_rate: f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "wav"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!("no wav files in {}", dir.display())));
    }
    let pick = &files[rng.gen_range(0..files.len())];
    let (audio, sr) = read_wav(pick)?;
    if (sr as f64 - sample_rate).abs() > 0.5 {
        return Err(Error::Config(format!(
            "{}: expected {} Hz, found {}",
            pick.display(),
            sample_rate,
            sr
        )));
    }
    let n = (duration * sample_rate).round() as usize;
    let mono = audio.row(0);
    let mut out = vec![0.0f64; n];
    for (i, v) in out.iter_mut().enumerate() {
        *v = *mono.get(i % mono.len()).unwrap_or(&0.0);
    }
    Ok(out)
}

/// Scenario sampling ranges following the randomized setup: 4-8 m rooms,
/// array in the central 20 %, 20-30 dB SNR, two moving speakers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub duration: f64,
    pub n_speakers: usize,
    pub snr_range: (f64, f64),
    pub speech: SpeechSource,
    pub sfm: SfmParams,
    pub stft: StftConfig,
    /// Optional non-physical late-reverb corruption (direct-to-reverb dB);
    /// not part of the free-field model, off by default.
    pub late_reverb_drr_db: Option<f64>,
    pub n_noise_waves: usize,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            duration: 10.0,
            n_speakers: 2,
            snr_range: (20.0, 30.0),
            speech: SpeechSource::Synthetic,
            sfm: SfmParams::default(),
            stft: StftConfig::default_16k(),
            late_reverb_drr_db: None,
            n_noise_waves: 64,
        }
    }
}

/// Generate one complete scene deterministically from `seed`.
pub fn synthesize_scene(
    params: &ScenarioParams,
    array: &MicArray,
    seed: u64,
) -> Result<SceneBundle> {
    let fs = params.stft.sample_rate;
    let hop_s = params.stft.frame_duration();
    let mut room_rng = derive_rng(seed, &[0x400]);

    // resample the room until the trajectory constraints are satisfiable
    let (room, trajectories) = (0..50)
        .find_map(|attempt| {
            let room = RoomSpec::sample(&mut room_rng);
            match generate_trajectory(
                &room,
                params.n_speakers,
                params.duration,
                hop_s,
                &params.sfm,
                seed.wrapping_add(attempt),
            ) {
                Ok(t) => Some(Ok((room, t))),
                Err(Error::Sampling(_)) => None,
                Err(e) => Some(Err(e)),
            }
        })
        .unwrap_or_else(|| Err(Error::Sampling("no feasible room".into())))?;

    let mut direct_paths = Vec::with_capacity(params.n_speakers);
    for (i, traj) in trajectories.iter().enumerate() {
        let mut speech_rng = derive_rng(seed, &[0x5bc, i as u64]);
        let dry = match &params.speech {
            SpeechSource::Synthetic => {
                synthetic_speech(params.duration, fs, seed.wrapping_mul(31).wrapping_add(i as u64))
            }
            SpeechSource::CorpusDir(dir) => {
                load_corpus_speech(dir, params.duration, fs, &mut speech_rng)?
            }
        };
        direct_paths.push(spatialize(&dry, traj, array, &room.array_center, fs)?);
    }

    let noise = diffuse_noise(params.duration, array, fs, seed, params.n_noise_waves)?;
    let mut snr_rng = derive_rng(seed, &[0x5a2]);
    let snr_db = snr_rng.gen_range(params.snr_range.0..=params.snr_range.1);
    let initial_azimuths = trajectories
        .iter()
        .map(|t| t.azimuth(0, &room.array_center))
        .collect();
    let meta = SceneMeta {
        seed,
        room: room.clone(),
        snr_db,
        duration: params.duration,
        sample_rate: fs,
        n_speakers: params.n_speakers,
        initial_azimuths,
    };
    let mut bundle = mix(direct_paths, noise, trajectories, snr_db, array, meta)?;
    if let Some(drr) = params.late_reverb_drr_db {
        let corrupted = late_reverb(&bundle.mixture, drr, fs, seed);
        // book the tail as extra noise so the bundle stays additive
        bundle.noise += &(&corrupted - &bundle.mixture);
        bundle.mixture = corrupted;
    }
    Ok(bundle)
}

/// Non-physical stress corruption: adds a 250 ms exponentially decaying
/// noise-convolved tail at the given direct-to-reverb ratio.
pub fn late_reverb(audio: &Audio, drr_db: f64, sample_rate: f64, seed: u64) -> Audio {
    let taps = (0.25 * sample_rate) as usize;
    let (m, n) = (audio.shape()[0], audio.shape()[1]);
    let mut out = audio.clone();
    for ch in 0..m {
        let mut rng = derive_rng(seed, &[0x1a7e, ch as u64]);
        let kernel: Vec<f64> = (0..taps)
            .map(|i| {
                let decay = (-3.0 * i as f64 / taps as f64).exp();
                let g: f64 = rng.sample(StandardNormal);
                g * decay
            })
            .collect();
        let k_energy: f64 = kernel.iter().map(|v| v * v).sum();
        let gain = (10f64.powf(-drr_db / 10.0) / k_energy).sqrt();
        // direct sum is fine at this tap count
        for s in 0..n {
            let mut acc = 0.0;
            let start = s.saturating_sub(taps - 1);
            for (j, k) in kernel.iter().enumerate().take(s - start + 1) {
                acc += k * audio[(ch, s - j)];
            }
            out[(ch, s)] += gain * acc;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// persistence
// ---------------------------------------------------------------------------

pub fn scene_dir_name(seed: u64) -> String {
    format!("scene_{seed:08}")
}

pub fn save_scene(dir: impl AsRef<Path>, bundle: &SceneBundle) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let sr = bundle.meta.sample_rate as u32;
    write_wav(dir.join("mixture.wav"), &bundle.mixture, sr, WavFormat::Float32)?;
    for (i, d) in bundle.direct_paths.iter().enumerate() {
        write_wav(dir.join(format!("speaker_{i}_direct.wav")), d, sr, WavFormat::Float32)?;
    }
    write_trajectories_csv(
        dir.join("trajectories.csv"),
        &bundle.trajectories,
        &bundle.meta.room.array_center,
    )?;
    let meta = serde_json::to_string_pretty(&bundle.meta)?;
    std::fs::write(dir.join("meta.json"), meta)?;
    Ok(())
}

pub fn load_scene(dir: impl AsRef<Path>) -> Result<SceneBundle> {
    let dir = dir.as_ref();
    let meta: SceneMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
    let (mixture, _) = read_wav(dir.join("mixture.wav"))?;
    let mut direct_paths = Vec::new();
    for i in 0..meta.n_speakers {
        let (d, _) = read_wav(dir.join(format!("speaker_{i}_direct.wav")))?;
        direct_paths.push(d);
    }
    let trajectories = read_trajectories_csv(
        dir.join("trajectories.csv"),
        meta.n_speakers,
        StftConfig::default_16k().frame_duration(),
    )?;
    // noise is not persisted; reconstruct the residual
    let mut noise = mixture.clone();
    for d in &direct_paths {
        noise -= d;
    }
    Ok(SceneBundle { mixture, direct_paths, trajectories, noise, meta })
}

pub fn write_trajectories_csv(
    path: impl AsRef<Path>,
    trajectories: &[Trajectory],
    array_center: &[f64; 2],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["frame_index", "speaker_id", "x", "y", "azimuth_rad", "distance_m"])?;
    for (id, t) in trajectories.iter().enumerate() {
        for f in 0..t.len() {
            let p = t.positions[f];
            w.write_record([
                f.to_string(),
                id.to_string(),
                format!("{:.9}", p[0]),
                format!("{:.9}", p[1]),
                format!("{:.9}", t.azimuth(f, array_center)),
                format!("{:.9}", t.distance(f, array_center)),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectories_csv(
    path: impl AsRef<Path>,
    n_speakers: usize,
    frame_hop: f64,
) -> Result<Vec<Trajectory>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut positions: Vec<Vec<[f64; 2]>> = vec![Vec::new(); n_speakers];
    for rec in r.records() {
        let rec = rec?;
        let id: usize = rec[1]
            .parse()
            .map_err(|_| Error::parameter("bad speaker id in trajectory csv"))?;
        let x: f64 = rec[2].parse().map_err(|_| Error::parameter("bad x"))?;
        let y: f64 = rec[3].parse().map_err(|_| Error::parameter("bad y"))?;
        if id < n_speakers {
            positions[id].push([x, y]);
        }
    }
    Ok(positions
        .into_iter()
        .map(|p| Trajectory { positions: p, frame_hop })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::{analyze, StftConfig};
    use approx::assert_abs_diff_eq;

    const FS: f64 = 16_000.0;

    fn stationary_trajectory(pos: [f64; 2], n_frames: usize) -> Trajectory {
        Trajectory { positions: vec![pos; n_frames], frame_hop: 0.016 }
    }

    #[test]
    fn zero_dry_gives_zero_output() {
        let array = MicArray::default_three_mic();
        let traj = stationary_trajectory([3.0, 2.0], 200);
        let dry = vec![0.0; 16_000];
        let out = spatialize(&dry, &traj, &array, &[1.0, 1.0], FS).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn short_trajectory_rejected() {
        let array = MicArray::default_three_mic();
        let traj = stationary_trajectory([3.0, 2.0], 10);
        let dry = vec![0.0; 16_000];
        assert!(spatialize(&dry, &traj, &array, &[1.0, 1.0], FS).is_err());
    }

    /// Cross-correlation lag between two channels, in samples.
    fn xcorr_lag(a: &[f64], b: &[f64], max_lag: i64) -> i64 {
        let mut best = (0i64, f64::MIN);
        for lag in -max_lag..=max_lag {
            let mut acc = 0.0;
            for i in 0..a.len() {
                let j = i as i64 + lag;
                if j >= 0 && (j as usize) < b.len() {
                    acc += a[i] * b[j as usize];
                }
            }
            if acc > best.1 {
                best = (lag, acc);
            }
        }
        best.0
    }

    #[test]
    fn stationary_source_realizes_farfield_delays() {
        let array = MicArray::default_three_mic();
        let center = [2.0, 2.0];
        let azimuth = 0.6f64;
        let dist = 1.8;
        let pos = [center[0] + dist * azimuth.cos(), center[1] + dist * azimuth.sin()];
        let traj = stationary_trajectory(pos, 200);
        let dry = synthetic_speech(1.0, FS, 5);
        let out = spatialize(&dry, &traj, &array, &center, FS).unwrap();
        for ch in 1..3 {
            // analytic far-field delay oracle
            let expected = array.relative_delay(ch, azimuth) * FS;
            let lag = xcorr_lag(
                &out.row(0).to_vec()[2000..14000],
                &out.row(ch).to_vec()[2000..14000],
                20,
            );
            assert!(
                (lag as f64 - expected).abs() <= 1.0,
                "ch {ch}: lag {lag}, expected {expected:.2}"
            );
        }
    }

    #[test]
    fn equidistant_channels_match() {
        let array = MicArray::default_three_mic();
        // mics 1 and 2 sit symmetric about the x-axis: a source at azimuth
        // pi is equidistant to both
        let center = [3.0, 3.0];
        let pos = [center[0] - 2.0, center[1]];
        let traj = stationary_trajectory(pos, 200);
        let dry = synthetic_speech(1.0, FS, 6);
        let out = spatialize(&dry, &traj, &array, &center, FS).unwrap();
        let mut err = 0.0;
        let mut sig = 0.0;
        for s in 0..out.shape()[1] {
            err += (out[(1, s)] - out[(2, s)]).powi(2);
            sig += out[(1, s)].powi(2);
        }
        let rel_db = 10.0 * (err / sig.max(1e-300)).log10();
        assert!(rel_db < -60.0, "channel mismatch {rel_db} dB");
    }

    #[test]
    fn recovered_azimuth_matches_trajectory() {
        // mini grid estimator over averaged cross-spectra: the independent
        // check that inter-channel delays encode the trajectory azimuth
        let array = MicArray::default_three_mic();
        let cfg = StftConfig::default_16k();
        let center = [2.5, 2.5];
        let azimuth = 2.1f64;
        let pos = [center[0] + 2.0 * azimuth.cos(), center[1] + 2.0 * azimuth.sin()];
        let traj = stationary_trajectory(pos, 200);
        let dry = synthetic_speech(1.0, FS, 7);
        let out = spatialize(&dry, &traj, &array, &center, FS).unwrap();
        let spec = analyze(&out, &cfg).unwrap();
        let k_max = array.aliasing_bin_limit(FS, cfg.win_len);

        let mut best = (0.0f64, f64::MIN);
        for g in 0..720 {
            let cand = std::f64::consts::TAU * g as f64 / 720.0;
            let mut score = 0.0;
            for k in 1..=k_max {
                let omega = std::f64::consts::TAU * cfg.bin_frequency(k);
                for ch in 1..3 {
                    let mut cross = Complex64::default();
                    for t in 0..spec.n_frames() {
                        cross += spec.data[(t, k, ch)] * spec.data[(t, k, 0)].conj();
                    }
                    let model = Complex64::from_polar(1.0, -omega * array.relative_delay(ch, cand));
                    score += (cross / cross.norm().max(1e-300) * model.conj()).re;
                }
            }
            if score > best.1 {
                best = (cand, score);
            }
        }
        let err = crate::angles::circular_diff(best.0, azimuth).abs().to_degrees();
        assert!(err < 2.0, "recovered azimuth off by {err} deg");
    }

    #[test]
    fn diffuse_noise_channel_power_and_seeding() {
        let array = MicArray::default_three_mic();
        let a = diffuse_noise(4.0, &array, FS, 11, 64).unwrap();
        for ch in 0..3 {
            let p = a.row(ch).iter().map(|v| v * v).sum::<f64>() / a.shape()[1] as f64;
            assert!((p - 1.0).abs() < 0.05, "channel {ch} power {p}");
        }
        let b = diffuse_noise(4.0, &array, FS, 12, 64).unwrap();
        let n = a.shape()[1] as f64;
        let corr = a
            .row(0)
            .iter()
            .zip(b.row(0).iter())
            .map(|(x, y)| x * y)
            .sum::<f64>()
            / n;
        assert!(corr.abs() < 0.05, "cross-seed correlation {corr}");
    }

    #[test]
    fn diffuse_noise_coherence_falls_with_frequency() {
        let array = MicArray::default_three_mic();
        let audio = diffuse_noise(60.0, &array, FS, 13, 64).unwrap();
        let cfg = StftConfig::default_16k();
        let spec = analyze(&audio, &cfg).unwrap();
        let msc = |k: usize| {
            let (mut sxx, mut syy) = (0.0, 0.0);
            let mut sxy = Complex64::default();
            for t in 0..spec.n_frames() {
                let x = spec.data[(t, k, 0)];
                let y = spec.data[(t, k, 1)];
                sxx += x.norm_sqr();
                syy += y.norm_sqr();
                sxy += x * y.conj();
            }
            sxy.norm_sqr() / (sxx * syy)
        };
        let low = msc(8); // 250 Hz
        let high = msc(128); // 4 kHz
        assert!(low > 0.8, "low-frequency coherence {low}");
        assert!(high < low, "coherence did not decay: {high} vs {low}");
    }

    fn tiny_meta(seed: u64) -> SceneMeta {
        SceneMeta {
            seed,
            room: RoomSpec::new(6.0, 6.0, [3.0, 3.0]).unwrap(),
            snr_db: 20.0,
            duration: 1.0,
            sample_rate: FS,
            n_speakers: 2,
            initial_azimuths: vec![0.0, 1.0],
        }
    }

    #[test]
    fn mix_hits_requested_snr() {
        let array = MicArray::default_three_mic();
        let center = [3.0, 3.0];
        let t0 = stationary_trajectory([5.0, 3.0], 100);
        let t1 = stationary_trajectory([3.0, 5.0], 100);
        let d0 = spatialize(&synthetic_speech(1.0, FS, 1), &t0, &array, &center, FS).unwrap();
        let d1 = spatialize(&synthetic_speech(1.0, FS, 2), &t1, &array, &center, FS).unwrap();
        let noise = diffuse_noise(1.0, &array, FS, 3, 64).unwrap();
        let bundle = mix(
            vec![d0, d1],
            noise,
            vec![t0, t1],
            20.0,
            &array,
            tiny_meta(1),
        )
        .unwrap();
        // verify the measured ratio at the reference mic
        let n = bundle.mixture.shape()[1];
        let mut speech = vec![0.0; n];
        for d in &bundle.direct_paths {
            for s in 0..n {
                speech[s] += d[(0, s)];
            }
        }
        let p_s = speech.iter().map(|v| v * v).sum::<f64>();
        let p_n = bundle.noise.row(0).iter().map(|v| v * v).sum::<f64>();
        let snr = 10.0 * (p_s / p_n).log10();
        assert!((snr - 20.0).abs() < 0.1, "snr {snr}");
        // additivity to machine precision
        for s in 0..n {
            let total: f64 = bundle.direct_paths.iter().map(|d| d[(0, s)]).sum::<f64>()
                + bundle.noise[(0, s)];
            assert_abs_diff_eq!(bundle.mixture[(0, s)], total, epsilon = 1e-12);
        }
    }

    #[test]
    fn silent_speech_rejected() {
        let array = MicArray::default_three_mic();
        let t0 = stationary_trajectory([5.0, 3.0], 100);
        let zeros = Array2::zeros((3, 16_000));
        let noise = diffuse_noise(1.0, &array, FS, 3, 64).unwrap();
        assert!(mix(vec![zeros], noise, vec![t0], 20.0, &array, tiny_meta(2)).is_err());
    }

    #[test]
    fn equal_power_speakers_have_zero_sir() {
        let array = MicArray::default_three_mic();
        let center = [3.0, 3.0];
        // same distance, same generator on different seeds
        let t0 = stationary_trajectory([5.0, 3.0], 100);
        let t1 = stationary_trajectory([1.0, 3.0], 100);
        let d0 = spatialize(&synthetic_speech(1.0, FS, 8), &t0, &array, &center, FS).unwrap();
        let d1 = spatialize(&synthetic_speech(1.0, FS, 9), &t1, &array, &center, FS).unwrap();
        let p0 = d0.row(0).iter().map(|v| v * v).sum::<f64>();
        let p1 = d1.row(0).iter().map(|v| v * v).sum::<f64>();
        let sir = 10.0 * (p0 / p1).log10();
        assert!(sir.abs() < 1.5, "input SIR {sir} dB");
    }

    #[test]
    fn scene_synthesis_deterministic_and_persistable() {
        let array = MicArray::default_three_mic();
        let params = ScenarioParams { duration: 1.5, ..ScenarioParams::default() };
        let a = synthesize_scene(&params, &array, 77).unwrap();
        let b = synthesize_scene(&params, &array, 77).unwrap();
        assert_eq!(a.mixture, b.mixture);
        assert_eq!(a.trajectories, b.trajectories);

        let dir = std::env::temp_dir().join("doatrack_scene_test");
        let _ = std::fs::remove_dir_all(&dir);
        save_scene(dir.join(scene_dir_name(77)), &a).unwrap();
        let loaded = load_scene(dir.join(scene_dir_name(77))).unwrap();
        assert_eq!(loaded.meta.seed, 77);
        assert_eq!(loaded.trajectories.len(), 2);
        assert_eq!(loaded.mixture.shape(), a.mixture.shape());
        // f32 storage round-trip
        let max_err = a
            .mixture
            .iter()
            .zip(loaded.mixture.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-6, "wav round trip error {max_err}");
    }

    #[test]
    fn late_reverb_knob_hits_the_requested_ratio_and_stays_additive() {
        let array = MicArray::default_three_mic();
        let params = ScenarioParams {
            duration: 1.5,
            late_reverb_drr_db: Some(-15.0),
            ..ScenarioParams::default()
        };
        let clean = synthesize_scene(
            &ScenarioParams { late_reverb_drr_db: None, ..params.clone() },
            &array,
            42,
        )
        .unwrap();
        let wet = synthesize_scene(&params, &array, 42).unwrap();
        let n = clean.mixture.shape()[1];
        let direct: f64 = clean.mixture.iter().map(|v| v * v).sum();
        let tail: f64 = wet
            .mixture
            .iter()
            .zip(clean.mixture.iter())
            .map(|(w, c)| (w - c).powi(2))
            .sum();
        let drr = 10.0 * (direct / tail).log10();
        assert!((drr - -15.0).abs() < 1.0, "realized DRR {drr}");
        // additivity still holds
        for s in 0..n {
            let total: f64 = wet.direct_paths.iter().map(|d| d[(0, s)]).sum::<f64>()
                + wet.noise[(0, s)];
            assert_abs_diff_eq!(wet.mixture[(0, s)], total, epsilon = 1e-10);
        }
    }

    #[test]
    fn synthetic_speech_has_pauses_and_activity() {
        let s = synthetic_speech(5.0, FS, 123);
        let frame = 800;
        let mut active = 0;
        let mut quiet = 0;
        for chunk in s.chunks(frame) {
            let p = chunk.iter().map(|v| v * v).sum::<f64>() / chunk.len() as f64;
            if p > 1e-4 {
                active += 1;
            } else if p < 1e-8 {
                quiet += 1;
            }
        }
        assert!(active > 20, "speech mostly silent: {active}");
        assert!(quiet > 3, "no pauses: {quiet}");
    }
}
