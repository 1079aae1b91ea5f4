//! Subcommand implementations: simulate, track, eval, sweep.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use doatrack::doa::SpatialContext;
use doatrack::enhance::{EnhancerHandle, OracleData};
use doatrack::eval::{aggregate, si_sdr, track_metrics_with_interferer, TrackMetrics};
use doatrack::scene::{
    load_scene, save_scene, scene_dir_name, synthesize_scene, SceneBundle,
};
use doatrack::stft::{analyze, synthesize, StftConfig};
use doatrack::trackers::{track_scene, SweepScene, TrackerMode};
use doatrack::wav::{write_wav, WavFormat};

use crate::config::RunConfig;

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    /// Fingerprint tying results to the dataset they were computed on.
    pub dataset_id: String,
    pub seeds: Vec<u64>,
    pub n_speakers: usize,
    pub duration: f64,
    pub scenes: Vec<ManifestScene>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestScene {
    pub seed: u64,
    pub dir: String,
    pub snr_db: f64,
    pub initial_azimuths_deg: Vec<f64>,
}

fn dataset_id(seeds: &[u64], duration: f64, n_speakers: usize) -> String {
    // order-sensitive FNV over the defining parameters
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |v: u64| {
        h ^= v;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    };
    for &s in seeds {
        eat(s);
    }
    eat(duration.to_bits());
    eat(n_speakers as u64);
    format!("{h:016x}")
}

pub fn cmd_simulate(config: &RunConfig, out: &Path, dry_run: bool) -> anyhow::Result<()> {
    let array = config.array()?;
    let params = config.scenario_params();
    let seeds: Vec<u64> =
        (0..config.scenario.n_scenes as u64).map(|i| config.scenario.base_seed + i).collect();
    if dry_run {
        println!(
            "simulate: {} scenes of {:.1}s with {} speakers into {} (dry run, nothing written)",
            seeds.len(),
            params.duration,
            params.n_speakers,
            out.display()
        );
        return Ok(());
    }
    std::fs::create_dir_all(out)?;
    let bundles: Vec<(u64, SceneBundle)> = seeds
        .par_iter()
        .map(|&seed| {
            let bundle = synthesize_scene(&params, &array, seed)?;
            save_scene(out.join(scene_dir_name(seed)), &bundle)?;
            Ok((seed, bundle))
        })
        .collect::<doatrack::Result<Vec<_>>>()?;

    let scenes = bundles
        .iter()
        .map(|(seed, b)| ManifestScene {
            seed: *seed,
            dir: scene_dir_name(*seed),
            snr_db: b.meta.snr_db,
            initial_azimuths_deg: b.meta.initial_azimuths.iter().map(|a| a.to_degrees()).collect(),
        })
        .collect();
    let manifest = Manifest {
        dataset_id: dataset_id(&seeds, params.duration, params.n_speakers),
        seeds,
        n_speakers: params.n_speakers,
        duration: params.duration,
        scenes,
    };
    std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    // one JSON object per scene: room size, array center, seed, parameters
    let mut jsonl = String::new();
    for (seed, b) in &bundles {
        jsonl.push_str(&serde_json::to_string(&serde_json::json!({
            "seed": seed,
            "room_width": b.meta.room.width,
            "room_length": b.meta.room.length,
            "array_center": b.meta.room.array_center,
            "snr_db": b.meta.snr_db,
            "duration": b.meta.duration,
            "n_speakers": b.meta.n_speakers,
            "sfm_params": params.sfm,
        }))?);
        jsonl.push('\n');
    }
    std::fs::write(out.join("scenes.jsonl"), jsonl)?;
    config.save(&out.join("config.toml"))?;
    println!("simulate: wrote {} scenes to {}", manifest.seeds.len(), out.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SpeakerResult {
    pub speaker: usize,
    pub metrics: TrackMetrics,
    /// SI-SDR of the enhanced reference channel vs the direct path (dB).
    pub si_sdr_db: Option<f64>,
    /// SI-SDR of the unprocessed reference microphone (dB).
    pub si_sdr_unprocessed_db: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SceneResult {
    pub seed: u64,
    pub speakers: Vec<SpeakerResult>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub dataset_id: String,
    pub tracker: String,
    pub mode: String,
    pub mae_deg_mean: f64,
    pub mae_deg_ci95: f64,
    pub acc_pct_mean: f64,
    pub acc_pct_ci95: f64,
    pub si_sdr_db_mean: Option<f64>,
    pub si_sdr_db_ci95: Option<f64>,
    pub n_scenes: usize,
}

fn load_manifest(dataset: &Path) -> anyhow::Result<Manifest> {
    let text = std::fs::read_to_string(dataset.join("manifest.json"))
        .map_err(|e| anyhow::anyhow!("{} is not a dataset (manifest.json: {e})", dataset.display()))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn cmd_track(
    config: &RunConfig,
    dataset: &Path,
    out: &Path,
    dry_run: bool,
) -> anyhow::Result<()> {
    let manifest = load_manifest(dataset)?;
    let array = config.array()?;
    let stft = StftConfig::default_16k();
    let ctx = SpatialContext::new(array, stft.clone());
    let tracker = config.tracker_spec()?;
    let backend = config.backend()?;
    if dry_run {
        println!(
            "track: {} scenes from {} with {}/{} (dry run, nothing written)",
            manifest.seeds.len(),
            dataset.display(),
            config.tracker.filter,
            config.tracker.mode
        );
        return Ok(());
    }
    std::fs::create_dir_all(out)?;

    let results: Vec<SceneResult> = manifest
        .scenes
        .par_iter()
        .map(|scene| -> anyhow::Result<SceneResult> {
            let bundle = load_scene(dataset.join(&scene.dir))?;
            let spec = analyze(&bundle.mixture, &stft)?;
            let center = bundle.meta.room.array_center;
            let scene_out = out.join(&scene.dir);
            std::fs::create_dir_all(&scene_out)?;
            let mut speakers = Vec::new();
            for target in 0..bundle.meta.n_speakers {
                let truth = bundle.trajectories[target].azimuth_series(&center);
                let mut enhancer = backend.clone().map(|b| {
                    let mut h = EnhancerHandle::new(b, config.enhancer_shape(), scene.seed);
                    if h.requires_oracle() {
                        h = h.with_oracle(OracleData::from_bundle(&bundle, target, &ctx)?);
                    }
                    Ok::<_, doatrack::Error>(h)
                }).transpose()?;
                let track_seed = scene.seed.wrapping_add(target as u64 * 1000);
                let output = track_scene(
                    &spec,
                    &tracker,
                    enhancer.as_mut(),
                    truth[0],
                    &ctx,
                    track_seed,
                )?;
                output.track.write_csv(scene_out.join(format!("speaker_{target}_track.csv")))?;

                let n = output.track.n_frames().min(truth.len());
                let interferer: Option<Vec<f64>> = (bundle.meta.n_speakers > 1).then(|| {
                    bundle.trajectories[(target + 1) % bundle.meta.n_speakers]
                        .azimuth_series(&center)
                });
                let mut metrics = match &interferer {
                    Some(other) => track_metrics_with_interferer(
                        &output.track.theta_hat[..n],
                        &truth[..n],
                        &other[..n],
                        config.output.acc_threshold_deg,
                    )?,
                    None => doatrack::eval::track_metrics(
                        &output.track.theta_hat[..n],
                        &truth[..n],
                        config.output.acc_threshold_deg,
                    )?,
                };
                if config.output.gate_silent_frames {
                    let dspec = analyze(&bundle.direct_paths[target], &stft)?;
                    let active: Vec<bool> = (0..n)
                        .map(|t| {
                            dspec
                                .data
                                .index_axis(ndarray::Axis(0), t)
                                .iter()
                                .map(|v| v.norm_sqr())
                                .sum::<f64>()
                                > 1e-9
                        })
                        .collect();
                    let gated = doatrack::eval::track_metrics_masked(
                        &output.track.theta_hat[..n],
                        &truth[..n],
                        &active,
                        config.output.acc_threshold_deg,
                    )?;
                    metrics = doatrack::eval::TrackMetrics {
                        re_acc_pct: metrics.re_acc_pct,
                        ..gated
                    };
                }

                let n_samples = bundle.mixture.shape()[1];
                let reference: Vec<f64> = bundle.direct_paths[target].row(ctx.array.reference_index).to_vec();
                let mix_ref: Vec<f64> = bundle.mixture.row(ctx.array.reference_index).to_vec();
                let (lo, hi) = (stft.hop, n_samples - stft.win_len);
                let si_sdr_unprocessed_db = si_sdr(&mix_ref[lo..hi], &reference[lo..hi])?;
                let mut si_sdr_db = None;
                if let Some(enh_spec) = output.enhanced_spectrogram(&stft, n_samples) {
                    let audio = synthesize(&enh_spec);
                    let est: Vec<f64> = audio.row(0).to_vec();
                    si_sdr_db = Some(si_sdr(&est[lo..hi], &reference[lo..hi])?);
                    if config.output.write_enhanced_wav {
                        write_wav(
                            scene_out.join(format!("speaker_{target}_enhanced.wav")),
                            &audio,
                            stft.sample_rate as u32,
                            WavFormat::Float32,
                        )?;
                    }
                }
                speakers.push(SpeakerResult {
                    speaker: target,
                    metrics,
                    si_sdr_db,
                    si_sdr_unprocessed_db,
                });
            }
            let result = SceneResult { seed: scene.seed, speakers };
            std::fs::write(
                scene_out.join("metrics.json"),
                serde_json::to_string_pretty(&result)?,
            )?;
            Ok(result)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let summary = summarize(&manifest, config, &results)?;
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    config.save(&out.join("config.toml"))?;
    println!(
        "track: {}/{} -> MAE {:.2} deg (±{:.2}), ACC {:.1} % over {} scenes",
        config.tracker.filter,
        config.tracker.mode,
        summary.mae_deg_mean,
        summary.mae_deg_ci95,
        summary.acc_pct_mean,
        summary.n_scenes
    );
    Ok(())
}

fn summarize(
    manifest: &Manifest,
    config: &RunConfig,
    results: &[SceneResult],
) -> anyhow::Result<RunSummary> {
    let scene_mean = |f: &dyn Fn(&SpeakerResult) -> Option<f64>| -> Vec<f64> {
        results
            .iter()
            .filter_map(|r| {
                let vals: Vec<f64> = r.speakers.iter().filter_map(|s| f(s)).collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            })
            .collect()
    };
    let maes = scene_mean(&|s| Some(s.metrics.mae_deg));
    let accs = scene_mean(&|s| Some(s.metrics.acc_pct));
    let sdrs = scene_mean(&|s| s.si_sdr_db);
    let (mae_mean, mae_ci) = aggregate(&maes).unwrap_or((maes.first().copied().unwrap_or(0.0), 0.0));
    let (acc_mean, acc_ci) = aggregate(&accs).unwrap_or((accs.first().copied().unwrap_or(0.0), 0.0));
    let (sdr_mean, sdr_ci) = if sdrs.len() >= 2 {
        let (m, c) = aggregate(&sdrs)?;
        (Some(m), Some(c))
    } else {
        (sdrs.first().copied(), None)
    };
    let _ = acc_ci;
    Ok(RunSummary {
        dataset_id: manifest.dataset_id.clone(),
        tracker: config.tracker.filter.clone(),
        mode: config.tracker.mode.clone(),
        mae_deg_mean: mae_mean,
        mae_deg_ci95: mae_ci,
        acc_pct_mean: acc_mean,
        acc_pct_ci95: acc_ci,
        si_sdr_db_mean: sdr_mean,
        si_sdr_db_ci95: sdr_ci,
        n_scenes: results.len(),
    })
}

pub fn cmd_eval(runs: &[PathBuf], out: &Path) -> anyhow::Result<()> {
    if runs.is_empty() {
        anyhow::bail!("eval needs at least one results directory");
    }
    let mut summaries = Vec::new();
    for dir in runs {
        let text = std::fs::read_to_string(dir.join("summary.json")).map_err(|e| {
            anyhow::anyhow!("{} is not a tracking result (summary.json: {e})", dir.display())
        })?;
        let s: RunSummary = serde_json::from_str(&text)?;
        summaries.push((dir.clone(), s));
    }
    let first_id = &summaries[0].1.dataset_id;
    if let Some((dir, _)) = summaries.iter().find(|(_, s)| &s.dataset_id != first_id) {
        anyhow::bail!(
            "results in {} were computed on a different dataset; refusing to compare",
            dir.display()
        );
    }

    std::fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("comparison.csv"))?;
    w.write_record([
        "run", "tracker", "mode", "acc_pct", "acc_ci95", "mae_deg", "mae_ci95", "si_sdr_db",
        "si_sdr_ci95",
    ])?;
    println!("{:<28} {:>10} {:>16} {:>16} {:>14}", "run (tracker/mode)", "ACC [%]", "MAE [deg]", "SI-SDR [dB]", "scenes");
    for (dir, s) in &summaries {
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        w.write_record([
            name.clone(),
            s.tracker.clone(),
            s.mode.clone(),
            format!("{:.2}", s.acc_pct_mean),
            format!("{:.2}", s.acc_pct_ci95),
            format!("{:.3}", s.mae_deg_mean),
            format!("{:.3}", s.mae_deg_ci95),
            s.si_sdr_db_mean.map(|v| format!("{v:.2}")).unwrap_or_default(),
            s.si_sdr_db_ci95.map(|v| format!("{v:.2}")).unwrap_or_default(),
        ])?;
        println!(
            "{:<28} {:>6.1}±{:<3.1} {:>10.2}±{:<5.2} {:>14} {:>6}",
            format!("{name} ({}/{})", s.tracker, s.mode),
            s.acc_pct_mean,
            s.acc_pct_ci95,
            s.mae_deg_mean,
            s.mae_deg_ci95,
            s.si_sdr_db_mean
                .map(|v| format!("{v:.2}±{:.2}", s.si_sdr_db_ci95.unwrap_or(0.0)))
                .unwrap_or_else(|| "-".into()),
            s.n_scenes
        );
    }
    w.flush()?;
    println!("eval: wrote {}", out.join("comparison.csv").display());
    Ok(())
}

pub fn cmd_sweep(config: &RunConfig, dataset: &Path, out: &Path) -> anyhow::Result<()> {
    let manifest = load_manifest(dataset)?;
    let array = config.array()?;
    let stft = StftConfig::default_16k();
    let ctx = SpatialContext::new(array, stft.clone());
    let template = config.tracker_spec()?;
    let backend = config.backend()?;

    let scenes: Vec<SweepScene> = manifest
        .scenes
        .par_iter()
        .map(|scene| -> anyhow::Result<Vec<SweepScene>> {
            let bundle = load_scene(dataset.join(&scene.dir))?;
            let spec = analyze(&bundle.mixture, &stft)?;
            let center = bundle.meta.room.array_center;
            (0..bundle.meta.n_speakers)
                .map(|target| {
                    let truth = bundle.trajectories[target].azimuth_series(&center);
                    let enhancer = backend
                        .clone()
                        .map(|b| {
                            let mut h =
                                EnhancerHandle::new(b, config.enhancer_shape(), scene.seed);
                            if h.requires_oracle() {
                                h = h.with_oracle(OracleData::from_bundle(&bundle, target, &ctx)?);
                            }
                            Ok::<_, doatrack::Error>(h)
                        })
                        .transpose()?;
                    Ok(SweepScene {
                        spec: spec.clone(),
                        theta0: truth[0],
                        truth,
                        enhancer,
                        seed: scene.seed.wrapping_add(target as u64 * 1000),
                    })
                })
                .collect()
        })
        .collect::<anyhow::Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let g = &config.sweep;
    let (rows, best) = doatrack::trackers::sweep_params(
        &scenes,
        &template,
        &g.sigma_nu_deg,
        &g.likelihood_param,
        &g.tau_eff,
        &g.alpha_ema,
        &ctx,
    )?;

    std::fs::create_dir_all(out)?;
    // long-format, plot-ready
    let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
    w.write_record(["sigma_nu_deg", "likelihood_param", "tau_eff", "alpha_ema", "mae_deg", "acc_pct"])?;
    for r in &rows {
        w.write_record([
            format!("{}", r.sigma_nu_deg),
            format!("{}", r.likelihood_param),
            format!("{}", r.tau_eff),
            format!("{}", r.alpha_ema),
            format!("{:.4}", r.mae_deg),
            format!("{:.2}", r.acc_pct),
        ])?;
    }
    w.flush()?;

    let b = &rows[best];
    let mut best_config = config.clone();
    best_config.tracker.sigma_nu_deg = b.sigma_nu_deg;
    best_config.tracker.tau_eff = b.tau_eff;
    best_config.tracker.alpha_ema = b.alpha_ema;
    match template.kind {
        doatrack::trackers::TrackerKind::Kf(_) => {
            best_config.tracker.sigma_phi_deg = b.likelihood_param
        }
        doatrack::trackers::TrackerKind::Pf(_) => {
            best_config.tracker.kappa = Some(b.likelihood_param)
        }
    }
    best_config.save(&out.join("best.toml"))?;
    config.save(&out.join("config.toml"))?;
    println!(
        "sweep: {} grid points; best MAE {:.2} deg at sigma_nu {} / likelihood {} -> {}",
        rows.len(),
        b.mae_deg,
        b.sigma_nu_deg,
        b.likelihood_param,
        out.join("best.toml").display()
    );
    Ok(())
}

/// AR modes with oracle backends tolerate single-speaker datasets; flag the
/// nonsensical combinations early.
pub fn check_compatibility(config: &RunConfig, dataset: &Path) -> anyhow::Result<()> {
    let manifest = load_manifest(dataset)?;
    if config.tracker_mode()? != TrackerMode::Concat
        && config.backend()?.is_none()
    {
        anyhow::bail!("autoregressive modes need an enhancer");
    }
    if manifest.n_speakers == 0 {
        anyhow::bail!("dataset has no speakers");
    }
    Ok(())
}
