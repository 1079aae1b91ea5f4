//! Tracking and extraction metrics.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::angles::{circular_diff, wrap_to_pi, wrap_to_tau};
use crate::error::{Error, Result};

/// Absolute circular error in degrees, in [0, 180].
pub fn circular_error_deg(est: f64, truth: f64) -> f64 {
    circular_diff(est, truth).abs().to_degrees()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackMetrics {
    pub mae_deg: f64,
    /// Percentage of frames with error at or below the threshold.
    pub acc_pct: f64,
    /// Regional accuracy over time quartiles; absent without an interferer.
    pub re_acc_pct: Option<f64>,
    pub n_frames: usize,
}

/// Utterance-wise MAE and ACC at `acc_threshold_deg` (boundary inclusive).
pub fn track_metrics(est: &[f64], truth: &[f64], acc_threshold_deg: f64) -> Result<TrackMetrics> {
    if est.len() != truth.len() || est.is_empty() {
        return Err(Error::parameter("estimate and truth must have equal nonzero length"));
    }
    let mut mae = 0.0;
    let mut hits = 0usize;
    for (&e, &t) in est.iter().zip(truth) {
        let err = circular_error_deg(e, t);
        mae += err;
        // boundary inclusive, with a guard for degree/radian round-trips
        if err <= acc_threshold_deg + 1e-9 {
            hits += 1;
        }
    }
    Ok(TrackMetrics {
        mae_deg: mae / est.len() as f64,
        acc_pct: 100.0 * hits as f64 / est.len() as f64,
        re_acc_pct: None,
        n_frames: est.len(),
    })
}

/// MAE/ACC over the frames selected by `include` (the gated variant that
/// drops silent-target frames when a voice-activity mask is available).
pub fn track_metrics_masked(
    est: &[f64],
    truth: &[f64],
    include: &[bool],
    acc_threshold_deg: f64,
) -> Result<TrackMetrics> {
    if est.len() != truth.len() || est.len() != include.len() {
        return Err(Error::parameter("masked metrics need equal-length inputs"));
    }
    let (e, t): (Vec<f64>, Vec<f64>) = est
        .iter()
        .zip(truth)
        .zip(include)
        .filter(|(_, &inc)| inc)
        .map(|((e, t), _)| (*e, *t))
        .unzip();
    if e.is_empty() {
        return Err(Error::parameter("mask excludes every frame"));
    }
    track_metrics(&e, &t, acc_threshold_deg)
}

/// Half-plane expectation for one time segment: the axis through
/// `boundary_azimuth` splits the circle; the target is expected on the
/// positive side (`wrap(theta - boundary) > 0`) or the negative one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideSpec {
    pub boundary_azimuth: f64,
    pub expect_positive: bool,
}

fn circular_mean(angles: &[f64]) -> f64 {
    let re: f64 = angles.iter().map(|a| a.cos()).sum();
    let im: f64 = angles.iter().map(|a| a.sin()).sum();
    wrap_to_tau(im.atan2(re))
}

/// Segment bounds: `n_segments` half-open, equally long parts (the last
/// absorbs the remainder).
fn segment_bounds(n_frames: usize, n_segments: usize) -> Vec<(usize, usize)> {
    (0..n_segments)
        .map(|q| {
            let start = q * n_frames / n_segments;
            let end = if q + 1 == n_segments { n_frames } else { (q + 1) * n_frames / n_segments };
            (start, end)
        })
        .collect()
}

/// Expected-side specifications per time quartile, derived from the true
/// target and interferer azimuths: the boundary is the circular midpoint of
/// the two speakers' segment means.
pub fn side_specs_from_truth(
    target: &[f64],
    interferer: &[f64],
    n_segments: usize,
) -> Vec<SideSpec> {
    segment_bounds(target.len().min(interferer.len()), n_segments)
        .into_iter()
        .map(|(a, b)| {
            let t_mean = circular_mean(&target[a..b]);
            let i_mean = circular_mean(&interferer[a..b]);
            let half_gap = circular_diff(t_mean, i_mean) / 2.0;
            // boundary at the circular midpoint between the two speakers
            let boundary = wrap_to_tau(i_mean + half_gap);
            SideSpec { boundary_azimuth: boundary, expect_positive: half_gap > 0.0 }
        })
        .collect()
}

/// Fraction of estimates on the expected array side, averaged over the
/// segments, in percent.
pub fn regional_accuracy(track: &[f64], side_specs: &[SideSpec]) -> f64 {
    let bounds = segment_bounds(track.len(), side_specs.len());
    let mut acc = 0.0;
    for ((a, b), spec) in bounds.into_iter().zip(side_specs) {
        if a == b {
            continue;
        }
        let ok = track[a..b]
            .iter()
            .filter(|&&theta| {
                let side = wrap_to_pi(theta - spec.boundary_azimuth) > 0.0;
                side == spec.expect_positive
            })
            .count();
        acc += ok as f64 / (b - a) as f64;
    }
    100.0 * acc / side_specs.len() as f64
}

/// Regional accuracy of the final segment only (speaker-confusion probe).
pub fn final_segment_regional_accuracy(track: &[f64], side_specs: &[SideSpec]) -> f64 {
    let bounds = segment_bounds(track.len(), side_specs.len());
    let (a, b) = *bounds.last().expect("segments");
    let spec = side_specs.last().expect("segments");
    let ok = track[a..b]
        .iter()
        .filter(|&&theta| (wrap_to_pi(theta - spec.boundary_azimuth) > 0.0) == spec.expect_positive)
        .count();
    100.0 * ok as f64 / (b - a).max(1) as f64
}

/// MAE/ACC plus quartile regional accuracy against an interferer.
pub fn track_metrics_with_interferer(
    est: &[f64],
    truth: &[f64],
    interferer: &[f64],
    acc_threshold_deg: f64,
) -> Result<TrackMetrics> {
    let mut m = track_metrics(est, truth, acc_threshold_deg)?;
    let specs = side_specs_from_truth(truth, interferer, 4);
    m.re_acc_pct = Some(regional_accuracy(est, &specs));
    Ok(m)
}

/// Sample mean and half-width of the 95 % t-distribution confidence
/// interval.
pub fn aggregate(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::parameter("need at least two samples"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Ok((mean, 0.0));
    }
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .map_err(|e| Error::numerical(format!("t distribution: {e}")))?
        .inverse_cdf(0.975);
    Ok((mean, t * (var / n).sqrt()))
}

/// Scale-invariant signal-to-distortion ratio in dB.
pub fn si_sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    if est.len() != reference.len() || est.is_empty() {
        return Err(Error::parameter("signals must have equal nonzero length"));
    }
    let dot: f64 = est.iter().zip(reference).map(|(e, r)| e * r).sum();
    let ref_energy: f64 = reference.iter().map(|r| r * r).sum();
    if ref_energy <= 0.0 {
        return Err(Error::parameter("silent reference"));
    }
    let alpha = dot / ref_energy;
    let mut signal = 0.0;
    let mut distortion = 0.0;
    for (e, r) in est.iter().zip(reference) {
        let s = alpha * r;
        signal += s * s;
        distortion += (e - s) * (e - s);
    }
    Ok(10.0 * (signal / distortion.max(1e-300)).log10())
}
