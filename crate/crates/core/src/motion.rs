//! Social-force motion model for planar speaker trajectories.
//!
//! Speakers are driven toward randomly resampled goals and repelled by
//! exponential potentials: per-wall line potentials plus elliptical
//! potentials around the microphone array and the other speakers. The
//! coupled ODEs are integrated with a semi-implicit Euler scheme and the
//! resulting paths are resampled onto the STFT frame grid.

use nalgebra::Vector2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::angles::{circular_diff, wrap_to_tau};
use crate::error::{Error, Result};
use crate::rng::derive_rng;

pub type Vec2 = Vector2<f64>;

/// Shoe-box room footprint `[0, width] x [0, length]` with the array inside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub width: f64,
    pub length: f64,
    pub array_center: [f64; 2],
}

impl RoomSpec {
    pub fn new(width: f64, length: f64, array_center: [f64; 2]) -> Result<Self> {
        let room = Self { width, length, array_center };
        if width <= 0.0 || length <= 0.0 {
            return Err(Error::parameter("room dimensions must be positive"));
        }
        if !room.contains(&Vec2::new(array_center[0], array_center[1])) {
            return Err(Error::parameter("array center outside room"));
        }
        Ok(room)
    }

    /// Random 4-8 m footprint with the array in the central 20 % of the
    /// floor plan.
    pub fn sample(rng: &mut impl Rng) -> Self {
        let width = rng.gen_range(4.0..=8.0);
        let length = rng.gen_range(4.0..=8.0);
        let cx = width * rng.gen_range(0.4..=0.6);
        let cy = length * rng.gen_range(0.4..=0.6);
        Self { width, length, array_center: [cx, cy] }
    }

    pub fn contains(&self, p: &Vec2) -> bool {
        p.x > 0.0 && p.x < self.width && p.y > 0.0 && p.y < self.length
    }

    pub fn array_center_vec(&self) -> Vec2 {
        Vec2::new(self.array_center[0], self.array_center[1])
    }

    /// Distance to the closest wall (negative outside).
    pub fn wall_clearance(&self, p: &Vec2) -> f64 {
        p.x.min(self.width - p.x).min(p.y).min(self.length - p.y)
    }

    /// Vectors from the nearest point of each of the four walls to `p`.
    fn wall_offsets(&self, p: &Vec2) -> [Vec2; 4] {
        [
            Vec2::new(p.x, 0.0),               // x = 0
            Vec2::new(p.x - self.width, 0.0),  // x = width
            Vec2::new(0.0, p.y),               // y = 0
            Vec2::new(0.0, p.y - self.length), // y = length
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerState {
    pub position: Vec2,
    pub velocity: Vec2,
    pub goal: Vec2,
    pub desired_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfmParams {
    /// Relaxation time of the driving force (s).
    pub tau: f64,
    /// Exponential scale of the wall potential (m).
    pub b_wall: f64,
    /// Minimum wall distance the amplitude is calibrated for (m).
    pub eps_wall: f64,
    /// Minimum speaker-to-array distance (m).
    pub eps_array: f64,
    /// Exponential scale of the array potential (m).
    pub b_array: f64,
    /// Inter-speaker potential amplitude (m^2/s^2).
    pub a_social: f64,
    /// Inter-speaker exponential scale (m).
    pub b_social: f64,
    /// Anisotropy horizon shifting the elliptical focal point (s).
    pub dt_aniso: f64,
    /// Goal reached when the speaker comes this close (m).
    pub goal_radius: f64,
    /// Minimum distance from the speaker to a freshly sampled goal (m).
    /// Falls back to half on exhaustion so small rooms stay feasible.
    pub goal_min_dist: f64,
    /// Largest heading change a moving speaker accepts for a new goal (deg).
    pub goal_max_turn_deg: f64,
    pub speed_mean: f64,
    pub speed_std: f64,
    /// Integrator step (s).
    pub euler_step: f64,
}

impl Default for SfmParams {
    fn default() -> Self {
        Self {
            tau: 1.0,
            b_wall: 0.2,
            eps_wall: 0.5,
            eps_array: 0.5,
            b_array: 0.2,
            a_social: 2.1,
            b_social: 0.3,
            dt_aniso: 2.0,
            goal_radius: 0.5,
            goal_min_dist: 2.5,
            goal_max_turn_deg: 45.0,
            speed_mean: 1.34,
            speed_std: 0.26,
            euler_step: 0.01,
        }
    }
}

impl SfmParams {
    /// Wall amplitude from equating kinetic energy at the desired speed with
    /// the potential at the minimum distance.
    pub fn wall_amplitude(&self, desired_speed: f64) -> f64 {
        0.5 * desired_speed * desired_speed * (self.eps_wall / self.b_wall).exp()
    }

    /// Array amplitude, quasi-static case of the elliptical potential where
    /// the semi-minor axis reduces to the distance.
    pub fn array_amplitude(&self, desired_speed: f64) -> f64 {
        0.5 * desired_speed * desired_speed * (2.0 * self.eps_array / self.b_array).exp()
    }
}

/// Goal-seeking force `(v_des - v) / tau`.
pub fn driving_force(state: &SpeakerState, params: &SfmParams) -> Vec2 {
    let to_goal = state.goal - state.position;
    let dist = to_goal.norm();
    if dist < 1e-9 {
        return Vec2::zeros();
    }
    let v_des = to_goal * (state.desired_speed / dist);
    (v_des - state.velocity) / params.tau
}

/// Sum of the four per-wall exponential repulsions.
pub fn wall_force(state: &SpeakerState, room: &RoomSpec, params: &SfmParams) -> Result<Vec2> {
    if !room.contains(&state.position) {
        return Err(Error::numerical(format!(
            "speaker left the room at ({:.3}, {:.3})",
            state.position.x, state.position.y
        )));
    }
    let amp = params.wall_amplitude(state.desired_speed);
    let mut f = Vec2::zeros();
    for d in room.wall_offsets(&state.position) {
        let dist = d.norm();
        if dist < 1e-12 {
            continue;
        }
        f += d * (amp * (-dist / params.b_wall).exp() / (params.b_wall * dist));
    }
    Ok(f)
}

/// Force of an elliptical exponential potential centered at `center`.
///
/// The equipotential contours are ellipses whose semi-minor axis `b`
/// satisfies `2b = sqrt((|d| + |d + dt*v_rel|)^2 - (dt*|v_rel|)^2)` with
/// `d = r_self - center`, elongating opposite to the approach velocity.
/// Degenerate geometry (the square-root argument vanishing, i.e. the center
/// lying on the swept segment) falls back to the circular potential
/// `b = |d|`.
pub fn elliptical_force(
    r_self: &Vec2,
    v_rel: &Vec2,
    center: &Vec2,
    amplitude: f64,
    scale: f64,
    dt_aniso: f64,
) -> Vec2 {
    let d = r_self - center;
    let l1 = d.norm();
    if l1 < 1e-9 {
        return Vec2::zeros();
    }
    let e = d + v_rel * dt_aniso;
    let l2 = e.norm();
    let sum = l1 + l2;
    let c = dt_aniso * v_rel.norm();
    let arg = sum * sum - c * c;
    if arg <= 1e-12 || l2 < 1e-9 {
        // collinear-behind case: circular potential with b = |d|
        let two_b = 2.0 * l1;
        return d * (2.0 * amplitude * (-two_b / scale).exp() / (scale * l1));
    }
    let two_b = arg.sqrt();
    let grad_two_b = (d / l1 + e / l2) * (sum / two_b);
    grad_two_b * (amplitude * (-two_b / scale).exp() / scale)
}

/// Potential value of the elliptical repulsion (used by energy checks).
pub fn elliptical_potential(
    r_self: &Vec2,
    v_rel: &Vec2,
    center: &Vec2,
    amplitude: f64,
    scale: f64,
    dt_aniso: f64,
) -> f64 {
    let d = r_self - center;
    let l1 = d.norm();
    let e = d + v_rel * dt_aniso;
    let sum = l1 + e.norm();
    let c = dt_aniso * v_rel.norm();
    let arg = (sum * sum - c * c).max(0.0);
    let two_b = if arg <= 1e-12 { 2.0 * l1 } else { arg.sqrt() };
    amplitude * (-two_b / scale).exp()
}

/// Total force on speaker `i` given the full population.
fn total_force(
    i: usize,
    states: &[SpeakerState],
    room: &RoomSpec,
    params: &SfmParams,
) -> Result<Vec2> {
    let s = &states[i];
    let mut f = driving_force(s, params) + wall_force(s, room, params)?;
    f += elliptical_force(
        &s.position,
        &s.velocity,
        &room.array_center_vec(),
        params.array_amplitude(s.desired_speed),
        params.b_array,
        params.dt_aniso,
    );
    for (j, other) in states.iter().enumerate() {
        if j != i {
            f += elliptical_force(
                &s.position,
                &(s.velocity - other.velocity),
                &other.position,
                params.a_social,
                params.b_social,
                params.dt_aniso,
            );
        }
    }
    Ok(f)
}

/// One Euler step over all speakers; goals inside `goal_radius` are
/// resampled afterwards.
pub fn step(
    states: &mut [SpeakerState],
    room: &RoomSpec,
    params: &SfmParams,
    rng: &mut impl Rng,
) -> Result<()> {
    let h = params.euler_step;
    let forces: Vec<Vec2> = (0..states.len())
        .map(|i| total_force(i, states, room, params))
        .collect::<Result<_>>()?;
    for (s, f) in states.iter_mut().zip(&forces) {
        if !f.x.is_finite() || !f.y.is_finite() {
            return Err(Error::numerical(format!(
                "non-finite force at ({:.3}, {:.3})",
                s.position.x, s.position.y
            )));
        }
        s.velocity += f * h;
        s.position += s.velocity * h;
        if (s.goal - s.position).norm() <= params.goal_radius {
            s.goal = sample_goal(room, params, &s.position, &s.velocity, rng)?;
        }
    }
    Ok(())
}

/// Uniform goal inside the room, clear of walls, array and the speaker's
/// current position. A moving speaker rejects goals far off its heading so
/// successive legs connect without hairpin turns.
fn sample_goal(
    room: &RoomSpec,
    params: &SfmParams,
    current: &Vec2,
    velocity: &Vec2,
    rng: &mut impl Rng,
) -> Result<Vec2> {
    let array = room.array_center_vec();
    let mut min_dist = params.goal_min_dist;
    let mut max_turn = params.goal_max_turn_deg;
    loop {
        for _ in 0..2_000 {
            let g =
                Vec2::new(rng.gen_range(0.0..room.width), rng.gen_range(0.0..room.length));
            if room.wall_clearance(&g) < params.eps_wall {
                continue;
            }
            if (g - array).norm() < params.eps_array {
                continue;
            }
            let leg = g - current;
            if leg.norm() < min_dist {
                continue;
            }
            if velocity.norm() > 0.3 && max_turn < 180.0 {
                let cos_turn = leg.dot(velocity) / (leg.norm() * velocity.norm());
                if cos_turn < max_turn.to_radians().cos() {
                    continue;
                }
            }
            return Ok(g);
        }
        min_dist *= 0.5;
        max_turn += 45.0;
        if min_dist < 0.05 {
            return Err(Error::Sampling("could not sample a goal".into()));
        }
    }
}

/// Planar positions on the STFT frame grid (one entry per hop).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub positions: Vec<[f64; 2]>,
    pub frame_hop: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn azimuth(&self, frame: usize, array_center: &[f64; 2]) -> f64 {
        let p = self.positions[frame];
        wrap_to_tau((p[1] - array_center[1]).atan2(p[0] - array_center[0]))
    }

    pub fn distance(&self, frame: usize, array_center: &[f64; 2]) -> f64 {
        let p = self.positions[frame];
        ((p[0] - array_center[0]).powi(2) + (p[1] - array_center[1]).powi(2)).sqrt()
    }

    pub fn azimuth_series(&self, array_center: &[f64; 2]) -> Vec<f64> {
        (0..self.len()).map(|i| self.azimuth(i, array_center)).collect()
    }

    /// Linear interpolation between frames, clamped at the ends.
    pub fn position_at_time(&self, t: f64) -> [f64; 2] {
        let x = (t / self.frame_hop).max(0.0);
        let i = (x.floor() as usize).min(self.len() - 1);
        let j = (i + 1).min(self.len() - 1);
        let frac = (x - i as f64).clamp(0.0, 1.0);
        let (a, b) = (self.positions[i], self.positions[j]);
        [a[0] + frac * (b[0] - a[0]), a[1] + frac * (b[1] - a[1])]
    }

    pub fn mean_speed(&self) -> f64 {
        if self.len() < 2 {
            return 0.0;
        }
        let mut total = 0.0;
        for w in self.positions.windows(2) {
            total += ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
        }
        total / ((self.len() - 1) as f64 * self.frame_hop)
    }
}

/// Count azimuth crossings between two trajectories around `array_center`.
pub fn azimuth_crossings(a: &Trajectory, b: &Trajectory, array_center: &[f64; 2]) -> usize {
    let n = a.len().min(b.len());
    let mut crossings = 0;
    let mut prev = 0.0f64;
    for i in 0..n {
        let diff = circular_diff(a.azimuth(i, array_center), b.azimuth(i, array_center));
        if i > 0 && diff.signum() != prev.signum() && diff.abs() < 0.5 && prev.abs() < 0.5 {
            crossings += 1;
        }
        prev = diff;
    }
    crossings
}

/// Integrate `n_speakers` social-force trajectories and resample them onto
/// the frame grid. Deterministic in `seed`; fails if the initial azimuth
/// separation constraint cannot be met (callers then resample the room).
pub fn generate_trajectory(
    room: &RoomSpec,
    n_speakers: usize,
    duration: f64,
    frame_hop: f64,
    params: &SfmParams,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    const MIN_SEPARATION_DEG: f64 = 15.0;
    if n_speakers == 0 {
        return Err(Error::parameter("need at least one speaker"));
    }
    if duration <= 0.0 || frame_hop <= 0.0 || params.euler_step <= 0.0 {
        return Err(Error::parameter("duration, hop and euler step must be positive"));
    }
    let mut rng = derive_rng(seed, &[0x5f_4d]);
    let speed_dist = Normal::new(params.speed_mean, params.speed_std)
        .map_err(|e| Error::parameter(format!("speed distribution: {e}")))?;
    let array = room.array_center_vec();

    // initial positions with clearance and >= 15 deg pairwise separation
    let mut positions: Vec<Vec2> = Vec::new();
    let mut ok = false;
    'attempts: for _ in 0..200 {
        positions.clear();
        for _ in 0..n_speakers {
            let mut placed = false;
            for _ in 0..1000 {
                let p = Vec2::new(
                    rng.gen_range(0.0..room.width),
                    rng.gen_range(0.0..room.length),
                );
                if room.wall_clearance(&p) >= params.eps_wall
                    && (p - array).norm() >= params.eps_array
                {
                    positions.push(p);
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'attempts;
            }
        }
        let azimuths: Vec<f64> = positions
            .iter()
            .map(|p| wrap_to_tau((p.y - array.y).atan2(p.x - array.x)))
            .collect();
        let separated = (0..n_speakers).all(|i| {
            (i + 1..n_speakers).all(|j| {
                circular_diff(azimuths[i], azimuths[j]).abs().to_degrees() >= MIN_SEPARATION_DEG
            })
        });
        if separated {
            ok = true;
            break;
        }
    }
    if !ok {
        return Err(Error::Sampling(
            "could not satisfy the initial azimuth separation".into(),
        ));
    }

    let mut states: Vec<SpeakerState> = positions
        .into_iter()
        .map(|p| {
            let desired_speed = speed_dist.sample(&mut rng).max(0.0);
            Ok(SpeakerState {
                position: p,
                velocity: Vec2::zeros(),
                goal: sample_goal(room, params, &p, &Vec2::zeros(), &mut rng)?,
                desired_speed,
            })
        })
        .collect::<Result<_>>()?;

    let n_steps = (duration / params.euler_step).ceil() as usize;
    let mut paths: Vec<Vec<Vec2>> = vec![Vec::with_capacity(n_steps + 1); n_speakers];
    for (i, s) in states.iter().enumerate() {
        paths[i].push(s.position);
    }
    for _ in 0..n_steps {
        step(&mut states, room, params, &mut rng)?;
        for (i, s) in states.iter().enumerate() {
            paths[i].push(s.position);
        }
    }

    // resample onto the frame grid
    let n_frames = (duration / frame_hop).ceil() as usize;
    let trajectories = paths
        .into_iter()
        .map(|path| {
            let positions = (0..n_frames)
                .map(|f| {
                    let t = f as f64 * frame_hop;
                    let x = t / params.euler_step;
                    let i = (x.floor() as usize).min(path.len() - 1);
                    let j = (i + 1).min(path.len() - 1);
                    let frac = x - i as f64;
                    let p = path[i] + (path[j] - path[i]) * frac;
                    [p.x, p.y]
                })
                .collect();
            Trajectory { positions, frame_hop }
        })
        .collect();
    Ok(trajectories)
}
