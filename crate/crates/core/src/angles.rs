//! Circular arithmetic helpers used by estimators, trackers and metrics.

use std::f64::consts::{PI, TAU};

/// Wrap an angle to (-pi, pi].
pub fn wrap_to_pi(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(TAU);
    if a > PI {
        a -= TAU;
    }
    a
}

/// Wrap an angle to [0, 2*pi).
pub fn wrap_to_tau(angle: f64) -> f64 {
    angle.rem_euclid(TAU)
}

/// Signed circular difference `a - b`, wrapped to (-pi, pi].
pub fn circular_diff(a: f64, b: f64) -> f64 {
    wrap_to_pi(a - b)
}

/// Weighted circular mean together with the normalized resultant length.
///
/// Returns `None` when the total weight is zero. The resultant length is in
/// [0, 1]; values near zero indicate an uninformative (antipodal or uniform)
/// angle set.
pub fn circular_mean_weighted<I>(pairs: I) -> Option<(f64, f64)>
where
    I: IntoIterator<Item = (f64, f64)>,
{
    let (mut re, mut im, mut total) = (0.0, 0.0, 0.0);
    for (angle, weight) in pairs {
        re += weight * angle.cos();
        im += weight * angle.sin();
        total += weight;
    }
    if total <= 0.0 {
        return None;
    }
    let mean = im.atan2(re);
    let resultant = (re * re + im * im).sqrt() / total;
    Some((wrap_to_tau(mean), resultant))
}

pub fn deg_to_rad(deg: f64) -> f64 {
    deg * PI / 180.0
}

pub fn rad_to_deg(rad: f64) -> f64 {
    rad * 180.0 / PI
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn wrapping() {
        assert_abs_diff_eq!(wrap_to_pi(3.0 * PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_to_pi(-PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_to_tau(-0.1), TAU - 0.1, epsilon = 1e-12);
        // measurement at 5 deg, prediction at 355 deg: +10 deg innovation
        let innov = circular_diff(deg_to_rad(5.0), deg_to_rad(355.0));
        assert_abs_diff_eq!(rad_to_deg(innov), 10.0, epsilon = 1e-9);
    }

    #[test]
    fn circular_mean_basics() {
        let (mean, r) = circular_mean_weighted([(0.1, 1.0), (0.3, 1.0)]).unwrap();
        assert_abs_diff_eq!(mean, 0.2, epsilon = 1e-12);
        assert!(r > 0.99);
        // antipodal cancellation
        let (_, r) = circular_mean_weighted([(0.0, 1.0), (PI, 1.0)]).unwrap();
        assert!(r < 1e-9);
        assert!(circular_mean_weighted(std::iter::empty()).is_none());
    }
}
