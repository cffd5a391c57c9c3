//! Rotary position encoding viewed as a U(1) phase rotation of each
//! two-dimensional feature pair, and the curvature of the potential trough
//! along and across that rotation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::langevin::{cw_gradient, cw_potential, CWPotentialParams};

/// Default frequency base for [`default_theta_schedule`].
pub const DEFAULT_ROPE_BASE: f64 = 10_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotaryParams {
    pub theta_base: f64,
    pub position: u64,
}

impl RotaryParams {
    pub fn new(theta_base: f64, position: u64) -> Result<Self> {
        if !(theta_base > 0.0 && theta_base < std::f64::consts::PI) {
            return Err(Error::invalid(format!("theta_base must lie in (0, π), got {theta_base}")));
        }
        Ok(Self { theta_base, position })
    }

    pub fn angle(&self) -> f64 {
        self.position as f64 * self.theta_base
    }
}

fn rotate(q1: f64, q2: f64, angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (q1 * c - q2 * s, q1 * s + q2 * c)
}

pub fn rotate_pair(q1: f64, q2: f64, params: &RotaryParams) -> (f64, f64) {
    if params.position == 0 {
        return (q1, q2);
    }
    rotate(q1, q2, params.angle())
}

/// Change of the two-component potential under the rotation.
///
/// The potential depends on the field only through `|Φ|²`, so the shift is
/// evaluated on the rotated squared norm. The rotation preserves that norm
/// up to rounding, which is what makes the returned value vanish.
pub fn rope_energy_shift(q1: f64, q2: f64, params: &RotaryParams, pot: &CWPotentialParams) -> Result<f64> {
    let (r1, r2) = rotate_pair(q1, q2, params);
    Ok(cw_potential(&[r1, r2], pot)? - cw_potential(&[q1, q2], pot)?)
}

/// Radial and angular curvature of the potential at the broken-phase trough.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureSplit {
    pub radius: f64,
    pub radial: f64,
    pub angular: f64,
}

/// Central finite differences with step `h = 1e-4·r*` at `(r*, 0)`.
///
/// The radial value is the second difference of `V` along the real axis. The
/// angular value is the central difference, along the trough circle, of the
/// tangential derivative `t̂·∇V`; differencing the gradient rather than `V`
/// keeps rounding in `V` itself (of order `ulp(V)/h²`) out of the result.
pub fn curvature_split(pot: &CWPotentialParams) -> Result<CurvatureSplit> {
    pot.validate()?;
    let r = pot.trough_radius();
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::invalid("potential has no broken-phase minimum"));
    }
    let h = 1e-4 * r;
    let v = |x: f64| cw_potential(&[x, 0.0], pot);
    let radial = (v(r + h)? - 2.0 * v(r)? + v(r - h)?) / (h * h);

    let dtheta = h / r;
    let tangential = |theta: f64| -> Result<f64> {
        let (s, c) = theta.sin_cos();
        let g = cw_gradient(&[r * c, r * s], pot)?;
        Ok(-s * g[0] + c * g[1])
    };
    let angular = (tangential(dtheta)? - tangential(-dtheta)?) / (2.0 * h);
    Ok(CurvatureSplit { radius: r, radial, angular })
}

/// `θ_i = base^{−2i/d}` for `i = 0 .. d/2`.
pub fn default_theta_schedule(d: usize, base: f64) -> Result<Vec<f64>> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(Error::invalid(format!("rotary dimension must be even and positive, got {d}")));
    }
    Ok((0..d / 2).map(|i| base.powf(-2.0 * i as f64 / d as f64)).collect())
}

/// Rotates pair `(2i, 2i+1)` by `position·theta_schedule[i]`.
pub fn apply_rope(x: &[f64], position: i64, theta_schedule: &[f64]) -> Result<Vec<f64>> {
    if !x.len().is_multiple_of(2) {
        return Err(Error::invalid(format!("odd dimension {}", x.len())));
    }
    if theta_schedule.len() != x.len() / 2 {
        return Err(Error::invalid(format!("schedule length {} for dimension {}", theta_schedule.len(), x.len())));
    }
    if position == 0 {
        return Ok(x.to_vec());
    }
    let mut out = Vec::with_capacity(x.len());
    for (pair, &theta) in x.chunks(2).zip(theta_schedule) {
        let (a, b) = rotate(pair[0], pair[1], position as f64 * theta);
        out.push(a);
        out.push(b);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn rotation_examples() {
        let id = RotaryParams::new(0.3, 0).unwrap();
        assert_eq!(rotate_pair(0.2, -0.7, &id), (0.2, -0.7));
        let quarter = RotaryParams::new(FRAC_PI_2, 1).unwrap();
        let (a, b) = rotate_pair(1.0, 0.0, &quarter);
        assert!(a.abs() < 1e-15 && (b - 1.0).abs() < 1e-15);
        let half = RotaryParams::new(FRAC_PI_2, 2).unwrap();
        let (a, b) = rotate_pair(0.6, 0.8, &half);
        assert!((a + 0.6).abs() < 1e-15 && (b + 0.8).abs() < 1e-15);
        assert!(RotaryParams::new(PI, 1).is_err());
    }

    #[test]
    fn energy_shift_examples() {
        let pot = CWPotentialParams::new(0.5, 2.0, 1.0).unwrap();
        let p = RotaryParams::new(0.1, 7).unwrap();
        assert!(rope_energy_shift(1.3, -0.4, &p, &pot).unwrap().abs() < 1e-12);
        assert_eq!(rope_energy_shift(0.0, 0.0, &p, &pot).unwrap(), 0.0);
    }

    #[test]
    fn curvature_examples() {
        let pot = CWPotentialParams::new(0.0, 1.0, 1.0).unwrap();
        let c = curvature_split(&pot).unwrap();
        assert!(c.angular.abs() < 1e-8);
        // V(r) = r² ln r² has V''(r*) = 4 at r* = e^{-1/2}.
        assert!((c.radial - 4.0).abs() < 1e-5);
        let doubled = curvature_split(&CWPotentialParams::new(0.0, 2.0, 1.0).unwrap()).unwrap();
        assert!((doubled.radial / c.radial - 2.0).abs() < 1e-6);
    }

    #[test]
    fn rope_shape_errors_and_identity() {
        assert!(apply_rope(&[1.0, 2.0, 3.0], 1, &[0.1]).is_err());
        assert!(apply_rope(&[1.0, 2.0], 1, &[0.1, 0.2]).is_err());
        assert_eq!(apply_rope(&[1.0, 2.0], 0, &[0.1]).unwrap(), vec![1.0, 2.0]);
        let p = RotaryParams::new(0.1, 3).unwrap();
        let (a, b) = rotate_pair(0.4, 0.9, &p);
        assert_eq!(apply_rope(&[0.4, 0.9], 3, &[0.1]).unwrap(), vec![a, b]);
    }

    proptest! {
        #[test]
        fn rotations_preserve_norm(q in prop::collection::vec(-10.0..10.0f64, 8), m in -500i64..500) {
            let sched = default_theta_schedule(8, DEFAULT_ROPE_BASE).unwrap();
            let r = apply_rope(&q, m, &sched).unwrap();
            prop_assert!((dot(&r, &r).sqrt() - dot(&q, &q).sqrt()).abs() < 1e-10);
        }

        #[test]
        fn relative_position(q in prop::collection::vec(-3.0..3.0f64, 8),
                             k in prop::collection::vec(-3.0..3.0f64, 8),
                             m in 0i64..200, n in 0i64..200) {
            let sched = default_theta_schedule(8, DEFAULT_ROPE_BASE).unwrap();
            let lhs = dot(&apply_rope(&q, m, &sched).unwrap(), &apply_rope(&k, n, &sched).unwrap());
            let rhs = dot(&apply_rope(&q, m - n, &sched).unwrap(), &k);
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }

        #[test]
        fn angular_curvature_is_flat(beta in 0.05..5.0f64, frac in -3.0..0.99f64, v in 0.2..5.0f64) {
            let pot = CWPotentialParams::new(frac * beta, beta, v).unwrap();
            let c = curvature_split(&pot).unwrap();
            prop_assert!(c.angular.abs() < 1e-8);
            prop_assert!(c.radial > 0.0);
        }
    }
}
