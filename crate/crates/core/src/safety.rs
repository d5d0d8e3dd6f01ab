//! Barrier potential, its gradients, and the adaptive safety blend
//! `u = alpha * pi + (1 - alpha) * b`.
//!
//! Every relative vector `pbar` points from the robot toward the sensed object,
//! so the potential gradient points toward the objects and the barrier action
//! `b = -k_p * grad` pushes away from them.

use serde::{Deserialize, Serialize};

use crate::error::{GlasError, Result};
use crate::geom::Vec2;
use crate::observation::Observation;
use crate::world::Dynamics;

/// Floor on `|pbar| - r_safe` below which the barrier terms are declared singular.
pub const EPSILON_DIV: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SafetyParams {
    pub r_sense: f64,
    pub r_safe: f64,
    pub delta_r: f64,
    pub k_p: f64,
    pub k_v: f64,
    pub k_c: f64,
    pub epsilon: f64,
    pub pi_max: f64,
    pub u_max: f64,
    /// Rescale blended actions to `u_max`. Voids the safety guarantee.
    pub clamp_u_max: bool,
    pub dynamics: Dynamics,
}

impl Default for SafetyParams {
    fn default() -> Self {
        Self {
            r_sense: 3.0,
            r_safe: 0.15,
            delta_r: 0.05,
            k_p: 1.0,
            k_v: 2.0,
            k_c: 0.0,
            epsilon: 0.01,
            pi_max: 1.0,
            u_max: 1.0,
            clamp_u_max: false,
            dynamics: Dynamics::Single,
        }
    }
}

impl SafetyParams {
    /// Defaults for a dynamics kind. Double integrators get a wider boundary
    /// layer and stronger damping so the barrier engages early enough to be
    /// resolved by a 0.01 s control period.
    pub fn for_dynamics(dynamics: Dynamics) -> Self {
        match dynamics {
            Dynamics::Single => Self::default(),
            Dynamics::Double => Self {
                dynamics,
                k_v: 4.0,
                delta_r: 0.2,
                ..Self::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.r_safe > 0.0
            && self.r_safe < self.r_sense
            && self.delta_r > 0.0
            && self.delta_r < self.r_sense - self.r_safe
            && self.epsilon > 0.0
            && self.epsilon < 1.0
            && self.k_p > 0.0
            && self.k_v > 0.0
            && self.k_c >= 0.0
            && self.pi_max > 0.0
            && self.u_max > 0.0;
        if ok {
            Ok(())
        } else {
            Err(GlasError::Precondition(format!(
                "invalid safety parameters: {self:?}"
            )))
        }
    }

    /// Safety function of a distance; infinite distance maps to infinity.
    #[inline]
    pub fn h_of_distance(&self, d: f64) -> f64 {
        (d - self.r_safe) / (self.r_sense - self.r_safe)
    }

    /// Minimum start spacing between objects, `r_safe + delta_r`.
    pub fn start_spacing(&self) -> f64 {
        self.r_safe + self.delta_r
    }
}

/// Outputs of the safety module for one robot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SafetyEval {
    pub b: Vec2,
    pub alpha: f64,
    /// Derivative of `alpha` with respect to the learned action.
    pub dalpha_dpi: Vec2,
    pub grad_psi: Vec2,
    /// Zero for single integrators.
    pub ddt_grad_psi: Vec2,
    pub min_h: f64,
    pub delta_h: f64,
    pub psi: f64,
}

#[inline]
pub fn h_value(pbar: Vec2, params: &SafetyParams) -> f64 {
    params.h_of_distance(pbar.norm())
}

/// Relative points in canonical order, neighbors first.
fn canonical_points(obs: &Observation) -> Vec<Vec2> {
    let mut pts: Vec<Vec2> = obs
        .canonical_neighbors()
        .iter()
        .map(|n| n.position)
        .collect();
    pts.extend(obs.canonical_obstacles());
    pts
}

/// `-sum(log h)` over the retained neighbors and obstacles.
pub fn psi_local(obs: &Observation, params: &SafetyParams) -> Result<f64> {
    let mut psi = 0.0;
    for pbar in canonical_points(obs) {
        let h = h_value(pbar, params);
        if h <= 0.0 {
            return Err(GlasError::SafetyViolation {
                h,
                distance: pbar.norm(),
            });
        }
        psi -= h.ln();
    }
    Ok(psi)
}

#[inline]
fn barrier_denominator(pbar: Vec2, params: &SafetyParams) -> Result<(f64, f64)> {
    let d = pbar.norm();
    let gap = d - params.r_safe;
    if gap <= EPSILON_DIV {
        return Err(GlasError::Singularity {
            distance: d,
            tolerance: EPSILON_DIV,
        });
    }
    Ok((d, gap))
}

/// Gradient of [`psi_local`] with respect to the robot's own position:
/// `sum pbar / (|pbar| (|pbar| - r_safe))`.
pub fn grad_psi(obs: &Observation, params: &SafetyParams) -> Result<Vec2> {
    let mut g = Vec2::ZERO;
    for pbar in canonical_points(obs) {
        let (d, gap) = barrier_denominator(pbar, params)?;
        g += pbar / (d * gap);
    }
    Ok(g)
}

/// Time derivative of [`grad_psi`] while the robot moves with velocity `v_i`.
///
/// A robot neighbor moves with its observed relative velocity, which equals
/// `-v_i` when the neighbor is at rest. For an obstacle the closest point
/// slides along the face it projects onto, so only the components of `pbar`
/// that are nonzero (outside the obstacle's slab) change.
pub fn ddt_grad_psi(obs: &Observation, v_i: Vec2, params: &SafetyParams) -> Result<Vec2> {
    let term = |pbar: Vec2, pdot: Vec2| -> Result<Vec2> {
        let (d, gap) = barrier_denominator(pbar, params)?;
        let den = d * gap;
        let ddot = pbar.dot(pdot) / d;
        let den_dot = ddot * (2.0 * d - params.r_safe);
        Ok(pdot / den - pbar * (den_dot / (den * den)))
    };
    let mut out = Vec2::ZERO;
    for n in obs.canonical_neighbors() {
        out += term(n.position, n.velocity)?;
    }
    for pbar in obs.canonical_obstacles() {
        let pdot = Vec2::new(
            if pbar.x != 0.0 { -v_i.x } else { 0.0 },
            if pbar.y != 0.0 { -v_i.y } else { 0.0 },
        );
        out += term(pbar, pdot)?;
    }
    Ok(out)
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Common prefix of both controllers: violation check, `psi`, `grad`, margin.
fn potential(obs: &Observation, params: &SafetyParams) -> Result<(f64, f64, f64, Vec2)> {
    let min_h = obs.raw_min_h(params);
    if min_h <= 0.0 {
        return Err(GlasError::SafetyViolation {
            h: min_h,
            distance: obs.raw_min_dist,
        });
    }
    let psi = psi_local(obs, params)?;
    let g = grad_psi(obs, params)?;
    Ok((min_h, min_h - params.delta_r, psi, g))
}

/// Barrier action and adaptive gain for single integrators.
pub fn safe_control_si(obs: &Observation, pi: Vec2, params: &SafetyParams) -> Result<SafetyEval> {
    let (min_h, delta_h, psi, g) = potential(obs, params)?;
    let b = g * -params.k_p;
    let (alpha, dalpha_dpi) = if delta_h >= 0.0 {
        (1.0 - params.epsilon, Vec2::ZERO)
    } else {
        let g2 = g.norm_squared();
        let num = (params.k_p - params.k_c) * g2;
        let s = g.dot(pi);
        let den = params.k_p * g2 + s.abs();
        gain(num, den, g * sign(s))
    };
    Ok(SafetyEval {
        b,
        alpha,
        dalpha_dpi,
        grad_psi: g,
        ddt_grad_psi: Vec2::ZERO,
        min_h,
        delta_h,
        psi,
    })
}

/// `num / den` clamped to `[0, 1]`, with its derivative given `d|.|/dpi = dabs`.
#[inline]
fn gain(num: f64, den: f64, dabs: Vec2) -> (f64, Vec2) {
    if den <= 0.0 {
        return (0.0, Vec2::ZERO);
    }
    let a = num / den;
    if a <= 0.0 {
        (0.0, Vec2::ZERO)
    } else if a >= 1.0 {
        (1.0, Vec2::ZERO)
    } else {
        (a, dabs * (-num / (den * den)))
    }
}

/// Backstepping barrier action and adaptive gain for double integrators.
pub fn safe_control_di(
    obs: &Observation,
    v_i: Vec2,
    pi: Vec2,
    params: &SafetyParams,
) -> Result<SafetyEval> {
    let (min_h, delta_h, psi, g) = potential(obs, params)?;
    let gd = ddt_grad_psi(obs, v_i, params)?;
    let (kp, kv) = (params.k_p, params.k_v);
    let w = v_i + g * kp;
    let b = w * -kv - gd * kp - g * kp;
    let (alpha, dalpha_dpi) = if delta_h >= 0.0 {
        (1.0 - params.epsilon, Vec2::ZERO)
    } else {
        let a1 = kv * w.norm_squared() + kp * kp * g.norm_squared();
        let a2 = kp * v_i.dot(g) + w.dot(pi + gd * kp);
        let lyap = kp * psi + 0.5 * w.norm_squared();
        gain(a1 - params.k_c * lyap, a1 + a2.abs(), w * sign(a2))
    };
    Ok(SafetyEval {
        b,
        alpha,
        dalpha_dpi,
        grad_psi: g,
        ddt_grad_psi: gd,
        min_h,
        delta_h,
        psi,
    })
}

/// Dispatches on the observation's dynamics.
pub fn safe_control(obs: &Observation, pi: Vec2, params: &SafetyParams) -> Result<SafetyEval> {
    match obs.dynamics {
        Dynamics::Single => safe_control_si(obs, pi, params),
        Dynamics::Double => safe_control_di(obs, obs.own_velocity(), pi, params),
    }
}

/// Convex combination of the learned and barrier actions. The flag reports
/// whether the optional `u_max` clamp rescaled the result.
pub fn blend(pi: Vec2, eval: &SafetyEval, params: &SafetyParams) -> (Vec2, bool) {
    let u = pi * eval.alpha + eval.b * (1.0 - eval.alpha);
    if params.clamp_u_max && u.norm() > params.u_max {
        (u.clamp_norm(params.u_max), true)
    } else {
        (u, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::Neighbor;

    fn p(r_safe: f64, r_sense: f64) -> SafetyParams {
        SafetyParams {
            r_safe,
            r_sense,
            delta_r: 0.05,
            ..SafetyParams::default()
        }
    }

    fn obs_with(points: &[Vec2]) -> Observation {
        let mut o = Observation::empty(Dynamics::Single, Vec2::new(1.0, 0.0), Vec2::ZERO);
        o.neighbors = points
            .iter()
            .map(|&position| Neighbor {
                position,
                velocity: Vec2::ZERO,
            })
            .collect();
        o.refresh_min_dist();
        o
    }

    #[test]
    fn h_examples() {
        let params = p(0.2, 1.0);
        assert_eq!(h_value(Vec2::new(1.0, 0.0), &params), 1.0);
        assert_eq!(h_value(Vec2::new(0.0, 0.2), &params), 0.0);
        assert!((h_value(Vec2::new(0.6, 0.0), &params) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn psi_examples() {
        let params = p(0.2, 1.0);
        let one = obs_with(&[Vec2::new(0.6, 0.0)]);
        assert!((psi_local(&one, &params).unwrap() - 2f64.ln()).abs() < 1e-12);
        let two = obs_with(&[Vec2::new(0.6, 0.0), Vec2::new(0.0, -0.6)]);
        assert!((psi_local(&two, &params).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(psi_local(&obs_with(&[]), &params).unwrap(), 0.0);
        let bad = obs_with(&[Vec2::new(0.1, 0.0)]);
        assert!(matches!(
            psi_local(&bad, &params),
            Err(GlasError::SafetyViolation { .. })
        ));
    }

    #[test]
    fn grad_examples() {
        let params = p(0.2, 1.0);
        let g = grad_psi(&obs_with(&[Vec2::new(0.6, 0.0)]), &params).unwrap();
        assert!((g.x - 2.5).abs() < 1e-12 && g.y == 0.0);
        assert_eq!(grad_psi(&obs_with(&[]), &params).unwrap(), Vec2::ZERO);
        assert!(matches!(
            grad_psi(&obs_with(&[Vec2::new(0.2, 0.0)]), &params),
            Err(GlasError::Singularity { .. })
        ));
    }

    #[test]
    fn barrier_is_repulsive() {
        let params = p(0.2, 1.0);
        let pbar = Vec2::new(0.25, 0.1);
        let eval = safe_control_si(&obs_with(&[pbar]), Vec2::ZERO, &params).unwrap();
        assert!(eval.b.dot(pbar) < 0.0);
    }

    #[test]
    fn ddt_examples() {
        let params = p(0.2, 1.0);
        let o = obs_with(&[Vec2::new(0.6, 0.0)]);
        assert_eq!(ddt_grad_psi(&o, Vec2::ZERO, &params).unwrap(), Vec2::ZERO);
        let a = ddt_grad_psi(&o, Vec2::new(1.0, 0.3), &params).unwrap();
        let b = ddt_grad_psi(&o, Vec2::new(2.0, 0.6), &params).unwrap();
        assert!((b.x - 2.0 * a.x).abs() < 1e-12 && (b.y - 2.0 * a.y).abs() < 1e-12);
    }

    #[test]
    fn si_alpha_examples() {
        let mut params = p(0.2, 1.0);
        params.k_p = 1.0;
        params.k_c = 0.0;
        params.delta_r = 0.9; // forces the boundary-layer branch
        let o = obs_with(&[Vec2::new(0.6, 0.0)]);
        let e = safe_control_si(&o, Vec2::new(1.0, 0.0), &params).unwrap();
        assert!(e.delta_h < 0.0);
        assert!((e.alpha - 5.0 / 7.0).abs() < 1e-12);
        assert!((e.b.x + 2.5).abs() < 1e-12 && e.b.y == 0.0);

        params.delta_r = 0.05;
        let e = safe_control_si(&o, Vec2::new(1.0, 0.0), &params).unwrap();
        assert_eq!(e.alpha, 1.0 - params.epsilon);
        assert_eq!(e.dalpha_dpi, Vec2::ZERO);

        // symmetric neighbors cancel: gridlock drives alpha to zero
        params.delta_r = 0.9;
        let o = obs_with(&[Vec2::new(0.6, 0.0), Vec2::new(-0.6, 0.0)]);
        let e = safe_control_si(&o, Vec2::new(1.0, 0.0), &params).unwrap();
        assert_eq!(e.alpha, 0.0);
        assert_eq!(e.b, Vec2::ZERO);
    }

    #[test]
    fn di_zero_state() {
        let mut params = p(0.2, 1.0);
        params.dynamics = Dynamics::Double;
        let mut o = Observation::empty(Dynamics::Double, Vec2::ZERO, Vec2::ZERO);
        o.refresh_min_dist();
        let e = safe_control_di(&o, Vec2::ZERO, Vec2::new(0.3, 0.0), &params).unwrap();
        assert_eq!(e.b, Vec2::ZERO);
        assert_eq!(e.alpha, 1.0 - params.epsilon);
    }

    #[test]
    fn blend_examples() {
        let params = SafetyParams::default();
        let mut e = safe_control_si(&obs_with(&[]), Vec2::ZERO, &params).unwrap();
        e.b = Vec2::new(-3.0, 0.0);
        let pi = Vec2::new(1.0, 0.0);
        e.alpha = 1.0;
        assert_eq!(blend(pi, &e, &params).0, pi);
        e.alpha = 0.0;
        assert_eq!(blend(pi, &e, &params).0, e.b);
        e.alpha = 0.5;
        assert_eq!(blend(pi, &e, &params).0, Vec2::new(-1.0, 0.0));

        let clamped = SafetyParams {
            clamp_u_max: true,
            u_max: 0.5,
            ..SafetyParams::default()
        };
        let (u, flag) = blend(pi, &e, &clamped);
        assert!(flag && (u.norm() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn objects_beyond_sensing_do_not_matter() {
        // An object exactly at r_sense contributes h = 1, log h = 0; the
        // observation model drops anything farther, so outputs are unchanged.
        let params = p(0.2, 1.0);
        let o = obs_with(&[Vec2::new(0.35, 0.1)]);
        let mut o2 = o.clone();
        o2.neighbors.push(Neighbor {
            position: Vec2::new(-1.0, 0.0),
            velocity: Vec2::ZERO,
        });
        let a = psi_local(&o, &params).unwrap();
        let b = psi_local(&o2, &params).unwrap();
        assert_eq!(a, b);
    }
}
