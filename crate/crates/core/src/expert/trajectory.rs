//! Continuous piecewise-cubic robot trajectories and their uniform sampling.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::geom::Vec2;
use crate::world::{Dynamics, RobotState};

/// `p(t) = c0 + c1 s + c2 s^2 + c3 s^3` with `s = t - t0`, valid on `[t0, t1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub t0: f64,
    pub t1: f64,
    pub c: [Vec2; 4],
}

impl Piece {
    /// Constant-velocity motion from `a` to `b` over `[t0, t1]`.
    pub fn linear(t0: f64, t1: f64, a: Vec2, b: Vec2) -> Self {
        let v = (b - a) / (t1 - t0);
        Self {
            t0,
            t1,
            c: [a, v, Vec2::ZERO, Vec2::ZERO],
        }
    }

    /// Position, velocity, acceleration at local time `s`.
    pub fn eval(&self, s: f64) -> (Vec2, Vec2, Vec2) {
        let [c0, c1, c2, c3] = self.c;
        let p = c0 + (c1 + (c2 + c3 * s) * s) * s;
        let v = c1 + (c2 * 2.0 + c3 * (3.0 * s)) * s;
        let a = c2 * 2.0 + c3 * (6.0 * s);
        (p, v, a)
    }

    /// The same curve traversed `factor` times slower.
    pub fn stretched(&self, factor: f64) -> Self {
        let [c0, c1, c2, c3] = self.c;
        Self {
            t0: self.t0 * factor,
            t1: self.t1 * factor,
            c: [
                c0,
                c1 / factor,
                c2 / (factor * factor),
                c3 / (factor * factor * factor),
            ],
        }
    }
}

/// One robot's motion. Before the first piece and after the last the robot
/// rests at the corresponding endpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotTrajectory {
    pub pieces: Vec<Piece>,
    pub start: Vec2,
    pub goal: Vec2,
}

impl RobotTrajectory {
    pub fn stationary(p: Vec2) -> Self {
        Self {
            pieces: Vec::new(),
            start: p,
            goal: p,
        }
    }

    pub fn arrival(&self) -> f64 {
        self.pieces.last().map_or(0.0, |p| p.t1)
    }

    /// Position, velocity and acceleration at `t`, taking right limits at knots.
    pub fn eval(&self, t: f64) -> (Vec2, Vec2, Vec2) {
        if self.pieces.is_empty() || t < self.pieces[0].t0 {
            return (self.start, Vec2::ZERO, Vec2::ZERO);
        }
        if t >= self.arrival() {
            return (self.goal, Vec2::ZERO, Vec2::ZERO);
        }
        let k = self.pieces.partition_point(|p| p.t1 <= t);
        let piece = &self.pieces[k];
        piece.eval(t - piece.t0)
    }

    pub fn position(&self, t: f64) -> Vec2 {
        self.eval(t).0
    }

    pub fn stretched(&self, factor: f64) -> Self {
        Self {
            pieces: self.pieces.iter().map(|p| p.stretched(factor)).collect(),
            start: self.start,
            goal: self.goal,
        }
    }

    /// Largest acceleration norm; cubic acceleration is linear per piece, so
    /// the maximum sits at a piece endpoint.
    pub fn max_acceleration(&self) -> f64 {
        self.pieces
            .iter()
            .flat_map(|p| {
                let (_, _, a0) = p.eval(0.0);
                let (_, _, a1) = p.eval(p.t1 - p.t0);
                [a0.norm(), a1.norm()]
            })
            .fold(0.0, f64::max)
    }

    /// Largest velocity norm, checked at piece endpoints and midpoints.
    pub fn max_speed(&self) -> f64 {
        self.pieces
            .iter()
            .flat_map(|p| {
                let d = p.t1 - p.t0;
                [0.0, 0.5 * d, d].map(|s| p.eval(s).1.norm())
            })
            .fold(0.0, f64::max)
    }
}

/// A sample of an expert trajectory: state plus the action taken from it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajSample {
    pub t: f64,
    pub position: Vec2,
    pub velocity: Vec2,
    pub action: Vec2,
}

impl TrajSample {
    pub fn state(&self) -> RobotState {
        RobotState {
            position: self.position,
            velocity: self.velocity,
        }
    }
}

/// A joint plan. `samples[i][k]` is robot `i` at `t = k * dt_sample`, for
/// `k = 0 ..= duration / dt_sample`, so every robot has the same count. The
/// duration is the last arrival rounded up to a whole sample period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dynamics: Dynamics,
    pub dt_sample: f64,
    pub duration: f64,
    pub robots: Vec<RobotTrajectory>,
    pub samples: Vec<Vec<TrajSample>>,
}

impl Trajectory {
    pub fn new(dynamics: Dynamics, dt_sample: f64, robots: Vec<RobotTrajectory>) -> Self {
        let arrival = robots
            .iter()
            .map(RobotTrajectory::arrival)
            .fold(0.0, f64::max);
        let n_steps = (arrival / dt_sample - 1e-9).ceil().max(0.0) as usize;
        let duration = n_steps as f64 * dt_sample;
        let n_samples = n_steps + 1;
        let samples = robots
            .iter()
            .map(|r| {
                (0..n_samples)
                    .map(|k| {
                        let t = k as f64 * dt_sample;
                        let (p, v, a) = r.eval(t);
                        match dynamics {
                            Dynamics::Single => TrajSample {
                                t,
                                position: p,
                                velocity: Vec2::ZERO,
                                action: v,
                            },
                            Dynamics::Double => TrajSample {
                                t,
                                position: p,
                                velocity: v,
                                action: a,
                            },
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            dynamics,
            dt_sample,
            duration,
            robots,
            samples,
        }
    }

    pub fn n_robots(&self) -> usize {
        self.robots.len()
    }

    /// Joint state at an arbitrary time.
    pub fn states_at(&self, t: f64) -> Vec<RobotState> {
        self.robots
            .iter()
            .map(|r| {
                let (p, v, _) = r.eval(t);
                match self.dynamics {
                    Dynamics::Single => RobotState::at(p),
                    Dynamics::Double => RobotState {
                        position: p,
                        velocity: v,
                    },
                }
            })
            .collect()
    }
}

/// Interpolating cubic spline through `points` at increasing `times`, with
pub const PLAN_CSV_VERSION: u32 = 1;

/// Sampled plan as CSV: `robot,t,x,y,vx,vy,ux,uy`.
pub fn plan_csv(traj: &Trajectory) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# glas plan v{PLAN_CSV_VERSION} dynamics={} dt_sample={} duration={}",
        traj.dynamics.name(),
        traj.dt_sample,
        traj.duration
    );
    out.push_str("robot,t,x,y,vx,vy,ux,uy\n");
    for (i, samples) in traj.samples.iter().enumerate() {
        for s in samples {
            let _ = writeln!(
                out,
                "{i},{},{},{},{},{},{},{}",
                s.t, s.position.x, s.position.y, s.velocity.x, s.velocity.y, s.action.x, s.action.y
            );
        }
    }
    out
}

/// zero velocity at both ends.
pub fn clamped_spline(times: &[f64], points: &[Vec2]) -> Vec<Piece> {
    let n = times.len();
    assert_eq!(n, points.len());
    if n < 2 {
        return Vec::new();
    }
    let h: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    // Solve for knot velocities m_k with m_0 = m_{n-1} = 0 (C2 continuity).
    let mut m = vec![Vec2::ZERO; n];
    if n > 2 {
        let k = n - 2;
        let mut diag = vec![0.0; k];
        let mut upper = vec![0.0; k];
        let mut lower = vec![0.0; k];
        let mut rhs = vec![Vec2::ZERO; k];
        for r in 0..k {
            let i = r + 1;
            let (h0, h1) = (h[i - 1], h[i]);
            lower[r] = 1.0 / h0;
            diag[r] = 2.0 / h0 + 2.0 / h1;
            upper[r] = 1.0 / h1;
            rhs[r] = (points[i] - points[i - 1]) * (3.0 / (h0 * h0))
                + (points[i + 1] - points[i]) * (3.0 / (h1 * h1));
        }
        // Thomas algorithm.
        for r in 1..k {
            let w = lower[r] / diag[r - 1];
            diag[r] -= w * upper[r - 1];
            rhs[r] = rhs[r] - rhs[r - 1] * w;
        }
        let mut x = vec![Vec2::ZERO; k];
        x[k - 1] = rhs[k - 1] / diag[k - 1];
        for r in (0..k - 1).rev() {
            x[r] = (rhs[r] - x[r + 1] * upper[r]) / diag[r];
        }
        m[1..n - 1].copy_from_slice(&x);
    }
    (0..n - 1)
        .map(|i| {
            let d = h[i];
            let (p0, p1, m0, m1) = (points[i], points[i + 1], m[i], m[i + 1]);
            let c2 = (p1 - p0) * (3.0 / (d * d)) - (m0 * 2.0 + m1) / d;
            let c3 = (p0 - p1) * (2.0 / (d * d * d)) + (m0 + m1) / (d * d);
            Piece {
                t0: times[i],
                t1: times[i + 1],
                c: [p0, m0, c2, c3],
            }
        })
        .collect()
}
