//! Closed-loop decentralized rollouts, metrics, and evaluation suites.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GlasError, Result};
use crate::geom::Vec2;
use crate::observation::{observe, ObsCaps, Observation};
use crate::par;
use crate::policy::{forward_pi, PolicyWeights};
use crate::safety::{blend, safe_control, SafetyEval, SafetyParams};
use crate::world::{Dynamics, EnvInstance, RobotState};

pub const TRAJECTORY_CSV_VERSION: u32 = 1;
pub const METRICS_CSV_VERSION: u32 = 1;
pub const FIELD_CSV_VERSION: u32 = 1;

/// Where a robot is in the rollout when its action is requested.
#[derive(Clone, Copy, Debug)]
pub struct StepContext {
    pub robot: usize,
    pub step: usize,
    pub t: f64,
}

/// A nominal (pre-blend) action source. The safety blend is applied by the
/// simulator on top of whatever this returns.
pub trait Policy: Sync {
    fn nominal(
        &self,
        ctx: &StepContext,
        obs: &Observation,
        state: &RobotState,
        goal: &RobotState,
        params: &SafetyParams,
    ) -> Vec2;
}

/// Linear feedback to the goal, `K e` with the unscaled goal error, capped at `pi_max`.
#[derive(Clone, Copy, Debug, Default)]
pub struct LinearFeedback;

impl LinearFeedback {
    pub fn action(state: &RobotState, goal: &RobotState, params: &SafetyParams) -> Vec2 {
        let ep = goal.position - state.position;
        let raw = match params.dynamics {
            Dynamics::Single => ep * params.k_p,
            Dynamics::Double => ep * params.k_p + (goal.velocity - state.velocity) * params.k_v,
        };
        raw.clamp_norm(params.pi_max)
    }
}

impl Policy for LinearFeedback {
    fn nominal(
        &self,
        _ctx: &StepContext,
        _obs: &Observation,
        state: &RobotState,
        goal: &RobotState,
        params: &SafetyParams,
    ) -> Vec2 {
        Self::action(state, goal, params)
    }
}

/// The learned Deep-Set policy.
#[derive(Clone, Debug)]
pub struct NeuralPolicy {
    pub weights: PolicyWeights,
}

impl Policy for NeuralPolicy {
    fn nominal(
        &self,
        _ctx: &StepContext,
        obs: &Observation,
        _state: &RobotState,
        _goal: &RobotState,
        params: &SafetyParams,
    ) -> Vec2 {
        forward_pi(obs, &self.weights, params.pi_max)
    }
}

/// Bounded hostile actions for safety testing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryMode {
    /// Full-norm action toward the closest sensed object.
    Attack,
    /// Fresh uniformly random direction and magnitude every step.
    Random,
}

#[derive(Clone, Copy, Debug)]
pub struct AdversarialPolicy {
    pub mode: AdversaryMode,
    pub seed: u64,
}

impl Policy for AdversarialPolicy {
    fn nominal(
        &self,
        ctx: &StepContext,
        obs: &Observation,
        state: &RobotState,
        goal: &RobotState,
        params: &SafetyParams,
    ) -> Vec2 {
        match self.mode {
            AdversaryMode::Attack => obs
                .relative_points()
                .min_by(|a, b| a.norm().total_cmp(&b.norm()))
                .map(|p| p * (params.pi_max / p.norm().max(1e-12)))
                .unwrap_or_else(|| LinearFeedback::action(state, goal, params)),
            AdversaryMode::Random => {
                let key = self
                    .seed
                    .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    .wrapping_add((ctx.step as u64) << 20)
                    .wrapping_add(ctx.robot as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(key);
                let th: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let r: f64 = rng.gen_range(0.0..=params.pi_max);
                Vec2::new(th.cos(), th.sin()) * r
            }
        }
    }
}

/// Blends a policy's nominal action with the barrier.
pub fn controller_action(
    policy: &dyn Policy,
    ctx: &StepContext,
    obs: &Observation,
    state: &RobotState,
    goal: &RobotState,
    params: &SafetyParams,
) -> Result<(Vec2, SafetyEval, bool)> {
    let pi = policy.nominal(ctx, obs, state, goal, params);
    let eval = safe_control(obs, pi, params)?;
    let (u, clamped) = blend(pi, &eval, params);
    Ok((u, eval, clamped))
}

/// Barrier baseline: linear goal feedback inside the safety blend.
pub fn barrier_baseline(
    obs: &Observation,
    state: &RobotState,
    goal: &RobotState,
    params: &SafetyParams,
) -> Result<Vec2> {
    let pi = LinearFeedback::action(state, goal, params);
    let eval = safe_control(obs, pi, params)?;
    Ok(blend(pi, &eval, params).0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    /// Final time; `None` means `t_f_factor` times the expert plan duration.
    pub t_f: Option<f64>,
    pub t_f_factor: f64,
    pub goal_tol: f64,
    pub vel_tol: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            t_f: None,
            t_f_factor: 4.0,
            goal_tol: 0.05,
            vel_tol: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    Collision,
    Timeout,
}

/// One logged sample of one robot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub state: RobotState,
    pub u: Vec2,
    pub alpha: f64,
    pub min_h: f64,
}

#[derive(Clone, Debug)]
pub struct RolloutResult {
    pub dynamics: Dynamics,
    pub goals: Vec<RobotState>,
    /// `traces[i]` holds robot `i`'s samples at `t = 0, dt, 2 dt, ...`.
    pub traces: Vec<Vec<TraceRow>>,
    /// First time each robot's clearance dropped to `r_safe` or below.
    pub collided_at: Vec<Option<f64>>,
    pub success: Vec<bool>,
    pub failures: Vec<Option<FailureReason>>,
    pub r_s: usize,
    pub r_p: f64,
    /// Smallest robot-robot or robot-obstacle distance seen at any sample.
    pub min_clearance: f64,
    /// Number of actions rescaled by the optional `u_max` clamp.
    pub clamped_actions: usize,
    pub t_end: f64,
}

impl RolloutResult {
    pub fn n_robots(&self) -> usize {
        self.traces.len()
    }
}

/// Per-robot success: within `goal_tol` of the goal (and below `vel_tol` for
/// double integrators) at some sample, and never in collision.
pub fn success_of(result: &RolloutResult, goal_tol: f64, vel_tol: f64) -> Vec<bool> {
    result
        .traces
        .iter()
        .enumerate()
        .map(|(i, tr)| {
            result.collided_at[i].is_none()
                && tr.iter().any(|r| {
                    reached(
                        &r.state,
                        &result.goals[i],
                        result.dynamics,
                        goal_tol,
                        vel_tol,
                    )
                })
        })
        .collect()
}

fn reached(
    s: &RobotState,
    goal: &RobotState,
    dynamics: Dynamics,
    goal_tol: f64,
    vel_tol: f64,
) -> bool {
    (s.position - goal.position).norm() < goal_tol
        && (dynamics == Dynamics::Single || (s.velocity - goal.velocity).norm() < vel_tol)
}

/// Trapezoidal integral of `|u|` over each successful robot's trace, summed.
pub fn effort_of(result: &RolloutResult) -> f64 {
    result
        .traces
        .iter()
        .zip(&result.success)
        .filter(|(_, &ok)| ok)
        .map(|(tr, _)| trapezoid_norm(tr))
        .sum()
}

pub fn trapezoid_norm(trace: &[TraceRow]) -> f64 {
    trace
        .windows(2)
        .map(|w| 0.5 * (w[0].u.norm() + w[1].u.norm()) * (w[1].t - w[0].t))
        .sum()
}

fn clearance_of(i: usize, states: &[RobotState], env: &EnvInstance) -> f64 {
    let p = states[i].position;
    let mut c = env.obstacle_clearance(p);
    for (j, s) in states.iter().enumerate() {
        if j != i {
            c = c.min(p.distance(s.position));
        }
    }
    c
}

/// Simulates the closed loop with synchronous explicit-Euler updates.
///
/// At every step each robot observes the current joint state, the policy and
/// safety blend produce its action, and only then do all states advance.
pub fn rollout(
    env: &EnvInstance,
    policy: &dyn Policy,
    params: &SafetyParams,
    caps: &ObsCaps,
    cfg: &SimConfig,
    t_f: f64,
) -> Result<RolloutResult> {
    if !(cfg.dt > 0.0 && cfg.dt <= 0.05) {
        return Err(GlasError::Precondition(format!(
            "dt = {} outside (0, 0.05]",
            cfg.dt
        )));
    }
    if !t_f.is_finite() || t_f < 0.0 {
        return Err(GlasError::Precondition(format!(
            "t_f = {t_f} must be finite"
        )));
    }
    if params.dynamics != env.dynamics {
        return Err(GlasError::Precondition(
            "safety parameters and environment disagree on dynamics".into(),
        ));
    }
    let n = env.n_robots();
    let mut states = env.starts.clone();
    let mut traces: Vec<Vec<TraceRow>> = vec![Vec::new(); n];
    let mut collided_at = vec![None; n];
    let mut reached_any = vec![false; n];
    let mut min_clearance = f64::INFINITY;
    let mut clamped_actions = 0usize;
    let n_steps = (t_f / cfg.dt).round() as usize;
    let mut t_end = 0.0;
    let mut actions = vec![Vec2::ZERO; n];

    for step in 0..=n_steps {
        let t = step as f64 * cfg.dt;
        t_end = t;
        for i in 0..n {
            if !states[i].is_finite() {
                return Err(GlasError::NonFiniteState { robot: i, t });
            }
            let c = clearance_of(i, &states, env);
            min_clearance = min_clearance.min(c);
            if c <= params.r_safe && collided_at[i].is_none() {
                collided_at[i] = Some(t);
            }
            let obs = observe(i, &states, env, params, caps);
            let ctx = StepContext { robot: i, step, t };
            let (u, alpha, min_h) =
                match controller_action(policy, &ctx, &obs, &states[i], &env.goals[i], params) {
                    Ok((u, eval, clamped)) => {
                        clamped_actions += clamped as usize;
                        (u, eval.alpha, eval.min_h)
                    }
                    Err(GlasError::SafetyViolation { .. }) | Err(GlasError::Singularity { .. }) => {
                        // Inside the unsafe set the barrier is undefined; the robot brakes.
                        collided_at[i].get_or_insert(t);
                        let brake = match env.dynamics {
                            Dynamics::Single => Vec2::ZERO,
                            Dynamics::Double => states[i].velocity * -params.k_v,
                        };
                        (brake, 0.0, obs.raw_min_h(params))
                    }
                    Err(e) => return Err(e),
                };
            if !u.is_finite() {
                return Err(GlasError::NonFiniteState { robot: i, t });
            }
            actions[i] = u;
            traces[i].push(TraceRow {
                t,
                state: states[i],
                u,
                alpha,
                min_h,
            });
            if reached(
                &states[i],
                &env.goals[i],
                env.dynamics,
                cfg.goal_tol,
                cfg.vel_tol,
            ) {
                reached_any[i] = true;
            }
        }
        let all_done = (0..n).all(|i| reached_any[i] && collided_at[i].is_none());
        if all_done || step == n_steps {
            break;
        }
        for (s, u) in states.iter_mut().zip(&actions) {
            match env.dynamics {
                Dynamics::Single => s.position += *u * cfg.dt,
                Dynamics::Double => {
                    s.position += s.velocity * cfg.dt;
                    s.velocity += *u * cfg.dt;
                }
            }
        }
    }

    let mut result = RolloutResult {
        dynamics: env.dynamics,
        goals: env.goals.clone(),
        traces,
        collided_at,
        success: Vec::new(),
        failures: Vec::new(),
        r_s: 0,
        r_p: 0.0,
        min_clearance,
        clamped_actions,
        t_end,
    };
    result.success = success_of(&result, cfg.goal_tol, cfg.vel_tol);
    result.failures = (0..n)
        .map(|i| {
            if result.collided_at[i].is_some() {
                Some(FailureReason::Collision)
            } else if !result.success[i] {
                Some(FailureReason::Timeout)
            } else {
                None
            }
        })
        .collect();
    result.r_s = result.success.iter().filter(|&&s| s).count();
    result.r_p = effort_of(&result);
    Ok(result)
}

/// Trajectory CSV: `robot,t,x,y,vx,vy,ux,uy,alpha,min_h`.
pub fn trajectory_csv(result: &RolloutResult, cfg: &SimConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# glas trajectory v{TRAJECTORY_CSV_VERSION} dt={} goal_tol={} vel_tol={}",
        cfg.dt, cfg.goal_tol, cfg.vel_tol
    );
    out.push_str("robot,t,x,y,vx,vy,ux,uy,alpha,min_h\n");
    for (i, tr) in result.traces.iter().enumerate() {
        for r in tr {
            let _ = writeln!(
                out,
                "{i},{},{},{},{},{},{},{},{},{}",
                r.t,
                r.state.position.x,
                r.state.position.y,
                r.state.velocity.x,
                r.state.velocity.y,
                r.u.x,
                r.u.y,
                r.alpha,
                r.min_h
            );
        }
    }
    out
}

/// One evaluation instance with its horizon.
#[derive(Clone, Debug)]
pub struct SuiteCase {
    pub label: String,
    pub env: EnvInstance,
    pub t_f: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub policy: String,
    pub instance: String,
    pub n_robots: usize,
    pub obstacle_frac: f64,
    pub r_s: usize,
    pub r_p: f64,
    pub wall_ms: Option<f64>,
}

impl MetricsRow {
    pub fn success_fraction(&self) -> f64 {
        if self.n_robots == 0 {
            0.0
        } else {
            self.r_s as f64 / self.n_robots as f64
        }
    }
}

/// Evaluates every policy on every case. Rows come out ordered by policy, then
/// case, regardless of how the work was scheduled.
pub fn evaluate_suite(
    cases: &[SuiteCase],
    policies: &[(String, &dyn Policy)],
    params: &SafetyParams,
    caps: &ObsCaps,
    cfg: &SimConfig,
    measure_wall_time: bool,
) -> Result<Vec<MetricsRow>> {
    let jobs: Vec<(usize, usize)> = (0..policies.len())
        .flat_map(|p| (0..cases.len()).map(move |c| (p, c)))
        .collect();
    let rows = par::map(&jobs, |&(p, c)| -> Result<MetricsRow> {
        let case = &cases[c];
        let start = Instant::now();
        let res = rollout(&case.env, policies[p].1, params, caps, cfg, case.t_f)?;
        let wall = start.elapsed().as_secs_f64() * 1e3;
        Ok(MetricsRow {
            policy: policies[p].0.clone(),
            instance: case.label.clone(),
            n_robots: case.env.n_robots(),
            obstacle_frac: case.env.obstacle_fraction(),
            r_s: res.r_s,
            r_p: res.r_p,
            wall_ms: measure_wall_time.then_some(wall),
        })
    });
    rows.into_iter().collect()
}

/// Metrics CSV: `policy,instance,n_robots,obstacle_frac,r_s,r_p,wall_ms`.
/// `wall_ms` reads `NA` unless wall-clock timing was requested.
pub fn metrics_csv(rows: &[MetricsRow], cfg: &SimConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# glas metrics v{METRICS_CSV_VERSION} dt={} goal_tol={} vel_tol={} t_f_factor={}",
        cfg.dt, cfg.goal_tol, cfg.vel_tol, cfg.t_f_factor
    );
    out.push_str("policy,instance,n_robots,obstacle_frac,r_s,r_p,wall_ms\n");
    for r in rows {
        let wall = r
            .wall_ms
            .map_or_else(|| "NA".to_string(), |w| format!("{w:.3}"));
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.policy, r.instance, r.n_robots, r.obstacle_frac, r.r_s, r.r_p, wall
        );
    }
    out
}

/// Aggregate per (policy, robot count, obstacle fraction) bucket.
#[derive(Clone, Debug, PartialEq)]
pub struct BucketSummary {
    pub policy: String,
    pub n_robots: usize,
    pub obstacle_frac: f64,
    pub instances: usize,
    pub success_fraction: f64,
    pub mean_r_p: f64,
}

pub fn summarize(rows: &[MetricsRow]) -> Vec<BucketSummary> {
    let mut out: Vec<BucketSummary> = Vec::new();
    for r in rows {
        let pos = out.iter().position(|b| {
            b.policy == r.policy && b.n_robots == r.n_robots && b.obstacle_frac == r.obstacle_frac
        });
        let b = match pos {
            Some(k) => &mut out[k],
            None => {
                out.push(BucketSummary {
                    policy: r.policy.clone(),
                    n_robots: r.n_robots,
                    obstacle_frac: r.obstacle_frac,
                    instances: 0,
                    success_fraction: 0.0,
                    mean_r_p: 0.0,
                });
                out.last_mut().unwrap()
            }
        };
        b.instances += 1;
        b.success_fraction += r.success_fraction();
        b.mean_r_p += r.r_p;
    }
    for b in &mut out {
        b.success_fraction /= b.instances as f64;
        b.mean_r_p /= b.instances as f64;
    }
    out
}

pub fn summary_csv(summary: &[BucketSummary], cfg: &SimConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# glas summary v{METRICS_CSV_VERSION} dt={} goal_tol={} vel_tol={} t_f_factor={}",
        cfg.dt, cfg.goal_tol, cfg.vel_tol, cfg.t_f_factor
    );
    out.push_str("policy,n_robots,obstacle_frac,instances,success_fraction,mean_r_p\n");
    for b in summary {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            b.policy, b.n_robots, b.obstacle_frac, b.instances, b.success_fraction, b.mean_r_p
        );
    }
    out
}

/// One grid point of an action field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldPoint {
    pub position: Vec2,
    /// NaN when `blocked`.
    pub u: Vec2,
    /// The controller is undefined here (inside or within `r_safe` of an obstacle).
    pub blocked: bool,
}

/// Controller output for robot `robot` placed at each point of an
/// `n x n` grid of cell centers over the workspace, at rest and alone.
pub fn vector_field(
    env: &EnvInstance,
    robot: usize,
    policy: &dyn Policy,
    params: &SafetyParams,
    caps: &ObsCaps,
    n: usize,
) -> Result<Vec<FieldPoint>> {
    if robot >= env.n_robots() {
        return Err(GlasError::Precondition(format!(
            "robot {robot} out of range for {} robots",
            env.n_robots()
        )));
    }
    let mut solo = env.clone();
    solo.starts = vec![env.starts[robot]];
    solo.goals = vec![env.goals[robot]];
    let goal = solo.goals[0];
    let (lo, hi) = (env.bounds.min, env.bounds.max);
    let step = Vec2::new((hi.x - lo.x) / n as f64, (hi.y - lo.y) / n as f64);
    let ctx = StepContext {
        robot: 0,
        step: 0,
        t: 0.0,
    };
    let points = par::map_range(n * n, |k| -> Result<FieldPoint> {
        let (ix, iy) = (k % n, k / n);
        let position = Vec2::new(
            lo.x + (ix as f64 + 0.5) * step.x,
            lo.y + (iy as f64 + 0.5) * step.y,
        );
        let state = RobotState::at(position);
        let obs = observe(0, &[state], &solo, params, caps);
        match controller_action(policy, &ctx, &obs, &state, &goal, params) {
            Ok((u, _, _)) => Ok(FieldPoint {
                position,
                u,
                blocked: false,
            }),
            Err(GlasError::SafetyViolation { .. } | GlasError::Singularity { .. }) => {
                Ok(FieldPoint {
                    position,
                    u: Vec2::new(f64::NAN, f64::NAN),
                    blocked: true,
                })
            }
            Err(e) => Err(e),
        }
    });
    points.into_iter().collect()
}

/// Field CSV: `x,y,ux,uy,blocked` with `blocked` as 0/1.
pub fn field_csv(points: &[FieldPoint]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# glas field v{FIELD_CSV_VERSION}");
    out.push_str("x,y,ux,uy,blocked\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            p.position.x,
            p.position.y,
            p.u.x,
            p.u.y,
            u8::from(p.blocked)
        );
    }
    out
}
