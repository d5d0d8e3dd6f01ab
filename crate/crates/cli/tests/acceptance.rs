//! Acceptance checks with one PASS/FAIL line per criterion.
//!
//! Built without the libtest harness so the verdict lines always reach the
//! terminal. Criterion numbers given as arguments select a subset:
//! `cargo test -p glas-cli --test acceptance -- 2 4`.

use std::collections::BTreeSet;
use std::hint::black_box;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use glas_core::expert::{
    build_dataset, solve_instances, DatasetSpec, DemoRecord, PlannerConfig, DT_SAMPLE,
};
use glas_core::observation::Neighbor;
use glas_core::policy::{forward_controller, init_weights, Arch, PolicyWeights};
use glas_core::safety::{blend, ddt_grad_psi, grad_psi, psi_local, safe_control};
use glas_core::sim::{
    evaluate_suite, rollout, AdversarialPolicy, AdversaryMode, LinearFeedback, MetricsRow,
    NeuralPolicy, Policy, SimConfig, SuiteCase,
};
use glas_core::training::{loss_and_grad, rmse, train_with, TrainConfig, TrainMode, TrainOutcome};
use glas_core::world::{make_random_env, Bounds, EnvGenParams};
use glas_core::{Dynamics, EnvInstance, ObsCaps, Observation, RobotState, SafetyParams, Vec2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BOTH: [Dynamics; 2] = [Dynamics::Single, Dynamics::Double];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------------------
// Random local scenes with exact geometry.

fn dir(rng: &mut ChaCha8Rng) -> Vec2 {
    let th: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    Vec2::new(th.cos(), th.sin())
}

fn disk(rng: &mut ChaCha8Rng, r: f64) -> Vec2 {
    dir(rng) * (r * rng.gen::<f64>().sqrt())
}

fn closest(p: Vec2, corner: Vec2) -> Vec2 {
    Vec2::new(
        p.x.max(corner.x).min(corner.x + 1.0),
        p.y.max(corner.y).min(corner.y + 1.0),
    )
}

/// The sensing robot, other robots (position, velocity) and unit-square
/// obstacles (lower-left corner), all in world coordinates.
#[derive(Clone, Debug)]
struct Scene {
    p: Vec2,
    v: Vec2,
    robots: Vec<(Vec2, Vec2)>,
    cells: Vec<Vec2>,
}

impl Scene {
    fn moved(&self, dp: Vec2) -> Scene {
        Scene {
            p: self.p + dp,
            ..self.clone()
        }
    }

    /// Everything advanced by `t` at constant velocity; obstacles stay put.
    fn advanced(&self, t: f64) -> Scene {
        Scene {
            p: self.p + self.v * t,
            v: self.v,
            robots: self.robots.iter().map(|&(q, u)| (q + u * t, u)).collect(),
            cells: self.cells.clone(),
        }
    }

    fn relative(&self) -> Vec<Vec2> {
        let mut out: Vec<Vec2> = self.robots.iter().map(|&(q, _)| q - self.p).collect();
        out.extend(self.cells.iter().map(|&c| closest(self.p, c) - self.p));
        out
    }

    fn min_gap(&self, params: &SafetyParams) -> f64 {
        self.relative()
            .iter()
            .map(|q| q.norm() - params.r_safe)
            .fold(f64::INFINITY, f64::min)
    }

    fn observation(&self, dynamics: Dynamics, goal: Vec2) -> Observation {
        let double = dynamics == Dynamics::Double;
        let gv = if double { -self.v } else { Vec2::ZERO };
        let mut o = Observation::empty(dynamics, goal, gv);
        o.neighbors = self
            .robots
            .iter()
            .map(|&(q, u)| Neighbor {
                position: q - self.p,
                velocity: if double { u - self.v } else { Vec2::ZERO },
            })
            .collect();
        o.obstacles = self
            .cells
            .iter()
            .map(|&c| closest(self.p, c) - self.p)
            .collect();
        o.refresh_min_dist();
        o
    }
}

/// Unit cell whose nearest point to `p` lies at distance `d`, either well
/// inside a face or at a corner.
fn cell_at(rng: &mut ChaCha8Rng, p: Vec2, d: f64) -> Vec2 {
    if rng.gen_bool(0.5) {
        let t = rng.gen_range(0.05..0.95);
        match rng.gen_range(0..4) {
            0 => Vec2::new(p.x + d, p.y - t),
            1 => Vec2::new(p.x - d - 1.0, p.y - t),
            2 => Vec2::new(p.x - t, p.y + d),
            _ => Vec2::new(p.x - t, p.y - d - 1.0),
        }
    } else {
        let u = loop {
            let u = dir(rng);
            if u.x.abs() > 0.05 && u.y.abs() > 0.05 {
                break u;
            }
        };
        let k = p + u * d;
        Vec2::new(
            if u.x > 0.0 { k.x } else { k.x - 1.0 },
            if u.y > 0.0 { k.y } else { k.y - 1.0 },
        )
    }
}

/// Scene with the given object counts at distances inside the sensing range.
/// With `layer` the closest object sits inside the boundary layer.
fn scene_with(
    rng: &mut ChaCha8Rng,
    params: &SafetyParams,
    n_r: usize,
    n_c: usize,
    layer: bool,
) -> Scene {
    let span = params.r_sense - params.r_safe;
    let mut h: Vec<f64> = (0..n_r + n_c).map(|_| rng.gen_range(0.01..0.99)).collect();
    if layer && !h.is_empty() {
        h[0] = params.delta_r * rng.gen_range(0.001..1.0);
        h.shuffle(rng);
    }
    let p = Vec2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
    let mut s = Scene {
        p,
        v: disk(rng, 1.5),
        robots: Vec::new(),
        cells: Vec::new(),
    };
    for (k, h) in h.into_iter().enumerate() {
        let d = params.r_safe + span * h;
        if k < n_r {
            let q = p + dir(rng) * d;
            s.robots.push((q, disk(rng, 1.5)));
        } else {
            s.cells.push(cell_at(rng, p, d));
        }
    }
    s
}

fn random_scene(rng: &mut ChaCha8Rng, params: &SafetyParams, layer: bool) -> Scene {
    let mut n_r = rng.gen_range(0..=4);
    let n_c = rng.gen_range(0..=3);
    if n_r + n_c == 0 {
        n_r = 1;
    }
    scene_with(rng, params, n_r, n_c, layer)
}

// ---------------------------------------------------------------------------
// Oracles.

fn oracle_psi(s: &Scene, params: &SafetyParams) -> f64 {
    let span = params.r_sense - params.r_safe;
    s.relative()
        .iter()
        .map(|q| -((q.norm() - params.r_safe) / span).ln())
        .sum()
}

fn oracle_grad(s: &Scene, params: &SafetyParams) -> Vec2 {
    s.relative().iter().fold(Vec2::ZERO, |acc, &q| {
        let d = q.norm();
        acc + q / (d * (d - params.r_safe))
    })
}

/// Five-point central difference.
fn d5(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h)
}

fn rel_err(a: Vec2, b: Vec2) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-300)
}

// ---------------------------------------------------------------------------
// 1. Safety under hostile nominal actions.

fn head_on(dynamics: Dynamics) -> EnvInstance {
    let at = |x, y| RobotState::at(Vec2::new(x, y));
    EnvInstance {
        bounds: Bounds::square(4.0),
        obstacles: vec![],
        starts: vec![at(1.0, 2.0), at(3.0, 2.0)],
        goals: vec![at(3.0, 2.0), at(1.0, 2.0)],
        dynamics,
    }
}

fn safety() -> Verdict {
    let cfg = SimConfig::default();
    let caps = ObsCaps::default();
    let mut parts = Vec::new();
    let mut pass = true;
    for dynamics in BOTH {
        let params = SafetyParams::for_dynamics(dynamics);
        let mut worst = f64::INFINITY;
        let mut bad = 0;
        for seed in 0..500u64 {
            let env = if seed % 10 == 0 {
                head_on(dynamics)
            } else {
                let mut gp = EnvGenParams::new(
                    2 + (seed % 5) as usize,
                    [0.0, 0.1, 0.2][(seed % 3) as usize],
                    4,
                );
                gp.dynamics = dynamics;
                make_random_env(&gp, seed).expect("instance")
            };
            let mode = if seed % 2 == 0 {
                AdversaryMode::Attack
            } else {
                AdversaryMode::Random
            };
            let adv = AdversarialPolicy { mode, seed };
            let policy: &dyn Policy = if seed % 7 == 3 { &LinearFeedback } else { &adv };
            match rollout(&env, policy, &params, &caps, &cfg, 8.0) {
                Ok(res) => {
                    worst = worst.min(res.min_clearance);
                    if res.collided_at.iter().any(Option::is_some)
                        || res.min_clearance <= params.r_safe
                    {
                        bad += 1;
                    }
                }
                Err(_) => bad += 1,
            }
        }
        pass &= bad == 0;
        parts.push(format!(
            "{}: {bad}/500 unsafe, min clearance {worst:.4} m",
            dynamics.name()
        ));
    }
    verdict(pass, parts.join("; "))
}

// ---------------------------------------------------------------------------
// 2. Gradients.

fn nudged(w: &PolicyWeights, i: usize, d: f64) -> PolicyWeights {
    let mut w = w.clone();
    *w.params_mut()
        .flat_map(|p| p.iter_mut())
        .nth(i)
        .expect("index") += d;
    w
}

/// Worst relative error of the end-to-end loss gradient over `n` samples,
/// plus the number of coordinates skipped because a finite difference
/// straddled a kink (ReLU, norm cap or gain clamp).
fn e2e_gradient(dynamics: Dynamics, n: usize, rng: &mut ChaCha8Rng) -> (f64, usize) {
    let arch = Arch {
        hidden: 4,
        latent: 4,
    };
    let mut worst = 0.0f64;
    let mut skipped = 0;
    for k in 0..n {
        let mut params = SafetyParams::for_dynamics(dynamics);
        if k % 3 == 0 {
            params.pi_max = 0.05;
        }
        let scene = random_scene(rng, &params, k % 2 == 0);
        let goal = disk(rng, 3.0);
        let rec = [DemoRecord {
            obs: scene.observation(dynamics, goal),
            action: disk(rng, 1.0),
        }];
        let w = init_weights(1000 + k as u64, dynamics, arch);
        let loss = |w: &PolicyWeights| {
            loss_and_grad(&rec, &[0], w, TrainMode::EndToEnd, &params, 1.0, false)
                .expect("loss")
                .0
        };
        let (_, g) =
            loss_and_grad(&rec, &[0], &w, TrainMode::EndToEnd, &params, 1.0, true).expect("loss");
        let analytic: Vec<f64> = g.expect("gradient").params().flatten().copied().collect();
        let (mut diff, mut na, mut nf) = (0.0, 0.0, 0.0);
        for (i, &a) in analytic.iter().enumerate() {
            let fd = |h: f64| (loss(&nudged(&w, i, h)) - loss(&nudged(&w, i, -h))) / (2.0 * h);
            let (f1, f2) = (fd(1e-6), fd(2e-6));
            if (f1 - f2).abs() > 1e-3 * f1.abs() + 1e-8 {
                skipped += 1;
                continue;
            }
            diff += (a - f1) * (a - f1);
            na += a * a;
            nf += f1 * f1;
        }
        let scale = na.max(nf).sqrt();
        if scale > 0.0 {
            worst = worst.max(diff.sqrt() / scale);
        }
    }
    (worst, skipped)
}

fn gradients() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = SafetyParams::default();

    let mut worst_g = 0.0f64;
    for k in 0..10_000 {
        let s = random_scene(&mut rng, &params, k % 3 == 0);
        let obs = s.observation(Dynamics::Single, Vec2::ZERO);
        let h = 1e-3 * s.min_gap(&params);
        let fd = Vec2::new(
            d5(|t| oracle_psi(&s.moved(Vec2::new(t, 0.0)), &params), h),
            d5(|t| oracle_psi(&s.moved(Vec2::new(0.0, t)), &params), h),
        );
        let g = grad_psi(&obs, &params).expect("non-singular");
        worst_g = worst_g.max(rel_err(g, fd));
    }

    let di = SafetyParams::for_dynamics(Dynamics::Double);
    let mut worst_dt = 0.0f64;
    for k in 0..10_000 {
        let s = random_scene(&mut rng, &di, k % 3 == 0);
        let obs = s.observation(Dynamics::Double, Vec2::ZERO);
        let speed = s.v.norm() + s.robots.iter().map(|r| r.1.norm()).fold(0.0, f64::max);
        let h = 1e-3 * s.min_gap(&di) / (speed + 1.0);
        let fd = Vec2::new(
            d5(|t| oracle_grad(&s.advanced(t), &di).x, h),
            d5(|t| oracle_grad(&s.advanced(t), &di).y, h),
        );
        let a = ddt_grad_psi(&obs, s.v, &di).expect("non-singular");
        worst_dt = worst_dt.max(rel_err(a, fd));
    }

    let mut e2e = Vec::new();
    let mut pass = worst_g < 1e-6 && worst_dt < 1e-5;
    for dynamics in BOTH {
        let (worst, skipped) = e2e_gradient(dynamics, 100, &mut rng);
        pass &= worst < 1e-4;
        e2e.push(format!(
            "{} {worst:.2e} ({skipped} kinked coords skipped)",
            dynamics.name()
        ));
    }
    verdict(
        pass,
        format!(
            "grad psi max rel {worst_g:.2e} (<1e-6); d/dt grad psi {worst_dt:.2e} (<1e-5); dloss/dw {} (<1e-4)",
            e2e.join(", ")
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. Lyapunov decrease in the boundary layer.

fn lyapunov() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tol = 1e-9;
    let mut parts = Vec::new();
    let mut pass = true;
    for dynamics in BOTH {
        let params = SafetyParams {
            k_c: 0.1,
            ..SafetyParams::for_dynamics(dynamics)
        };
        let (mut bad, mut worst) = (0, f64::NEG_INFINITY);
        // violations split into rounding-level ones (excess tiny next to the
        // magnitude of the summed terms) and ones where the gain clamps at 0
        let (mut rounding, mut clamped) = (0, 0);
        for k in 0..10_000 {
            let s = random_scene(&mut rng, &params, true);
            let obs = s.observation(dynamics, disk(&mut rng, 3.0));
            let g = grad_psi(&obs, &params).expect("non-singular");
            let w = s.v + g * params.k_p;
            // every other state gets the most hostile full-norm action
            let pi = if k % 2 == 0 {
                let toward = if dynamics == Dynamics::Single { g } else { w };
                toward * (params.pi_max / toward.norm())
            } else {
                disk(&mut rng, params.pi_max)
            };
            let eval = safe_control(&obs, pi, &params).expect("non-singular");
            assert!(
                eval.delta_h < 0.0,
                "sampled state is outside the boundary layer"
            );
            let (u, _) = blend(pi, &eval, &params);
            let (excess, scale) = match dynamics {
                Dynamics::Single => {
                    let g2 = params.k_c * g.norm_squared();
                    let terms = eval.alpha * pi.norm() + (1.0 - eval.alpha) * eval.b.norm();
                    (g.dot(u) + g2, g.norm() * terms + g2)
                }
                Dynamics::Double => {
                    let psi = psi_local(&obs, &params).expect("non-singular");
                    let gd = ddt_grad_psi(&obs, s.v, &params).expect("non-singular");
                    let lyap = params.k_p * psi + 0.5 * w.norm_squared();
                    let kp = params.k_p;
                    let a = kp * g.dot(s.v);
                    let b = w.dot(u + gd * kp);
                    // magnitudes of the pieces that cancel inside u + k_p d/dt grad psi
                    let parts = eval.alpha * pi.norm()
                        + (1.0 - eval.alpha)
                            * (params.k_v * w.norm() + kp * gd.norm() + kp * g.norm())
                        + kp * gd.norm();
                    (
                        a + b + params.k_c * lyap,
                        a.abs() + w.norm() * parts + params.k_c * lyap,
                    )
                }
            };
            worst = worst.max(excess);
            if excess > tol {
                bad += 1;
                if eval.alpha == 0.0 {
                    clamped += 1;
                } else if excess <= 1e-13 * scale {
                    rounding += 1;
                }
            }
        }
        pass &= bad == 0;
        parts.push(format!(
            "{}: {bad}/10000 above bound (max excess {worst:.3e}; {rounding} at rounding level, {clamped} with gain clamped at 0)",
            dynamics.name()
        ));
    }
    verdict(pass, parts.join("; "))
}

// ---------------------------------------------------------------------------
// 4. Permutation invariance.

fn permutation() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    for k in 0..1000 {
        let dynamics = BOTH[k % 2];
        let params = SafetyParams::for_dynamics(dynamics);
        let w = init_weights(k as u64, dynamics, Arch::default());
        let n_r = rng.gen_range(0..=6);
        let n_c = rng.gen_range(0..=6);
        let s = scene_with(&mut rng, &params, n_r, n_c, k % 4 == 0);
        let obs = s.observation(dynamics, disk(&mut rng, 3.0));
        let mut shuffled = obs.clone();
        shuffled.neighbors.shuffle(&mut rng);
        shuffled.obstacles.shuffle(&mut rng);
        let a = forward_controller(&obs, &w, &params).expect("non-singular");
        let b = forward_controller(&shuffled, &w, &params).expect("non-singular");
        let bits = |v: Vec2| (v.x.to_bits(), v.y.to_bits());
        if bits(a.pi.pi) != bits(b.pi.pi)
            || bits(a.u) != bits(b.u)
            || a.eval.alpha.to_bits() != b.eval.alpha.to_bits()
        {
            mismatches += 1;
        }
    }
    verdict(
        mismatches == 0,
        format!("{mismatches}/1000 permuted cases differ in any bit"),
    )
}

// ---------------------------------------------------------------------------
// 5-7. Learning.

fn learning_config(mode: TrainMode) -> TrainConfig {
    TrainConfig {
        mode,
        batch_size: 256,
        epochs: 60,
        lr0: 1e-3,
        plateau_patience: 5,
        ..TrainConfig::default()
    }
}

fn train_logged(
    ds: &glas_core::expert::Dataset,
    mode: TrainMode,
    params: &SafetyParams,
) -> TrainOutcome {
    let start = Instant::now();
    let init = init_weights(0, params.dynamics, Arch::default());
    let out = train_with(ds, &learning_config(mode), params, init, |s| {
        if s.epoch % 10 == 0 {
            eprintln!(
                "    {} epoch {} train {:.5} val {:.5} lr {:.1e} [{:.0} s]",
                mode.name(),
                s.epoch,
                s.train_loss,
                s.val_loss,
                s.lr,
                start.elapsed().as_secs_f64()
            );
        }
    })
    .expect("training");
    eprintln!(
        "    {} best validation loss {:.5} at epoch {}",
        mode.name(),
        out.best_val_loss,
        out.best_epoch
    );
    out
}

fn success_fraction(rows: &[MetricsRow], policy: &str) -> f64 {
    let mine: Vec<&MetricsRow> = rows.iter().filter(|r| r.policy == policy).collect();
    mine.iter().map(|r| r.success_fraction()).sum::<f64>() / mine.len() as f64
}

/// Criteria 5 and 6 share one dataset, two trained variants and one
/// evaluation suite.
fn learning() -> (Verdict, Verdict) {
    let params = SafetyParams::for_dynamics(Dynamics::Single);
    let caps = ObsCaps::default();
    let spec = DatasetSpec {
        robots: vec![4, 8],
        obstacle_fractions: vec![0.1],
        instances: 750,
        ..DatasetSpec::default()
    };
    let start = Instant::now();
    let (ds, solved) = build_dataset(&spec, &params, &caps).expect("dataset");
    eprintln!(
        "    {} records from {} instances [{:.0} s]",
        ds.len(),
        solved.len(),
        start.elapsed().as_secs_f64()
    );
    let e2e = train_logged(&ds, TrainMode::EndToEnd, &params);
    let val_rmse = rmse(
        &ds.records,
        &e2e.validation,
        &e2e.weights,
        TrainMode::EndToEnd,
        &params,
    )
    .expect("rmse");
    let mean_action = ds.records.iter().map(|r| r.action.norm()).sum::<f64>() / ds.len() as f64;
    let two = train_logged(&ds, TrainMode::TwoStage, &params);

    let sim = SimConfig::default();
    let held_out = solve_instances(
        8,
        0.1,
        50,
        8,
        987_654,
        &params,
        &PlannerConfig::default(),
        DT_SAMPLE,
    )
    .expect("evaluation instances");
    let seen: BTreeSet<u64> = solved.iter().map(|s| s.seed).collect();
    let overlap = held_out.iter().filter(|s| seen.contains(&s.seed)).count();
    let cases: Vec<SuiteCase> = held_out
        .iter()
        .map(|s| SuiteCase {
            label: s.seed.to_string(),
            env: s.env.clone(),
            t_f: sim.t_f_factor * s.traj.duration,
        })
        .collect();
    let e2e_pol = NeuralPolicy {
        weights: e2e.weights,
    };
    let two_pol = NeuralPolicy {
        weights: two.weights,
    };
    let policies: Vec<(String, &dyn Policy)> = vec![
        ("barrier".into(), &LinearFeedback),
        ("end_to_end".into(), &e2e_pol),
        ("two_stage".into(), &two_pol),
    ];
    let rows = evaluate_suite(&cases, &policies, &params, &caps, &sim, false).expect("evaluation");
    let base = success_fraction(&rows, "barrier");
    let ours = success_fraction(&rows, "end_to_end");
    let theirs = success_fraction(&rows, "two_stage");
    let v5 = verdict(
        overlap == 0 && ds.len() >= 200_000 && ours >= base + 0.10,
        format!(
            "{} records; success end-to-end {ours:.3} vs barrier {base:.3} (needs >= {:.3}); two-stage {theirs:.3}; {overlap} evaluation instances seen in training; end-to-end validation RMSE {val_rmse:.4}, mean expert action {mean_action:.3}",
            ds.len(),
            base + 0.10
        ),
    );

    let solved_by = |policy: &str| -> BTreeSet<String> {
        rows.iter()
            .filter(|r| r.policy == policy && r.r_s == r.n_robots)
            .map(|r| r.instance.clone())
            .collect()
    };
    let both: BTreeSet<String> = solved_by("end_to_end")
        .intersection(&solved_by("two_stage"))
        .cloned()
        .collect();
    let mean_rp = |policy: &str| {
        let v: Vec<f64> = rows
            .iter()
            .filter(|r| r.policy == policy && both.contains(&r.instance))
            .map(|r| r.r_p)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let v6 = if both.is_empty() {
        verdict(false, "no instance solved by both variants")
    } else {
        let (a, b) = (mean_rp("end_to_end"), mean_rp("two_stage"));
        let ratio = a / b;
        verdict(
            ratio <= 1.02,
            format!(
                "ratio {ratio:.4} (<= 1.02) over {} instances solved by both; mean r_p end-to-end {a:.3}, two-stage {b:.3}",
                both.len()
            ),
        )
    };
    (v5, v6)
}

fn loss_scale() -> Verdict {
    let params = SafetyParams::for_dynamics(Dynamics::Single);
    let spec = DatasetSpec {
        robots: vec![4],
        obstacle_fractions: vec![0.1],
        instances: 750,
        ..DatasetSpec::default()
    };
    let (ds, _) = build_dataset(&spec, &params, &ObsCaps::default()).expect("dataset");
    eprintln!("    {} records", ds.len());
    let out = train_logged(&ds, TrainMode::TwoStage, &params);
    let e = rmse(
        &ds.records,
        &out.validation,
        &out.weights,
        TrainMode::TwoStage,
        &params,
    )
    .expect("rmse");
    let bound = 0.05 * params.u_max;
    verdict(
        e < bound,
        format!(
            "validation RMSE {e:.4} on {} held-out records (< {bound})",
            out.validation.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 8. Real-time budget.

fn timing() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut parts = Vec::new();
    let mut pass = true;
    for dynamics in BOTH {
        let params = SafetyParams::for_dynamics(dynamics);
        let w = init_weights(8, dynamics, Arch::default());
        let inputs: Vec<Observation> = (0..16)
            .map(|k| {
                let s = scene_with(&mut rng, &params, 6, 6, k % 2 == 0);
                s.observation(dynamics, disk(&mut rng, 3.0))
            })
            .collect();
        let mut samples: Vec<Duration> = Vec::with_capacity(10_000);
        for k in 0..10_100 {
            let obs = black_box(&inputs[k % inputs.len()]);
            let t = Instant::now();
            black_box(forward_controller(obs, &w, &params).expect("non-singular"));
            if k >= 100 {
                samples.push(t.elapsed());
            }
        }
        samples.sort();
        let median = samples[samples.len() / 2];
        pass &= median < Duration::from_millis(1);
        parts.push(format!(
            "{} median {:.1} us",
            dynamics.name(),
            median.as_secs_f64() * 1e6
        ));
    }
    verdict(
        pass,
        format!(
            "{} over 10000 calls, 6 neighbors + 6 obstacles (< 1 ms)",
            parts.join(", ")
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. Reproducibility of CLI runs.

fn glas(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_glas"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "glas {args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn rerun_identical(dir: &Path, files: &[&str]) -> Result<bool, String> {
    let read = |f: &str| std::fs::read(dir.join(f)).map_err(|e| format!("{f}: {e}"));
    let before = files
        .iter()
        .map(|f| read(f))
        .collect::<Result<Vec<_>, _>>()?;
    for f in files {
        std::fs::remove_file(dir.join(f)).map_err(|e| e.to_string())?;
    }
    let cfg = dir.join("run_config.json");
    glas(&["--jobs", "1", "--config", cfg.to_str().unwrap()])?;
    let after = files
        .iter()
        .map(|f| read(f))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(before == after)
}

fn reproducibility() -> Verdict {
    let tmp = tempfile::tempdir().expect("temp dir");
    let d = |name: &str| tmp.path().join(name).to_str().unwrap().to_string();
    let env = format!("{}/env.json", d("env"));
    let weights = format!("{}/weights.json", d("train"));
    let nn = format!("nn={weights}");
    let steps: Vec<(&str, Vec<&str>, Vec<&str>)> = vec![
        (
            "env",
            vec!["gen-env", "--robots", "4", "--seed", "5"],
            vec!["env.json"],
        ),
        ("plan", vec!["plan", "--env", &env], vec!["plan.csv"]),
        (
            "ds",
            vec![
                "build-dataset",
                "--robots",
                "2,4",
                "--instances",
                "4",
                "--seed",
                "9",
            ],
            vec!["dataset.bin", "instances.csv"],
        ),
        (
            "train",
            vec![
                "train",
                "--dataset",
                "DS",
                "--epochs",
                "3",
                "--batch-size",
                "32",
                "--hidden",
                "16",
                "--latent",
                "8",
            ],
            vec!["weights.json", "loss.csv"],
        ),
        (
            "roll",
            vec![
                "rollout",
                "--env",
                &env,
                "--policy",
                "nn",
                "--weights",
                &weights,
            ],
            vec!["trajectory.csv", "metrics.csv"],
        ),
        (
            "eval",
            vec![
                "eval",
                "--policies",
                "barrier,nn",
                "--weights",
                &nn,
                "--robots",
                "2,4",
                "--per-case",
                "2",
            ],
            vec!["metrics.csv", "summary.csv"],
        ),
        (
            "field",
            vec!["plot-field", "--env", &env, "--grid-points", "8"],
            vec!["field.csv"],
        ),
    ];
    let dataset = format!("{}/dataset.bin", d("ds"));
    let mut differing = Vec::new();
    for (dir, args, files) in &steps {
        let out = d(dir);
        let mut args: Vec<&str> = args
            .iter()
            .map(|a| if *a == "DS" { dataset.as_str() } else { a })
            .collect();
        args.extend(["--out", out.as_str()]);
        if let Err(e) = glas(&args) {
            return verdict(false, e);
        }
        match rerun_identical(Path::new(&out), files) {
            Ok(true) => {}
            Ok(false) => differing.push(args[0].to_string()),
            Err(e) => return verdict(false, e),
        }
    }
    verdict(
        differing.is_empty(),
        if differing.is_empty() {
            format!(
                "{} commands re-run from run_config.json with --jobs 1 byte-identical",
                steps.len()
            )
        } else {
            format!("outputs differ for: {}", differing.join(", "))
        },
    )
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let wanted: BTreeSet<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let run = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let mut lines = Vec::new();
    let mut failed = 0;
    let mut report = |n: usize, name: &str, v: Verdict, took: Duration| {
        let line = format!(
            "criterion {n} {name:<16} {} {} [{:.1} s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            took.as_secs_f64()
        );
        println!("{line}");
        failed += (!v.pass) as usize;
        lines.push(line);
    };

    let simple: [(usize, &str, fn() -> Verdict); 5] = [
        (1, "safety", safety),
        (2, "gradients", gradients),
        (3, "lyapunov", lyapunov),
        (4, "permutation", permutation),
        (8, "real-time", timing),
    ];
    for (n, name, f) in simple {
        if run(n) {
            let t = Instant::now();
            let v = f();
            report(n, name, v, t.elapsed());
        }
    }
    if run(9) {
        let t = Instant::now();
        let v = reproducibility();
        report(9, "reproducibility", v, t.elapsed());
    }
    if run(7) {
        let t = Instant::now();
        let v = loss_scale();
        report(7, "loss-scale", v, t.elapsed());
    }
    if run(5) || run(6) {
        let t = Instant::now();
        let (v5, v6) = learning();
        let took = t.elapsed();
        if run(5) {
            report(5, "learning", v5, took);
        }
        if run(6) {
            report(6, "effort", v6, took);
        }
    }

    println!("\nacceptance summary");
    lines.sort_by_key(|l| {
        l.split_whitespace()
            .nth(1)
            .and_then(|n| n.parse::<usize>().ok())
    });
    for l in &lines {
        println!("{l}");
    }
    println!(
        "{} of {} criteria passed",
        lines.len() - failed,
        lines.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
