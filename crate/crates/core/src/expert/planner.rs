//! Prioritized path-velocity planner used as the centralized expert.
//!
//! Robots are planned one at a time. Each gets a geometric path (grid A* with
//! line-of-sight shortcutting, keeping clear of obstacles, of the goals of
//! robots already planned and of the starts of robots not yet planned), then
//! a speed profile along that path found by dynamic programming over time so
//! that it never comes within the separation distance of an earlier robot.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::trajectory::{clamped_spline, Piece, RobotTrajectory, Trajectory};
use crate::error::{GlasError, Result};
use crate::geom::{closest_approach, point_segment_distance, Vec2};
use crate::safety::SafetyParams;
use crate::world::{collision_free, Dynamics, EnvInstance, Obstacle};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Grid resolution of the path search, m.
    pub grid: f64,
    /// Time step of the speed profile, s.
    pub dt_plan: f64,
    /// Arc-length resolution of the speed profile, m.
    pub ds: f64,
    /// Desired center distance kept between robots, m.
    pub robot_separation: f64,
    /// Desired distance kept from obstacle surfaces, m.
    pub obstacle_clearance: f64,
    /// Speed near the goal is capped at `k_goal * remaining distance`, 1/s.
    pub k_goal: f64,
    /// Floor on that cap so the goal is reached in finite time, m/s.
    pub v_min: f64,
    /// Spline knot spacing tried first for double integrators, s.
    pub knot_spacing: f64,
    /// Number of robot priority orders tried before giving up.
    pub max_orders: usize,
    /// Extra time allowed per robot beyond three times its path length at full speed, s.
    pub horizon_slack: f64,
    /// Extra path cost per metre moved to the left of the start-goal line.
    /// Near-symmetric detours then pass obstacles on a consistent side, which
    /// a learner that only sees closest points can reproduce.
    pub side_bias: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            grid: 0.25,
            dt_plan: 0.1,
            ds: 0.01,
            robot_separation: 0.35,
            obstacle_clearance: 0.3,
            k_goal: 1.0,
            v_min: 0.1,
            knot_spacing: 0.5,
            max_orders: 6,
            horizon_slack: 30.0,
            side_bias: 0.3,
        }
    }
}

/// Distance between segment `a-b` and an axis-aligned box.
pub fn segment_box_distance(a: Vec2, b: Vec2, lo: Vec2, hi: Vec2) -> f64 {
    if segment_hits_box(a, b, lo, hi) {
        return 0.0;
    }
    let box_dist = |p: Vec2| {
        let q = Vec2::new(p.x.clamp(lo.x, hi.x), p.y.clamp(lo.y, hi.y));
        p.distance(q)
    };
    let corners = [lo, Vec2::new(hi.x, lo.y), hi, Vec2::new(lo.x, hi.y)];
    corners
        .iter()
        .map(|&c| point_segment_distance(c, a, b))
        .fold(box_dist(a).min(box_dist(b)), f64::min)
}

/// Liang-Barsky clip test.
fn segment_hits_box(a: Vec2, b: Vec2, lo: Vec2, hi: Vec2) -> bool {
    let d = b - a;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [
        (-d.x, a.x - lo.x),
        (d.x, hi.x - a.x),
        (-d.y, a.y - lo.y),
        (d.y, hi.y - a.y),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return false;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
            if t0 > t1 {
                return false;
            }
        }
    }
    true
}

/// Static geometry one robot's path must respect.
struct Scene<'a> {
    obstacles: &'a [Obstacle],
    clearance: f64,
    /// Discs to stay out of: (center, radius).
    blockers: Vec<(Vec2, f64)>,
    lo: Vec2,
    hi: Vec2,
}

impl Scene<'_> {
    fn point_ok(&self, p: Vec2) -> bool {
        p.x >= self.lo.x
            && p.y >= self.lo.y
            && p.x <= self.hi.x
            && p.y <= self.hi.y
            && self
                .obstacles
                .iter()
                .all(|o| o.distance(p) >= self.clearance)
            && self.blockers.iter().all(|&(c, r)| p.distance(c) >= r)
    }

    fn segment_ok(&self, a: Vec2, b: Vec2) -> bool {
        self.obstacles
            .iter()
            .all(|o| segment_box_distance(a, b, o.corner, o.max()) >= self.clearance)
            && self
                .blockers
                .iter()
                .all(|&(c, r)| point_segment_distance(c, a, b) >= r)
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Open {
    f: f64,
    node: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest grid path from `start` to `goal`, shortcut to line-of-sight
/// waypoints. Returns the polyline including both endpoints.
fn spatial_path(
    scene: &Scene,
    start: Vec2,
    goal: Vec2,
    grid: f64,
    side_bias: f64,
) -> Option<Vec<Vec2>> {
    if scene.segment_ok(start, goal) {
        return Some(vec![start, goal]);
    }
    let nx = ((scene.hi.x - scene.lo.x) / grid).round().max(1.0) as usize;
    let ny = ((scene.hi.y - scene.lo.y) / grid).round().max(1.0) as usize;
    let n_grid = nx * ny;
    let center = |k: usize| {
        Vec2::new(
            scene.lo.x + ((k % nx) as f64 + 0.5) * grid,
            scene.lo.y + ((k / nx) as f64 + 0.5) * grid,
        )
    };
    let node_ok: Vec<bool> = (0..n_grid).map(|k| scene.point_ok(center(k))).collect();
    let (s_node, g_node) = (n_grid, n_grid + 1);
    let pos = |k: usize| match k {
        k if k == s_node => start,
        k if k == g_node => goal,
        k => center(k),
    };
    let near = |p: Vec2| -> Vec<usize> {
        let cx = ((p.x - scene.lo.x) / grid).floor() as i64;
        let cy = ((p.y - scene.lo.y) / grid).floor() as i64;
        let mut out = Vec::new();
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (x, y) = (cx + dx, cy + dy);
                if x >= 0 && y >= 0 && (x as usize) < nx && (y as usize) < ny {
                    let k = y as usize * nx + x as usize;
                    if node_ok[k] && scene.segment_ok(p, center(k)) {
                        out.push(k);
                    }
                }
            }
        }
        out
    };
    let heading = goal - start;
    let heading = heading / heading.norm();
    // never below the Euclidean length, so the distance heuristic stays admissible
    let step_cost = |a: Vec2, b: Vec2| {
        let d = b - a;
        let left = heading.x * d.y - heading.y * d.x;
        d.norm() + side_bias * left.max(0.0)
    };
    let goal_links = near(goal);
    if goal_links.is_empty() {
        return None;
    }
    let mut links_goal = vec![false; n_grid];
    for &k in &goal_links {
        links_goal[k] = true;
    }

    let total = n_grid + 2;
    let mut g_cost = vec![f64::INFINITY; total];
    let mut parent = vec![usize::MAX; total];
    let mut closed = vec![false; total];
    let mut heap = BinaryHeap::new();
    g_cost[s_node] = 0.0;
    heap.push(Open {
        f: start.distance(goal),
        node: s_node,
    });
    while let Some(Open { node, .. }) = heap.pop() {
        if closed[node] {
            continue;
        }
        closed[node] = true;
        if node == g_node {
            break;
        }
        let p = pos(node);
        let mut succ: Vec<usize> = Vec::with_capacity(9);
        if node == s_node {
            succ.extend(near(start));
        } else {
            let (x, y) = ((node % nx) as i64, (node / nx) as i64);
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (qx, qy) = (x + dx, y + dy);
                    if qx < 0 || qy < 0 || qx as usize >= nx || qy as usize >= ny {
                        continue;
                    }
                    let k = qy as usize * nx + qx as usize;
                    if node_ok[k] && (dx == 0 || dy == 0 || scene.segment_ok(p, center(k))) {
                        succ.push(k);
                    }
                }
            }
            if links_goal[node] {
                succ.push(g_node);
            }
        }
        for k in succ {
            if closed[k] {
                continue;
            }
            let c = g_cost[node] + step_cost(p, pos(k));
            if c < g_cost[k] {
                g_cost[k] = c;
                parent[k] = node;
                heap.push(Open {
                    f: c + pos(k).distance(goal),
                    node: k,
                });
            }
        }
    }
    if !closed[g_node] {
        return None;
    }
    let mut nodes = vec![g_node];
    while *nodes.last().unwrap() != s_node {
        nodes.push(parent[*nodes.last().unwrap()]);
    }
    nodes.reverse();
    let raw: Vec<Vec2> = nodes.into_iter().map(pos).collect();

    let mut path = vec![raw[0]];
    let mut i = 0;
    while i < raw.len() - 1 {
        let mut j = raw.len() - 1;
        while j > i + 1 && !scene.segment_ok(raw[i], raw[j]) {
            j -= 1;
        }
        path.push(raw[j]);
        i = j;
    }
    Some(path)
}

/// Points at arc lengths `0, ds, 2 ds, ...` along a polyline, ending exactly at its end.
fn resample(path: &[Vec2], ds: f64) -> Vec<Vec2> {
    let lengths: Vec<f64> = path.windows(2).map(|w| w[0].distance(w[1])).collect();
    let total: f64 = lengths.iter().sum();
    let n = (total / ds).ceil() as usize;
    let mut out = Vec::with_capacity(n + 1);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for j in 0..=n {
        let s = (j as f64 * ds).min(total);
        while seg + 1 < lengths.len() && s > seg_start + lengths[seg] {
            seg_start += lengths[seg];
            seg += 1;
        }
        if j == n || lengths.is_empty() {
            out.push(*path.last().unwrap());
            continue;
        }
        let f = if lengths[seg] > 0.0 {
            ((s - seg_start) / lengths[seg]).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(path[seg] + (path[seg + 1] - path[seg]) * f);
    }
    out
}

/// Positions of an already planned robot at plan steps; holds the last one.
struct Moving<'a> {
    steps: &'a [Vec2],
    sep: f64,
}

impl Moving<'_> {
    #[inline]
    fn at(&self, k: usize) -> Vec2 {
        self.steps[k.min(self.steps.len() - 1)]
    }
}

/// Earliest-arrival speed profile along `bins` avoiding the moving robots.
/// Returns the bin position at every plan step up to arrival.
fn speed_profile(
    bins: &[Vec2],
    others: &[Moving],
    cfg: &PlannerConfig,
    u_max: f64,
) -> Option<Vec<Vec2>> {
    let nb = bins.len() - 1;
    let length = nb as f64 * cfg.ds;
    let dt = cfg.dt_plan;
    let moves: Vec<[usize; 2]> = (0..=nb)
        .map(|j| {
            let remaining = (nb - j) as f64 * cfg.ds;
            let cap = u_max.min((cfg.k_goal * remaining).max(cfg.v_min));
            let fast = ((cap * dt / cfg.ds + 1e-9).floor() as usize).max(1);
            let fast = fast.min(nb - j);
            [fast, fast / 2]
        })
        .collect();
    let goal = bins[nb];
    let others_done = others.iter().map(|o| o.steps.len()).max().unwrap_or(1);
    let horizon = others_done
        + ((3.0 * length / u_max + 3.0 / cfg.k_goal + cfg.horizon_slack) / dt).ceil() as usize;

    let clear = |a0: Vec2, a1: Vec2, k: usize| {
        others
            .iter()
            .all(|o| closest_approach(a0, a1, o.at(k), o.at(k + 1)) >= o.sep)
    };
    // stay_ok[k]: resting at the goal from step k onward is collision-free.
    let mut stay_ok = vec![true; others_done + 1];
    for k in (0..others_done).rev() {
        stay_ok[k] = stay_ok[k + 1] && clear(goal, goal, k);
    }
    let stay_from = |k: usize| k >= others_done || stay_ok[k];

    let mut preds: Vec<Vec<u32>> = Vec::new();
    let mut frontier: Vec<usize> = vec![0];
    for k in 0..horizon {
        if frontier.contains(&nb) && stay_from(k) {
            let mut out = vec![goal];
            let mut j = nb;
            for level in preds.iter().rev() {
                j = level[j] as usize;
                out.push(bins[j]);
            }
            out.reverse();
            return Some(out);
        }
        let mut pred = vec![u32::MAX; nb + 1];
        let mut next = Vec::new();
        // Faster moves from further along the path take precedence.
        for &j in frontier.iter().rev() {
            let [fast, slow] = moves[j];
            for m in [fast, slow, 0] {
                let j2 = j + m;
                if pred[j2] != u32::MAX || (m == slow && m != 0 && m == fast) {
                    continue;
                }
                if clear(bins[j], bins[j2], k) {
                    pred[j2] = j as u32;
                    next.push(j2);
                }
            }
        }
        if next.is_empty() {
            return None;
        }
        next.sort_unstable();
        next.dedup();
        frontier = next;
        preds.push(pred);
    }
    None
}

/// Grid cell centers over the scene with their static validity.
struct Grid {
    nx: usize,
    ny: usize,
    lo: Vec2,
    step: f64,
    ok: Vec<bool>,
}

impl Grid {
    fn new(scene: &Scene, step: f64) -> Self {
        let nx = ((scene.hi.x - scene.lo.x) / step).round().max(1.0) as usize;
        let ny = ((scene.hi.y - scene.lo.y) / step).round().max(1.0) as usize;
        let mut g = Self {
            nx,
            ny,
            lo: scene.lo,
            step,
            ok: Vec::new(),
        };
        g.ok = (0..nx * ny).map(|k| scene.point_ok(g.center(k))).collect();
        g
    }

    fn len(&self) -> usize {
        self.nx * self.ny
    }

    fn center(&self, k: usize) -> Vec2 {
        Vec2::new(
            self.lo.x + ((k % self.nx) as f64 + 0.5) * self.step,
            self.lo.y + ((k / self.nx) as f64 + 0.5) * self.step,
        )
    }

    /// Valid cells within `radius` of `p` reachable by a clear straight segment.
    fn links(&self, scene: &Scene, p: Vec2, radius: f64) -> Vec<usize> {
        let r = (radius / self.step).ceil() as i64 + 1;
        let cx = ((p.x - self.lo.x) / self.step).floor() as i64;
        let cy = ((p.y - self.lo.y) / self.step).floor() as i64;
        let mut out = Vec::new();
        for y in (cy - r).max(0)..=(cy + r).min(self.ny as i64 - 1) {
            for x in (cx - r).max(0)..=(cx + r).min(self.nx as i64 - 1) {
                let k = y as usize * self.nx + x as usize;
                let c = self.center(k);
                if self.ok[k] && c.distance(p) <= radius && scene.segment_ok(p, c) {
                    out.push(k);
                }
            }
        }
        out
    }

    fn neighbors8(&self, scene: &Scene, k: usize, out: &mut Vec<usize>) {
        let (x, y) = ((k % self.nx) as i64, (k / self.nx) as i64);
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let (qx, qy) = (x + dx, y + dy);
                if qx < 0 || qy < 0 || qx as usize >= self.nx || qy as usize >= self.ny {
                    continue;
                }
                let q = qy as usize * self.nx + qx as usize;
                if self.ok[q]
                    && (dx == 0 || dy == 0 || scene.segment_ok(self.center(k), self.center(q)))
                {
                    out.push(q);
                }
            }
        }
    }
}

/// Space-time grid search (8-connected moves plus waiting) against the
/// already planned robots. Each move spans the plan steps needed to cover a
/// diagonal at full speed. Returns positions at every plan step.
fn space_time_path(
    scene: &Scene,
    start: Vec2,
    goal: Vec2,
    others: &[Moving],
    cfg: &PlannerConfig,
    u_max: f64,
) -> Option<Vec<Vec2>> {
    let grid = Grid::new(scene, cfg.grid);
    let sub = ((cfg.grid * std::f64::consts::SQRT_2 / (u_max * cfg.dt_plan)) - 1e-9)
        .ceil()
        .max(1.0) as usize;
    let reach = u_max * sub as f64 * cfg.dt_plan;
    let n_grid = grid.len();
    let (s_node, g_node) = (n_grid, n_grid + 1);
    let pos = |k: usize| match k {
        k if k == s_node => start,
        k if k == g_node => goal,
        k => grid.center(k),
    };
    let start_links = grid.links(scene, start, reach);
    let mut to_goal = vec![false; n_grid];
    for k in grid.links(scene, goal, reach) {
        to_goal[k] = true;
    }
    let direct = start.distance(goal) <= reach && scene.segment_ok(start, goal);

    let others_done = others.iter().map(|o| o.steps.len()).max().unwrap_or(1);
    let length = start.distance(goal);
    let horizon_steps = others_done
        + ((3.0 * length / u_max + 3.0 / cfg.k_goal + cfg.horizon_slack) / cfg.dt_plan).ceil()
            as usize;
    let horizon = horizon_steps / sub + 1;

    let clear = |a: Vec2, b: Vec2, m: usize| {
        (0..sub).all(|s| {
            let p0 = a + (b - a) * (s as f64 / sub as f64);
            let p1 = a + (b - a) * ((s + 1) as f64 / sub as f64);
            let k = m * sub + s;
            others
                .iter()
                .all(|o| closest_approach(p0, p1, o.at(k), o.at(k + 1)) >= o.sep)
        })
    };
    let stay_from = |m: usize| {
        (m * sub..others_done.max(m * sub)).all(|k| {
            others
                .iter()
                .all(|o| closest_approach(goal, goal, o.at(k), o.at(k + 1)) >= o.sep)
        })
    };
    let h = |k: usize| (pos(k).distance(goal) / reach).ceil() as usize;

    let total = n_grid + 2;
    let mut parent: std::collections::HashMap<(usize, usize), usize> = Default::default();
    let mut closed = vec![false; total * (horizon + 1)];
    let mut heap: BinaryHeap<std::cmp::Reverse<(usize, usize, usize)>> = BinaryHeap::new();
    heap.push(std::cmp::Reverse((h(s_node), 0, s_node)));
    let mut succ = Vec::with_capacity(10);
    while let Some(std::cmp::Reverse((_, m, node))) = heap.pop() {
        if closed[m * total + node] {
            continue;
        }
        closed[m * total + node] = true;
        if node == g_node && stay_from(m) {
            let mut nodes = vec![g_node];
            let (mut cur, mut mm) = (g_node, m);
            while mm > 0 {
                cur = parent[&(mm, cur)];
                mm -= 1;
                nodes.push(cur);
            }
            nodes.reverse();
            let mut out = vec![start];
            for w in nodes.windows(2) {
                let (a, b) = (pos(w[0]), pos(w[1]));
                for s in 1..=sub {
                    out.push(a + (b - a) * (s as f64 / sub as f64));
                }
            }
            return Some(out);
        }
        if m >= horizon {
            continue;
        }
        succ.clear();
        succ.push(node);
        if node == s_node {
            succ.extend(&start_links);
            if direct {
                succ.push(g_node);
            }
        } else if node != g_node {
            grid.neighbors8(scene, node, &mut succ);
            if to_goal[node] {
                succ.push(g_node);
            }
        }
        for &q in &succ {
            if closed[(m + 1) * total + q] || !clear(pos(node), pos(q), m) {
                continue;
            }
            parent.entry((m + 1, q)).or_insert(node);
            heap.push(std::cmp::Reverse((m + 1 + h(q), m + 1, q)));
        }
    }
    None
}

/// Required separation between robots `i` and `h`: the configured distance,
/// relaxed only where the instance itself puts them closer (both at their
/// starts at time zero, or both resting at their goals).
fn pair_separation(env: &EnvInstance, i: usize, h: usize, sep: f64) -> f64 {
    let starts = env.starts[i].position.distance(env.starts[h].position);
    let goals = env.goals[i].position.distance(env.goals[h].position);
    sep.min(starts).min(goals) * (1.0 - 1e-6)
}

/// Single-integrator plan for one priority order: per-robot step positions.
fn plan_order(
    env: &EnvInstance,
    order: &[usize],
    cfg: &PlannerConfig,
    u_max: f64,
    avoid_later_starts: bool,
) -> Option<Vec<Vec<Vec2>>> {
    let n = env.n_robots();
    let mut steps: Vec<Vec<Vec2>> = vec![Vec::new(); n];
    for (rank, &i) in order.iter().enumerate() {
        let start = env.starts[i].position;
        let goal = env.goals[i].position;
        let clearance = cfg
            .obstacle_clearance
            .min(env.obstacle_clearance(start))
            .min(env.obstacle_clearance(goal))
            * (1.0 - 1e-9);
        let radius = |c: Vec2| {
            cfg.robot_separation
                .min(c.distance(start))
                .min(c.distance(goal))
                * (1.0 - 1e-9)
        };
        let mut blockers: Vec<(Vec2, f64)> = order[..rank]
            .iter()
            .map(|&h| {
                let c = env.goals[h].position;
                (c, radius(c))
            })
            .collect();
        if avoid_later_starts {
            blockers.extend(order[rank + 1..].iter().map(|&h| {
                let c = env.starts[h].position;
                (c, radius(c))
            }));
        }
        let scene = Scene {
            obstacles: &env.obstacles,
            clearance,
            blockers,
            lo: env.bounds.min,
            hi: env.bounds.max,
        };
        let path = spatial_path(&scene, start, goal, cfg.grid, cfg.side_bias)?;
        let bins = resample(&path, cfg.ds);
        let others: Vec<Moving> = order[..rank]
            .iter()
            .map(|&h| Moving {
                steps: &steps[h],
                sep: pair_separation(env, i, h, cfg.robot_separation),
            })
            .collect();
        let profile = speed_profile(&bins, &others, cfg, u_max).or_else(|| {
            let open = Scene {
                blockers: Vec::new(),
                ..scene
            };
            space_time_path(&open, start, goal, &others, cfg, u_max)
        })?;
        steps[i] = profile;
    }
    Some(steps)
}

fn linear_trajectory(steps: &[Vec2], dt: f64) -> RobotTrajectory {
    let pieces = steps
        .windows(2)
        .enumerate()
        .map(|(k, w)| Piece::linear(k as f64 * dt, (k + 1) as f64 * dt, w[0], w[1]))
        .collect();
    RobotTrajectory {
        pieces,
        start: steps[0],
        goal: *steps.last().unwrap(),
    }
}

fn smooth_trajectory(steps: &[Vec2], dt: f64, knot_every: usize) -> RobotTrajectory {
    let last = steps.len() - 1;
    if last == 0 {
        return RobotTrajectory::stationary(steps[0]);
    }
    let mut idx: Vec<usize> = (0..last).step_by(knot_every.max(1)).collect();
    if let Some(&tail) = idx.last() {
        if tail > 0 && (last - tail) * 2 < knot_every {
            idx.pop();
        }
    }
    idx.push(last);
    let times: Vec<f64> = idx.iter().map(|&k| k as f64 * dt).collect();
    let points: Vec<Vec2> = idx.iter().map(|&k| steps[k]).collect();
    RobotTrajectory {
        pieces: clamped_spline(&times, &points),
        start: steps[0],
        goal: steps[last],
    }
}

/// Checks the joint plan at every `dt_check` and at the end.
pub fn verify(traj: &Trajectory, env: &EnvInstance, r_safe: f64, dt_check: f64) -> bool {
    let n = (traj.duration / dt_check).ceil() as usize;
    (0..=n).all(|k| {
        let t = (k as f64 * dt_check).min(traj.duration);
        collision_free(&traj.states_at(t), env, r_safe)
    })
}

/// Plans collision-free trajectories for every robot of `env`.
///
/// Fails with [`GlasError::Precondition`] when the instance violates the
/// start-spacing assumption and with [`GlasError::InstanceUnsolved`] when no
/// priority order yields a plan.
pub fn plan_global(
    env: &EnvInstance,
    params: &SafetyParams,
    cfg: &PlannerConfig,
    dt_sample: f64,
) -> Result<Trajectory> {
    if !(dt_sample > 0.0) {
        return Err(GlasError::Precondition(format!("dt_sample = {dt_sample}")));
    }
    if env.dynamics != params.dynamics {
        return Err(GlasError::Precondition(
            "safety parameters and environment disagree on dynamics".into(),
        ));
    }
    let spacing = params.start_spacing();
    env.check_spacing(spacing)?;
    let goal_clearance = env.min_clearance(&env.goals);
    if goal_clearance < spacing {
        return Err(GlasError::Precondition(format!(
            "goal clearance {goal_clearance:.4} m below required spacing {spacing:.4} m"
        )));
    }
    for s in env.starts.iter().chain(&env.goals) {
        if !env.bounds.contains(s.position) {
            return Err(GlasError::Precondition(format!(
                "{:?} lies outside the workspace",
                s.position
            )));
        }
    }
    let n = env.n_robots();
    let check_dt = dt_sample / 10.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut order: Vec<usize> = (0..n).collect();
    for attempt in 0..cfg.max_orders.max(1) {
        if attempt > 0 {
            order.shuffle(&mut rng);
        }
        let steps = plan_order(env, &order, cfg, params.u_max, true)
            .or_else(|| plan_order(env, &order, cfg, params.u_max, false));
        let Some(steps) = steps else { continue };
        match env.dynamics {
            Dynamics::Single => {
                let robots = steps
                    .iter()
                    .map(|s| linear_trajectory(s, cfg.dt_plan))
                    .collect();
                let traj = Trajectory::new(Dynamics::Single, dt_sample, robots);
                if verify(&traj, env, params.r_safe, check_dt) {
                    return Ok(traj);
                }
            }
            Dynamics::Double => {
                let base = ((cfg.knot_spacing / cfg.dt_plan).round() as usize).max(1);
                let mut spacings = vec![base];
                for k in [base / 2, 1] {
                    if k >= 1 && !spacings.contains(&k) {
                        spacings.push(k);
                    }
                }
                for every in spacings {
                    let robots: Vec<RobotTrajectory> = steps
                        .iter()
                        .map(|s| smooth_trajectory(s, cfg.dt_plan, every))
                        .collect();
                    let a_max = robots
                        .iter()
                        .map(RobotTrajectory::max_acceleration)
                        .fold(0.0, f64::max);
                    let factor = (a_max / params.u_max).sqrt().max(1.0) * (1.0 + 1e-9);
                    let robots = robots.iter().map(|r| r.stretched(factor)).collect();
                    let traj = Trajectory::new(Dynamics::Double, dt_sample, robots);
                    if verify(&traj, env, params.r_safe, check_dt) {
                        return Ok(traj);
                    }
                }
            }
        }
    }
    Err(GlasError::InstanceUnsolved(format!(
        "no plan for {n} robots after {} priority orders",
        cfg.max_orders.max(1)
    )))
}
