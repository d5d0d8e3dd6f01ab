//! Workspace geometry, robot states and random instance generation.

use std::path::Path;

use rand::{seq::index, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GlasError, Result};
use crate::geom::Vec2;

/// Robot dynamics model: velocity-controlled or acceleration-controlled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dynamics {
    Single,
    Double,
}

impl Dynamics {
    /// Length of a relative robot state vector.
    pub fn state_dim(self) -> usize {
        match self {
            Dynamics::Single => 2,
            Dynamics::Double => 4,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Dynamics::Single => 1,
            Dynamics::Double => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Dynamics::Single),
            2 => Some(Dynamics::Double),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dynamics::Single => "single",
            Dynamics::Double => "double",
        }
    }
}

impl std::str::FromStr for Dynamics {
    type Err = GlasError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Dynamics::Single),
            "double" => Ok(Dynamics::Double),
            other => Err(GlasError::Format(format!("unknown dynamics {other:?}"))),
        }
    }
}

/// Position and velocity of one robot. Velocity stays zero for single integrators.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub position: Vec2,
    pub velocity: Vec2,
}

impl RobotState {
    pub fn at(position: Vec2) -> Self {
        Self {
            position,
            velocity: Vec2::ZERO,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.velocity.is_finite()
    }
}

/// Axis-aligned workspace rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Vec2,
    pub max: Vec2,
}

impl Bounds {
    pub fn square(side: f64) -> Self {
        Self {
            min: Vec2::ZERO,
            max: Vec2::new(side, side),
        }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

/// A unit-square obstacle identified by its lower-left corner.
///
/// Generated instances place obstacles on integer grid cells; hand-written
/// environment files may use fractional corners.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub corner: Vec2,
}

impl Obstacle {
    pub fn cell(ix: i64, iy: i64) -> Self {
        Self {
            corner: Vec2::new(ix as f64, iy as f64),
        }
    }

    pub fn max(&self) -> Vec2 {
        self.corner + Vec2::new(1.0, 1.0)
    }

    /// Point of the square nearest to `p` (componentwise clamp).
    pub fn closest_point(&self, p: Vec2) -> Vec2 {
        closest_point_on_obstacle(p, self)
    }

    pub fn distance(&self, p: Vec2) -> f64 {
        (self.closest_point(p) - p).norm()
    }

    /// Lexicographic order on the corner, used for deterministic tie-breaking.
    pub fn cmp_corner(&self, other: &Obstacle) -> std::cmp::Ordering {
        self.corner
            .x
            .total_cmp(&other.corner.x)
            .then(self.corner.y.total_cmp(&other.corner.y))
    }
}

pub fn closest_point_on_obstacle(p: Vec2, cell: &Obstacle) -> Vec2 {
    let hi = cell.max();
    Vec2::new(
        p.x.clamp(cell.corner.x, hi.x),
        p.y.clamp(cell.corner.y, hi.y),
    )
}

/// A planning/evaluation instance.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvInstance {
    pub bounds: Bounds,
    pub obstacles: Vec<Obstacle>,
    pub starts: Vec<RobotState>,
    pub goals: Vec<RobotState>,
    pub dynamics: Dynamics,
}

impl EnvInstance {
    /// Obstacle cells per unit of workspace area.
    pub fn obstacle_fraction(&self) -> f64 {
        let area =
            (self.bounds.max.x - self.bounds.min.x) * (self.bounds.max.y - self.bounds.min.y);
        self.obstacles.len() as f64 / area
    }

    pub fn n_robots(&self) -> usize {
        self.starts.len()
    }

    /// Distance from `p` to the nearest obstacle surface (infinite without obstacles).
    pub fn obstacle_clearance(&self, p: Vec2) -> f64 {
        self.obstacles
            .iter()
            .map(|o| o.distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Smallest pairwise distance among `states` and between them and the obstacles.
    pub fn min_clearance(&self, states: &[RobotState]) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in states.iter().enumerate() {
            best = best.min(self.obstacle_clearance(a.position));
            for b in &states[i + 1..] {
                best = best.min(a.position.distance(b.position));
            }
        }
        best
    }

    /// Checks the start-spacing assumption: every pair of objects at least `spacing` apart.
    pub fn check_spacing(&self, spacing: f64) -> Result<()> {
        if self.starts.len() != self.goals.len() {
            return Err(GlasError::Precondition(format!(
                "{} starts but {} goals",
                self.starts.len(),
                self.goals.len()
            )));
        }
        let c = self.min_clearance(&self.starts);
        if c < spacing {
            return Err(GlasError::Precondition(format!(
                "start clearance {c:.4} m below required spacing {spacing:.4} m"
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&EnvFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: EnvFile = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| GlasError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GlasError::io(path, e))?;
        Self::from_json(&text)
    }
}

/// On-disk environment schema.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvFile {
    bounds: [f64; 4],
    obstacles: Vec<[f64; 2]>,
    starts: Vec<Vec<f64>>,
    goals: Vec<Vec<f64>>,
    dynamics: Dynamics,
}

fn state_to_row(s: &RobotState, dynamics: Dynamics) -> Vec<f64> {
    match dynamics {
        Dynamics::Single => vec![s.position.x, s.position.y],
        Dynamics::Double => vec![s.position.x, s.position.y, s.velocity.x, s.velocity.y],
    }
}

fn row_to_state(row: &[f64], dynamics: Dynamics) -> Result<RobotState> {
    let state = match (row.len(), dynamics) {
        (2, _) => RobotState::at(Vec2::new(row[0], row[1])),
        (4, Dynamics::Double) => RobotState {
            position: Vec2::new(row[0], row[1]),
            velocity: Vec2::new(row[2], row[3]),
        },
        (n, d) => {
            return Err(GlasError::Format(format!(
                "state row of length {n} is invalid for {} dynamics",
                d.name()
            )))
        }
    };
    if !state.is_finite() {
        return Err(GlasError::Format("non-finite state row".into()));
    }
    Ok(state)
}

impl From<&EnvInstance> for EnvFile {
    fn from(env: &EnvInstance) -> Self {
        EnvFile {
            bounds: [
                env.bounds.min.x,
                env.bounds.min.y,
                env.bounds.max.x,
                env.bounds.max.y,
            ],
            obstacles: env.obstacles.iter().map(|o| o.corner.to_array()).collect(),
            starts: env
                .starts
                .iter()
                .map(|s| state_to_row(s, env.dynamics))
                .collect(),
            goals: env
                .goals
                .iter()
                .map(|s| state_to_row(s, env.dynamics))
                .collect(),
            dynamics: env.dynamics,
        }
    }
}

impl TryFrom<EnvFile> for EnvInstance {
    type Error = GlasError;

    fn try_from(f: EnvFile) -> Result<Self> {
        if f.starts.len() != f.goals.len() {
            return Err(GlasError::Format(format!(
                "{} starts but {} goals",
                f.starts.len(),
                f.goals.len()
            )));
        }
        let [x0, y0, x1, y1] = f.bounds;
        if !(x0 < x1 && y0 < y1) {
            return Err(GlasError::Format("degenerate bounds".into()));
        }
        let parse = |rows: &[Vec<f64>]| -> Result<Vec<RobotState>> {
            rows.iter().map(|r| row_to_state(r, f.dynamics)).collect()
        };
        Ok(EnvInstance {
            bounds: Bounds {
                min: Vec2::new(x0, y0),
                max: Vec2::new(x1, y1),
            },
            obstacles: f
                .obstacles
                .iter()
                .map(|c| Obstacle {
                    corner: Vec2::from(*c),
                })
                .collect(),
            starts: parse(&f.starts)?,
            goals: parse(&f.goals)?,
            dynamics: f.dynamics,
        })
    }
}

/// True iff every robot-robot center distance and every robot-obstacle
/// closest-point distance is strictly greater than `r_safe`.
pub fn collision_free(states: &[RobotState], env: &EnvInstance, r_safe: f64) -> bool {
    env.min_clearance(states) > r_safe
}

/// Parameters of the random instance generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvGenParams {
    pub n_robots: usize,
    pub obstacle_fraction: f64,
    /// Side length of the square workspace, in grid cells (1 m each).
    pub side: u32,
    pub dynamics: Dynamics,
    /// Minimum distance between any two objects at the start (r_safe + delta_r).
    pub min_spacing: f64,
}

impl EnvGenParams {
    pub fn new(n_robots: usize, obstacle_fraction: f64, side: u32) -> Self {
        Self {
            n_robots,
            obstacle_fraction,
            side,
            dynamics: Dynamics::Single,
            min_spacing: 0.2,
        }
    }
}

/// Samples a random grid-obstacle instance.
///
/// Obstacles are `floor(fraction * side^2)` distinct cells. Starts and goals are
/// rejection-sampled so that every object keeps `min_spacing` from every other
/// object of its set and from the obstacles; goals also keep that spacing from
/// the other robots' starts. The sampler gives up after `100 * n_robots`
/// rejected draws per set.
pub fn make_random_env(params: &EnvGenParams, seed: u64) -> Result<EnvInstance> {
    if !(0.0..=0.5).contains(&params.obstacle_fraction) {
        return Err(GlasError::Precondition(format!(
            "obstacle fraction {} outside [0, 0.5]",
            params.obstacle_fraction
        )));
    }
    if params.n_robots == 0 || params.side == 0 {
        return Err(GlasError::Precondition(
            "need at least one robot and a positive side".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = params.side as usize;
    let n_cells = side * side;
    let n_obst = (params.obstacle_fraction * n_cells as f64).floor() as usize;
    let mut picked = index::sample(&mut rng, n_cells, n_obst).into_vec();
    picked.sort_unstable();
    let obstacles: Vec<Obstacle> = picked
        .into_iter()
        .map(|k| Obstacle::cell((k % side) as i64, (k / side) as i64))
        .collect();

    let mut env = EnvInstance {
        bounds: Bounds::square(params.side as f64),
        obstacles,
        starts: Vec::with_capacity(params.n_robots),
        goals: Vec::with_capacity(params.n_robots),
        dynamics: params.dynamics,
    };
    let budget = 100 * params.n_robots;
    let s = params.side as f64;
    let spacing = params.min_spacing;

    let mut draws = 0usize;
    while env.starts.len() < params.n_robots {
        if draws >= budget {
            return Err(GlasError::InstanceInfeasible(format!(
                "placed {} of {} starts within {budget} draws",
                env.starts.len(),
                params.n_robots
            )));
        }
        draws += 1;
        let p = Vec2::new(rng.gen_range(0.0..=s), rng.gen_range(0.0..=s));
        if env.obstacle_clearance(p) >= spacing
            && env.starts.iter().all(|q| q.position.distance(p) >= spacing)
        {
            env.starts.push(RobotState::at(p));
        }
    }

    draws = 0;
    while env.goals.len() < params.n_robots {
        if draws >= budget {
            return Err(GlasError::InstanceInfeasible(format!(
                "placed {} of {} goals within {budget} draws",
                env.goals.len(),
                params.n_robots
            )));
        }
        draws += 1;
        let p = Vec2::new(rng.gen_range(0.0..=s), rng.gen_range(0.0..=s));
        let own = env.goals.len();
        if env.obstacle_clearance(p) >= spacing
            && env.goals.iter().all(|q| q.position.distance(p) >= spacing)
            && env
                .starts
                .iter()
                .enumerate()
                .all(|(j, q)| j == own || q.position.distance(p) >= spacing)
        {
            env.goals.push(RobotState::at(p));
        }
    }
    Ok(env)
}
