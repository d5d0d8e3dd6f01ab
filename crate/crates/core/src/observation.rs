//! Local observation model and the network-ready preprocessing.
//!
//! Relative vectors point from the observing robot toward the observed
//! object: `p_ij = p_j - p_i`, and for obstacles `closest_point - p_i`.
//!
//! Encoded layout (one flat `f64` vector, shape tag `(n_v, n_o)`):
//!
//! ```text
//! [ goal position (2) | goal velocity (2, double only)
//! | n_v neighbor blocks: rel position (2) [+ rel velocity (2), double only]
//! | n_o obstacle blocks: rel closest point (2) ]
//! ```

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{GlasError, Result};
use crate::geom::Vec2;
use crate::safety::SafetyParams;
use crate::world::{Dynamics, EnvInstance, RobotState};

/// Version of the encoded observation layout embedded in datasets.
pub const ENCODING_VERSION: u32 = 1;

/// Caps on how many neighbors and obstacles an observation retains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObsCaps {
    pub max_neighbors: usize,
    pub max_obstacles: usize,
}

impl Default for ObsCaps {
    fn default() -> Self {
        Self {
            max_neighbors: 6,
            max_obstacles: 6,
        }
    }
}

/// Relative state of a neighboring robot.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub position: Vec2,
    /// Zero for single integrators.
    pub velocity: Vec2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub dynamics: Dynamics,
    /// Goal-scaled relative goal position.
    pub goal: Vec2,
    /// Relative goal velocity (`-v_i` for a resting goal). Zero for single integrators.
    pub goal_velocity: Vec2,
    pub neighbors: Vec<Neighbor>,
    pub obstacles: Vec<Vec2>,
    /// Distance to the closest sensed object before capping (infinite when none).
    pub raw_min_dist: f64,
}

impl Observation {
    /// An observation with nothing sensed.
    pub fn empty(dynamics: Dynamics, goal: Vec2, goal_velocity: Vec2) -> Self {
        Self {
            dynamics,
            goal,
            goal_velocity,
            neighbors: Vec::new(),
            obstacles: Vec::new(),
            raw_min_dist: f64::INFINITY,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.neighbors.len(), self.obstacles.len())
    }

    /// Own velocity as recovered from the goal velocity block.
    pub fn own_velocity(&self) -> Vec2 {
        -self.goal_velocity
    }

    /// Relative positions of every retained neighbor and obstacle.
    pub fn relative_points(&self) -> impl Iterator<Item = Vec2> + '_ {
        self.neighbors
            .iter()
            .map(|n| n.position)
            .chain(self.obstacles.iter().copied())
    }

    /// Neighbors sorted in canonical order. Sums taken in this order are
    /// bit-identical under any permutation of the list.
    pub fn canonical_neighbors(&self) -> Vec<Neighbor> {
        let key = |n: &Neighbor| [n.position.x, n.position.y, n.velocity.x, n.velocity.y];
        let mut v = self.neighbors.clone();
        v.sort_by(|a, b| canonical_cmp(&key(a), &key(b)));
        v
    }

    /// Obstacle points sorted in canonical order.
    pub fn canonical_obstacles(&self) -> Vec<Vec2> {
        let mut v = self.obstacles.clone();
        v.sort_by(|a, b| canonical_cmp(&a.to_array(), &b.to_array()));
        v
    }

    /// Minimum of the safety function over the uncapped neighborhood.
    pub fn raw_min_h(&self, params: &SafetyParams) -> f64 {
        params.h_of_distance(self.raw_min_dist)
    }

    /// Recomputes `raw_min_dist` from the retained lists.
    pub fn refresh_min_dist(&mut self) {
        self.raw_min_dist = self
            .relative_points()
            .map(Vec2::norm)
            .fold(f64::INFINITY, f64::min);
    }

    pub fn goal_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn encoded_len(dynamics: Dynamics, n_v: usize, n_o: usize) -> usize {
        let d = dynamics.state_dim();
        d + n_v * d + n_o * 2
    }

    /// Flattens the observation into the documented layout.
    pub fn encode(&self) -> (Vec<f64>, (usize, usize)) {
        let d = self.dynamics.state_dim();
        let mut out = Vec::with_capacity(Self::encoded_len(
            self.dynamics,
            self.neighbors.len(),
            self.obstacles.len(),
        ));
        out.extend_from_slice(&self.goal.to_array());
        if d == 4 {
            out.extend_from_slice(&self.goal_velocity.to_array());
        }
        for n in &self.neighbors {
            out.extend_from_slice(&n.position.to_array());
            if d == 4 {
                out.extend_from_slice(&n.velocity.to_array());
            }
        }
        for o in &self.obstacles {
            out.extend_from_slice(&o.to_array());
        }
        (out, self.shape())
    }

    /// Inverse of [`Observation::encode`]. `raw_min_dist` is rebuilt from the lists.
    pub fn decode(dynamics: Dynamics, shape: (usize, usize), values: &[f64]) -> Result<Self> {
        let (n_v, n_o) = shape;
        let expected = Self::encoded_len(dynamics, n_v, n_o);
        if values.len() != expected {
            return Err(GlasError::ShapeMismatch(format!(
                "encoded observation has {} values, shape ({n_v}, {n_o}) needs {expected}",
                values.len()
            )));
        }
        let d = dynamics.state_dim();
        let v2 = |k: usize| Vec2::new(values[k], values[k + 1]);
        let goal = v2(0);
        let goal_velocity = if d == 4 { v2(2) } else { Vec2::ZERO };
        let mut k = d;
        let mut neighbors = Vec::with_capacity(n_v);
        for _ in 0..n_v {
            let position = v2(k);
            let velocity = if d == 4 { v2(k + 2) } else { Vec2::ZERO };
            neighbors.push(Neighbor { position, velocity });
            k += d;
        }
        let obstacles = (0..n_o).map(|m| v2(k + 2 * m)).collect();
        let mut obs = Observation {
            dynamics,
            goal,
            goal_velocity,
            neighbors,
            obstacles,
            raw_min_dist: f64::INFINITY,
        };
        obs.refresh_min_dist();
        Ok(obs)
    }
}

/// Indices of the robots and obstacles inside the sensing radius of robot `i`
/// (inclusive), each ordered by increasing distance with index /
/// lexicographic-corner tie-breaking.
pub fn neighbor_sets(
    i: usize,
    states: &[RobotState],
    env: &EnvInstance,
    r_sense: f64,
) -> (Vec<usize>, Vec<usize>) {
    let p = states[i].position;
    let mut robots: Vec<(f64, usize)> = states
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, s)| ((s.position - p).norm(), j))
        .filter(|&(d, _)| d <= r_sense)
        .collect();
    robots.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut obstacles: Vec<(f64, usize)> = env
        .obstacles
        .iter()
        .enumerate()
        .map(|(k, o)| (o.distance(p), k))
        .filter(|&(d, _)| d <= r_sense)
        .collect();
    obstacles.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| env.obstacles[a.1].cmp_corner(&env.obstacles[b.1]))
            .then(a.1.cmp(&b.1))
    });

    (
        robots.into_iter().map(|(_, j)| j).collect(),
        obstacles.into_iter().map(|(_, k)| k).collect(),
    )
}

/// Builds robot `i`'s preprocessed observation from the joint state.
pub fn observe(
    i: usize,
    states: &[RobotState],
    env: &EnvInstance,
    params: &SafetyParams,
    caps: &ObsCaps,
) -> Observation {
    let me = states[i];
    let goal = env.goals[i];
    let e = goal.position - me.position;
    let n = e.norm();
    let alpha_g = if n > 0.0 {
        (params.r_sense / n).min(1.0)
    } else {
        1.0
    };
    let goal_velocity = match env.dynamics {
        Dynamics::Single => Vec2::ZERO,
        Dynamics::Double => goal.velocity - me.velocity,
    };

    let (robots, cells) = neighbor_sets(i, states, env, params.r_sense);
    let mut raw_min_dist = f64::INFINITY;

    let neighbors: Vec<Neighbor> = robots
        .iter()
        .map(|&j| {
            let rel = states[j].position - me.position;
            raw_min_dist = raw_min_dist.min(rel.norm());
            Neighbor {
                position: rel,
                velocity: match env.dynamics {
                    Dynamics::Single => Vec2::ZERO,
                    Dynamics::Double => states[j].velocity - me.velocity,
                },
            }
        })
        .collect::<Vec<_>>()
        .into_iter()
        .take(caps.max_neighbors)
        .collect();

    let obstacles: Vec<Vec2> = cells
        .iter()
        .map(|&k| {
            let rel = env.obstacles[k].closest_point(me.position) - me.position;
            raw_min_dist = raw_min_dist.min(rel.norm());
            rel
        })
        .collect::<Vec<_>>()
        .into_iter()
        .take(caps.max_obstacles)
        .collect();

    Observation {
        dynamics: env.dynamics,
        goal: e * alpha_g,
        goal_velocity,
        neighbors,
        obstacles,
        raw_min_dist,
    }
}

/// Canonical total order on relative vectors: by norm, then lexicographically.
pub(crate) fn canonical_cmp(a: &[f64], b: &[f64]) -> Ordering {
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    na.total_cmp(&nb).then_with(|| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Bounds, Obstacle};
    use proptest::prelude::*;

    fn env_with(
        states: &[Vec2],
        goals: &[Vec2],
        obstacles: Vec<Obstacle>,
        dynamics: Dynamics,
    ) -> (EnvInstance, Vec<RobotState>) {
        let s: Vec<RobotState> = states.iter().map(|p| RobotState::at(*p)).collect();
        let env = EnvInstance {
            bounds: Bounds::square(8.0),
            obstacles,
            starts: s.clone(),
            goals: goals.iter().map(|p| RobotState::at(*p)).collect(),
            dynamics,
        };
        (env, s)
    }

    fn params(r_sense: f64) -> SafetyParams {
        SafetyParams {
            r_sense,
            r_safe: 0.1,
            delta_r: 0.05,
            ..SafetyParams::default()
        }
    }

    #[test]
    fn far_robots_are_not_neighbors() {
        let (env, s) = env_with(
            &[Vec2::new(0.0, 0.0), Vec2::new(5.0, 0.0)],
            &[Vec2::ZERO, Vec2::ZERO],
            vec![],
            Dynamics::Single,
        );
        let (r, o) = neighbor_sets(0, &s, &env, 3.0);
        assert!(r.is_empty() && o.is_empty());
    }

    #[test]
    fn obstacle_in_range_uses_closest_point() {
        let (env, s) = env_with(
            &[Vec2::new(0.0, 0.0)],
            &[Vec2::ZERO],
            vec![Obstacle::cell(2, 0)],
            Dynamics::Single,
        );
        let (_, o) = neighbor_sets(0, &s, &env, 3.0);
        assert_eq!(o, vec![0]);
        let obs = observe(0, &s, &env, &params(3.0), &ObsCaps::default());
        assert_eq!(obs.obstacles, vec![Vec2::new(2.0, 0.0)]);
        assert_eq!(obs.raw_min_dist, 2.0);
    }

    #[test]
    fn sensing_radius_is_inclusive() {
        let (env, s) = env_with(
            &[Vec2::new(0.0, 0.0), Vec2::new(3.0, 0.0)],
            &[Vec2::ZERO, Vec2::ZERO],
            vec![],
            Dynamics::Single,
        );
        assert_eq!(neighbor_sets(0, &s, &env, 3.0).0, vec![1]);
    }

    #[test]
    fn goal_scaling() {
        let (env, s) = env_with(
            &[Vec2::new(0.0, 0.0)],
            &[Vec2::new(3.0, 4.0)],
            vec![],
            Dynamics::Single,
        );
        let obs = observe(0, &s, &env, &params(1.0), &ObsCaps::default());
        assert!((obs.goal.x - 0.6).abs() < 1e-15 && (obs.goal.y - 0.8).abs() < 1e-15);

        let (env, s) = env_with(
            &[Vec2::new(0.0, 0.0)],
            &[Vec2::new(0.3, 0.0)],
            vec![],
            Dynamics::Single,
        );
        let obs = observe(0, &s, &env, &params(1.0), &ObsCaps::default());
        assert_eq!(obs.goal, Vec2::new(0.3, 0.0));
    }

    #[test]
    fn caps_keep_closest() {
        let mut pts = vec![Vec2::new(4.0, 4.0)];
        // nine neighbors at distinct distances, listed out of order
        for k in [5, 2, 8, 0, 7, 3, 1, 6, 4] {
            pts.push(Vec2::new(4.0 + 0.3 + 0.2 * k as f64, 4.0));
        }
        let goals = vec![Vec2::new(1.0, 1.0); pts.len()];
        let (env, s) = env_with(&pts, &goals, vec![], Dynamics::Single);
        let obs = observe(0, &s, &env, &params(3.0), &ObsCaps::default());
        assert_eq!(obs.neighbors.len(), 6);
        let xs: Vec<f64> = obs.neighbors.iter().map(|n| n.position.x).collect();
        for (k, x) in xs.iter().enumerate() {
            assert!((x - (0.3 + 0.2 * k as f64)).abs() < 1e-12);
        }
        assert!((obs.raw_min_dist - 0.3).abs() < 1e-12);
    }

    #[test]
    fn encode_layout() {
        let obs = Observation::empty(Dynamics::Single, Vec2::new(1.0, 2.0), Vec2::ZERO);
        assert_eq!(obs.encode().0.len(), 2);
        let mut obs =
            Observation::empty(Dynamics::Double, Vec2::new(1.0, 2.0), Vec2::new(-0.5, 0.0));
        obs.neighbors = vec![
            Neighbor {
                position: Vec2::new(0.5, 0.0),
                velocity: Vec2::new(0.1, 0.2),
            },
            Neighbor {
                position: Vec2::new(0.0, 0.7),
                velocity: Vec2::new(0.0, 0.0),
            },
        ];
        obs.obstacles = vec![Vec2::new(-1.0, 0.0)];
        obs.refresh_min_dist();
        let (v, shape) = obs.encode();
        assert_eq!(v.len(), 14);
        assert_eq!(shape, (2, 1));
        assert_eq!(
            Observation::decode(Dynamics::Double, shape, &v).unwrap(),
            obs
        );
        assert!(Observation::decode(Dynamics::Double, (1, 1), &v).is_err());
    }

    #[test]
    fn double_integrator_velocity_block() {
        let (mut env, mut s) = env_with(
            &[Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)],
            &[Vec2::new(10.0, 0.0), Vec2::ZERO],
            vec![],
            Dynamics::Double,
        );
        env.dynamics = Dynamics::Double;
        s[0].velocity = Vec2::new(0.5, 0.0);
        s[1].velocity = Vec2::new(-0.5, 0.0);
        let obs = observe(0, &s, &env, &params(3.0), &ObsCaps::default());
        // position block scaled to r_sense, velocity block passed through
        assert!((obs.goal.x - 3.0).abs() < 1e-12);
        assert_eq!(obs.goal_velocity, Vec2::new(-0.5, 0.0));
        assert_eq!(obs.neighbors[0].velocity, Vec2::new(-1.0, 0.0));
        assert_eq!(obs.own_velocity(), Vec2::new(0.5, 0.0));
    }

    proptest! {
        #[test]
        fn truncation_keeps_sorted_subset(
            pts in proptest::collection::vec((0.0f64..8.0, 0.0f64..8.0), 1..20),
            cap in 0usize..8,
            gx in 0.0f64..8.0,
            gy in 0.0f64..8.0,
        ) {
            let positions: Vec<Vec2> = pts.iter().map(|&(x, y)| Vec2::new(x, y)).collect();
            let goals = vec![Vec2::new(gx, gy); positions.len()];
            let (env, s) = env_with(&positions, &goals, vec![Obstacle::cell(3, 3), Obstacle::cell(5, 1)], Dynamics::Single);
            let p = params(3.0);
            let caps = ObsCaps { max_neighbors: cap, max_obstacles: cap };
            let obs = observe(0, &s, &env, &p, &caps);
            let (all, _) = neighbor_sets(0, &s, &env, p.r_sense);
            prop_assert_eq!(obs.neighbors.len(), all.len().min(cap));
            for (n, &j) in obs.neighbors.iter().zip(&all) {
                prop_assert_eq!(n.position, s[j].position - s[0].position);
                prop_assert!(n.position.norm() <= p.r_sense);
            }
            for w in obs.neighbors.windows(2) {
                prop_assert!(w[0].position.norm() <= w[1].position.norm());
            }
            // goal scaling preserves direction and never grows the vector
            let e = goals[0] - s[0].position;
            prop_assert!(obs.goal.norm() <= e.norm() + 1e-12);
            prop_assert!(obs.goal.norm() <= p.r_sense + 1e-12);
            prop_assert!((obs.goal.x * e.y - obs.goal.y * e.x).abs() <= 1e-9 * e.norm_squared().max(1.0));
            prop_assert!(obs.goal.dot(e) >= 0.0);
            // pure
            prop_assert_eq!(observe(0, &s, &env, &p, &caps), obs);
        }
    }
}
