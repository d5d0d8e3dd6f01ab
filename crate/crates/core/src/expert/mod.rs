//! Substitute centralized expert and demonstration extraction.

pub mod dataset;
pub mod planner;
pub mod trajectory;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use dataset::{read_dataset, write_dataset, Dataset, DemoRecord};
pub use planner::{plan_global, verify, PlannerConfig};
pub use trajectory::{plan_csv, RobotTrajectory, TrajSample, Trajectory, PLAN_CSV_VERSION};

use crate::error::{GlasError, Result};
use crate::geom::Vec2;
use crate::observation::{observe, ObsCaps, Observation};
use crate::par;
use crate::safety::SafetyParams;
use crate::world::{make_random_env, EnvGenParams, EnvInstance};

/// Default demonstration sampling period, s.
pub const DT_SAMPLE: f64 = 0.5;

#[inline]
fn q(x: f64) -> f64 {
    x as f32 as f64
}

fn qv(v: Vec2) -> Vec2 {
    Vec2::new(q(v.x), q(v.y))
}

/// Rounds every stored number to single precision, the dataset file precision,
/// so in-memory and on-disk datasets train identically.
pub fn quantize(obs: &Observation) -> Observation {
    let mut out = obs.clone();
    out.goal = qv(out.goal);
    out.goal_velocity = qv(out.goal_velocity);
    for n in &mut out.neighbors {
        n.position = qv(n.position);
        n.velocity = qv(n.velocity);
    }
    for o in &mut out.obstacles {
        *o = qv(*o);
    }
    out.refresh_min_dist();
    out
}

/// One record per robot per trajectory sample, robot-major. Samples where a
/// robot already rests at its goal are kept.
pub fn extract_demos(
    traj: &Trajectory,
    env: &EnvInstance,
    params: &SafetyParams,
    caps: &ObsCaps,
) -> Vec<DemoRecord> {
    let n = traj.n_robots();
    let n_samples = traj.samples.first().map_or(0, Vec::len);
    let joint: Vec<Vec<_>> = (0..n_samples)
        .map(|k| (0..n).map(|i| traj.samples[i][k].state()).collect())
        .collect();
    let mut out = Vec::with_capacity(n * n_samples);
    for i in 0..n {
        for (k, states) in joint.iter().enumerate() {
            out.push(DemoRecord {
                obs: quantize(&observe(i, states, env, params, caps)),
                action: qv(traj.samples[i][k].action),
            });
        }
    }
    out
}

/// What to generate: `instances` solved instances for every
/// (robot count, obstacle fraction) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub robots: Vec<usize>,
    pub obstacle_fractions: Vec<f64>,
    pub instances: usize,
    pub side: u32,
    pub seed: u64,
    pub dt_sample: f64,
    pub planner: PlannerConfig,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            robots: vec![4, 8],
            obstacle_fractions: vec![0.1],
            instances: 100,
            side: 8,
            seed: 0,
            dt_sample: DT_SAMPLE,
            planner: PlannerConfig::default(),
        }
    }
}

/// A solved instance and its plan.
#[derive(Clone, Debug)]
pub struct Solved {
    pub seed: u64,
    pub env: EnvInstance,
    pub traj: Trajectory,
}

/// Seeds candidate instances for one (robot count, obstacle fraction) pair.
fn candidate_seeds(base: u64, n_robots: usize, fraction: f64) -> ChaCha8Rng {
    let key = base
        ^ (n_robots as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ fraction.to_bits().rotate_left(17);
    ChaCha8Rng::seed_from_u64(key)
}

/// Generates and plans random instances until `count` are solved, skipping
/// infeasible or unsolved draws. Candidates are processed in fixed-size
/// chunks so the result does not depend on the degree of parallelism.
#[allow(clippy::too_many_arguments)]
pub fn solve_instances(
    n_robots: usize,
    fraction: f64,
    count: usize,
    side: u32,
    seed: u64,
    params: &SafetyParams,
    planner: &PlannerConfig,
    dt_sample: f64,
) -> Result<Vec<Solved>> {
    const CHUNK: usize = 16;
    let mut gp = EnvGenParams::new(n_robots, fraction, side);
    gp.dynamics = params.dynamics;
    gp.min_spacing = params.start_spacing();
    let mut rng = candidate_seeds(seed, n_robots, fraction);
    let mut out = Vec::with_capacity(count);
    let mut tried = 0usize;
    let budget = 50 * count.max(1) + 100;
    while out.len() < count {
        if tried >= budget {
            return Err(GlasError::InstanceUnsolved(format!(
                "only {} of {count} instances with {n_robots} robots solved in {budget} draws",
                out.len()
            )));
        }
        let seeds: Vec<u64> = (0..CHUNK).map(|_| rng.gen()).collect();
        tried += CHUNK;
        let results = par::map(&seeds, |&s| -> Result<Option<Solved>> {
            let env = match make_random_env(&gp, s) {
                Ok(env) => env,
                Err(GlasError::InstanceInfeasible(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            match plan_global(&env, params, planner, dt_sample) {
                Ok(traj) => Ok(Some(Solved { seed: s, env, traj })),
                Err(GlasError::InstanceUnsolved(_)) => Ok(None),
                Err(e) => Err(e),
            }
        });
        for r in results {
            if let Some(s) = r? {
                if out.len() < count {
                    out.push(s);
                }
            }
        }
    }
    Ok(out)
}

/// Builds a demonstration dataset according to `spec`.
pub fn build_dataset(
    spec: &DatasetSpec,
    params: &SafetyParams,
    caps: &ObsCaps,
) -> Result<(Dataset, Vec<Solved>)> {
    let mut ds = Dataset::new(params.dynamics);
    let mut solved = Vec::new();
    for &n in &spec.robots {
        for &f in &spec.obstacle_fractions {
            let batch = solve_instances(
                n,
                f,
                spec.instances,
                spec.side,
                spec.seed,
                params,
                &spec.planner,
                spec.dt_sample,
            )?;
            let records = par::map(&batch, |s| extract_demos(&s.traj, &s.env, params, caps));
            for r in records {
                ds.records.extend(r);
            }
            solved.extend(batch);
        }
    }
    Ok((ds, solved))
}

/// Expert plan duration used to size evaluation horizons.
pub fn plan_duration(traj: &Trajectory) -> f64 {
    traj.duration
}
