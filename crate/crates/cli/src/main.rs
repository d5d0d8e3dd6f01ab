//! `glas`: command-line driver for expert planning, dataset generation,
//! training, rollouts and evaluation.

mod commands;
mod config;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use glas_core::expert::{PlannerConfig, DT_SAMPLE};
use glas_core::policy::Arch;
use glas_core::sim::SimConfig;
use glas_core::training::{TrainConfig, TrainMode};
use glas_core::{Dynamics, GlasError, ObsCaps, SafetyParams};

use config::{Command, RunConfig, RUN_CONFIG_VERSION};

const AFTER_HELP: &str = "\
Every command writes its outputs plus run_config.json into --out.
Re-run a recorded command with `glas --config DIR/run_config.json --jobs 1`;
values in the config file override command-line flags.

Exit codes: 0 success, 1 internal error, 2 usage error, 3 missing or malformed
input (including format version mismatch), 4 unsatisfiable request (bad
parameters, infeasible or unsolved instance), 5 numerical failure.
On failure the last stderr line is a JSON object:
  {\"error\":{\"kind\":\"...\",\"exit_code\":N,\"message\":\"...\"}}";

#[derive(Parser, Debug)]
#[command(name = "glas", version, about = "Safe decentralized multi-robot policies learned from a global planner", after_help = AFTER_HELP)]
struct Cli {
    /// Run configuration file; its values override flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (0 = all cores). With 1 every output is bit-reproducible.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    cmd: Option<Cmd>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a random grid-obstacle environment (env.json).
    GenEnv {
        #[arg(long, default_value_t = 8)]
        robots: usize,
        /// Fraction of grid cells occupied by obstacles.
        #[arg(long = "obst", default_value_t = 0.1)]
        obstacle_fraction: f64,
        #[arg(long, default_value_t = 8)]
        side_m: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Plan expert trajectories for an environment (plan.csv).
    Plan {
        #[arg(long)]
        env: PathBuf,
        #[arg(long, default_value_t = DT_SAMPLE)]
        dt_sample_s: f64,
        #[command(flatten)]
        planner: PlannerArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Build a demonstration dataset from solved random instances (dataset.bin).
    BuildDataset {
        #[arg(long, value_delimiter = ',', default_value = "4,8")]
        robots: Vec<usize>,
        #[arg(long = "obst", value_delimiter = ',', default_value = "0.1")]
        obstacle_fractions: Vec<f64>,
        /// Solved instances per (robot count, obstacle fraction) pair.
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 8)]
        side_m: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DT_SAMPLE)]
        dt_sample_s: f64,
        #[command(flatten)]
        planner: PlannerArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Train a policy on a dataset (weights.json, loss.csv).
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Simulate one environment closed loop (trajectory.csv, metrics.csv).
    Rollout {
        #[arg(long)]
        env: PathBuf,
        /// `barrier` or any name for a learned policy (needs --weights).
        #[arg(long, default_value = "barrier")]
        policy: String,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        planner: PlannerArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate policies on generated instance suites (metrics.csv, summary.csv).
    Eval {
        /// Policy names; every name other than `barrier` needs a --weights entry.
        #[arg(long, value_delimiter = ',', default_value = "barrier")]
        policies: Vec<String>,
        /// `NAME=PATH` weights of a learned policy; repeatable.
        #[arg(long = "weights", value_parser = parse_named_path)]
        weights: Vec<(String, PathBuf)>,
        #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
        robots: Vec<usize>,
        #[arg(long = "obst", value_delimiter = ',', default_value = "0.1")]
        obstacle_fractions: Vec<f64>,
        /// Instances per (robot count, obstacle fraction) pair.
        #[arg(long, default_value_t = 10)]
        per_case: usize,
        #[arg(long, default_value_t = 8)]
        side_m: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Record wall-clock time per rollout (makes outputs non-reproducible).
        #[arg(long)]
        wall_time: bool,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        planner: PlannerArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Emit the controller's action field over a grid (field.csv).
    PlotField {
        #[arg(long)]
        env: PathBuf,
        #[arg(long, default_value = "barrier")]
        policy: String,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Robot whose goal the virtual robot uses.
        #[arg(long, default_value_t = 0)]
        robot: usize,
        /// Grid points per side.
        #[arg(long, default_value_t = 32)]
        grid_points: usize,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DynamicsArg {
    Single,
    Double,
}

impl From<DynamicsArg> for Dynamics {
    fn from(d: DynamicsArg) -> Self {
        match d {
            DynamicsArg::Single => Dynamics::Single,
            DynamicsArg::Double => Dynamics::Double,
        }
    }
}

/// Output directory plus safety and sensing parameters.
#[derive(Args, Debug)]
struct Common {
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "single")]
    dynamics: DynamicsArg,
    /// Sensing radius.
    #[arg(long)]
    r_sense_m: Option<f64>,
    /// Safety radius.
    #[arg(long)]
    r_safe_m: Option<f64>,
    /// Boundary layer width, in normalized barrier units.
    #[arg(long)]
    delta_r: Option<f64>,
    #[arg(long)]
    k_p: Option<f64>,
    #[arg(long)]
    k_v: Option<f64>,
    #[arg(long)]
    k_c: Option<f64>,
    /// Blend weight deficit in the safe region.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Learned action bound (m/s or m/s^2).
    #[arg(long)]
    pi_max: Option<f64>,
    /// Actuation bound (m/s or m/s^2).
    #[arg(long)]
    u_max: Option<f64>,
    /// Rescale blended actions to u_max (voids the safety guarantee).
    #[arg(long)]
    clamp_u_max: bool,
    #[arg(long)]
    max_neighbors: Option<usize>,
    #[arg(long)]
    max_obstacles: Option<usize>,
}

impl Common {
    fn safety(&self) -> SafetyParams {
        let mut p = SafetyParams::for_dynamics(self.dynamics.into());
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut p.r_sense, self.r_sense_m);
        set(&mut p.r_safe, self.r_safe_m);
        set(&mut p.delta_r, self.delta_r);
        set(&mut p.k_p, self.k_p);
        set(&mut p.k_v, self.k_v);
        set(&mut p.k_c, self.k_c);
        set(&mut p.epsilon, self.epsilon);
        set(&mut p.pi_max, self.pi_max);
        set(&mut p.u_max, self.u_max);
        p.clamp_u_max = self.clamp_u_max;
        p
    }

    fn caps(&self) -> ObsCaps {
        let mut c = ObsCaps::default();
        if let Some(n) = self.max_neighbors {
            c.max_neighbors = n;
        }
        if let Some(n) = self.max_obstacles {
            c.max_obstacles = n;
        }
        c
    }
}

#[derive(Args, Debug)]
struct PlannerArgs {
    /// Path search grid resolution.
    #[arg(long)]
    plan_grid_m: Option<f64>,
    /// Center distance kept between planned robots.
    #[arg(long)]
    robot_separation_m: Option<f64>,
    /// Distance kept from obstacle surfaces.
    #[arg(long)]
    obstacle_clearance_m: Option<f64>,
    /// Extra cost per metre of leftward detour.
    #[arg(long)]
    side_bias: Option<f64>,
}

impl PlannerArgs {
    fn config(&self) -> PlannerConfig {
        let mut c = PlannerConfig::default();
        if let Some(v) = self.plan_grid_m {
            c.grid = v;
        }
        if let Some(v) = self.robot_separation_m {
            c.robot_separation = v;
        }
        if let Some(v) = self.obstacle_clearance_m {
            c.obstacle_clearance = v;
        }
        if let Some(v) = self.side_bias {
            c.side_bias = v;
        }
        c
    }
}

#[derive(Args, Debug)]
struct SimArgs {
    /// Control period.
    #[arg(long)]
    dt_s: Option<f64>,
    /// Fixed horizon; default is a multiple of the expert plan duration.
    #[arg(long)]
    t_f_s: Option<f64>,
    /// Horizon as a multiple of the expert plan duration.
    #[arg(long)]
    t_f_factor: Option<f64>,
    #[arg(long)]
    goal_tol_m: Option<f64>,
    #[arg(long)]
    vel_tol_mps: Option<f64>,
}

impl SimArgs {
    fn config(&self) -> SimConfig {
        let mut c = SimConfig::default();
        if let Some(v) = self.dt_s {
            c.dt = v;
        }
        c.t_f = self.t_f_s;
        if let Some(v) = self.t_f_factor {
            c.t_f_factor = v;
        }
        if let Some(v) = self.goal_tol_m {
            c.goal_tol = v;
        }
        if let Some(v) = self.vel_tol_mps {
            c.vel_tol = v;
        }
        c
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// end_to_end (loss on the blended action) or two_stage (loss on the network output).
    #[arg(long, default_value = "end_to_end")]
    mode: TrainMode,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Epochs without validation improvement before the learning rate decays.
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    plateau_factor: Option<f64>,
    /// Seed of the train/validation split and batch order.
    #[arg(long)]
    train_seed: Option<u64>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    overshoot_weight: Option<f64>,
    /// Seed of the initial weights.
    #[arg(long, default_value_t = 0)]
    init_seed: u64,
    /// Start from these weights instead of a fresh initialization.
    #[arg(long)]
    init_weights: Option<PathBuf>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    latent: Option<usize>,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        let mut c = TrainConfig {
            mode: self.mode,
            ..TrainConfig::default()
        };
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.lr {
            c.lr0 = v;
        }
        if let Some(v) = self.patience {
            c.plateau_patience = v;
        }
        if let Some(v) = self.plateau_factor {
            c.plateau_factor = v;
        }
        if let Some(v) = self.train_seed {
            c.seed = v;
        }
        if let Some(v) = self.val_fraction {
            c.validation_fraction = v;
        }
        if let Some(v) = self.overshoot_weight {
            c.overshoot_weight = v;
        }
        c
    }

    fn arch(&self) -> Arch {
        let mut a = Arch::default();
        if let Some(v) = self.hidden {
            a.hidden = v;
        }
        if let Some(v) = self.latent {
            a.latent = v;
        }
        a
    }
}

fn parse_named_path(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => {
            Ok((name.to_string(), PathBuf::from(path)))
        }
        _ => Err(format!("expected NAME=PATH, got {s:?}")),
    }
}

fn base_config(common: &Common, command: Command) -> RunConfig {
    RunConfig {
        version: RUN_CONFIG_VERSION,
        command,
        out: common.out.clone(),
        safety: common.safety(),
        caps: common.caps(),
        sim: SimConfig::default(),
        planner: PlannerConfig::default(),
        train: TrainConfig::default(),
        arch: Arch::default(),
    }
}

fn from_flags(cmd: Cmd) -> RunConfig {
    match cmd {
        Cmd::GenEnv {
            robots,
            obstacle_fraction,
            side_m,
            seed,
            common,
        } => base_config(
            &common,
            Command::GenEnv {
                robots,
                obstacle_fraction,
                side_m,
                seed,
            },
        ),
        Cmd::Plan {
            env,
            dt_sample_s,
            planner,
            common,
        } => RunConfig {
            planner: planner.config(),
            ..base_config(&common, Command::Plan { env, dt_sample_s })
        },
        Cmd::BuildDataset {
            robots,
            obstacle_fractions,
            instances,
            side_m,
            seed,
            dt_sample_s,
            planner,
            common,
        } => RunConfig {
            planner: planner.config(),
            ..base_config(
                &common,
                Command::BuildDataset {
                    robots,
                    obstacle_fractions,
                    instances,
                    side_m,
                    seed,
                    dt_sample_s,
                },
            )
        },
        Cmd::Train {
            dataset,
            train,
            common,
        } => RunConfig {
            train: train.config(),
            arch: train.arch(),
            ..base_config(
                &common,
                Command::Train {
                    dataset,
                    init_seed: train.init_seed,
                    init_weights: train.init_weights.clone(),
                },
            )
        },
        Cmd::Rollout {
            env,
            policy,
            weights,
            sim,
            planner,
            common,
        } => RunConfig {
            sim: sim.config(),
            planner: planner.config(),
            ..base_config(
                &common,
                Command::Rollout {
                    env,
                    policy,
                    weights,
                },
            )
        },
        Cmd::Eval {
            policies,
            weights,
            robots,
            obstacle_fractions,
            per_case,
            side_m,
            seed,
            wall_time,
            sim,
            planner,
            common,
        } => RunConfig {
            sim: sim.config(),
            planner: planner.config(),
            ..base_config(
                &common,
                Command::Eval {
                    policies,
                    weights: weights.into_iter().collect::<BTreeMap<_, _>>(),
                    robots,
                    obstacle_fractions,
                    per_case,
                    side_m,
                    seed,
                    wall_time,
                },
            )
        },
        Cmd::PlotField {
            env,
            policy,
            weights,
            robot,
            grid_points,
            common,
        } => base_config(
            &common,
            Command::PlotField {
                env,
                policy,
                weights,
                robot,
                grid_points,
            },
        ),
    }
}

/// Exit code and error kind for a failure.
fn classify(err: &anyhow::Error) -> (u8, &'static str) {
    match err.downcast_ref::<GlasError>() {
        Some(GlasError::Io { .. }) => (3, "io"),
        Some(GlasError::Json(_)) | Some(GlasError::Format(_)) => (3, "format"),
        Some(GlasError::Version { .. }) => (3, "version"),
        Some(GlasError::Precondition(_)) | Some(GlasError::ShapeMismatch(_)) => (4, "precondition"),
        Some(GlasError::InstanceInfeasible(_)) => (4, "infeasible"),
        Some(GlasError::InstanceUnsolved(_)) => (4, "unsolved"),
        Some(
            GlasError::NonFiniteLoss { .. }
            | GlasError::NonFiniteState { .. }
            | GlasError::SafetyViolation { .. }
            | GlasError::Singularity { .. },
        ) => (5, "numerical"),
        None => (1, "internal"),
    }
}

fn error_line(kind: &str, code: u8, message: &str) -> String {
    serde_json::json!({"error": {"kind": kind, "exit_code": code, "message": message}}).to_string()
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = cli
        .config
        .as_deref()
        .map(config::read_config_value)
        .transpose()?;
    let cfg = config::resolve(cli.cmd.map(from_flags), file)?;
    glas_core::par::with_jobs(cli.jobs, || commands::execute(&cfg))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            if code != 0 {
                let msg = e.kind().to_string();
                eprintln!("{}", error_line("usage", 2, &msg));
                return ExitCode::from(2);
            }
            return ExitCode::SUCCESS;
        }
    };
    if cli.cmd.is_none() && cli.config.is_none() {
        eprintln!("a command or --config is required; see `glas --help`");
        eprintln!("{}", error_line("usage", 2, "no command given"));
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, kind) = classify(&err);
            eprintln!("error: {err:#}");
            eprintln!("{}", error_line(kind, code, &format!("{err:#}")));
            ExitCode::from(code)
        }
    }
}
