//! Command execution from a resolved [`RunConfig`].

use std::path::Path;

use anyhow::Context;
use glas_core::expert::{
    build_dataset, plan_csv, plan_global, read_dataset, solve_instances, write_dataset, DatasetSpec,
};
use glas_core::policy::{init_weights, load_weights, save_weights};
use glas_core::sim::{
    evaluate_suite, field_csv, metrics_csv, rollout, summarize, summary_csv, trajectory_csv,
    vector_field, LinearFeedback, MetricsRow, NeuralPolicy, Policy, SuiteCase,
};
use glas_core::training::{loss_csv, train_with};
use glas_core::world::{make_random_env, EnvGenParams};
use glas_core::{EnvInstance, GlasError};

use crate::config::{Command, RunConfig};

fn write(dir: &Path, name: &str, contents: &str) -> anyhow::Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| GlasError::Io { path, source: e })?;
    Ok(())
}

fn load_env(path: &Path, cfg: &RunConfig) -> anyhow::Result<EnvInstance> {
    let env = EnvInstance::load(path)?;
    if env.dynamics != cfg.safety.dynamics {
        return Err(GlasError::ShapeMismatch(format!(
            "{} is a {} environment but --dynamics is {}",
            path.display(),
            env.dynamics.name(),
            cfg.safety.dynamics.name()
        ))
        .into());
    }
    Ok(env)
}

/// `barrier` is linear goal feedback; every other name is a learned policy.
fn make_policy(
    name: &str,
    weights: Option<&Path>,
    cfg: &RunConfig,
) -> anyhow::Result<Box<dyn Policy>> {
    if name == "barrier" {
        return Ok(Box::new(LinearFeedback));
    }
    let path =
        weights.ok_or_else(|| GlasError::Precondition(format!("policy `{name}` needs weights")))?;
    let weights = load_weights(path, Some(cfg.safety.dynamics))?;
    Ok(Box::new(NeuralPolicy { weights }))
}

/// Horizon of a rollout: fixed, or a multiple of the expert plan duration.
fn horizon(env: &EnvInstance, cfg: &RunConfig) -> anyhow::Result<f64> {
    match cfg.sim.t_f {
        Some(t) => Ok(t),
        None => {
            let traj = plan_global(env, &cfg.safety, &cfg.planner, glas_core::expert::DT_SAMPLE)
                .context("no expert plan to size the horizon; pass --t-f-s")?;
            Ok(cfg.sim.t_f_factor * traj.duration)
        }
    }
}

pub fn execute(cfg: &RunConfig) -> anyhow::Result<()> {
    cfg.safety.validate()?;
    let out = &cfg.out;
    std::fs::create_dir_all(out).map_err(|e| GlasError::Io {
        path: out.clone(),
        source: e,
    })?;
    match &cfg.command {
        Command::GenEnv {
            robots,
            obstacle_fraction,
            side_m,
            seed,
        } => {
            let mut gp = EnvGenParams::new(*robots, *obstacle_fraction, *side_m);
            gp.dynamics = cfg.safety.dynamics;
            gp.min_spacing = cfg.safety.start_spacing();
            let env = make_random_env(&gp, *seed)?;
            env.save(&out.join("env.json"))?;
            println!("wrote {}", out.join("env.json").display());
        }
        Command::Plan { env, dt_sample_s } => {
            let env = load_env(env, cfg)?;
            let traj = plan_global(&env, &cfg.safety, &cfg.planner, *dt_sample_s)?;
            write(out, "plan.csv", &plan_csv(&traj))?;
            println!(
                "planned {} robots, duration {} s",
                traj.n_robots(),
                traj.duration
            );
        }
        Command::BuildDataset {
            robots,
            obstacle_fractions,
            instances,
            side_m,
            seed,
            dt_sample_s,
        } => {
            let spec = DatasetSpec {
                robots: robots.clone(),
                obstacle_fractions: obstacle_fractions.clone(),
                instances: *instances,
                side: *side_m,
                seed: *seed,
                dt_sample: *dt_sample_s,
                planner: cfg.planner.clone(),
            };
            let (ds, solved) = build_dataset(&spec, &cfg.safety, &cfg.caps)?;
            write_dataset(&ds, &out.join("dataset.bin"))?;
            let mut index =
                String::from("# glas instances v1\nseed,n_robots,n_obstacles,duration\n");
            for s in &solved {
                index += &format!(
                    "{},{},{},{}\n",
                    s.seed,
                    s.env.n_robots(),
                    s.env.obstacles.len(),
                    s.traj.duration
                );
            }
            write(out, "instances.csv", &index)?;
            println!("{} records from {} instances", ds.len(), solved.len());
        }
        Command::Train {
            dataset,
            init_seed,
            init_weights: init_path,
        } => {
            let ds = read_dataset(dataset)?;
            let init = match init_path {
                Some(p) => load_weights(p, Some(cfg.safety.dynamics))?,
                None => init_weights(*init_seed, cfg.safety.dynamics, cfg.arch),
            };
            let outcome = train_with(&ds, &cfg.train, &cfg.safety, init, |s| {
                eprintln!(
                    "epoch {} train {:.6} val {:.6} lr {:.2e}",
                    s.epoch, s.train_loss, s.val_loss, s.lr
                );
            })?;
            save_weights(&outcome.weights, &out.join("weights.json"))?;
            write(out, "loss.csv", &loss_csv(&outcome.history, cfg.train.mode))?;
            println!(
                "best validation loss {} at epoch {}",
                outcome.best_val_loss, outcome.best_epoch
            );
        }
        Command::Rollout {
            env,
            policy,
            weights,
        } => {
            let label = env
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let env = load_env(env, cfg)?;
            let pol = make_policy(policy, weights.as_deref(), cfg)?;
            let t_f = horizon(&env, cfg)?;
            let res = rollout(&env, pol.as_ref(), &cfg.safety, &cfg.caps, &cfg.sim, t_f)?;
            write(out, "trajectory.csv", &trajectory_csv(&res, &cfg.sim))?;
            let row = MetricsRow {
                policy: policy.clone(),
                instance: label,
                n_robots: env.n_robots(),
                obstacle_frac: env.obstacle_fraction(),
                r_s: res.r_s,
                r_p: res.r_p,
                wall_ms: None,
            };
            write(out, "metrics.csv", &metrics_csv(&[row], &cfg.sim))?;
            println!("r_s {}/{} r_p {}", res.r_s, env.n_robots(), res.r_p);
        }
        Command::Eval {
            policies,
            weights,
            robots,
            obstacle_fractions,
            per_case,
            side_m,
            seed,
            wall_time,
        } => {
            let pols = policies
                .iter()
                .map(|name| {
                    Ok((
                        name.clone(),
                        make_policy(name, weights.get(name).map(|p| p.as_path()), cfg)?,
                    ))
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            let mut cases = Vec::new();
            for &n in robots {
                for &f in obstacle_fractions {
                    let solved = solve_instances(
                        n,
                        f,
                        *per_case,
                        *side_m,
                        *seed,
                        &cfg.safety,
                        &cfg.planner,
                        glas_core::expert::DT_SAMPLE,
                    )?;
                    cases.extend(solved.into_iter().map(|s| SuiteCase {
                        label: format!("r{n}_o{f}_s{}", s.seed),
                        t_f: cfg.sim.t_f.unwrap_or(cfg.sim.t_f_factor * s.traj.duration),
                        env: s.env,
                    }));
                }
            }
            let refs: Vec<(String, &dyn Policy)> =
                pols.iter().map(|(n, p)| (n.clone(), p.as_ref())).collect();
            let rows = evaluate_suite(&cases, &refs, &cfg.safety, &cfg.caps, &cfg.sim, *wall_time)?;
            write(out, "metrics.csv", &metrics_csv(&rows, &cfg.sim))?;
            let summary = summarize(&rows);
            write(out, "summary.csv", &summary_csv(&summary, &cfg.sim))?;
            for b in &summary {
                println!(
                    "{} robots={} obst={} success={:.3} mean_r_p={:.3}",
                    b.policy, b.n_robots, b.obstacle_frac, b.success_fraction, b.mean_r_p
                );
            }
        }
        Command::PlotField {
            env,
            policy,
            weights,
            robot,
            grid_points,
        } => {
            let env = load_env(env, cfg)?;
            let pol = make_policy(policy, weights.as_deref(), cfg)?;
            let pts = vector_field(
                &env,
                *robot,
                pol.as_ref(),
                &cfg.safety,
                &cfg.caps,
                *grid_points,
            )?;
            write(out, "field.csv", &field_csv(&pts))?;
            println!("{} field points", pts.len());
        }
    }
    cfg.save(out)
}
