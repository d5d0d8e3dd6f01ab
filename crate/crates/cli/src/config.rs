//! Resolved run configuration, written next to every command's outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use glas_core::expert::PlannerConfig;
use glas_core::policy::Arch;
use glas_core::sim::SimConfig;
use glas_core::training::TrainConfig;
use glas_core::{ObsCaps, SafetyParams};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const RUN_CONFIG_VERSION: u32 = 1;
pub const RUN_CONFIG_FILE: &str = "run_config.json";

/// One pipeline step and its inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    GenEnv {
        robots: usize,
        obstacle_fraction: f64,
        side_m: u32,
        seed: u64,
    },
    Plan {
        env: PathBuf,
        dt_sample_s: f64,
    },
    BuildDataset {
        robots: Vec<usize>,
        obstacle_fractions: Vec<f64>,
        instances: usize,
        side_m: u32,
        seed: u64,
        dt_sample_s: f64,
    },
    Train {
        dataset: PathBuf,
        init_seed: u64,
        init_weights: Option<PathBuf>,
    },
    Rollout {
        env: PathBuf,
        policy: String,
        weights: Option<PathBuf>,
    },
    Eval {
        policies: Vec<String>,
        weights: BTreeMap<String, PathBuf>,
        robots: Vec<usize>,
        obstacle_fractions: Vec<f64>,
        per_case: usize,
        side_m: u32,
        seed: u64,
        wall_time: bool,
    },
    PlotField {
        env: PathBuf,
        policy: String,
        weights: Option<PathBuf>,
        robot: usize,
        grid_points: usize,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenEnv { .. } => "gen-env",
            Command::Plan { .. } => "plan",
            Command::BuildDataset { .. } => "build-dataset",
            Command::Train { .. } => "train",
            Command::Rollout { .. } => "rollout",
            Command::Eval { .. } => "eval",
            Command::PlotField { .. } => "plot-field",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub version: u32,
    pub command: Command,
    pub out: PathBuf,
    pub safety: SafetyParams,
    pub caps: ObsCaps,
    pub sim: SimConfig,
    pub planner: PlannerConfig,
    pub train: TrainConfig,
    pub arch: Arch,
}

impl RunConfig {
    pub fn save(&self, dir: &Path) -> anyhow::Result<()> {
        let path = dir.join(RUN_CONFIG_FILE);
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

/// Recursively overlays `top` onto `base`: objects merge key by key, any
/// other value replaces.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

pub fn read_config_value(path: &Path) -> anyhow::Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| glas_core::GlasError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let v: Value = serde_json::from_str(&text).map_err(glas_core::GlasError::from)?;
    if let Some(found) = v.get("version") {
        if found != &Value::from(RUN_CONFIG_VERSION) {
            return Err(glas_core::GlasError::Version {
                expected: RUN_CONFIG_VERSION.to_string(),
                found: found.to_string(),
            }
            .into());
        }
    }
    Ok(v)
}

/// Resolves the effective configuration. The config file, when given,
/// overrides values built from flags.
pub fn resolve(from_flags: Option<RunConfig>, file: Option<Value>) -> anyhow::Result<RunConfig> {
    let merged = match (from_flags, file) {
        (Some(flags), None) => return Ok(flags),
        (None, None) => bail!("no command given"),
        (None, Some(v)) => v,
        (Some(flags), Some(v)) => {
            let name = flags.command.name();
            if let Some(other) = v.pointer("/command/name").and_then(Value::as_str) {
                if other != name {
                    return Err(glas_core::GlasError::Precondition(format!(
                        "config file is for `{other}`, command line asks for `{name}`"
                    ))
                    .into());
                }
            }
            let mut base = serde_json::to_value(&flags)?;
            merge(&mut base, v);
            base
        }
    };
    let cfg: RunConfig = serde_json::from_value(merged).map_err(glas_core::GlasError::from)?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn merge_overlays_nested_objects() {
        let mut base = json!({"a": 1, "b": {"c": 2, "d": 3}});
        merge(&mut base, json!({"b": {"d": 4}, "e": [1]}));
        assert_eq!(base, json!({"a": 1, "b": {"c": 2, "d": 4}, "e": [1]}));
    }
}
