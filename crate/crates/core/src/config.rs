//! One TOML file describing a whole run, with dotted-key overrides.
//!
//! Every section defaults fully and rejects unknown keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, EnvSettings, NoiseConfig, RewardConfig, TerminationConfig};
use crate::error::{Error, Result};
use crate::eval::SuccessCriteria;
use crate::kinematics::KinematicsConfig;
use crate::sim::{ScenarioConfig, SimConfig};
use crate::train::trainer::RunPaths;
use crate::train::{Algo, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub diameters: Vec<f64>,
    pub trials: usize,
    /// Evaluate the scripted controller instead of a policy.
    pub oracle: bool,
    /// Worker threads for trials (0: one per core).
    pub workers: usize,
    /// Write one trajectory CSV per trial into this directory.
    pub trajectory_dir: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            diameters: vec![0.3, 0.4, 0.5, 0.6, 0.7, 0.8],
            trials: 100,
            oracle: false,
            workers: 0,
            trajectory_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub checkpoint_dir: PathBuf,
    pub log_dir: PathBuf,
    /// Checkpoint to resume training from, or to evaluate.
    pub checkpoint: Option<PathBuf>,
    /// Where `eval` writes its table.
    pub eval_csv: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            checkpoint_dir: "runs/checkpoints".into(),
            log_dir: "runs/logs".into(),
            checkpoint: None,
            eval_csv: "runs/eval.csv".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Preset for `train.distribution` and `train.rpo_enabled`.
    pub algo: Option<Algo>,
    pub kinematics: KinematicsConfig,
    pub sim: SimConfig,
    pub scenario: ScenarioConfig,
    pub reward: RewardConfig,
    pub termination: TerminationConfig,
    pub noise: NoiseConfig,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub criteria: SuccessCriteria,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(error_key(&e), e.message().trim().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config { key, message } => Error::config(key, format!("{message} (in {})", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    /// Applies `key=value`, where `key` is a dotted path and `value` a TOML
    /// literal (bare words are taken as strings).
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(assignment, "expected key=value"))?;
        let key = key.trim();
        let value = parse_literal(raw.trim());
        let mut root = toml::Value::try_from(&*self).expect("config is always representable");
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = node
                .as_table_mut()
                .ok_or_else(|| Error::config(key, format!("`{}` is not a section", parts[..i].join("."))))?;
            if i + 1 == parts.len() {
                table.insert((*part).to_string(), value.clone());
                break;
            }
            node = table
                .entry((*part).to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()));
        }
        let updated: RunConfig = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(key, e.message().trim().to_string()))?;
        *self = updated;
        Ok(())
    }

    /// The configuration with the `algo` preset folded into `train`.
    pub fn resolved_train(&self) -> TrainConfig {
        let mut t = self.train.clone();
        if let Some(a) = self.algo {
            t.apply_algo(a);
        }
        t
    }

    pub fn env_settings(&self) -> EnvSettings {
        EnvSettings {
            kinematics: self.kinematics.clone(),
            sim: self.sim.clone(),
            scenario: self.scenario.clone(),
            reward: self.reward.clone(),
            termination: self.termination.clone(),
            noise: self.noise.clone(),
            env: self.env.clone(),
        }
    }

    pub fn run_paths(&self) -> RunPaths {
        RunPaths {
            checkpoint_dir: self.paths.checkpoint_dir.clone(),
            log_dir: self.paths.log_dir.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env_settings().validate()?;
        self.resolved_train().validate()?;
        self.criteria.validate()?;
        if self.eval.diameters.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::config("eval.diameters", "diameters must be positive"));
        }
        Ok(())
    }

    /// Every leaf key with its default, one `key = value` per line.
    pub fn key_listing(&self) -> String {
        let root = toml::Value::try_from(self).expect("config is always representable");
        let mut lines = Vec::new();
        flatten("", &root, &mut lines);
        lines.join("\n")
    }
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut Vec<String>) {
    match v {
        toml::Value::Table(t) => {
            for (k, child) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        other => out.push(format!("{prefix} = {other}")),
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn error_key(e: &toml::de::Error) -> String {
    let msg = e.message();
    // serde reports the offending field name in backticks.
    msg.split('`').nth(1).map_or_else(|| "config".to_string(), str::to_string)
}

/// Parses `a..b` (step 0.1, inclusive) or a comma-separated list.
pub fn parse_diameters(text: &str) -> Result<Vec<f64>> {
    let bad = |m: &str| Error::config("eval.diameters", format!("{m}: `{text}`"));
    if let Some((a, b)) = text.split_once("..") {
        let a: f64 = a.trim().parse().map_err(|_| bad("bad range start"))?;
        let b: f64 = b.trim().parse().map_err(|_| bad("bad range end"))?;
        if !(a > 0.0 && b >= a) {
            return Err(bad("range must be positive and increasing"));
        }
        let n = ((b - a) / 0.1 + 1e-9).floor() as usize;
        return Ok((0..=n).map(|k| ((a + 0.1 * k as f64) * 1e6).round() / 1e6).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| bad("bad number")))
        .collect()
}
