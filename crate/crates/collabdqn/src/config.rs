//! The run configuration: one JSON file, every key optional, with
//! `key.path=value` overrides applied on top.

use std::fs;
use std::path::{Path, PathBuf};

use collabdqn_core::env::ScaleLadder;
use collabdqn_core::eval::EvalConfig;
use collabdqn_core::synth::SynthConfig;
use collabdqn_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Text,
    Csv,
    #[default]
    Both,
}

impl ReportFormat {
    pub fn text(self) -> bool {
        self != ReportFormat::Csv
    }

    pub fn csv(self) -> bool {
        self != ReportFormat::Text
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Dataset directory holding the manifest.
    pub data_dir: PathBuf,
    pub checkpoint: PathBuf,
    /// JSON lines, one record per training episode.
    pub train_log: PathBuf,
    /// Receives `report.txt` and `report.csv`.
    pub report_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            checkpoint: "run/model.ckpt".into(),
            train_log: "run/train.jsonl".into(),
            report_dir: "run/report".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub train_count: usize,
    pub test_count: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            train_count: 40,
            test_count: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckpointConfig {
    /// Episodes between intermediate checkpoints; 0 saves only at the end.
    pub every_episodes: u64,
    /// Continue from `paths.checkpoint` instead of starting afresh.
    pub resume: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    /// Frame budget per test episode.
    pub max_frames: usize,
    pub format: ReportFormat,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            max_frames: EvalConfig::default().max_frames,
            format: ReportFormat::Both,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// One agent per landmark name.
    pub landmarks: Vec<String>,
    /// Must equal the number of landmark names.
    pub agents: usize,
    /// Unit steps only, instead of the coarse-to-fine ladder.
    pub fixed_step: bool,
    /// One worker thread everywhere.
    pub deterministic: bool,
    pub paths: Paths,
    pub generate: GenerateConfig,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub checkpoint: CheckpointConfig,
    pub evaluate: EvaluateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            landmarks: vec!["L0".into(), "L1".into()],
            agents: 2,
            fixed_step: false,
            deterministic: false,
            paths: Paths::default(),
            generate: GenerateConfig::default(),
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            checkpoint: CheckpointConfig::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

/// Sets `key.path` in `root` to `raw`, read as JSON or else as a string.
/// Only existing keys may be set.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let mut slot = &mut *root;
    for part in key.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|m| m.get_mut(part))
            .ok_or_else(|| Error::Config(format!("unknown configuration key `{key}`")))?;
    }
    *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}

/// Dotted keys and JSON values of every leaf, in declaration order.
pub fn flatten(value: &Value) -> Vec<(String, String)> {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
        match v {
            Value::Object(m) if !m.is_empty() => {
                for (k, v) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, v, out);
                }
            }
            other => out.push((prefix.to_string(), other.to_string())),
        }
    }
    let mut out = Vec::new();
    walk("", value, &mut out);
    out
}

impl RunConfig {
    /// Reads `path` (or starts from the defaults), applies `overrides` in
    /// order and validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let base = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(Error::io(p))?;
                serde_json::from_str::<RunConfig>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        let config = if overrides.is_empty() {
            base
        } else {
            let mut value = serde_json::to_value(&base).map_err(invalid)?;
            for o in overrides {
                apply_override(&mut value, o)?;
            }
            serde_json::from_value(value).map_err(invalid)?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.landmarks.is_empty() {
            return Err(Error::Config("at least one landmark name is required".into()));
        }
        if self.agents != self.landmarks.len() {
            return Err(Error::Config(format!(
                "agents = {} but {} landmark names are given",
                self.agents,
                self.landmarks.len()
            )));
        }
        for (i, n) in self.landmarks.iter().enumerate() {
            if self.landmarks[..i].contains(n) {
                return Err(Error::Config(format!("landmark `{n}` is listed twice")));
            }
        }
        self.train.validate()?;
        Ok(())
    }

    /// The training configuration with the step mode applied.
    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone();
        if self.fixed_step {
            t.env.ladder = ScaleLadder::fixed();
        }
        t
    }

    /// The evaluation configuration; it shares the environment settings of
    /// training.
    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            env: self.train_config().env,
            max_frames: self.evaluate.max_frames,
        }
    }

    /// Every key with its default value, one `key = value` line each.
    pub fn defaults_listing() -> String {
        let value = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
        let keys = flatten(&value);
        let w = keys.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        keys.iter().map(|(k, v)| format!("  {k:<w$} = {v}\n")).collect()
    }
}
