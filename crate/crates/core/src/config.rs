//! Experiment configuration: a TOML file of dotted keys plus `key=value`
//! overrides, resolved into a [`RunConfig`].

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::envs::{AnyEnv, AsyncGridworld, AsyncMatrixGame, GridConfig};
use crate::error::{Error, Result};
use crate::learner::{LearnerSpec, TrainConfig};
use crate::mixers::MixerConfig;
use crate::vsp::WrapperMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// `matrix`, `matrix_sync` or `gridworld`.
    pub name: String,
    /// Gridworld side length: 3 (small preset) or 5 (large preset).
    pub grid_size: usize,
    /// Per-agent move durations; empty keeps the preset.
    pub durations: Vec<usize>,
    /// Episode step limit; 0 keeps the preset.
    pub episode_limit: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            name: "matrix".into(),
            grid_size: 3,
            durations: Vec::new(),
            episode_limit: 0,
        }
    }
}

impl EnvConfig {
    pub fn build(&self) -> Result<AnyEnv> {
        match self.name.as_str() {
            "matrix" => Ok(AnyEnv::Matrix(AsyncMatrixGame::default())),
            "matrix_sync" => Ok(AnyEnv::Matrix(AsyncMatrixGame::synchronous())),
            "gridworld" => {
                let mut g = match self.grid_size {
                    3 => GridConfig::small(),
                    5 => GridConfig::large(),
                    s => return Err(Error::config("env.grid_size", format!("{s} is not a preset size (3 or 5)"))),
                };
                if !self.durations.is_empty() {
                    g.move_durations = self.durations.clone();
                }
                if self.episode_limit > 0 {
                    g.episode_limit = self.episode_limit;
                }
                Ok(AnyEnv::Grid(AsyncGridworld::new(g)?))
            }
            other => Err(Error::config(
                "env.name",
                format!("unknown environment `{other}` (matrix, matrix_sync, gridworld)"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WrapperConfig {
    pub mode: WrapperMode,
    pub use_extended_state: bool,
}

impl Default for WrapperConfig {
    fn default() -> Self {
        WrapperConfig {
            mode: WrapperMode::Vsp,
            use_extended_state: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub wrapper: WrapperConfig,
    pub mixer: MixerConfig,
    pub train: TrainConfig,
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, out);
            }
        }
        _ => {
            out.insert(prefix.to_string(), v.clone());
        }
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for p in &parts[..parts.len() - 1] {
        cur = &mut cur[*p];
    }
    cur[parts[parts.len() - 1]] = value;
}

/// Brings a parsed value to the JSON type of the default at the same key,
/// so `--train.gamma=1` and `order = "2"` both work.
fn coerce(key: &str, default: &Value, v: Value) -> Result<Value> {
    let bad = || Error::config(key, format!("cannot use {v} here (expected a value like {default})"));
    Ok(match (default, &v) {
        (Value::Number(d), Value::Number(_)) if d.is_f64() => Value::from(v.as_f64().ok_or_else(bad)?),
        (Value::Number(_), Value::Number(n)) if n.is_u64() => v,
        (Value::Number(_), Value::Number(_)) => return Err(bad()),
        (Value::Number(d), Value::String(s)) => {
            let parsed: f64 = s.parse().map_err(|_| bad())?;
            if d.is_f64() {
                Value::from(parsed)
            } else if parsed >= 0.0 && parsed.fract() == 0.0 {
                Value::from(parsed as u64)
            } else {
                return Err(bad());
            }
        }
        (Value::Bool(_), Value::Bool(_)) | (Value::String(_), Value::String(_)) | (Value::Array(_), Value::Array(_)) => v,
        (Value::Bool(_), Value::String(s)) => Value::Bool(s.parse().map_err(|_| bad())?),
        (Value::Array(_), Value::String(s)) => {
            let items: std::result::Result<Vec<u64>, _> =
                s.split(',').filter(|x| !x.trim().is_empty()).map(|x| x.trim().parse::<u64>()).collect();
            Value::from(items.map_err(|_| bad())?)
        }
        _ => return Err(bad()),
    })
}

fn parse_scalar(raw: &str) -> Value {
    // A bare override is parsed as a TOML value when it is one and taken as
    // a string otherwise.
    let doc = format!("x = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(t) => serde_json::to_value(&t["x"]).unwrap_or_else(|_| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

impl RunConfig {
    /// Applies dotted-key values on top of the defaults. Unknown keys and
    /// ill-typed values are config errors naming the key.
    pub fn from_pairs(pairs: &[(String, Value)]) -> Result<Self> {
        let mut root = serde_json::to_value(RunConfig::default()).expect("defaults serialise");
        let mut known = BTreeMap::new();
        flatten("", &root, &mut known);
        for (key, v) in pairs {
            let default = known
                .get(key)
                .ok_or_else(|| Error::config(key.clone(), "unknown configuration key"))?;
            let v = coerce(key, default, v.clone())?;
            set_path(&mut root, key, v);
        }
        let cfg: RunConfig = serde_json::from_value(root).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML file (nested tables and dotted keys are equivalent) or a
    /// run manifest, then applies `overrides`, which win.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut pairs = Vec::new();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let bad = |e: String| Error::config(p.display().to_string(), e);
            let json = if p.extension().is_some_and(|x| x == "json") {
                // a run manifest: its config snapshot reproduces the run
                let mut v: Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
                v.get_mut("config").map(Value::take).unwrap_or(v)
            } else {
                let table: toml::Table = toml::from_str(&text).map_err(|e| bad(e.to_string()))?;
                serde_json::to_value(&table).map_err(|e| Error::Format(e.to_string()))?
            };
            let mut flat = BTreeMap::new();
            flatten("", &json, &mut flat);
            pairs.extend(flat);
        }
        pairs.extend(overrides.iter().map(|(k, v)| (k.clone(), parse_scalar(v))));
        Self::from_pairs(&pairs)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let env = self.env.build()?;
        self.mixer.validate(crate::envs::Env::spec(&env).n_agents)
    }

    pub fn learner_spec(&self) -> Result<LearnerSpec> {
        Ok(LearnerSpec {
            env: self.env.build()?,
            mode: self.wrapper.mode,
            use_extended_state: self.wrapper.use_extended_state,
            mixer: self.mixer.clone(),
            train: self.train.clone(),
        })
    }

    /// All resolved keys, for manifests and `--help` style listings.
    pub fn flat(&self) -> BTreeMap<String, Value> {
        let mut out = BTreeMap::new();
        flatten("", &serde_json::to_value(self).expect("config serialises"), &mut out);
        out
    }
}
