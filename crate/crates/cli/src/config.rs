//! Layered configuration: built-in defaults, then a key=value file, then
//! command-line overrides.
//!
//! The file is TOML. Keys are dotted paths into the resolved config, for
//! example
//!
//! ```text
//! backend_depth = "planefit"
//! consistency.alpha = 0.05
//! refine.max_iterations = 4
//! [loss]
//! k = 1.5
//! ```
//!
//! Strings must be quoted. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use viewfuse::loss::LossConfig;
use viewfuse::pipeline::{Ablation, PipelineConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
    pub loss: LossConfig,
}

/// Overrides in the order they were given, as dotted key paths.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub entries: Vec<(String, Value)>,
    pub ablations: Vec<Ablation>,
}

impl Overrides {
    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.entries.push((key.to_string(), value.into()));
    }

    /// Parses `key=value`; the value is read as a TOML literal and falls
    /// back to a bare string.
    pub fn set_raw(&mut self, item: &str) -> Result<(), String> {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got '{item}'"))?;
        let key = key.trim();
        let raw = raw.trim();
        let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => serde_json::to_value(t.remove("v").expect("parsed key")).map_err(|e| e.to_string())?,
            Err(_) => Value::String(raw.to_string()),
        };
        self.set(key, value);
        Ok(())
    }
}

fn flatten(prefix: &str, table: &Map<String, Value>, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Object(inner) => flatten(&key, inner, out),
            _ => out.push((key, v.clone())),
        }
    }
}

fn apply(root: &mut Value, key: &str, value: Value) -> Result<(), String> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (depth, part) in parts.iter().enumerate() {
        let map = node
            .as_object_mut()
            .ok_or_else(|| format!("'{}' is not a section", parts[..depth].join(".")))?;
        if !map.contains_key(*part) {
            let known: Vec<&String> = map.keys().collect();
            return Err(format!("unknown config key '{key}' (known here: {known:?})"));
        }
        node = map.get_mut(*part).expect("checked above");
    }
    if node.is_object() {
        return Err(format!("'{key}' is a section; set one of its keys instead"));
    }
    *node = value;
    Ok(())
}

/// Defaults < command defaults (`base`) < file < overrides. Errors are
/// usage errors.
pub fn resolve(file: Option<&Path>, base: &[(String, Value)], overrides: &Overrides) -> Result<Config, String> {
    let mut root = serde_json::to_value(Config::default()).map_err(|e| e.to_string())?;
    let mut entries = base.to_vec();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let table: toml::Table = toml::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))?;
        let json = serde_json::to_value(table).map_err(|e| e.to_string())?;
        flatten("", json.as_object().expect("table"), &mut entries);
    }
    entries.extend(overrides.entries.iter().cloned());
    for (k, v) in entries {
        apply(&mut root, &k, v)?;
    }
    let mut cfg: Config = serde_json::from_value(root).map_err(|e| format!("invalid config: {e}"))?;
    for a in &overrides.ablations {
        a.apply(&mut cfg.pipeline.consistency.stages);
    }
    cfg.pipeline.consistency.validate().map_err(|e| e.to_string())?;
    cfg.pipeline.refine.validate().map_err(|e| e.to_string())?;
    cfg.pipeline.projection.validate().map_err(|e| e.to_string())?;
    cfg.loss.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}
