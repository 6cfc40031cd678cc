//! Loading an experiment configuration and applying command-line overrides.

use std::path::Path;

use anyhow::{bail, Context};
use plr_bvm::ExperimentConfig;
use serde_json::Value;

/// Raised for anything the user can fix by changing the invocation.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Reads TOML or JSON, chosen by extension (TOML when unknown).
pub fn load_file(path: &Path) -> anyhow::Result<Value> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
    } else {
        let v: toml::Value =
            toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        serde_json::to_value(v)?
    };
    Ok(parsed)
}

pub fn load(config: Option<&Path>, preset: Option<&str>) -> anyhow::Result<Value> {
    match (config, preset) {
        (Some(_), Some(_)) => Err(usage("--config and --preset are mutually exclusive")),
        (Some(p), None) => load_file(p),
        (None, name) => {
            let name = name.unwrap_or("smooth");
            let cfg = ExperimentConfig::preset(name).ok_or_else(|| {
                usage(format!(
                    "unknown preset '{name}' (expected smooth, rough-m02 or misspecified)"
                ))
            })?;
            Ok(serde_json::to_value(cfg)?)
        }
    }
}

/// Applies `a.b.c=value`; the value is read as JSON when it parses, as a
/// string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> anyhow::Result<()> {
    let Some((path, raw)) = assignment.split_once('=') else {
        bail!(usage(format!(
            "override '{assignment}' is not of the form key=value"
        )));
    };
    let value =
        serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!(usage(format!("override key '{path}' is malformed")));
    }
    let mut node = doc;
    for (i, key) in keys.iter().enumerate() {
        let last = i + 1 == keys.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(key.to_string(), value);
                    return Ok(());
                }
                map.entry(key.to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = key
                    .parse()
                    .map_err(|_| usage(format!("'{key}' in '{path}' is not an index")))?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| {
                    usage(format!(
                        "index {idx} in '{path}' is out of range (length {len})"
                    ))
                })?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => bail!(usage(format!("'{path}' descends into a scalar"))),
        };
    }
    unreachable!("loop returns on the last key")
}

pub fn resolve(doc: Value) -> anyhow::Result<ExperimentConfig> {
    let cfg: ExperimentConfig =
        serde_json::from_value(doc).map_err(|e| usage(format!("configuration: {e}")))?;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}
