//! Run configuration: an optional TOML or JSON file overlaid by flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";

fn read_config_file(path: &Path) -> CliResult<Value> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let bad = |e: String| CliError::usage(format!("{}: {e}", path.display()));
    let is_toml = path.extension().and_then(|e| e.to_str()) == Some("toml");
    let value: Value = if is_toml {
        let t: toml::Value = toml::from_str(&text).map_err(|e| bad(e.to_string()))?;
        serde_json::to_value(t).map_err(|e| bad(e.to_string()))?
    } else {
        serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?
    };
    if !value.is_object() {
        return Err(bad("config must be a table of settings".into()));
    }
    Ok(value)
}

/// Merges `overrides` (flags that were given) over the config file, then
/// deserializes the result. Keys are replaced whole.
pub fn resolve<T: DeserializeOwned>(file: Option<&Path>, overrides: &impl Serialize) -> CliResult<T> {
    let mut base = match file {
        Some(p) => read_config_file(p)?,
        None => Value::Object(Default::default()),
    };
    let Value::Object(over) = serde_json::to_value(overrides).expect("flag structs serialize") else {
        unreachable!("flag structs serialize to objects")
    };
    let map = base.as_object_mut().expect("checked above");
    for (k, v) in over {
        if !v.is_null() {
            map.insert(k, v);
        }
    }
    serde_json::from_value(base).map_err(|e| CliError::usage(format!("configuration: {e}")))
}

/// `<out>.config.json` for commands whose output is a single file.
pub fn sibling_config_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".config.json");
    PathBuf::from(p)
}
