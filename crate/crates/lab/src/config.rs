//! Command configuration: one JSON object per command, layered as
//! defaults < file < `SSA_LAB_*` environment variables < command-line flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{LabError, Result};

pub const ENV_PREFIX: &str = "SSA_LAB_";

/// Recursively overlay `top` onto `base`. Objects merge key by key; any other
/// value replaces.
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

/// Environment overrides for the keys `defaults` knows about. `SSA_LAB_EPOCHS`
/// targets the top-level key `epochs`; values parse as JSON, falling back to
/// a plain string.
pub fn env_layer(defaults: &Map<String, Value>, vars: impl IntoIterator<Item = (String, String)>) -> Map<String, Value> {
    let mut out = Map::new();
    for (k, v) in vars {
        let Some(key) = k.strip_prefix(ENV_PREFIX) else { continue };
        let key = key.to_ascii_lowercase();
        if defaults.contains_key(&key) {
            let val = serde_json::from_str(&v).unwrap_or(Value::String(v));
            out.insert(key, val);
        }
    }
    out
}

/// Resolve a command config. Unknown keys in the file are rejected; flags
/// that the command does not have are ignored.
pub fn resolve<T: Serialize + DeserializeOwned + Default>(
    file: Option<&Path>,
    env: impl IntoIterator<Item = (String, String)>,
    flags: Map<String, Value>,
) -> Result<T> {
    let mut value = serde_json::to_value(T::default()).map_err(LabError::internal)?;
    let Value::Object(defaults) = value.clone() else {
        return Err(LabError::Internal("config defaults must be a JSON object".into()));
    };
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => LabError::Config(format!("config file {} not found", path.display())),
            _ => LabError::io(path, e),
        })?;
        let v: Value = serde_json::from_str(&text).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
        let Value::Object(obj) = v else {
            return Err(LabError::Config(format!("{}: expected a single JSON object", path.display())));
        };
        if let Some(k) = obj.keys().find(|k| !defaults.contains_key(*k)) {
            return Err(LabError::Config(format!("{}: unknown key {k:?}", path.display())));
        }
        merge(&mut value, Value::Object(obj));
    }
    merge(&mut value, Value::Object(env_layer(&defaults, env)));
    let flags: Map<String, Value> = flags.into_iter().filter(|(k, _)| defaults.contains_key(k)).collect();
    merge(&mut value, Value::Object(flags));
    serde_json::from_value(value).map_err(LabError::config)
}
