//! Flat key-value settings: command-line flags override the `--config` file,
//! which overrides built-in defaults.

use std::path::Path;

use anyhow::{anyhow, Context};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

pub type Flat = Map<String, Value>;

/// Reads a TOML file of top-level keys.
pub fn load_file(path: &Path) -> Result<Flat, CliError> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(CliError::Runtime)?;
    let table: toml::Table =
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    match serde_json::to_value(table).map_err(|e| CliError::Runtime(e.into()))? {
        Value::Object(map) => Ok(map),
        _ => unreachable!("a TOML table serializes to an object"),
    }
}

/// Config file keys overlaid with every flag that was given.
pub fn merged(config: Option<&Path>, flags: &impl Serialize) -> Result<Flat, CliError> {
    let mut map = match config {
        Some(p) => load_file(p)?,
        None => Flat::new(),
    };
    let Value::Object(given) = serde_json::to_value(flags).map_err(|e| CliError::Runtime(e.into()))? else {
        unreachable!("flag structs serialize to objects")
    };
    for (k, v) in given {
        if !v.is_null() {
            map.insert(k, v);
        }
    }
    if let Some(Value::String(kind)) = map.get("optimizer") {
        let opt = match kind.as_str() {
            "sgd" => brandalign::model::Optimizer::Sgd,
            "adam" => brandalign::model::Optimizer::adam(),
            other => return Err(CliError::Usage(format!("unknown optimizer `{other}`"))),
        };
        map.insert("optimizer".into(), serde_json::to_value(opt).expect("plain enum"));
    }
    Ok(map)
}

/// Removes the keys `T` knows from `map` and builds `T` from them on top of
/// its defaults.
pub fn take<T: Serialize + DeserializeOwned + Default>(map: &mut Flat) -> Result<T, CliError> {
    take_onto(map, T::default())
}

/// Like [`take`], starting from `base` instead of the defaults.
pub fn take_onto<T: Serialize + DeserializeOwned>(map: &mut Flat, base: T) -> Result<T, CliError> {
    let Value::Object(mut base) = serde_json::to_value(base).expect("settings serialize") else {
        unreachable!("settings serialize to objects")
    };
    let keys: Vec<String> = base.keys().cloned().collect();
    for k in keys {
        if let Some(v) = map.remove(&k) {
            base.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(base)).map_err(|e| CliError::Usage(e.to_string()))
}

/// Leftover keys are typos or options of another command.
pub fn finish(map: Flat) -> Result<(), CliError> {
    match map.keys().next() {
        None => Ok(()),
        Some(k) => Err(CliError::Usage(format!("unknown setting `{k}`"))),
    }
}

pub fn required<T: DeserializeOwned>(map: &mut Flat, key: &str) -> Result<T, CliError> {
    let v = map
        .remove(key)
        .ok_or_else(|| CliError::Usage(format!("missing required setting `{key}`")))?;
    serde_json::from_value(v).map_err(|e| CliError::Usage(format!("`{key}`: {e}")))
}

pub fn optional<T: DeserializeOwned>(map: &mut Flat, key: &str) -> Result<Option<T>, CliError> {
    map.remove(key)
        .map(|v| serde_json::from_value(v).map_err(|e| CliError::Usage(format!("`{key}`: {e}"))))
        .transpose()
}

/// Writes `value` as pretty JSON.
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.into()))?;
    std::fs::write(path, text + "\n")
        .map_err(|e| CliError::Runtime(anyhow!(e).context(format!("writing {}", path.display()))))
}
