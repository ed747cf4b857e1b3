//! Flag, config-file and default resolution. Config files are JSON objects
//! keyed by flag name (`"batch-size": 64`).

use std::collections::BTreeSet;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

#[derive(Debug, Default)]
pub struct Resolver {
    file: Map<String, Value>,
    used: BTreeSet<String>,
    resolved: Map<String, Value>,
}

impl Resolver {
    pub fn new(config: Option<&Path>) -> CliResult<Self> {
        let file = match config {
            None => Map::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|_| CliError::MissingArtifact(p.to_path_buf()))?;
                match serde_json::from_str(&text) {
                    Ok(Value::Object(m)) => m,
                    Ok(_) => return Err(CliError::Usage(format!("{}: config must be a JSON object", p.display()))),
                    Err(e) => return Err(CliError::Usage(format!("{}: {e}", p.display()))),
                }
            }
        };
        Ok(Self {
            file,
            ..Self::default()
        })
    }

    /// Flag value if given, else the config file entry, else `default`.
    pub fn get<T: DeserializeOwned + Serialize>(&mut self, name: &str, flag: Option<T>, default: T) -> CliResult<T> {
        self.used.insert(name.to_string());
        let value = match (flag, self.file.get(name)) {
            (Some(v), _) => v,
            (None, Some(v)) => serde_json::from_value(v.clone())
                .map_err(|e| CliError::Usage(format!("config key {name:?}: {e}")))?,
            (None, None) => default,
        };
        self.resolved.insert(name.to_string(), serde_json::to_value(&value)?);
        Ok(value)
    }

    /// Like [`get`](Self::get) for settings that may stay unset.
    pub fn optional<T: DeserializeOwned + Serialize>(&mut self, name: &str, flag: Option<T>) -> CliResult<Option<T>> {
        self.used.insert(name.to_string());
        let value = match (flag, self.file.get(name)) {
            (Some(v), _) => Some(v),
            (None, Some(v)) => Some(
                serde_json::from_value(v.clone()).map_err(|e| CliError::Usage(format!("config key {name:?}: {e}")))?,
            ),
            (None, None) => None,
        };
        self.resolved.insert(name.to_string(), serde_json::to_value(&value)?);
        Ok(value)
    }

    /// Like [`get`](Self::get) for settings without a default.
    pub fn require<T: DeserializeOwned + Serialize>(&mut self, name: &str, flag: Option<T>) -> CliResult<T> {
        self.used.insert(name.to_string());
        let value = match (flag, self.file.get(name)) {
            (Some(v), _) => v,
            (None, Some(v)) => serde_json::from_value(v.clone())
                .map_err(|e| CliError::Usage(format!("config key {name:?}: {e}")))?,
            (None, None) => return Err(CliError::Usage(format!("--{name} is required"))),
        };
        self.resolved.insert(name.to_string(), serde_json::to_value(&value)?);
        Ok(value)
    }

    /// Fails on config keys no setting asked for.
    pub fn finish(self) -> CliResult<Map<String, Value>> {
        let unknown: Vec<&String> = self.file.keys().filter(|k| !self.used.contains(*k)).collect();
        if !unknown.is_empty() {
            return Err(CliError::Usage(format!("unknown config keys {unknown:?}")));
        }
        Ok(self.resolved)
    }
}
