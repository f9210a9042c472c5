//! Flag/config-file merging and output provenance.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

/// Bad or missing configuration; exits with the usage status.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

pub fn required<T>(v: Option<T>, field: &str) -> Result<T> {
    match v {
        Some(v) => Ok(v),
        None => usage(format!("missing required field `{field}` (flag --{})", field.replace('_', "-"))),
    }
}

/// Overlays the flags that were actually given on top of the JSON config
/// file. `null` and `false` count as not given.
pub fn merge<T: Serialize + DeserializeOwned>(flags: &T, file: Option<&Path>) -> Result<T> {
    let Some(path) = file else {
        return Ok(serde_json::from_value(serde_json::to_value(flags)?)?);
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut base: Value = match serde_json::from_str(&text) {
        Ok(v) => v,
        Err(e) => return usage(format!("config {}: {e}", path.display())),
    };
    let Value::Object(base_map) = &mut base else {
        return usage(format!("config {} must hold a JSON object", path.display()));
    };
    if let Value::Object(over) = serde_json::to_value(flags)? {
        for (k, v) in over {
            if !matches!(v, Value::Null | Value::Bool(false)) {
                base_map.insert(k, v);
            }
        }
    }
    serde_json::from_value(base).or_else(|e| usage(format!("config {}: {e}", path.display())))
}

/// Fields naming files rather than describing the computation.
const OUTPUT_KEYS: &[&str] = &["config", "out", "csv", "summary", "out_dir"];

/// Provenance attached to every output.
#[derive(Clone, Debug)]
pub struct Meta {
    pub command: String,
    pub config: Value,
    pub hash: String,
}

impl Meta {
    /// Hashes the fully resolved configuration. `serde_json` maps are
    /// sorted, so the hash does not depend on field order in the file.
    pub fn new<C: Serialize>(command: &str, config: &C) -> Result<Self> {
        let mut config = serde_json::to_value(config)?;
        if let Value::Object(m) = &mut config {
            for k in OUTPUT_KEYS {
                m.remove(*k);
            }
        }
        let digest = Sha256::digest(format!("{command}\n{config}").as_bytes());
        let hash = digest.iter().map(|b| format!("{b:02x}")).collect();
        Ok(Meta {
            command: command.into(),
            config,
            hash,
        })
    }

    pub fn json(&self) -> Value {
        json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config_hash": self.hash,
            "config": self.config,
        })
    }

    /// Comment line for the top of CSV outputs.
    pub fn csv_header(&self) -> String {
        format!(
            "# {} {} {} config_hash={}\n",
            env!("CARGO_PKG_NAME"),
            env!("CARGO_PKG_VERSION"),
            self.command,
            self.hash
        )
    }

    /// Wraps a JSON body with the metadata under `meta`.
    pub fn wrap(&self, body: Value) -> Value {
        let mut m = Map::new();
        m.insert("meta".into(), self.json());
        if let Value::Object(b) = body {
            m.extend(b);
        } else {
            m.insert("result".into(), body);
        }
        Value::Object(m)
    }
}

/// Writes to `path`, or stdout when absent.
pub fn emit(path: Option<&PathBuf>, content: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(p, content).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

pub fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values always serialize");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize, Deserialize, Default, Debug, PartialEq)]
    #[serde(default)]
    struct Cfg {
        a: Option<u32>,
        b: Option<f64>,
        flag: bool,
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"a": 1, "b": 2.0, "flag": true}"#).unwrap();
        let flags = Cfg {
            a: Some(5),
            ..Default::default()
        };
        let m = merge(&flags, Some(&path)).unwrap();
        assert_eq!(
            m,
            Cfg {
                a: Some(5),
                b: Some(2.0),
                flag: true
            }
        );
    }

    #[test]
    fn bad_field_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"a": "x"}"#).unwrap();
        let err = merge(&Cfg::default(), Some(&path)).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
        assert!(err.to_string().contains("invalid type"));
    }

    #[test]
    fn hash_ignores_field_order() {
        let a = Meta::new("x", &json!({"p": 1, "q": 2})).unwrap();
        let b = Meta::new("x", &serde_json::from_str::<Value>(r#"{"q": 2, "p": 1}"#).unwrap()).unwrap();
        assert_eq!(a.hash, b.hash);
        assert_ne!(a.hash, Meta::new("y", &json!({"p": 1, "q": 2})).unwrap().hash);
    }
}
