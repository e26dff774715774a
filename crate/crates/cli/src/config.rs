use std::fs;
use std::path::Path;

use anyhow::anyhow;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::Fail;

/// Reads a JSON file, reporting parse errors with line and column.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Fail> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Fail::Config(anyhow!("{}: {e}", path.display())))
}

pub fn read_text(path: &Path) -> Result<String, Fail> {
    fs::read_to_string(path).map_err(|e| Fail::Config(anyhow!("cannot read {}: {e}", path.display())))
}

/// Top-level keys of a JSON object file, used to tell a bare section from a
/// resolved run config.
pub fn has_key(path: &Path, key: &str) -> Result<bool, Fail> {
    let text = read_text(path)?;
    let v: Value =
        serde_json::from_str(&text).map_err(|e| Fail::Config(anyhow!("{}: {e}", path.display())))?;
    Ok(v.get(key).is_some())
}

/// Applies `key=value` overrides to `base` and re-validates the result
/// through deserialization. Keys are dot paths (`noise.box_jitter`,
/// `objects.0.depth`); values parse as JSON and fall back to strings.
pub fn apply_overrides<T: Clone + Serialize + DeserializeOwned>(base: &T, sets: &[String]) -> Result<T, Fail> {
    if sets.is_empty() {
        return Ok(base.clone());
    }
    let mut value = serde_json::to_value(base).expect("serializable");
    for set in sets {
        let (key, raw) = set
            .split_once('=')
            .ok_or_else(|| Fail::Config(anyhow!("override {set:?} is not KEY=VALUE")))?;
        let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
        let mut slot = &mut value;
        for part in key.split('.') {
            slot = match slot {
                Value::Object(map) => map.entry(part.to_owned()).or_insert(Value::Null),
                Value::Array(items) => {
                    let i: usize = part
                        .parse()
                        .map_err(|_| Fail::Config(anyhow!("override {key}: {part:?} is not an index")))?;
                    let len = items.len();
                    items
                        .get_mut(i)
                        .ok_or_else(|| Fail::Config(anyhow!("override {key}: index {i} out of {len}")))?
                }
                Value::Null => {
                    *slot = Value::Object(Default::default());
                    let Value::Object(map) = slot else { unreachable!() };
                    map.entry(part.to_owned()).or_insert(Value::Null)
                }
                _ => return Err(Fail::Config(anyhow!("override {key}: {part:?} is inside a scalar"))),
            };
        }
        *slot = parsed;
    }
    serde_json::from_value(value).map_err(|e| Fail::Config(anyhow!("overrides {sets:?}: {e}")))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Fail> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| Fail::Data(anyhow!("cannot write {}: {e}", path.display())))
}

/// Creates `dir` and checks that it accepts files.
pub fn prepare_output(dir: &Path) -> Result<(), Fail> {
    let bad = |e: std::io::Error| Fail::Config(anyhow!("output directory {}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(bad)?;
    let probe = dir.join(".flowtrack-write-test");
    fs::write(&probe, b"").map_err(bad)?;
    fs::remove_file(&probe).map_err(bad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use flowtrack::engine::EngineConfig;

    #[test]
    fn overrides_are_type_checked() {
        let base = EngineConfig::default();
        let cfg = apply_overrides(&base, &["lambda_flow=0.4".into(), "prompts=[\"cat\"]".into()]).unwrap();
        assert_eq!(cfg.lambda_flow, 0.4);
        assert_eq!(cfg.prompts, ["cat"]);
        assert!(apply_overrides(&base, &["lambda_flow=high".into()]).is_err());
        assert!(apply_overrides(&base, &["no_such_key=1".into()]).is_err());
        assert!(apply_overrides(&base, &["lambda_flow".into()]).is_err());
    }

    #[test]
    fn nested_and_indexed_keys() {
        let v: Value = serde_json::json!({"a": {"b": [1, {"c": 2}]}});
        let out: Value = apply_overrides(&v, &["a.b.1.c=5".into(), "a.d=x".into()]).unwrap();
        assert_eq!(out, serde_json::json!({"a": {"b": [1, {"c": 5}], "d": "x"}}));
        assert!(apply_overrides(&v, &["a.b.9=1".into()]).is_err());
    }
}
