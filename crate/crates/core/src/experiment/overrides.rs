//! Dotted-path overrides on a JSON document, e.g. `corruption.noise_level=0.1`.

use serde_json::Value;

use crate::error::{Error, Result};

/// Apply one `a.b.c=value` assignment. The value is parsed as JSON when
/// possible and kept as a string otherwise. Missing intermediate objects are
/// created.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Validation(format!("override `{assignment}` is not of the form key=value")))?;
    let path = path.trim();
    if path.is_empty() || path.split('.').any(str::is_empty) {
        return Err(Error::Validation(format!("bad override key `{path}`")));
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut node = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        if !node.is_object() {
            if node.is_null() {
                *node = Value::Object(Default::default());
            } else {
                return Err(Error::Validation(format!(
                    "override `{path}`: `{}` is not an object",
                    keys[..i].join(".")
                )));
            }
        }
        let map = node.as_object_mut().expect("checked above");
        if i + 1 == keys.len() {
            map.insert(key.to_string(), value);
            return Ok(());
        }
        node = map.entry(key.to_string()).or_insert(Value::Null);
    }
    unreachable!("path has at least one key")
}

pub fn apply_overrides(doc: &mut Value, assignments: &[String]) -> Result<()> {
    for a in assignments {
        apply_override(doc, a)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn sets_nested_values() {
        let mut doc = json!({"corruption": {"noise_level": 0.0}, "trials": 5});
        apply_override(&mut doc, "corruption.noise_level=0.1").unwrap();
        apply_override(&mut doc, "trials=2").unwrap();
        apply_override(&mut doc, "scene.system.name=Lorenz").unwrap();
        apply_override(&mut doc, "scene.ref_offset=[1,2,3]").unwrap();
        assert_eq!(doc["corruption"]["noise_level"], json!(0.1));
        assert_eq!(doc["trials"], json!(2));
        assert_eq!(doc["scene"]["system"]["name"], json!("Lorenz"));
        assert_eq!(doc["scene"]["ref_offset"], json!([1, 2, 3]));
    }

    #[test]
    fn rejects_malformed() {
        let mut doc = json!({"trials": 5});
        assert!(apply_override(&mut doc, "trials").is_err());
        assert!(apply_override(&mut doc, "a..b=1").is_err());
        assert!(apply_override(&mut doc, "trials.x=1").is_err());
    }
}
