//! Model files: canonical JSON with sorted keys and every float written with
//! 17 significant digits, so identical models produce identical bytes and
//! floats survive the round trip exactly.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::pipeline::{SceneModel, FORMAT_VERSION};

pub fn to_bytes(model: &SceneModel) -> Result<Vec<u8>> {
    let value = serde_json::to_value(model).map_err(|e| Error::validation(e.to_string()))?;
    let mut out = String::new();
    write_value(&mut out, &value, "$")?;
    out.push('\n');
    Ok(out.into_bytes())
}

pub fn from_bytes(bytes: &[u8]) -> Result<SceneModel> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| Error::ModelFormat {
        offset: byte_offset(bytes, e.line(), e.column()),
        msg: e.to_string(),
    })?;
    let found = value
        .get("training_meta")
        .and_then(|m| m.get("format_version"))
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::ModelFormat {
            offset: 0,
            msg: "missing training_meta.format_version".into(),
        })?;
    if found != FORMAT_VERSION {
        return Err(Error::Version {
            found,
            expected: FORMAT_VERSION,
        });
    }
    serde_json::from_value(value).map_err(|e| Error::ModelFormat {
        offset: 0,
        msg: e.to_string(),
    })
}

pub fn save_model<W: Write>(mut w: W, model: &SceneModel) -> Result<()> {
    w.write_all(&to_bytes(model)?)?;
    Ok(())
}

pub fn load_model<R: Read>(mut r: R) -> Result<SceneModel> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}

pub fn save_model_file(path: &Path, model: &SceneModel) -> Result<()> {
    std::fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load_model_file(path: &Path) -> Result<SceneModel> {
    from_bytes(&std::fs::read(path)?)
}

/// serde_json reports 1-based line and column; column 0 means end of input.
fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return bytes.len();
    }
    let mut start = 0;
    for _ in 1..line {
        match bytes[start..].iter().position(|&b| b == b'\n') {
            Some(p) => start += p + 1,
            None => return bytes.len(),
        }
    }
    (start + column.saturating_sub(1)).min(bytes.len())
}

fn write_value(out: &mut String, v: &Value, path: &str) -> Result<()> {
    match v {
        // The model has no optional fields; a null can only be a float that
        // serde_json refused to encode.
        Value::Null => return Err(Error::validation(format!("non-finite value at {path}"))),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                write!(out, "{u}").unwrap();
            } else if let Some(i) = n.as_i64() {
                write!(out, "{i}").unwrap();
            } else {
                let f = n.as_f64().expect("json numbers are u64, i64 or f64");
                write!(out, "{f:.16e}").unwrap();
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("strings serialize")),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(out, item, &format!("{path}[{i}]"))?;
            }
            out.push(']');
        }
        Value::Object(map) => {
            // serde_json's default map is ordered by key.
            out.push('{');
            for (i, (k, item)) in map.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("strings serialize"));
                out.push(':');
                write_value(out, item, &format!("{path}.{k}"))?;
            }
            out.push('}');
        }
    }
    Ok(())
}
