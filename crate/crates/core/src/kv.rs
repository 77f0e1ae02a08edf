//! Flat `key = value` text, used for config files and checkpoint headers.

use crate::error::{Error, Result};

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected `key = value`, got {raw:?}", no + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::config(format!("line {}: empty key", no + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn parse_value<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value {value:?} for {key}")))
}
