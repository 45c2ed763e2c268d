//! Plain `key=value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Whitespace around keys
//! and values is trimmed. One file may carry keys for several sections; each
//! section reads the keys it knows and ignores the rest.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Environment variable that overrides every configured seed.
pub const SEED_ENV: &str = "SIAMCAR_SEED";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
    origin: PathBuf,
}

impl KeyValues {
    pub fn parse(text: &str, origin: impl Into<PathBuf>) -> Result<Self> {
        let origin = origin.into();
        let mut entries = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
                what: "config",
                path: origin.clone(),
                msg: format!("line {}: expected key=value, got {line:?}", no + 1),
            })?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(KeyValues { entries, origin })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Self::parse(&text, path)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.entries.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| Error::Format {
                what: "config",
                path: self.origin.clone(),
                msg: format!("{key}={v}: {e}"),
            }),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// Serializes `(key, value)` pairs as `key=value` lines.
pub fn write_key_values<'a>(pairs: impl IntoIterator<Item = (&'a str, String)>) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        out.push_str(k);
        out.push('=');
        out.push_str(&v);
        out.push('\n');
    }
    out
}

/// Parses a seed override value; empty or missing means no override.
pub fn parse_seed_override(value: Option<&str>) -> Result<Option<u64>> {
    match value.map(str::trim) {
        None | Some("") => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|e| Error::Config(format!("{SEED_ENV}={v}: {e}"))),
    }
}

/// `configured` unless the seed environment variable says otherwise.
pub fn effective_seed(configured: u64) -> Result<u64> {
    let env = std::env::var(SEED_ENV).ok();
    Ok(parse_seed_override(env.as_deref())?.unwrap_or(configured))
}

pub(crate) fn parse_triple(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated integers, got {s:?}"));
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|e| format!("{p:?}: {e}"))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_defaults() {
        let kv = KeyValues::parse("# comment\n lambda_d = 0.25\n\ntop_k=5\n", "mem").unwrap();
        assert_eq!(kv.get("lambda_d", 0.4).unwrap(), 0.25);
        assert_eq!(kv.get("top_k", 3usize).unwrap(), 5);
        assert_eq!(kv.get("gamma", 0.3).unwrap(), 0.3);
        assert!(kv.get::<usize>("lambda_d", 0).is_err());
    }

    #[test]
    fn rejects_garbage_line() {
        assert!(KeyValues::parse("lambda_d 0.4\n", "mem").is_err());
    }

    #[test]
    fn seed_override_parsing() {
        assert_eq!(parse_seed_override(None).unwrap(), None);
        assert_eq!(parse_seed_override(Some(" ")).unwrap(), None);
        assert_eq!(parse_seed_override(Some("42")).unwrap(), Some(42));
        assert!(parse_seed_override(Some("x")).is_err());
    }

    #[test]
    fn triples() {
        assert_eq!(parse_triple("8, 16,32").unwrap(), [8, 16, 32]);
        assert!(parse_triple("8,16").is_err());
    }
}
