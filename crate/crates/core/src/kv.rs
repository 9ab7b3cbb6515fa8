//! Flat `key = value` text files.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! # comment
//! key = value
//! list_key = 1.5, -0.25, 3
//! ```
//!
//! Keys are `[A-Za-z0-9_.]+`, unique within a file. Leading/trailing
//! whitespace around keys and values is ignored. Blank lines and lines
//! starting with `#` are skipped. Values are kept as strings; typed access
//! goes through [`KvFile::get_f64`] and friends.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvFile {
    entries: BTreeMap<String, (usize, String)>,
    path: PathBuf,
}

impl KvFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_owned(),
                line: line_no,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            if key.is_empty()
                || !key
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
            {
                return Err(Error::Parse {
                    path: path.to_owned(),
                    line: line_no,
                    msg: format!("invalid key `{key}`"),
                });
            }
            if entries
                .insert(key.to_owned(), (line_no, value.trim().to_owned()))
                .is_some()
            {
                return Err(Error::Parse {
                    path: path.to_owned(),
                    line: line_no,
                    msg: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(Self {
            entries,
            path: path.to_owned(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_owned(), (0, value.into()));
    }

    pub fn set_list(&mut self, key: &str, values: &[f64]) {
        let s = values
            .iter()
            .map(|v| format!("{v}"))
            .collect::<Vec<_>>()
            .join(", ");
        self.set(key, s);
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    fn err(&self, key: &str, msg: String) -> Error {
        let line = self.entries.get(key).map(|(l, _)| *l).unwrap_or(0);
        Error::Parse {
            path: self.path.clone(),
            line,
            msg: format!("{key}: {msg}"),
        }
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|e| self.err(key, format!("`{v}` is not a number ({e})")))
            })
            .transpose()
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.get(key)
            .map(|v| {
                v.parse::<usize>()
                    .map_err(|e| self.err(key, format!("`{v}` is not a count ({e})")))
            })
            .transpose()
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.get(key)
            .map(|v| {
                v.parse::<u64>()
                    .map_err(|e| self.err(key, format!("`{v}` is not an integer ({e})")))
            })
            .transpose()
    }

    pub fn get_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key)
            .map(|v| {
                if v.is_empty() {
                    return Ok(Vec::new());
                }
                v.split(',')
                    .map(|s| {
                        let s = s.trim();
                        s.parse::<f64>()
                            .map_err(|e| self.err(key, format!("`{s}` is not a number ({e})")))
                    })
                    .collect()
            })
            .transpose()
    }

    /// Fails if any key is outside `allowed`.
    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        for (key, (line, _)) in &self.entries {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::Parse {
                    path: self.path.clone(),
                    line: *line,
                    msg: format!("unknown key `{key}`"),
                });
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, (_, v)) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_round_trips() {
        let text = "# header\nseed = 42\nthetas = 0.05, 5,15\n\nname = full\n";
        let kv = KvFile::parse(text, Path::new("x.cfg")).unwrap();
        assert_eq!(kv.get_u64("seed").unwrap(), Some(42));
        assert_eq!(kv.get_list("thetas").unwrap(), Some(vec![0.05, 5.0, 15.0]));
        assert_eq!(kv.get("name"), Some("full"));
        let again = KvFile::parse(&kv.to_text(), Path::new("y")).unwrap();
        assert_eq!(again.get_list("thetas").unwrap(), kv.get_list("thetas").unwrap());
    }

    #[test]
    fn reports_line_numbers() {
        let err = KvFile::parse("a = 1\nnot a pair\n", Path::new("c.cfg")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = KvFile::parse("a = 1\na = 2\n", Path::new("c.cfg")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let kv = KvFile::parse("a = 1\nb = x\n", Path::new("c.cfg")).unwrap();
        assert!(matches!(kv.get_f64("b").unwrap_err(), Error::Parse { line: 2, .. }));
        assert!(kv.reject_unknown(&["a"]).is_err());
        assert!(kv.reject_unknown(&["a", "b"]).is_ok());
    }
}
