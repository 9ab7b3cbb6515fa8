//! Run configuration: a flat key-value file with per-command allowed keys.
//!
//! Every value a command reads, defaults included, is recorded so the
//! resolved configuration can be written next to the outputs and fed back
//! in to reproduce the run.

use std::cell::RefCell;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use epistrata::kv::KvFile;

/// A problem with the configuration itself; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub type CfgResult<T> = std::result::Result<T, ConfigError>;

fn cfg_err(e: impl fmt::Display) -> ConfigError {
    ConfigError(e.to_string())
}

pub struct RunConfig {
    kv: KvFile,
    /// Directory of the config file; relative paths resolve against it.
    base: PathBuf,
    resolved: RefCell<KvFile>,
}

impl RunConfig {
    /// Reads `path` (or starts empty) and rejects keys outside `allowed`.
    pub fn load(path: Option<&Path>, allowed: &[&str]) -> CfgResult<Self> {
        let (kv, base) = match path {
            Some(p) => {
                let kv = KvFile::read(p).map_err(cfg_err)?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (kv, base)
            }
            None => (KvFile::new(), PathBuf::new()),
        };
        kv.reject_unknown(allowed).map_err(cfg_err)?;
        Ok(Self { kv, base, resolved: RefCell::new(KvFile::new()) })
    }

    fn record(&self, key: &str, value: impl Into<String>) {
        self.resolved.borrow_mut().set(key, value);
    }

    /// Command-line overrides win over the file.
    pub fn override_value(&mut self, key: &str, value: impl Into<String>) {
        self.kv.set(key, value);
    }

    pub fn string(&self, key: &str, default: &str) -> String {
        let v = self.kv.get(key).unwrap_or(default).to_owned();
        self.record(key, v.clone());
        v
    }

    pub fn opt_string(&self, key: &str) -> Option<String> {
        let v = self.kv.get(key).map(str::to_owned);
        if let Some(v) = &v {
            self.record(key, v.clone());
        }
        v
    }

    pub fn parse<T>(&self, key: &str, default: T) -> CfgResult<T>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        let v = match self.kv.get(key) {
            Some(raw) => raw
                .parse::<T>()
                .map_err(|e| ConfigError(format!("`{key}`: cannot parse `{raw}` ({e})")))?,
            None => default,
        };
        self.record(key, v.to_string());
        Ok(v)
    }

    pub fn opt_parse<T: FromStr>(&self, key: &str) -> CfgResult<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.kv.get(key) {
            Some(raw) => {
                let v = raw
                    .parse::<T>()
                    .map_err(|e| ConfigError(format!("`{key}`: cannot parse `{raw}` ({e})")))?;
                self.record(key, raw.to_owned());
                Ok(Some(v))
            }
            None => Ok(None),
        }
    }

    pub fn bool(&self, key: &str, default: bool) -> CfgResult<bool> {
        let v = match self.kv.get(key) {
            Some("true" | "yes" | "1") => true,
            Some("false" | "no" | "0") => false,
            Some(other) => return Err(ConfigError(format!("`{key}`: expected true or false, got `{other}`"))),
            None => default,
        };
        self.record(key, v.to_string());
        Ok(v)
    }

    pub fn list(&self, key: &str, default: &[f64]) -> CfgResult<Vec<f64>> {
        let v = self.kv.get_list(key).map_err(cfg_err)?.unwrap_or_else(|| default.to_vec());
        self.resolved.borrow_mut().set_list(key, &v);
        Ok(v)
    }

    /// A path resolved against the config file's directory and recorded
    /// in absolute form.
    pub fn opt_path(&self, key: &str) -> Option<PathBuf> {
        let raw = self.kv.get(key)?;
        let p = self.resolve(raw);
        self.record(key, p.display().to_string());
        Some(p)
    }

    pub fn path(&self, key: &str) -> CfgResult<PathBuf> {
        self.opt_path(key).ok_or_else(|| ConfigError(format!("missing required key `{key}`")))
    }

    pub fn paths(&self, key: &str) -> CfgResult<Vec<PathBuf>> {
        let raw = self.kv.get(key).ok_or_else(|| ConfigError(format!("missing required key `{key}`")))?;
        let v: Vec<PathBuf> = raw
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| self.resolve(t))
            .collect();
        self.record(key, v.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "));
        Ok(v)
    }

    fn resolve(&self, raw: &str) -> PathBuf {
        let p = Path::new(raw);
        let joined = if p.is_absolute() { p.to_path_buf() } else { self.base.join(p) };
        std::path::absolute(&joined).unwrap_or(joined)
    }

    pub fn resolved_text(&self) -> String {
        self.resolved.borrow().to_text()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_paths_are_recorded() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("run.txt");
        std::fs::write(&p, "chains = 3\npanel = data/sim\n").unwrap();
        let cfg = RunConfig::load(Some(&p), &["chains", "panel", "warmup"]).unwrap();
        assert_eq!(cfg.parse("chains", 4usize).unwrap(), 3);
        assert_eq!(cfg.parse("warmup", 500usize).unwrap(), 500);
        assert!(cfg.path("panel").unwrap().ends_with("data/sim"));
        let text = cfg.resolved_text();
        assert!(text.contains("warmup = 500"));
        assert!(text.contains(&d.path().join("data/sim").display().to_string()));
    }

    #[test]
    fn bad_values_and_keys_are_config_errors() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("run.txt");
        std::fs::write(&p, "chains = many\n").unwrap();
        let cfg = RunConfig::load(Some(&p), &["chains"]).unwrap();
        assert!(cfg.parse("chains", 4usize).is_err());
        assert!(RunConfig::load(Some(&p), &["warmup"]).is_err());
        assert!(cfg.path("panel").is_err());
    }
}
