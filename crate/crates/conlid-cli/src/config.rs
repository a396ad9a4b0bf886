//! `key=value` defaults files and flag resolution.
//!
//! Every tunable resolves by the same rule: an explicit command-line flag
//! wins, then the `--config` file, then the built-in default. The resolver
//! records every decision so each run can print its effective
//! configuration.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use conlid::{Error, Result};

/// Parsed contents of a `--config` file: one `key=value` pair per line,
/// `#` comments and blank lines ignored, later duplicates winning. Keys
/// irrelevant to the running subcommand are ignored so one file can serve
/// a whole pipeline.
#[derive(Debug, Default)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    i + 1
                )));
            };
            entries.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(ConfigMap { entries })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }
}

/// Applies the flag > config-file > default precedence and remembers the
/// effective value of every setting it touched.
pub struct Resolver {
    cfg: ConfigMap,
    log: Vec<(String, String)>,
}

impl Resolver {
    pub fn new(cfg: ConfigMap) -> Self {
        Resolver {
            cfg,
            log: Vec::new(),
        }
    }

    fn parse<T: FromStr>(&self, key: &str, raw: &str) -> Result<T> {
        raw.parse().map_err(|_| {
            Error::Config(format!("invalid value {raw:?} for setting {key:?}"))
        })
    }

    /// Setting with a built-in default.
    pub fn resolve<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
    {
        let value = match flag {
            Some(v) => v,
            None => match self.cfg.get(key) {
                Some(raw) => self.parse(key, raw)?,
                None => default,
            },
        };
        self.log.push((key.to_string(), value.to_string()));
        Ok(value)
    }

    /// Setting that must come from the flag or the config file.
    pub fn resolve_required<T>(&mut self, key: &str, flag: Option<T>) -> Result<T>
    where
        T: FromStr + Display,
    {
        match self.resolve_optional(key, flag)? {
            Some(v) => Ok(v),
            None => Err(Error::Config(format!("missing required option --{key}"))),
        }
    }

    /// Setting that may stay unset.
    pub fn resolve_optional<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
    {
        let value = match flag {
            Some(v) => Some(v),
            None => match self.cfg.get(key) {
                Some(raw) => Some(self.parse(key, raw)?),
                None => None,
            },
        };
        if let Some(v) = &value {
            self.log.push((key.to_string(), v.to_string()));
        }
        Ok(value)
    }

    /// Records a value that is not overridable (positionals, env-derived
    /// settings) so it still shows up in the printed configuration.
    pub fn note(&mut self, key: &str, value: impl Display) {
        self.log.push((key.to_string(), value.to_string()));
    }

    /// Prints the resolved configuration to stderr, one line per setting.
    pub fn print(&self) {
        for (key, value) in &self.log {
            eprintln!("config: {key}={value}");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn config_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_pairs_comments_and_blanks() {
        let f = config_file("# defaults\nbatch = 64\n\nlr=0.01\nbatch=32\n");
        let cfg = ConfigMap::load(f.path()).unwrap();
        assert_eq!(cfg.get("batch"), Some("32"));
        assert_eq!(cfg.get("lr"), Some("0.01"));
        assert_eq!(cfg.get("seed"), None);
    }

    #[test]
    fn rejects_lines_without_equals() {
        let f = config_file("batch 64\n");
        let err = ConfigMap::load(f.path()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains(":1:"));
    }

    #[test]
    fn flag_beats_config_beats_default() {
        let f = config_file("batch=64\n");
        let mut r = Resolver::new(ConfigMap::load(f.path()).unwrap());
        assert_eq!(r.resolve("batch", Some(16usize), 128).unwrap(), 16);
        assert_eq!(r.resolve("batch", None, 128).unwrap(), 64);
        assert_eq!(r.resolve("seed", None::<u64>, 7).unwrap(), 7);
    }

    #[test]
    fn unparseable_config_value_is_a_usage_error() {
        let f = config_file("batch=lots\n");
        let mut r = Resolver::new(ConfigMap::load(f.path()).unwrap());
        let err = r.resolve("batch", None::<usize>, 128).unwrap_err();
        assert_eq!(err.kind(), conlid::ErrorKind::Usage);
    }

    #[test]
    fn required_setting_missing_everywhere_is_an_error() {
        let mut r = Resolver::new(ConfigMap::empty());
        let err = r.resolve_required("variant", None::<String>).unwrap_err();
        assert!(err.to_string().contains("--variant"));
    }

    #[test]
    fn resolver_logs_every_effective_value() {
        let f = config_file("tau=0.1\n");
        let mut r = Resolver::new(ConfigMap::load(f.path()).unwrap());
        r.resolve("tau", None::<f64>, 0.05).unwrap();
        r.note("input", "corpus.jsonl");
        assert_eq!(
            r.log,
            vec![
                ("tau".to_string(), "0.1".to_string()),
                ("input".to_string(), "corpus.jsonl".to_string()),
            ]
        );
    }
}
