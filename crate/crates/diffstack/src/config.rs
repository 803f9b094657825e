//! Flat `key = value` configuration files.
//!
//! UTF-8 text, one assignment per line, `#` starts a full-line comment,
//! blank lines ignored, later assignments win. The effective config can
//! be echoed back as text for run manifests.

use crate::{Error, Result};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Config {
    map: BTreeMap<String, String>,
}

impl Config {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("config line {}: expected 'key = value', got '{line}'", i + 1))
            })?;
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("config line {}: empty key", i + 1)));
            }
            map.insert(key.to_string(), v.trim().to_string());
        }
        Ok(Config { map })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.map.insert(key.to_string(), value.to_string());
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    fn typed<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<Option<T>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| {
                Error::Config(format!("config key '{key}': '{v}' is not a valid {what}"))
            }),
        }
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.typed(key, "number")
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.typed(key, "integer")
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.typed(key, "integer")
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        match self.map.get(key).map(String::as_str) {
            None => Ok(None),
            Some("true") | Some("on") | Some("1") => Ok(Some(true)),
            Some("false") | Some("off") | Some("0") => Ok(Some(false)),
            Some(v) => Err(Error::Config(format!(
                "config key '{key}': '{v}' is not a boolean (true/false/on/off/1/0)"
            ))),
        }
    }

    /// Canonical text form: sorted `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.map {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(v);
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_blanks_and_overrides() {
        let c = Config::parse(
            "# a comment\n\nlr = 2e-3\nepochs = 30\n  # indented comment\nepochs = 50\n",
        )
        .unwrap();
        assert_eq!(c.get("lr"), Some("2e-3"));
        assert_eq!(c.get_usize("epochs").unwrap(), Some(50));
        assert_eq!(c.get("missing"), None);
    }

    #[test]
    fn typed_getters_and_errors() {
        let c = Config::parse("lr = 0.002\nnoise = on\ncarry = false\nbad = maybe\n").unwrap();
        assert_eq!(c.get_f64("lr").unwrap(), Some(0.002));
        assert_eq!(c.get_bool("noise").unwrap(), Some(true));
        assert_eq!(c.get_bool("carry").unwrap(), Some(false));
        assert!(c.get_bool("bad").is_err());
        assert!(c.get_u64("lr").is_err());
        assert!(Config::parse("just a line\n").is_err());
        assert!(Config::parse("= value\n").is_err());
    }

    #[test]
    fn round_trips_through_text() {
        let mut c = Config::new();
        c.set("seed", 7);
        c.set("grammar", "d2");
        let text = c.to_text();
        assert_eq!(text, "grammar = d2\nseed = 7\n");
        assert_eq!(Config::parse(&text).unwrap(), c);
    }

    #[test]
    fn value_may_contain_equals() {
        let c = Config::parse("window = 2=55\n").unwrap();
        assert_eq!(c.get("window"), Some("2=55"));
    }
}
