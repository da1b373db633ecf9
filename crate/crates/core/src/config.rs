//! Flat INI-style configuration: `[section]` headers, `key = value` lines,
//! `#` or `;` comments. Keys before the first header live in section "".

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
struct Entry {
    value: String,
    line: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ini {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

fn is_key(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

impl Ini {
    pub fn parse(text: &str) -> Result<Self> {
        let mut ini = Ini::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') || s.starts_with(';') {
                continue;
            }
            if let Some(rest) = s.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {line}: unterminated section header")))?
                    .trim();
                if !is_key(name) {
                    return Err(Error::Config(format!("line {line}: invalid section name {name:?}")));
                }
                section = name.to_string();
                ini.sections.entry(section.clone()).or_default();
                continue;
            }
            let Some((k, v)) = s.split_once('=') else {
                return Err(Error::Config(format!("line {line}: expected `key = value`")));
            };
            let key = k.trim();
            if !is_key(key) {
                return Err(Error::Config(format!("line {line}: invalid key {key:?}")));
            }
            let entries = ini.sections.entry(section.clone()).or_default();
            if let Some(prev) = entries.get(key) {
                return Err(Error::Config(format!(
                    "line {line}: duplicate key {key:?} (first set on line {})",
                    prev.line
                )));
            }
            entries.insert(
                key.to_string(),
                Entry {
                    value: v.trim().to_string(),
                    line,
                },
            );
        }
        Ok(ini)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(|e| e.value.as_str())
    }

    /// Parses a value, reporting the line it came from on failure.
    pub fn parsed<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(entry) = self.sections.get(section).and_then(|s| s.get(key)) else {
            return Ok(None);
        };
        entry.value.parse().map(Some).map_err(|e| {
            Error::Config(format!("line {}: [{section}] {key} = {:?}: {e}", entry.line, entry.value))
        })
    }

    /// Section entries in key order.
    pub fn section(&self, section: &str) -> BTreeMap<String, String> {
        self.sections
            .get(section)
            .map(|s| s.iter().map(|(k, e)| (k.clone(), e.value.clone())).collect())
            .unwrap_or_default()
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl Into<String>) {
        self.sections.entry(section.to_string()).or_default().insert(
            key.to_string(),
            Entry {
                value: value.into(),
                line: 0,
            },
        );
    }

    /// Every `section.key = value`, sorted; the snapshot stored in manifests.
    pub fn flatten(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for (name, entries) in &self.sections {
            for (k, e) in entries {
                let key = if name.is_empty() { k.clone() } else { format!("{name}.{k}") };
                out.insert(key, e.value.clone());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_comments_and_lookup() {
        let ini = Ini::parse("seed = 4\n# note\n[instruct]\nlearning_rate = 0.001 \n; x\nepochs=3\n").unwrap();
        assert_eq!(ini.get("", "seed"), Some("4"));
        assert_eq!(ini.parsed::<f64>("instruct", "learning_rate").unwrap(), Some(0.001));
        assert_eq!(ini.parsed::<usize>("instruct", "epochs").unwrap(), Some(3));
        assert_eq!(ini.parsed::<usize>("instruct", "missing").unwrap(), None);
        assert_eq!(ini.flatten().get("instruct.epochs").map(String::as_str), Some("3"));
    }

    #[test]
    fn diagnostics_name_the_line() {
        let cases = [
            ("[ok]\nno equals here\n", "line 2"),
            ("[bad\n", "line 1"),
            ("a = 1\na = 2\n", "line 2"),
            ("[s]\n = 3\n", "line 2"),
        ];
        for (text, want) in cases {
            let msg = Ini::parse(text).unwrap_err().to_string();
            assert!(msg.contains(want), "{text:?}: {msg}");
        }
        let ini = Ini::parse("\n[t]\nepochs = many\n").unwrap();
        let msg = ini.parsed::<usize>("t", "epochs").unwrap_err().to_string();
        assert!(msg.contains("line 3"), "{msg}");
    }
}
