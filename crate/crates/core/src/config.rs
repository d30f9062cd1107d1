//! Flat `key = value` configuration files with `[section]` headers.
//!
//! ```text
//! # comment
//! [data]
//! n = 50      ; trailing comments start with '#' or ';'
//! ```
//!
//! Keys before the first header belong to the unnamed section `""`.
//! Section and key names are case-insensitive; values are kept verbatim
//! (trimmed). Every lookup error names the offending line.

use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct Entry {
    section: String,
    key: String,
    value: String,
    line: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    entries: Vec<Entry>,
    sections: Vec<(String, usize)>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = ConfigFile::default();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = match raw.find(['#', ';']) {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if body.is_empty() {
                continue;
            }
            if let Some(rest) = body.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config { line, reason: "unterminated section header".into() })?
                    .trim()
                    .to_ascii_lowercase();
                if name.is_empty() {
                    return Err(Error::Config { line, reason: "empty section name".into() });
                }
                if out.sections.iter().any(|(s, _)| *s == name) {
                    return Err(Error::Config { line, reason: format!("duplicate section [{name}]") });
                }
                out.sections.push((name.clone(), line));
                section = name;
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| Error::Config {
                line,
                reason: format!("expected `key = value`, found `{body}`"),
            })?;
            let key = key.trim().to_ascii_lowercase();
            if key.is_empty() {
                return Err(Error::Config { line, reason: "missing key".into() });
            }
            if out.entries.iter().any(|e| e.section == section && e.key == key) {
                return Err(Error::Config { line, reason: format!("duplicate key `{key}`") });
            }
            out.entries.push(Entry { section: section.clone(), key, value: value.trim().to_string(), line });
        }
        Ok(out)
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.iter().any(|(s, _)| s == section) || self.entries.iter().any(|e| e.section == section)
    }

    /// Raw value and its line number.
    pub fn raw(&self, section: &str, key: &str) -> Option<(&str, usize)> {
        self.entries
            .iter()
            .find(|e| e.section == section && e.key == key)
            .map(|e| (e.value.as_str(), e.line))
    }

    pub fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(section, key) {
            None => Ok(None),
            Some((v, line)) => v.parse::<T>().map(Some).map_err(|e| Error::Config {
                line,
                reason: format!("[{section}] {key} = `{v}`: {e}"),
            }),
        }
    }

    pub fn require<T: FromStr>(&self, section: &str, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(section, key)?.ok_or_else(|| Error::Config {
            line: self.sections.iter().find(|(s, _)| s == section).map_or(0, |(_, l)| *l),
            reason: format!("missing required key [{section}] {key}"),
        })
    }

    /// Comma separated list.
    pub fn get_list<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some((v, line)) = self.raw(section, key) else {
            return Ok(None);
        };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<T>().map_err(|e| Error::Config {
                    line,
                    reason: format!("[{section}] {key}: item `{s}`: {e}"),
                })
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// Wraps a validation failure for `[section] key` with its line number.
    pub fn invalid(&self, section: &str, key: &str, reason: impl std::fmt::Display) -> Error {
        let line = self.raw(section, key).map_or(0, |(_, l)| l);
        Error::Config { line, reason: format!("[{section}] {key}: {reason}") }
    }

    /// Rejects keys not listed in `known` (pairs of section and keys).
    pub fn ensure_known(&self, known: &[(&str, &[&str])]) -> Result<()> {
        for e in &self.entries {
            let ok = known
                .iter()
                .any(|(s, keys)| *s == e.section && keys.contains(&e.key.as_str()));
            if !ok {
                return Err(Error::Config {
                    line: e.line,
                    reason: format!("unknown key [{}] {}", e.section, e.key),
                });
            }
        }
        for (s, line) in &self.sections {
            if !known.iter().any(|(k, _)| k == s) {
                return Err(Error::Config { line: *line, reason: format!("unknown section [{s}]") });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_comments() {
        let cfg = ConfigFile::parse("top = 1\n# c\n[Data]\nn = 50 ; fifty\nlist = 1, 2,3\n").unwrap();
        assert_eq!(cfg.get::<u32>("", "top").unwrap(), Some(1));
        assert_eq!(cfg.require::<usize>("data", "n").unwrap(), 50);
        assert_eq!(cfg.get_list::<u8>("data", "list").unwrap(), Some(vec![1, 2, 3]));
        assert!(cfg.get::<u8>("data", "absent").unwrap().is_none());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = ConfigFile::parse("[a]\nx = 1\nbroken line\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 3, .. }), "{err}");
        let cfg = ConfigFile::parse("[a]\n\nx = abc\n").unwrap();
        let err = cfg.get::<f64>("a", "x").unwrap_err();
        assert!(matches!(err, Error::Config { line: 3, .. }));
        assert!(err.to_string().contains("x"));
        assert!(ConfigFile::parse("[a]\nx=1\nx=2").is_err());
        let cfg = ConfigFile::parse("[a]\ny = 2\n").unwrap();
        assert!(matches!(cfg.ensure_known(&[("a", &["x"])]), Err(Error::Config { line: 2, .. })));
    }
}
