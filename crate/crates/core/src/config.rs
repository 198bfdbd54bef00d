//! Plain-text experiment configuration.
//!
//! A config is a sequence of sections
//!
//! ```text
//! # comment
//! model { source = poisson(1.0), dim = 2, side = 64 }
//! kernel {
//!     family = long_range
//!     beta = 4
//!     delta = 1.5
//! }
//! experiment { p = [0.2, 0.6, 1.0] }
//! ```
//!
//! Entries are separated by commas or newlines; values are bare words or
//! bracketed lists.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Scalar(String),
    List(Vec<String>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    name: String,
    line: usize,
    entries: BTreeMap<String, (usize, Value)>,
}

fn parse_err<T>(line: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Parse { line, message: message.into() })
}

impl Section {
    pub fn new(name: &str) -> Self {
        Section { name: name.to_string(), line: 0, entries: BTreeMap::new() }
    }

    /// Builder-style insertion, mostly for programmatic configs.
    pub fn with(mut self, key: &str, value: &str) -> Self {
        let v = if let Some(inner) = value.trim().strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            Value::List(split_list(inner))
        } else {
            Value::Scalar(value.trim().to_string())
        };
        self.entries.insert(key.to_string(), (0, v));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.get(key).map(|(_, v)| v)
    }

    fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map(|(l, _)| *l).unwrap_or(self.line)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        match self.get(key) {
            Some(Value::Scalar(s)) => Some(s.as_str()),
            _ => None,
        }
    }

    pub fn require_str(&self, key: &str) -> Result<&str> {
        self.get_str(key).map_or_else(
            || parse_err(self.line, format!("section `{}` is missing `{key}`", self.name)),
            Ok,
        )
    }

    fn scalar<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::List(_)) => parse_err(self.line_of(key), format!("`{key}` must be a single {what}")),
            Some(Value::Scalar(s)) => s
                .parse::<T>()
                .map(Some)
                .or_else(|_| parse_err(self.line_of(key), format!("`{key}` = `{s}` is not a valid {what}"))),
        }
    }

    fn list<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<Option<Vec<T>>> {
        let items: Vec<&String> = match self.get(key) {
            None => return Ok(None),
            Some(Value::Scalar(s)) => vec![s],
            Some(Value::List(v)) => v.iter().collect(),
        };
        items
            .into_iter()
            .map(|s| {
                s.parse::<T>()
                    .or_else(|_| parse_err(self.line_of(key), format!("`{key}` item `{s}` is not a valid {what}")))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.scalar(key, "number")
    }

    pub fn require_f64(&self, key: &str) -> Result<f64> {
        self.get_f64(key)?.map_or_else(
            || parse_err(self.line, format!("section `{}` is missing `{key}`", self.name)),
            Ok,
        )
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.scalar(key, "non-negative integer")
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.scalar(key, "non-negative integer")
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        self.scalar(key, "boolean")
    }

    /// A list value; a scalar is accepted as a one-element list.
    pub fn get_f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.list(key, "number")
    }

    pub fn get_u64_list(&self, key: &str) -> Result<Option<Vec<u64>>> {
        self.list(key, "non-negative integer")
    }
}

fn split_list(inner: &str) -> Vec<String> {
    inner.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    sections: Vec<Section>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: Vec<Section> = Vec::new();
        let mut current: Option<Section> = None;
        // Entry text accumulated inside a section, with the line it began on.
        let mut entry = String::new();
        let mut entry_line = 0;
        let mut depth = 0i32;
        let mut header = String::new();

        fn flush(sec: &mut Section, entry: &mut String, line: usize) -> Result<()> {
            let text = entry.trim();
            if text.is_empty() {
                entry.clear();
                return Ok(());
            }
            let Some((k, v)) = text.split_once('=') else {
                return parse_err(line, format!("expected `key = value`, found `{text}`"));
            };
            let key = k.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return parse_err(line, format!("invalid key `{key}`"));
            }
            let v = v.trim();
            let value = if let Some(rest) = v.strip_prefix('[') {
                let Some(inner) = rest.strip_suffix(']') else {
                    return parse_err(line, format!("unterminated list for `{key}`"));
                };
                Value::List(split_list(inner))
            } else if v.is_empty() {
                return parse_err(line, format!("missing value for `{key}`"));
            } else {
                Value::Scalar(v.to_string())
            };
            if sec.entries.insert(key.to_string(), (line, value)).is_some() {
                return parse_err(line, format!("duplicate key `{key}` in section `{}`", sec.name));
            }
            entry.clear();
            Ok(())
        }

        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.split('#').next().unwrap_or("");
            for c in line.chars() {
                match current.as_mut() {
                    None => match c {
                        '{' => {
                            let name = header.trim().to_string();
                            if name.is_empty() || name.contains(char::is_whitespace) {
                                return parse_err(lineno, format!("invalid section name `{name}`"));
                            }
                            if sections.iter().any(|s| s.name == name) {
                                return parse_err(lineno, format!("duplicate section `{name}`"));
                            }
                            let mut s = Section::new(&name);
                            s.line = lineno;
                            current = Some(s);
                            header.clear();
                        }
                        '}' | ',' | '=' => return parse_err(lineno, format!("unexpected `{c}` outside a section")),
                        _ => header.push(c),
                    },
                    Some(sec) => match c {
                        '[' | '(' => {
                            depth += 1;
                            entry.push(c);
                        }
                        ']' | ')' => {
                            depth -= 1;
                            if depth < 0 {
                                return parse_err(lineno, format!("unbalanced `{c}`"));
                            }
                            entry.push(c);
                        }
                        ',' if depth == 0 => flush(sec, &mut entry, entry_line)?,
                        '}' if depth == 0 => {
                            flush(sec, &mut entry, entry_line)?;
                            sections.push(current.take().unwrap());
                        }
                        '{' => return parse_err(lineno, "nested sections are not supported"),
                        _ => {
                            if entry.trim().is_empty() {
                                entry_line = lineno;
                            }
                            entry.push(c);
                        }
                    },
                }
            }
            // End of line separates entries unless a list or call is open.
            match current.as_mut() {
                Some(sec) if depth == 0 => flush(sec, &mut entry, entry_line)?,
                Some(_) => entry.push(' '),
                None => {
                    if !header.trim().is_empty() && !line.trim().is_empty() && !header.ends_with(' ') {
                        header.push(' ');
                    }
                }
            }
        }
        if let Some(sec) = current {
            return parse_err(sec.line, format!("section `{}` is not closed", sec.name));
        }
        if !header.trim().is_empty() {
            return parse_err(text.lines().count(), format!("stray text `{}`", header.trim()));
        }
        Ok(Config { sections })
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn require_section(&self, name: &str) -> Result<&Section> {
        self.section(name)
            .map_or_else(|| parse_err(0, format!("missing section `{name}`")), Ok)
    }

    pub fn push(&mut self, section: Section) {
        self.sections.retain(|s| s.name != section.name);
        self.sections.push(section);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "
# a model
model { source = poisson(1.5), dim = 2 }
kernel {
    family = long_range   # trailing comment
    beta = 4
    delta = 1.5
}
experiment { p = [0.2, 0.4,
                  0.6], replicas = 10 }
";

    #[test]
    fn parses_sections() {
        let c = Config::parse(SAMPLE).unwrap();
        assert_eq!(c.sections().len(), 3);
        let m = c.section("model").unwrap();
        assert_eq!(m.get_str("source"), Some("poisson(1.5)"));
        assert_eq!(m.get_usize("dim").unwrap(), Some(2));
        let k = c.section("kernel").unwrap();
        assert_eq!(k.require_f64("beta").unwrap(), 4.0);
        assert_eq!(k.get_str("family"), Some("long_range"));
        let e = c.section("experiment").unwrap();
        assert_eq!(e.get_f64_list("p").unwrap(), Some(vec![0.2, 0.4, 0.6]));
        assert_eq!(e.get_u64("replicas").unwrap(), Some(10));
        assert_eq!(e.get_f64_list("replicas").unwrap(), Some(vec![10.0]));
    }

    #[test]
    fn reports_line_numbers() {
        let err = Config::parse("a {\n x = 1\n y 2\n}").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
        assert!(Config::parse("a { x = 1").is_err());
        assert!(Config::parse("a { x = 1, x = 2 }").is_err());
        assert!(Config::parse("a { x = 1 } a { y = 1 }").is_err());
        assert!(Config::parse("a { x = [1, 2 }").is_err());
        let bad = Config::parse("a { x = abc }").unwrap();
        assert!(bad.section("a").unwrap().get_f64("x").is_err());
    }

    #[test]
    fn empty_text_is_empty_config() {
        assert!(Config::parse("   # nothing\n").unwrap().sections().is_empty());
    }
}
