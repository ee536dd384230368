//! `key = value` text used by config files and checkpoint headers.
//!
//! One pair per line; `#` starts a comment; blank lines are ignored.
//! Duplicate keys and keys nobody consumes are errors.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, (String, usize)>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = Self::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
                line,
                reason: format!("expected key = value, found {content:?}"),
            })?;
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(Error::Parse {
                    line,
                    reason: format!("invalid key {key:?}"),
                });
            }
            if kv.entries.contains_key(key) {
                return Err(Error::Parse {
                    line,
                    reason: format!("duplicate key {key:?}"),
                });
            }
            kv.entries
                .insert(key.to_string(), (value.trim().to_string(), line));
        }
        Ok(kv)
    }

    /// Inserts or replaces a value (command-line overrides).
    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries
            .insert(key.to_string(), (value.to_string(), 0));
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Remaining keys in sorted order.
    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Removes and parses a value.
    pub fn take<T>(&mut self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((value, line)) => value.parse().map(Some).map_err(|e| {
                let reason = format!("{key}: cannot parse {value:?}: {e}");
                if line == 0 {
                    Error::Config(reason)
                } else {
                    Error::Parse { line, reason }
                }
            }),
        }
    }

    pub fn take_or<T>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    /// Fails on any key that was not consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((key, (_, line))) if line > 0 => Err(Error::Config(format!(
                "unknown key {key:?} at line {line}"
            ))),
            Some((key, _)) => Err(Error::Config(format!("unknown key {key:?}"))),
        }
    }

    pub fn render(pairs: &[(&str, String)]) -> String {
        pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_take_finish() {
        let mut kv = KeyValues::parse("# c\n a = 1 \n\nb=x # trailing\n").unwrap();
        assert_eq!(kv.take::<u32>("a").unwrap(), Some(1));
        assert_eq!(kv.take_or::<u32>("z", 7).unwrap(), 7);
        assert_eq!(kv.take::<String>("b").unwrap().as_deref(), Some("x"));
        kv.finish().unwrap();
    }

    #[test]
    fn errors() {
        assert!(matches!(KeyValues::parse("a\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(KeyValues::parse("a=1\na=2"), Err(Error::Parse { line: 2, .. })));
        let mut kv = KeyValues::parse("a = q\nb = 1").unwrap();
        assert!(matches!(kv.take::<u32>("a"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(kv.finish(), Err(Error::Config(m)) if m.contains("\"b\"")));
        let mut kv = KeyValues::new();
        kv.set("n", "x");
        assert!(matches!(kv.take::<u32>("n"), Err(Error::Config(_))));
    }
}
