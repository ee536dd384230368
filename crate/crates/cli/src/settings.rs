//! Config-file keys merged with command-line flags.

use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use eopt::error::{Error, Result};
use eopt::kv::KeyValues;

use crate::manifest::MANIFEST_PREFIX;

/// Pending keys plus the values every consumer resolved, in order.
pub struct Settings {
    kv: KeyValues,
    resolved: Vec<(String, String)>,
}

impl Settings {
    /// Loads `config` (if any), then applies flag overrides and `--set` pairs.
    /// Manifest bookkeeping keys in the file are ignored.
    pub fn load(config: Option<&Path>, flags: Vec<(&str, Option<String>)>, extra: &[String]) -> Result<Self> {
        let mut kv = match config {
            Some(path) => KeyValues::parse(&fs::read_to_string(path)?)?,
            None => KeyValues::new(),
        };
        let bookkeeping: Vec<String> = kv.keys().filter(|k| k.starts_with(MANIFEST_PREFIX)).map(String::from).collect();
        for key in bookkeeping {
            kv.take::<String>(&key)?;
        }
        for (key, value) in flags {
            if let Some(v) = value {
                kv.set(key, v);
            }
        }
        for pair in extra {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got {pair:?}")))?;
            kv.set(k.trim(), v.trim());
        }
        Ok(Self { kv, resolved: Vec::new() })
    }

    pub fn from_pairs(pairs: &[(&str, &str)]) -> Self {
        let mut kv = KeyValues::new();
        for (k, v) in pairs {
            kv.set(k, v);
        }
        Self { kv, resolved: Vec::new() }
    }

    fn record(&mut self, key: &str, value: impl Display) {
        self.resolved.push((key.to_string(), value.to_string()));
    }

    pub fn optional<T>(&mut self, key: &str) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v: Option<T> = self.kv.take(key)?;
        if let Some(v) = &v {
            self.record(key, v);
        }
        Ok(v)
    }

    pub fn required<T>(&mut self, key: &str) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.optional(key)?
            .ok_or_else(|| Error::Config(format!("missing required setting {key:?} (flag --{})", key.replace('_', "-"))))
    }

    pub fn or<T>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = self.kv.take(key)?.unwrap_or(default);
        self.record(key, &v);
        Ok(v)
    }

    /// Hands the raw pairs to a module-level `from_kv`, then records the
    /// rendered result.
    pub fn delegate<T>(&mut self, read: impl FnOnce(&mut KeyValues) -> Result<T>, render: impl FnOnce(&T) -> String) -> Result<T> {
        let value = read(&mut self.kv)?;
        for line in render(&value).lines() {
            if let Some((k, v)) = line.split_once('=') {
                self.record(k.trim(), v.trim());
            }
        }
        Ok(value)
    }

    /// Fails on unconsumed keys; returns the resolved pairs.
    pub fn finish(self) -> Result<Vec<(String, String)>> {
        self.kv.finish()?;
        Ok(self.resolved)
    }
}
