//! Line-oriented `key = value` files with `#` comments.

use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug)]
pub(crate) struct KeyValues {
    /// `(line, key, value, consumed)`
    entries: Vec<(usize, String, String, bool)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, String, String, bool)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::parse(line, format!("expected `key = value`, got `{content}`")));
            };
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(Error::parse(line, "empty key"));
            }
            if entries.iter().any(|e| e.1 == key) {
                return Err(Error::parse(line, format!("duplicate key `{key}`")));
            }
            entries.push((line, key.to_string(), value.to_string(), false));
        }
        Ok(KeyValues { entries })
    }

    /// Parses and consumes `key` if present.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        let Some(e) = self.entries.iter_mut().find(|e| e.1 == key) else {
            return Ok(None);
        };
        e.3 = true;
        e.2.parse::<T>()
            .map(Some)
            .map_err(|_| Error::parse(e.0, format!("invalid value `{}` for `{key}`", e.2)))
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.take(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T> {
        self.take(key)?
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    /// Rejects any key that was never consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.iter().find(|e| !e.3) {
            Some(e) => Err(Error::parse(e.0, format!("unknown key `{}`", e.1))),
            None => Ok(()),
        }
    }
}
