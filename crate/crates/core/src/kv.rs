//! Flat `key = value` text records shared by run configs and scenario scripts.
//!
//! Blank lines and lines starting with `#` are ignored. Keys may repeat; the
//! consumer decides whether that is allowed.

use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse(text: &str, origin: &str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: origin.to_string(),
            line: n + 1,
            reason: format!("expected `key = value`, got {line:?}"),
        })?;
        out.push(Entry {
            line: n + 1,
            key: key.trim().to_string(),
            value: value.trim().to_string(),
        });
    }
    Ok(out)
}

impl Entry {
    pub fn parse<T: FromStr>(&self, origin: &str) -> Result<T> {
        self.value.parse::<T>().map_err(|_| Error::Parse {
            path: origin.to_string(),
            line: self.line,
            reason: format!("invalid value for `{}`: {:?}", self.key, self.value),
        })
    }

    /// Whitespace-separated list.
    pub fn parse_list<T: FromStr>(&self, origin: &str) -> Result<Vec<T>> {
        self.value
            .split_whitespace()
            .map(|tok| {
                tok.parse::<T>().map_err(|_| Error::Parse {
                    path: origin.to_string(),
                    line: self.line,
                    reason: format!("invalid element {tok:?} in `{}`", self.key),
                })
            })
            .collect()
    }

    pub fn unknown(&self, origin: &str) -> Error {
        Error::Parse {
            path: origin.to_string(),
            line: self.line,
            reason: format!("unknown key `{}`", self.key),
        }
    }
}

/// Formats an `f64` so that parsing it back yields the same value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}
