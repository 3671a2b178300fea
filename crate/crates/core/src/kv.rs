//! `key = value` text files with `#` comments.

use std::path::Path;
use std::str::FromStr;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KvLine {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse(text: &str, source: &Path) -> Result<Vec<KvLine>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: source.to_path_buf(),
                line: n + 1,
                message: format!("expected `key = value`, got `{line}`"),
            });
        };
        out.push(KvLine {
            line: n + 1,
            key: k.trim().to_ascii_lowercase(),
            value: v.trim().to_string(),
        });
    }
    Ok(out)
}

pub fn value<T: FromStr>(kv: &KvLine, source: &Path) -> Result<T> {
    kv.value.parse().map_err(|_| Error::Parse {
        path: source.to_path_buf(),
        line: kv.line,
        message: format!("invalid value `{}` for `{}`", kv.value, kv.key),
    })
}

/// Comma-separated list.
pub fn list<T: FromStr>(kv: &KvLine, source: &Path) -> Result<Vec<T>> {
    kv.value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse().map_err(|_| Error::Parse {
                path: source.to_path_buf(),
                line: kv.line,
                message: format!("invalid list item `{s}` for `{}`", kv.key),
            })
        })
        .collect()
}

pub fn unknown(kv: &KvLine, source: &Path) -> Error {
    Error::Parse {
        path: source.to_path_buf(),
        line: kv.line,
        message: format!("unknown key `{}`", kv.key),
    }
}
