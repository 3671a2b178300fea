//! Plain-text tensor format:
//!
//! ```text
//! %sptensor3
//! patients <n>
//! <label>            (n lines)
//! diagnoses <n>
//! <label>
//! medications <n>
//! <label>
//! entries <nnz>
//! <i> <j> <k> <count>
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::{Entry, SparseTensor3};
use crate::{Error, Result};

const MAGIC: &str = "%sptensor3";
const SECTIONS: [&str; 3] = ["patients", "diagnoses", "medications"];

pub fn write_tensor(t: &SparseTensor3, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(t)).map_err(|e| Error::io(path, e))
}

pub fn to_text(t: &SparseTensor3) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    for (name, labels) in SECTIONS.iter().zip(&t.labels) {
        let _ = writeln!(out, "{name} {}", labels.len());
        for l in labels {
            out.push_str(l);
            out.push('\n');
        }
    }
    let _ = writeln!(out, "entries {}", t.nnz());
    for e in &t.entries {
        let [i, j, k] = e.index;
        let _ = writeln!(out, "{i} {j} {k} {}", e.count);
    }
    out
}

pub fn read_tensor(path: &Path) -> Result<SparseTensor3> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text, path)
}

pub fn from_text(text: &str, path: &Path) -> Result<SparseTensor3> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, first)) if first.trim() == MAGIC => {}
        _ => return Err(err(1, format!("expected `{MAGIC}` header"))),
    }

    let mut labels: [Vec<String>; 3] = Default::default();
    for (section, out) in SECTIONS.iter().zip(labels.iter_mut()) {
        let (n, line) = lines.next().ok_or_else(|| err(0, format!("missing `{section}` section")))?;
        let count = match line.split_once(' ') {
            Some((key, c)) if key == *section => c.trim().parse::<usize>().map_err(|_| err(n, format!("bad {section} count")))?,
            _ => return Err(err(n, format!("expected `{section} <count>`"))),
        };
        for _ in 0..count {
            let (_, label) = lines.next().ok_or_else(|| err(0, format!("truncated `{section}` section")))?;
            out.push(label.to_string());
        }
    }
    let (n, line) = lines.next().ok_or_else(|| err(0, "missing `entries` section".into()))?;
    let nnz = match line.split_once(' ') {
        Some(("entries", c)) => c.trim().parse::<usize>().map_err(|_| err(n, "bad entries count".into()))?,
        _ => return Err(err(n, "expected `entries <count>`".into())),
    };
    let mut entries = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        let (n, line) = lines.next().ok_or_else(|| err(0, "truncated entries".into()))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parsed: Option<Vec<u64>> = fields.iter().map(|f| f.parse().ok()).collect();
        match parsed.as_deref() {
            Some(&[i, j, k, c]) if c > 0 && c <= u64::from(u32::MAX) => entries.push(Entry {
                index: [i as usize, j as usize, k as usize],
                count: c as u32,
            }),
            _ => return Err(err(n, format!("bad entry line `{line}`"))),
        }
    }
    SparseTensor3::new(labels, entries)
}
