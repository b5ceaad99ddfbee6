use std::path::{Path, PathBuf};

use crate::{Error, Result};

/// One dataset manifest line: `path` or `path<TAB>class`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub class: Option<String>,
}

/// Parses manifest text. Blank lines and lines starting with `#` are
/// skipped; a trailing `\r` is ignored.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t');
        let path = cols.next().unwrap_or_default();
        let class = cols.next();
        if cols.next().is_some() {
            return Err(Error::invalid(format!("manifest line {}: more than two columns", lineno + 1)));
        }
        if path.is_empty() {
            return Err(Error::invalid(format!("manifest line {}: empty path", lineno + 1)));
        }
        let class = match class {
            Some("") => {
                return Err(Error::invalid(format!("manifest line {}: empty class", lineno + 1)))
            }
            c => c.map(str::to_owned),
        };
        entries.push(ManifestEntry {
            path: PathBuf::from(path),
            class,
        });
    }
    Ok(entries)
}

/// Reads a manifest file, resolving relative paths against its directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    Ok(parse_manifest(&text)?
        .into_iter()
        .map(|mut e| {
            if e.path.is_relative() {
                e.path = base.join(&e.path);
            }
            e
        })
        .collect())
}
