//! Utterance lists: one `id audio_path [label_path]` record per line.
//!
//! Fields are whitespace separated. Blank lines and lines starting with `#`
//! are skipped. Relative paths resolve against the manifest's directory.
//! Label files hold one non-negative integer class id per frame, separated by
//! whitespace.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub audio: PathBuf,
    pub labels: Option<PathBuf>,
    /// 1-based line in the manifest, for error messages.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub path: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_relative() {
                base.join(p)
            } else {
                p
            }
        };
        let mut entries = Vec::new();
        let mut ids = HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            let bad = |msg: String| Error::Input(format!("{}:{line}: {msg}", path.display()));
            if !(2..=3).contains(&fields.len()) {
                return Err(bad(format!("expected `id path [label_path]`, found {} fields", fields.len())));
            }
            if !ids.insert(fields[0]) {
                return Err(bad(format!("duplicate utterance id `{}`", fields[0])));
            }
            entries.push(ManifestEntry {
                id: fields[0].to_string(),
                audio: resolve(fields[1]),
                labels: fields.get(2).map(|p| resolve(p)),
                line,
            });
        }
        Ok(Manifest { path: path.to_path_buf(), entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Prefix naming a record, e.g. `list.txt:3 (utt7)`.
    pub fn locate(&self, entry: &ManifestEntry) -> String {
        format!("{}:{} ({})", self.path.display(), entry.line, entry.id)
    }
}

pub fn parse_labels(text: &str) -> std::result::Result<Vec<u32>, String> {
    text.split_whitespace()
        .map(|t| t.parse::<u32>().map_err(|_| format!("`{t}` is not a class id")))
        .collect()
}

pub fn read_labels(path: &Path) -> Result<Vec<u32>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text).map_err(|m| Error::Input(format!("{}: {m}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves() {
        let m = Manifest::parse(
            "# corpus\nu1 a.wav\n\nu2 /abs/b.wav lab/b.txt\n",
            Path::new("/data/list.txt"),
        )
        .unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries[0].audio, PathBuf::from("/data/a.wav"));
        assert_eq!(m.entries[0].labels, None);
        assert_eq!(m.entries[1].audio, PathBuf::from("/abs/b.wav"));
        assert_eq!(m.entries[1].labels, Some(PathBuf::from("/data/lab/b.txt")));
        assert_eq!(m.entries[1].line, 4);
        assert_eq!(m.locate(&m.entries[1]), "/data/list.txt:4 (u2)");
    }

    #[test]
    fn errors_name_the_line() {
        let e = Manifest::parse("u1 a.wav\nu2\n", Path::new("m.txt")).unwrap_err();
        assert!(e.to_string().contains("m.txt:2"), "{e}");
        let e = Manifest::parse("u1 a.wav\nu1 b.wav\n", Path::new("m.txt")).unwrap_err();
        assert!(e.to_string().contains(":2") && e.to_string().contains("duplicate"), "{e}");
        let e = Manifest::parse("u1 a b c\n", Path::new("m.txt")).unwrap_err();
        assert!(matches!(e, Error::Input(_)));
    }

    #[test]
    fn labels() {
        assert_eq!(parse_labels("0 1\n2\t3\n").unwrap(), vec![0, 1, 2, 3]);
        assert!(parse_labels("0 -1").is_err());
        assert!(parse_labels("").unwrap().is_empty());
    }
}
