//! `filename<TAB>label` manifests, one entry per line, paths relative to the manifest.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub filename: String,
    pub label: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn path_of(&self, index: usize) -> PathBuf {
        self.root.join(&self.entries[index].filename)
    }

    pub fn parse(text: &str, root: PathBuf) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        let mut problems = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let raw = raw.trim_end_matches('\r');
            if raw.trim().is_empty() {
                continue;
            }
            let Some((file, label)) = raw.split_once('\t') else {
                problems.push(format!("line {line}: expected filename<TAB>label"));
                continue;
            };
            if file.is_empty() {
                problems.push(format!("line {line}: empty filename"));
                continue;
            }
            if label.is_empty() {
                problems.push(format!("line {line}: empty label for {file}"));
                continue;
            }
            if let Some(first) = seen.insert(file.to_string(), line) {
                problems.push(format!(
                    "line {line}: duplicate filename {file} (first on line {first})"
                ));
                continue;
            }
            entries.push(ManifestEntry {
                filename: file.to_string(),
                label: label.to_string(),
                line,
            });
        }
        if !problems.is_empty() {
            return Err(Error::Data(problems.join("; ")));
        }
        Ok(Self { root, entries })
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&e.filename);
            out.push('\t');
            out.push_str(&e.label);
            out.push('\n');
        }
        out
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Manifest::parse(&text, root)
}
