//! Tab-separated utterance manifests: `id<TAB>phrase<TAB>speaker<TAB>path`.
//!
//! Blank lines and lines starting with `#` are skipped. Relative paths are
//! resolved against the manifest's directory. Paths must end in `.wav` or
//! `.kwsf`.

use std::path::{Path, PathBuf};

use super::Utterance;
use crate::error::{Error, Result};
use crate::frontend::{extract_features, read_features, read_wav};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    Wav,
    Features,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub line: usize,
    pub id: String,
    pub phrase: String,
    pub speaker: String,
    pub path: PathBuf,
    pub kind: SourceKind,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    base_dir: PathBuf,
    source_name: String,
}

fn parse_err(source: &str, line: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        module: "dataset",
        source_name: source.to_string(),
        line,
        detail: detail.into(),
    }
}

impl Manifest {
    /// Parses manifest text without touching the filesystem.
    pub fn parse(text: &str, base_dir: &Path, source_name: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = trimmed.split('\t').collect();
            if cols.len() != 4 {
                return Err(parse_err(
                    source_name,
                    line,
                    format!("expected 4 tab-separated columns (id, phrase, speaker, path), found {}", cols.len()),
                ));
            }
            let [id, phrase, speaker, path] = [cols[0], cols[1], cols[2], cols[3]].map(str::trim);
            for (name, v) in [("id", id), ("phrase", phrase), ("speaker", speaker), ("path", path)] {
                if v.is_empty() {
                    return Err(parse_err(source_name, line, format!("empty {name} column")));
                }
            }
            let kind = match Path::new(path).extension().and_then(|e| e.to_str()) {
                Some(e) if e.eq_ignore_ascii_case("wav") => SourceKind::Wav,
                Some(e) if e.eq_ignore_ascii_case("kwsf") => SourceKind::Features,
                _ => {
                    return Err(parse_err(
                        source_name,
                        line,
                        format!("unknown feature file type for '{path}' (need .wav or .kwsf)"),
                    ))
                }
            };
            entries.push(ManifestEntry {
                line,
                id: id.to_string(),
                phrase: phrase.to_string(),
                speaker: speaker.to_string(),
                path: PathBuf::from(path),
                kind,
            });
        }
        Ok(Self {
            entries,
            base_dir: base_dir.to_path_buf(),
            source_name: source_name.to_string(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base, &path.display().to_string())
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    /// Loads one entry on demand.
    pub fn load_entry(&self, entry: &ManifestEntry) -> Result<Utterance> {
        let path = self.resolve(entry);
        if !path.exists() {
            return Err(parse_err(
                &self.source_name,
                entry.line,
                format!("referenced file {} does not exist", path.display()),
            ));
        }
        let (features, audio) = match entry.kind {
            SourceKind::Features => (read_features(&path)?, None),
            SourceKind::Wav => {
                let clip = read_wav(&path)?;
                (extract_features(&clip)?, Some(clip))
            }
        };
        Ok(Utterance {
            id: entry.id.clone(),
            phrase: entry.phrase.clone(),
            speaker: entry.speaker.clone(),
            features,
            audio,
        })
    }

    pub fn load_all(&self) -> Result<Vec<Utterance>> {
        self.entries.iter().map(|e| self.load_entry(e)).collect()
    }
}

/// Reads a manifest and eagerly loads every utterance.
pub fn load_manifest(path: &Path) -> Result<Vec<Utterance>> {
    Manifest::read(path)?.load_all()
}

/// Renders manifest lines for `(id, phrase, speaker, path)` records.
pub fn format_manifest<'a>(rows: impl IntoIterator<Item = (&'a str, &'a str, &'a str, &'a str)>) -> String {
    let mut out = String::from("# id\tphrase\tspeaker\tpath\n");
    for (id, phrase, speaker, path) in rows {
        out.push_str(&format!("{id}\t{phrase}\t{speaker}\t{path}\n"));
    }
    out
}
