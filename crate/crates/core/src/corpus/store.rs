//! On-disk corpus layout.
//!
//! Input triples arrive as one directory per record holding `pre.<ext>`,
//! `post.<ext>`, `fix.diff` and `meta.json`. The persisted corpus is one
//! JSONL file per CWE (`<corpus>/CWE-79.jsonl`), one entry per line with the
//! file bodies embedded as strings, so it stays appendable and diffable.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use super::{Corpus, CorpusEntry, CorpusError, CweId, Language, VulnRecord};

#[derive(Debug, Error)]
pub enum TripleLayoutError {
    #[error("triple directory {dir}: {reason}")]
    Layout { dir: String, reason: String },
    #[error("triple directory {dir}: invalid meta.json: {reason}")]
    Meta { dir: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Deserialize)]
struct TripleMeta {
    record_id: String,
    cwe: serde_json::Value,
    #[serde(default)]
    source_ref: Option<String>,
    // A `language` field may be present; the extension of pre.<ext> is
    // authoritative, so it is accepted and ignored.
    #[serde(default)]
    #[allow(dead_code)]
    language: Option<String>,
}

fn parse_cwe(value: &serde_json::Value) -> Option<CweId> {
    match value {
        serde_json::Value::Number(n) => CweId::new(n.as_u64()? as u32).ok(),
        serde_json::Value::String(s) => s.parse().ok(),
        _ => None,
    }
}

/// Reads one record directory (`pre.<ext>`, `post.<ext>`, `fix.diff`,
/// `meta.json`). The language is detected from the `pre.*` extension.
pub fn read_triple_dir(dir: &Path) -> Result<VulnRecord, TripleLayoutError> {
    let dir_name = dir.display().to_string();
    let layout = |reason: String| TripleLayoutError::Layout {
        dir: dir_name.clone(),
        reason,
    };

    let mut pre_path: Option<PathBuf> = None;
    let mut post_path: Option<PathBuf> = None;
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        match stem {
            "pre" => pre_path = Some(path),
            "post" => post_path = Some(path),
            _ => {}
        }
    }
    let pre_path = pre_path.ok_or_else(|| layout("missing pre.<ext>".to_string()))?;
    let post_path = post_path.ok_or_else(|| layout("missing post.<ext>".to_string()))?;
    let ext = pre_path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or_default();
    let language = Language::from_extension(ext);

    let meta_raw = fs::read_to_string(dir.join("meta.json"))
        .map_err(|_| layout("missing meta.json".to_string()))?;
    let meta: TripleMeta =
        serde_json::from_str(&meta_raw).map_err(|e| TripleLayoutError::Meta {
            dir: dir_name.clone(),
            reason: e.to_string(),
        })?;
    let cwe = parse_cwe(&meta.cwe).ok_or_else(|| TripleLayoutError::Meta {
        dir: dir_name.clone(),
        reason: format!("unusable cwe field: {}", meta.cwe),
    })?;

    Ok(VulnRecord {
        record_id: meta.record_id,
        cwe,
        language,
        pre_file: fs::read_to_string(&pre_path)?,
        post_file: fs::read_to_string(&post_path)?,
        diff: fs::read_to_string(dir.join("fix.diff"))
            .map_err(|_| layout("missing fix.diff".to_string()))?,
        source_ref: meta.source_ref.unwrap_or_default(),
    })
}

/// Corpus directory holding one `CWE-<id>.jsonl` per CWE type.
#[derive(Debug, Clone)]
pub struct CorpusStore {
    root: PathBuf,
}

impl CorpusStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        CorpusStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn cwe_path(&self, cwe: CweId) -> PathBuf {
        self.root.join(format!("{cwe}.jsonl"))
    }

    fn io_err(&self, path: &Path, source: std::io::Error) -> CorpusError {
        CorpusError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Appends one entry to its CWE file, creating the store on first use.
    pub fn append(&self, entry: &CorpusEntry) -> Result<(), CorpusError> {
        fs::create_dir_all(&self.root).map_err(|e| self.io_err(&self.root, e))?;
        let path = self.cwe_path(entry.record.cwe);
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| self.io_err(&path, e))?;
        let line = serde_json::to_string(entry).expect("corpus entry serializes");
        writeln!(file, "{line}").map_err(|e| self.io_err(&path, e))?;
        Ok(())
    }

    /// Rewrites the whole store from an in-memory corpus, one sorted JSONL
    /// file per CWE.
    pub fn save(&self, corpus: &Corpus) -> Result<(), CorpusError> {
        fs::create_dir_all(&self.root).map_err(|e| self.io_err(&self.root, e))?;
        for cwe in corpus.cwes().collect::<Vec<_>>() {
            let path = self.cwe_path(cwe);
            let mut out = String::new();
            for entry in corpus.records_for(cwe) {
                out.push_str(&serde_json::to_string(entry).expect("corpus entry serializes"));
                out.push('\n');
            }
            fs::write(&path, out).map_err(|e| self.io_err(&path, e))?;
        }
        Ok(())
    }

    /// Loads every `CWE-*.jsonl` under the store root. Entries are re-ingested
    /// so all invariants are enforced on load.
    pub fn load(&self) -> Result<Corpus, CorpusError> {
        let mut corpus = Corpus::new();
        let mut paths: Vec<PathBuf> = match fs::read_dir(&self.root) {
            Ok(entries) => entries
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| {
                    p.extension().and_then(|e| e.to_str()) == Some("jsonl")
                        && p.file_name()
                            .and_then(|n| n.to_str())
                            .is_some_and(|n| n.starts_with("CWE-"))
                })
                .collect(),
            Err(e) => return Err(self.io_err(&self.root, e)),
        };
        paths.sort();
        for path in paths {
            let raw = fs::read_to_string(&path).map_err(|e| self.io_err(&path, e))?;
            for (idx, line) in raw.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CorpusEntry =
                    serde_json::from_str(line).map_err(|e| CorpusError::CorruptStore {
                        path: path.display().to_string(),
                        reason: format!("line {}: {e}", idx + 1),
                    })?;
                corpus.ingest(entry.record)?;
            }
        }
        Ok(corpus)
    }
}
