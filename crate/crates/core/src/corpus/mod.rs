//! Corpus of vulnerability records: one pre-patch file, its patched
//! counterpart, and the unified diff between them, grouped by CWE type.
//!
//! Ingestion validates every record (the diff must reproduce the post-patch
//! file byte-exactly and touch a single code file), derives the patch ground
//! truth, and persists entries as one JSONL file per CWE.

pub mod diff;
mod store;

pub use store::{read_triple_dir, CorpusStore, TripleLayoutError};

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::haystack;

/// CWE identifier, rendered canonically as `CWE-<id>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CweId(u32);

impl CweId {
    pub fn new(id: u32) -> Result<Self, CorpusError> {
        if id == 0 {
            return Err(CorpusError::ValidationFailure {
                reason: "CWE id must be positive".to_string(),
            });
        }
        Ok(CweId(id))
    }

    pub fn get(self) -> u32 {
        self.0
    }

    /// Human label for the three CWE types the experiments focus on; falls
    /// back to the canonical id form for anything else.
    pub fn label(self) -> String {
        match self.0 {
            22 => "Path Traversal".to_string(),
            79 => "Cross-site Scripting".to_string(),
            89 => "SQL Injection".to_string(),
            _ => self.to_string(),
        }
    }
}

impl fmt::Display for CweId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CWE-{}", self.0)
    }
}

impl std::str::FromStr for CweId {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s
            .trim()
            .trim_start_matches("CWE-")
            .trim_start_matches("cwe-");
        let id: u32 = digits.parse().map_err(|_| CorpusError::ValidationFailure {
            reason: format!("cannot parse CWE id from {s:?}"),
        })?;
        CweId::new(id)
    }
}

/// Source language of a record, detected from the file extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Language {
    Php,
    TypeScript,
    JavaScript,
    Html,
    Java,
    Go,
    Python,
    Ruby,
    C,
    Other,
}

impl Language {
    pub fn from_extension(ext: &str) -> Language {
        match ext.trim_start_matches('.').to_ascii_lowercase().as_str() {
            "php" | "php5" | "phtml" => Language::Php,
            "ts" | "tsx" => Language::TypeScript,
            "js" | "jsx" | "mjs" | "cjs" => Language::JavaScript,
            "html" | "htm" => Language::Html,
            "java" => Language::Java,
            "go" => Language::Go,
            "py" => Language::Python,
            "rb" => Language::Ruby,
            "c" | "h" => Language::C,
            _ => Language::Other,
        }
    }

    /// Representative extension, used when materializing files on disk.
    pub fn extension(self) -> &'static str {
        match self {
            Language::Php => "php",
            Language::TypeScript => "ts",
            Language::JavaScript => "js",
            Language::Html => "html",
            Language::Java => "java",
            Language::Go => "go",
            Language::Python => "py",
            Language::Ruby => "rb",
            Language::C => "c",
            Language::Other => "txt",
        }
    }

    /// Whether code blocks are delimited by braces (as opposed to
    /// indentation or markup).
    pub fn is_brace_delimited(self) -> bool {
        matches!(
            self,
            Language::Php
                | Language::TypeScript
                | Language::JavaScript
                | Language::Java
                | Language::Go
                | Language::C
        )
    }
}

/// One CVE instance: the vulnerable file, its patched version, and the fix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VulnRecord {
    pub record_id: String,
    pub cwe: CweId,
    pub language: Language,
    pub pre_file: String,
    pub post_file: String,
    pub diff: String,
    pub source_ref: String,
}

impl VulnRecord {
    /// Checks the record invariants: pre and post differ, and applying the
    /// diff to the pre-patch file reproduces the post-patch file byte-exactly.
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.record_id.trim().is_empty() {
            return Err(CorpusError::ValidationFailure {
                reason: "record_id is empty".to_string(),
            });
        }
        if self.pre_file == self.post_file {
            return Err(CorpusError::ValidationFailure {
                reason: "pre-patch and post-patch files are identical".to_string(),
            });
        }
        let reconstructed = diff::apply_text(&self.diff, &self.pre_file)
            .map_err(|e| CorpusError::ValidationFailure {
                reason: format!("diff does not apply: {e}"),
            })?;
        if reconstructed != self.post_file {
            return Err(CorpusError::ValidationFailure {
                reason: "applying the diff to pre_file does not reproduce post_file".to_string(),
            });
        }
        Ok(())
    }

    /// Size of the vulnerable file in characters.
    pub fn pre_size(&self) -> usize {
        self.pre_file.chars().count()
    }
}

/// Pre-patch lines changed by the fix, in normalized form, plus the
/// character offset of the earliest changed line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub removed_lines: BTreeSet<String>,
    pub first_changed_offset: usize,
}

/// A validated record together with its derived ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub record: VulnRecord,
    pub truth: GroundTruth,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("duplicate record: {reason}")]
    DuplicateRecord { reason: String },
    #[error("record failed validation: {reason}")]
    ValidationFailure { reason: String },
    #[error(transparent)]
    Diff(#[from] diff::DiffError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt corpus file {path}: {reason}")]
    CorruptStore { path: String, reason: String },
}

fn content_key(record: &VulnRecord) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(record.pre_file.as_bytes());
    hasher.update([0]);
    hasher.update(record.diff.as_bytes());
    hasher.finalize().into()
}

/// Derives the ground truth for a record, enforcing that every removed line
/// is locatable in the pre-patch file and that the offset is in range.
pub fn parse_unified_diff(diff_text: &str, pre_file: &str) -> Result<GroundTruth, diff::DiffError> {
    let parsed = diff::parse(diff_text)?;
    let truth = diff::ground_truth(&parsed, pre_file)?;
    debug_assert!(truth.first_changed_offset < pre_file.chars().count().max(1));
    Ok(truth)
}

/// In-memory corpus, keyed by record id and indexed by CWE.
#[derive(Debug, Default)]
pub struct Corpus {
    entries: BTreeMap<String, CorpusEntry>,
    by_cwe: BTreeMap<CweId, Vec<String>>,
    content_keys: HashSet<[u8; 32]>,
}

impl Corpus {
    pub fn new() -> Self {
        Corpus::default()
    }

    /// Validates and stores a record, returning its entry id. Re-ingesting an
    /// identical record (same pre-file and diff, or same record id) is
    /// rejected as a duplicate and leaves the corpus unchanged.
    pub fn ingest(&mut self, record: VulnRecord) -> Result<String, CorpusError> {
        record.validate()?;
        if self.entries.contains_key(&record.record_id) {
            return Err(CorpusError::DuplicateRecord {
                reason: format!("record id {:?} already ingested", record.record_id),
            });
        }
        let key = content_key(&record);
        if self.content_keys.contains(&key) {
            return Err(CorpusError::DuplicateRecord {
                reason: "identical (pre_file, diff) pair already ingested".to_string(),
            });
        }
        let truth = parse_unified_diff(&record.diff, &record.pre_file)?;
        if truth.removed_lines.is_empty() {
            return Err(CorpusError::ValidationFailure {
                reason: "fix removes no lines".to_string(),
            });
        }
        let entry_id = record.record_id.clone();
        self.by_cwe
            .entry(record.cwe)
            .or_default()
            .push(entry_id.clone());
        self.content_keys.insert(key);
        self.entries
            .insert(entry_id.clone(), CorpusEntry { record, truth });
        Ok(entry_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, record_id: &str) -> Option<&CorpusEntry> {
        self.entries.get(record_id)
    }

    pub fn cwes(&self) -> impl Iterator<Item = CweId> + '_ {
        self.by_cwe.keys().copied()
    }

    /// Entries of one CWE, in record-id order.
    pub fn records_for(&self, cwe: CweId) -> Vec<&CorpusEntry> {
        let mut ids: Vec<&String> = self
            .by_cwe
            .get(&cwe)
            .map(|v| v.iter().collect())
            .unwrap_or_default();
        ids.sort();
        ids.iter().map(|id| &self.entries[id.as_str()]).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &CorpusEntry> {
        self.entries.values()
    }

    /// CWE ids whose record count reaches `min_records_per_cwe`, ordered by
    /// count descending (ties by ascending id). An empty result is valid.
    pub fn filter_by_min_records(&self, min_records_per_cwe: usize) -> Vec<CweId> {
        let mut counts: Vec<(CweId, usize)> = self
            .by_cwe
            .iter()
            .map(|(cwe, ids)| (*cwe, ids.len()))
            .filter(|(_, n)| *n >= min_records_per_cwe)
            .collect();
        counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        counts.into_iter().map(|(cwe, _)| cwe).collect()
    }

    /// Per-CWE size statistics over character counts. Function sizes are
    /// measured over the code units of each file.
    pub fn stats(&self) -> CorpusStats {
        let mut per_cwe = Vec::new();
        for (&cwe, ids) in &self.by_cwe {
            let mut file_sizes: Vec<f64> = Vec::with_capacity(ids.len());
            let mut unit_sizes: Vec<f64> = Vec::new();
            for id in ids {
                let entry = &self.entries[id.as_str()];
                file_sizes.push(entry.record.pre_size() as f64);
                for unit in haystack::segment_units(&entry.record.pre_file, entry.record.language)
                {
                    unit_sizes.push(unit.size() as f64);
                }
            }
            file_sizes.sort_by(f64::total_cmp);
            unit_sizes.sort_by(f64::total_cmp);
            per_cwe.push(CweStats {
                cwe,
                file_count: file_sizes.len(),
                median_file_size: quantile(&file_sizes, 0.5),
                median_function_size: quantile(&unit_sizes, 0.5),
                file_size_quartiles: (quantile(&file_sizes, 0.25), quantile(&file_sizes, 0.75)),
            });
        }
        CorpusStats { per_cwe }
    }

    /// The `count` records of a CWE whose file sizes sit around the median,
    /// used to pick base records for synthesis experiments. Deterministic.
    pub fn median_sized_records(&self, cwe: CweId, count: usize) -> Vec<&CorpusEntry> {
        let mut entries = self.records_for(cwe);
        entries.sort_by_key(|e| (e.record.pre_size(), e.record.record_id.clone()));
        if entries.len() <= count {
            return entries;
        }
        let mid = entries.len() / 2;
        let half = count / 2;
        let start = mid.saturating_sub(half).min(entries.len() - count);
        entries[start..start + count].to_vec()
    }
}

/// Quantile by linear interpolation between order statistics (the common
/// "type 7" rule). `sorted` must be ascending and non-empty.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Per-CWE descriptive statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CweStats {
    pub cwe: CweId,
    pub file_count: usize,
    pub median_file_size: f64,
    pub median_function_size: f64,
    /// (lower, upper) file-size quartiles.
    pub file_size_quartiles: (f64, f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusStats {
    pub per_cwe: Vec<CweStats>,
}

impl CorpusStats {
    pub fn get(&self, cwe: CweId) -> Option<&CweStats> {
        self.per_cwe.iter().find(|s| s.cwe == cwe)
    }
}

/// Lookup from record id to entry, for scoring paths that only carry ids.
pub fn truth_index(corpus: &Corpus) -> HashMap<&str, &GroundTruth> {
    corpus
        .iter()
        .map(|e| (e.record.record_id.as_str(), &e.truth))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn php_record(id: &str, sink: &str) -> VulnRecord {
        let pre = format!(
            "<?php\nfunction handler($req) {{\n    $q = $req->get('q');\n    {sink}\n    return render($q);\n}}\n"
        );
        let post = pre.replace(sink, "// sanitized");
        let diff = format!(
            "--- a/h.php\n+++ b/h.php\n@@ -1,6 +1,6 @@\n <?php\n function handler($req) {{\n     $q = $req->get('q');\n-    {sink}\n+    // sanitized\n     return render($q);\n }}\n"
        );
        VulnRecord {
            record_id: id.to_string(),
            cwe: CweId::new(79).unwrap(),
            language: Language::Php,
            pre_file: pre,
            post_file: post,
            diff,
            source_ref: "test".to_string(),
        }
    }

    #[test]
    fn cwe_id_rendering_and_parsing() {
        let cwe: CweId = "CWE-79".parse().unwrap();
        assert_eq!(cwe.get(), 79);
        assert_eq!(cwe.to_string(), "CWE-79");
        assert!("CWE-0".parse::<CweId>().is_err());
        assert_eq!("22".parse::<CweId>().unwrap().get(), 22);
    }

    #[test]
    fn ingest_accepts_valid_record() {
        let mut corpus = Corpus::new();
        let id = corpus.ingest(php_record("r1", "echo $q;")).unwrap();
        assert_eq!(id, "r1");
        assert_eq!(corpus.len(), 1);
        let entry = corpus.get("r1").unwrap();
        assert!(entry.truth.removed_lines.contains("echo $q;"));
    }

    #[test]
    fn ingest_rejects_duplicates_and_leaves_corpus_unchanged() {
        let mut corpus = Corpus::new();
        corpus.ingest(php_record("r1", "echo $q;")).unwrap();
        let err = corpus.ingest(php_record("r1", "echo $q;")).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateRecord { .. }));
        // Same content under a different id is also a duplicate.
        let err = corpus.ingest(php_record("r2", "echo $q;")).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateRecord { .. }));
        assert_eq!(corpus.len(), 1);
    }

    #[test]
    fn ingest_rejects_broken_roundtrip() {
        let mut corpus = Corpus::new();
        let mut record = php_record("r1", "echo $q;");
        record.post_file.push_str("trailing garbage\n");
        let err = corpus.ingest(record).unwrap_err();
        assert!(matches!(err, CorpusError::ValidationFailure { .. }));
    }

    #[test]
    fn filter_by_min_records_matches_dataset_shape() {
        let mut corpus = Corpus::new();
        let populations = [(79u32, 543usize), (89, 146), (22, 105)];
        for (cwe, n) in populations {
            for i in 0..n {
                let mut record = php_record(&format!("cwe{cwe}-{i}"), &format!("echo $q{i};"));
                record.cwe = CweId::new(cwe).unwrap();
                corpus.ingest(record).unwrap();
            }
        }
        let kept = corpus.filter_by_min_records(100);
        assert_eq!(
            kept.iter().map(|c| c.get()).collect::<Vec<_>>(),
            vec![79, 89, 22]
        );
        let kept = corpus.filter_by_min_records(200);
        assert_eq!(kept.iter().map(|c| c.get()).collect::<Vec<_>>(), vec![79]);
        assert!(Corpus::new().filter_by_min_records(1).is_empty());
    }

    #[test]
    fn filter_is_monotone_in_threshold() {
        let mut corpus = Corpus::new();
        for (cwe, n) in [(22u32, 4usize), (79, 7), (89, 2)] {
            for i in 0..n {
                let mut record = php_record(&format!("m{cwe}-{i}"), &format!("echo $m{i};"));
                record.cwe = CweId::new(cwe).unwrap();
                corpus.ingest(record).unwrap();
            }
        }
        for t1 in 0..10usize {
            for t2 in t1..10usize {
                let wide: BTreeSet<_> = corpus.filter_by_min_records(t1).into_iter().collect();
                let narrow: BTreeSet<_> = corpus.filter_by_min_records(t2).into_iter().collect();
                assert!(narrow.is_subset(&wide));
            }
        }
    }

    #[test]
    fn quantile_linear_interpolation() {
        let data: Vec<f64> = (1..=8).map(|v| v as f64).collect();
        assert!((quantile(&data, 0.25) - 2.75).abs() < 1e-12);
        assert!((quantile(&data, 0.75) - 6.25).abs() < 1e-12);
        assert!((quantile(&[4.0, 6.0, 8.0], 0.5) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn median_of_three_sizes() {
        // sizes [4, 8, 6] -> sorted [4, 6, 8] -> median 6
        let mut sizes = [4.0, 8.0, 6.0];
        sizes.sort_by(f64::total_cmp);
        assert_eq!(quantile(&sizes, 0.5), 6.0);
    }

    #[test]
    fn stats_reports_median_file_size() {
        let mut corpus = Corpus::new();
        // Odd number of files with known sizes; median is the middle one.
        let mut sizes = Vec::new();
        for i in 0..5 {
            let record = php_record(&format!("s{i}"), &format!("echo $q{i};"));
            sizes.push(record.pre_size() as f64);
            let mut r = record;
            r.cwe = CweId::new(22).unwrap();
            corpus.ingest(r).unwrap();
        }
        sizes.sort_by(f64::total_cmp);
        let stats = corpus.stats();
        let cwe22 = stats.get(CweId::new(22).unwrap()).unwrap();
        assert_eq!(cwe22.file_count, 5);
        assert!((cwe22.median_file_size - sizes[2]).abs() < 1e-12);
        let (lo, hi) = cwe22.file_size_quartiles;
        assert!(lo <= cwe22.median_file_size && cwe22.median_file_size <= hi);
    }
}
