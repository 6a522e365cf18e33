//! Unified diff parsing, patch application and ground-truth extraction.
//!
//! The parser is forgiving about the noise real tools emit around hunks
//! (`diff --git` lines, `index`/mode lines) but strict about hunk bodies:
//! applying a parsed diff verifies removed and context lines against the
//! pre-patch file and fails on any mismatch. Git rename headers are rejected;
//! a diff must touch exactly one file.

use thiserror::Error;

use crate::corpus::GroundTruth;
use crate::probe::normalize_line;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("malformed diff at line {line_no}: {reason}")]
    MalformedDiff { line_no: usize, reason: String },
    #[error("hunk {hunk} does not match the pre-patch file near line {pre_line}: {reason}")]
    ContextMismatch {
        hunk: usize,
        pre_line: usize,
        reason: String,
    },
    #[error("diff contains no removed lines; nothing to treat as ground truth")]
    EmptyFix,
    #[error("diff touches more than one file")]
    MultipleFiles,
    #[error("diff contains a rename; renames are not supported")]
    RenameUnsupported,
}

/// One `-`/`+`/context line of a hunk, without its line terminator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DiffLine {
    Context(String),
    Removed(String),
    Added(String),
}

/// One `@@ -a,b +c,d @@` hunk. Start positions are 1-based line numbers;
/// a count of 0 marks a pure insertion/deletion anchor.
#[derive(Debug, Clone)]
pub struct Hunk {
    pub old_start: usize,
    pub old_count: usize,
    pub new_start: usize,
    pub new_count: usize,
    pub lines: Vec<DiffLine>,
}

#[derive(Debug, Clone, Default)]
pub struct UnifiedDiff {
    pub old_path: Option<String>,
    pub new_path: Option<String>,
    pub hunks: Vec<Hunk>,
    /// Set when the diff marks the old/new file as missing its final newline.
    pub old_missing_newline: bool,
    pub new_missing_newline: bool,
}

fn parse_hunk_header(line: &str, line_no: usize) -> Result<(usize, usize, usize, usize), DiffError> {
    let malformed = |reason: &str| DiffError::MalformedDiff {
        line_no,
        reason: reason.to_string(),
    };
    let body = line
        .strip_prefix("@@ -")
        .ok_or_else(|| malformed("expected '@@ -'"))?;
    let end = body.find(" @@").ok_or_else(|| malformed("missing closing ' @@'"))?;
    let (old_part, new_part) = body[..end]
        .split_once(" +")
        .ok_or_else(|| malformed("missing ' +' separator"))?;
    let parse_range = |part: &str| -> Result<(usize, usize), DiffError> {
        let (start, count) = match part.split_once(',') {
            Some((s, c)) => (s, c),
            None => (part, "1"),
        };
        Ok((
            start
                .parse()
                .map_err(|_| malformed("non-numeric line number"))?,
            count
                .parse()
                .map_err(|_| malformed("non-numeric line count"))?,
        ))
    };
    let (old_start, old_count) = parse_range(old_part)?;
    let (new_start, new_count) = parse_range(new_part)?;
    Ok((old_start, old_count, new_start, new_count))
}

/// Parses a unified diff. Rejects multi-file diffs and renames.
pub fn parse(diff: &str) -> Result<UnifiedDiff, DiffError> {
    let mut parsed = UnifiedDiff::default();
    let mut current: Option<Hunk> = None;
    let mut file_sections = 0usize;
    // Which side the most recent hunk line belonged to, for attributing a
    // following "\ No newline at end of file" marker.
    let mut last_side: Option<char> = None;

    for (idx, line) in diff.lines().enumerate() {
        let line_no = idx + 1;
        if line.starts_with("rename from") || line.starts_with("rename to") {
            return Err(DiffError::RenameUnsupported);
        }
        if let Some(rest) = line.strip_prefix("--- ") {
            if current.is_some() || file_sections > 0 {
                return Err(DiffError::MultipleFiles);
            }
            file_sections += 1;
            parsed.old_path = Some(rest.trim().to_string());
            continue;
        }
        if let Some(rest) = line.strip_prefix("+++ ") {
            parsed.new_path = Some(rest.trim().to_string());
            continue;
        }
        if line.starts_with("@@") {
            if let Some(hunk) = current.take() {
                parsed.hunks.push(hunk);
            }
            let (old_start, old_count, new_start, new_count) = parse_hunk_header(line, line_no)?;
            current = Some(Hunk {
                old_start,
                old_count,
                new_start,
                new_count,
                lines: Vec::new(),
            });
            last_side = None;
            continue;
        }
        if let Some(hunk) = current.as_mut() {
            if let Some(rest) = line.strip_prefix('-') {
                hunk.lines.push(DiffLine::Removed(rest.to_string()));
                last_side = Some('-');
            } else if let Some(rest) = line.strip_prefix('+') {
                hunk.lines.push(DiffLine::Added(rest.to_string()));
                last_side = Some('+');
            } else if let Some(rest) = line.strip_prefix(' ') {
                hunk.lines.push(DiffLine::Context(rest.to_string()));
                last_side = Some(' ');
            } else if line.starts_with('\\') {
                match last_side {
                    Some('-') => parsed.old_missing_newline = true,
                    Some('+') => parsed.new_missing_newline = true,
                    Some(' ') => {
                        parsed.old_missing_newline = true;
                        parsed.new_missing_newline = true;
                    }
                    _ => {
                        return Err(DiffError::MalformedDiff {
                            line_no,
                            reason: "newline marker outside hunk body".to_string(),
                        })
                    }
                }
            } else if line.is_empty() {
                // Some tools strip the single space of an empty context line.
                hunk.lines.push(DiffLine::Context(String::new()));
                last_side = Some(' ');
            } else {
                // A new file header or junk inside a hunk.
                if line.starts_with("diff ") || line.starts_with("index ") {
                    return Err(DiffError::MultipleFiles);
                }
                return Err(DiffError::MalformedDiff {
                    line_no,
                    reason: format!("unexpected hunk line: {line:.40}"),
                });
            }
            continue;
        }
        // Outside any hunk: tolerate git preamble noise before the first hunk.
    }
    if let Some(hunk) = current.take() {
        parsed.hunks.push(hunk);
    }
    if parsed.hunks.is_empty() {
        return Err(DiffError::MalformedDiff {
            line_no: 0,
            reason: "no hunks found".to_string(),
        });
    }
    // Sanity-check declared counts against the hunk bodies.
    for (i, hunk) in parsed.hunks.iter().enumerate() {
        let old = hunk
            .lines
            .iter()
            .filter(|l| matches!(l, DiffLine::Context(_) | DiffLine::Removed(_)))
            .count();
        let new = hunk
            .lines
            .iter()
            .filter(|l| matches!(l, DiffLine::Context(_) | DiffLine::Added(_)))
            .count();
        if old != hunk.old_count || new != hunk.new_count {
            return Err(DiffError::MalformedDiff {
                line_no: 0,
                reason: format!(
                    "hunk {} declares -{},{} +{},{} but contains {}/{} lines",
                    i + 1,
                    hunk.old_start,
                    hunk.old_count,
                    hunk.new_start,
                    hunk.new_count,
                    old,
                    new
                ),
            });
        }
    }
    Ok(parsed)
}

/// Splits a file into lines without terminators, remembering whether the
/// file ends with a newline.
fn split_lines(text: &str) -> (Vec<&str>, bool) {
    if text.is_empty() {
        return (Vec::new(), false);
    }
    let ends_with_newline = text.ends_with('\n');
    let mut lines: Vec<&str> = text.split('\n').collect();
    if ends_with_newline {
        lines.pop();
    }
    (lines, ends_with_newline)
}

/// Applies `diff` to `pre`, returning the patched file. Every context and
/// removed line is verified against `pre`; any mismatch is a
/// [`DiffError::ContextMismatch`].
pub fn apply(diff: &UnifiedDiff, pre: &str) -> Result<String, DiffError> {
    let (old_lines, old_ends_newline) = split_lines(pre);
    let mut out: Vec<&str> = Vec::with_capacity(old_lines.len());
    let mut cursor = 0usize; // index into old_lines

    for (hunk_idx, hunk) in diff.hunks.iter().enumerate() {
        // old_start is 1-based; a count of 0 anchors the hunk *after* that line.
        let hunk_old_begin = if hunk.old_count == 0 {
            hunk.old_start
        } else {
            hunk.old_start.saturating_sub(1)
        };
        if hunk_old_begin < cursor {
            return Err(DiffError::ContextMismatch {
                hunk: hunk_idx + 1,
                pre_line: hunk.old_start,
                reason: "hunks overlap or are out of order".to_string(),
            });
        }
        if hunk_old_begin > old_lines.len() {
            return Err(DiffError::ContextMismatch {
                hunk: hunk_idx + 1,
                pre_line: hunk.old_start,
                reason: "hunk starts beyond end of file".to_string(),
            });
        }
        out.extend_from_slice(&old_lines[cursor..hunk_old_begin]);
        cursor = hunk_old_begin;

        for line in &hunk.lines {
            match line {
                DiffLine::Context(text) | DiffLine::Removed(text) => {
                    let actual = old_lines.get(cursor).copied().ok_or_else(|| {
                        DiffError::ContextMismatch {
                            hunk: hunk_idx + 1,
                            pre_line: cursor + 1,
                            reason: "hunk extends beyond end of file".to_string(),
                        }
                    })?;
                    if actual != text {
                        return Err(DiffError::ContextMismatch {
                            hunk: hunk_idx + 1,
                            pre_line: cursor + 1,
                            reason: format!("expected {text:?}, found {actual:?}"),
                        });
                    }
                    if matches!(line, DiffLine::Context(_)) {
                        out.push(actual);
                    }
                    cursor += 1;
                }
                DiffLine::Added(text) => out.push(text.as_str()),
            }
        }
    }
    out.extend_from_slice(&old_lines[cursor..]);

    let mut result = out.join("\n");
    // Preserve the pre-file ending unless a newline marker says otherwise.
    let ends_newline = if diff.new_missing_newline {
        false
    } else if diff.old_missing_newline {
        true
    } else {
        old_ends_newline
    };
    if ends_newline && !result.is_empty() {
        result.push('\n');
    }
    Ok(result)
}

/// Extracts the ground truth from a parsed diff: the set of normalized
/// removed lines, plus the character offset of the earliest removed line in
/// the pre-patch file.
pub fn ground_truth(diff: &UnifiedDiff, pre: &str) -> Result<GroundTruth, DiffError> {
    let (old_lines, _) = split_lines(pre);
    let mut removed_lines = std::collections::BTreeSet::new();
    let mut first_removed_line_idx: Option<usize> = None;

    for (hunk_idx, hunk) in diff.hunks.iter().enumerate() {
        let mut old_idx = hunk.old_start.saturating_sub(1);
        for line in &hunk.lines {
            match line {
                DiffLine::Removed(text) => {
                    let actual = old_lines.get(old_idx).copied().unwrap_or_default();
                    if actual != text {
                        return Err(DiffError::ContextMismatch {
                            hunk: hunk_idx + 1,
                            pre_line: old_idx + 1,
                            reason: format!("expected {text:?}, found {actual:?}"),
                        });
                    }
                    removed_lines.insert(normalize_line(text));
                    first_removed_line_idx.get_or_insert(old_idx);
                    old_idx += 1;
                }
                DiffLine::Context(_) => old_idx += 1,
                DiffLine::Added(_) => {}
            }
        }
    }

    let first_idx = first_removed_line_idx.ok_or(DiffError::EmptyFix)?;
    // Character offset of the line start: lengths of all preceding lines plus
    // their newline separators.
    let first_changed_offset: usize = old_lines[..first_idx]
        .iter()
        .map(|l| l.chars().count() + 1)
        .sum();
    Ok(GroundTruth {
        removed_lines,
        first_changed_offset,
    })
}

/// Parses and applies in one step; used by ingestion validation.
pub fn apply_text(diff_text: &str, pre: &str) -> Result<String, DiffError> {
    apply(&parse(diff_text)?, pre)
}

#[cfg(test)]
mod tests {
    use super::*;

    const PRE: &str = "<?php\nfunction handler($req) {\n    $q = $req->get('q');\n    eval($_GET['q']);\n    return render($q);\n}\n";

    const DIFF: &str = "--- a/handler.php\n+++ b/handler.php\n@@ -1,6 +1,6 @@\n <?php\n function handler($req) {\n     $q = $req->get('q');\n-    eval($_GET['q']);\n+    // removed dangerous eval\n     return render($q);\n }\n";

    #[test]
    fn single_deletion_roundtrip_and_offset() {
        let parsed = parse(DIFF).unwrap();
        let post = apply(&parsed, PRE).unwrap();
        assert!(post.contains("// removed dangerous eval"));
        assert!(!post.contains("eval($_GET"));

        let truth = ground_truth(&parsed, PRE).unwrap();
        assert_eq!(truth.removed_lines.len(), 1);
        assert!(truth.removed_lines.contains("eval($_GET['q']);"));
        // Offset of the removed line: chars of the three preceding lines
        // plus one newline each.
        let expected: usize = ["<?php", "function handler($req) {", "    $q = $req->get('q');"]
            .iter()
            .map(|l| l.chars().count() + 1)
            .sum();
        assert_eq!(truth.first_changed_offset, expected);
    }

    #[test]
    fn additions_only_is_empty_fix() {
        let diff = "--- a/x\n+++ b/x\n@@ -1,1 +1,2 @@\n <?php\n+echo 'hardening';\n";
        let parsed = parse(diff).unwrap();
        assert!(matches!(
            ground_truth(&parsed, "<?php\n"),
            Err(DiffError::EmptyFix)
        ));
    }

    #[test]
    fn mismatched_context_is_rejected() {
        let parsed = parse(DIFF).unwrap();
        let wrong_pre = PRE.replace("render", "emit");
        assert!(matches!(
            apply(&parsed, &wrong_pre),
            Err(DiffError::ContextMismatch { .. })
        ));
    }

    #[test]
    fn bad_hunk_header_is_malformed() {
        let diff = "--- a/x\n+++ b/x\n@@ -x,1 +1,1 @@\n-a\n+b\n";
        assert!(matches!(parse(diff), Err(DiffError::MalformedDiff { .. })));
    }

    #[test]
    fn renames_are_rejected() {
        let diff = "diff --git a/old.php b/new.php\nrename from old.php\nrename to new.php\n";
        assert!(matches!(parse(diff), Err(DiffError::RenameUnsupported)));
    }

    #[test]
    fn multi_file_diffs_are_rejected() {
        let diff = "--- a/x\n+++ b/x\n@@ -1,1 +1,1 @@\n-a\n+b\n--- a/y\n+++ b/y\n@@ -1,1 +1,1 @@\n-c\n+d\n";
        assert!(matches!(parse(diff), Err(DiffError::MultipleFiles)));
    }

    #[test]
    fn missing_final_newline_marker() {
        let pre = "a\nb";
        let diff = "--- a/x\n+++ b/x\n@@ -1,2 +1,2 @@\n a\n-b\n\\ No newline at end of file\n+c\n\\ No newline at end of file\n";
        let parsed = parse(diff).unwrap();
        assert_eq!(apply(&parsed, pre).unwrap(), "a\nc");
    }

    #[test]
    fn git_preamble_is_tolerated() {
        let diff = format!(
            "diff --git a/handler.php b/handler.php\nindex abc123..def456 100644\n{DIFF}"
        );
        assert!(parse(&diff).is_ok());
    }
}
