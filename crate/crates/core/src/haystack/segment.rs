//! Splitting a source file into functions or independent logic units.
//!
//! Units always partition the file: concatenating them restores the input
//! byte-exactly, and no unit ever splits a line. Boundary detection is
//! heuristic — brace balance for brace-delimited languages, top-level
//! `def`/`class` starts for indentation languages, blank-line groups
//! otherwise. Occasional imperfect boundaries are tolerated; the partition
//! property is not.

use crate::corpus::Language;

use super::{CodeUnit, UnitOrigin};

fn is_blank(line: &str) -> bool {
    line.trim().is_empty()
}

/// Merges whitespace-only segments into the following segment (or the
/// previous one for a trailing run), preserving concatenation order.
fn merge_whitespace_segments(segments: Vec<String>) -> Vec<String> {
    let mut merged: Vec<String> = Vec::with_capacity(segments.len());
    let mut pending = String::new();
    for segment in segments {
        if segment.trim().is_empty() {
            pending.push_str(&segment);
        } else {
            pending.push_str(&segment);
            merged.push(std::mem::take(&mut pending));
        }
    }
    if !pending.is_empty() {
        match merged.last_mut() {
            Some(last) => last.push_str(&pending),
            None => merged.push(pending),
        }
    }
    merged
}

/// Brace-delimited languages: a unit ends when the brace depth returns to
/// zero on a line that closed a block. Lines before the first block form
/// their own preamble unit, split at blank lines.
fn brace_segments(file: &str) -> Vec<String> {
    let mut segments = Vec::new();
    let mut current = String::new();
    let mut depth: i64 = 0;
    let mut saw_block = false;

    for line in file.split_inclusive('\n') {
        // Flush a preamble group (imports, constants) at blank lines.
        if depth == 0 && !saw_block && is_blank(line) && !current.trim().is_empty() {
            segments.push(std::mem::take(&mut current));
        }
        current.push_str(line);
        let opens = line.matches('{').count() as i64;
        let closes = line.matches('}').count() as i64;
        if opens > 0 {
            saw_block = true;
        }
        depth += opens - closes;
        if depth < 0 {
            depth = 0;
        }
        if depth == 0 && saw_block && closes > 0 {
            segments.push(std::mem::take(&mut current));
            saw_block = false;
        }
    }
    if !current.is_empty() {
        segments.push(current);
    }
    segments
}

fn indent_of(line: &str) -> usize {
    line.chars().take_while(|c| *c == ' ' || *c == '\t').count()
}

fn starts_top_level_block(line: &str) -> bool {
    let t = line.trim_start();
    t.starts_with("def ")
        || t.starts_with("class ")
        || t.starts_with("module ")
        || t.starts_with('@')
        || t.starts_with("async def ")
}

/// Indentation languages: a unit starts at every top-level `def`/`class`
/// (or decorator) line, and at the dedent back to column zero after an
/// indented block.
fn indent_segments(file: &str) -> Vec<String> {
    let mut segments = Vec::new();
    let mut current = String::new();
    let mut prev_nonblank_indent: Option<usize> = None;

    for line in file.split_inclusive('\n') {
        if !is_blank(line) && indent_of(line) == 0 && !current.trim().is_empty() {
            let dedented = prev_nonblank_indent.is_some_and(|i| i > 0);
            if starts_top_level_block(line) || dedented {
                segments.push(std::mem::take(&mut current));
            }
        }
        if !is_blank(line) {
            prev_nonblank_indent = Some(indent_of(line));
        }
        current.push_str(line);
    }
    if !current.is_empty() {
        segments.push(current);
    }
    segments
}

/// Fallback: groups of consecutive non-blank lines, blanks attached to the
/// preceding group.
fn blank_line_segments(file: &str) -> Vec<String> {
    let mut segments = Vec::new();
    let mut current = String::new();
    let mut in_blank_tail = false;

    for line in file.split_inclusive('\n') {
        if is_blank(line) {
            in_blank_tail = !current.is_empty();
            current.push_str(line);
        } else {
            if in_blank_tail {
                segments.push(std::mem::take(&mut current));
                in_blank_tail = false;
            }
            current.push_str(line);
        }
    }
    if !current.is_empty() {
        segments.push(current);
    }
    segments
}

/// Splits `file` into ordered code units. Concatenating the unit texts
/// restores `file` exactly.
pub fn segment_units(file: &str, language: Language) -> Vec<CodeUnit> {
    if file.is_empty() {
        return Vec::new();
    }
    let segments = if language.is_brace_delimited() {
        brace_segments(file)
    } else if matches!(language, Language::Python | Language::Ruby) {
        indent_segments(file)
    } else {
        blank_line_segments(file)
    };
    merge_whitespace_segments(segments)
        .into_iter()
        .map(|text| CodeUnit {
            text,
            origin: UnitOrigin::SameFile,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn concat(units: &[CodeUnit]) -> String {
        units.iter().map(|u| u.text.as_str()).collect()
    }

    #[test]
    fn three_brace_functions_give_three_units() {
        let file = "function a() {\n    one();\n}\n\nfunction b() {\n    two();\n}\n\nfunction c() {\n    three();\n}\n";
        let units = segment_units(file, Language::JavaScript);
        assert_eq!(units.len(), 3);
        assert_eq!(concat(&units), file);
        assert!(units[1].text.contains("two()"));
    }

    #[test]
    fn preamble_is_its_own_unit() {
        let file = "import x;\nimport y;\n\nfunction a() {\n    one();\n}\n";
        let units = segment_units(file, Language::Java);
        assert_eq!(units.len(), 2);
        assert!(units[0].text.starts_with("import x;"));
        assert_eq!(concat(&units), file);
    }

    #[test]
    fn two_python_defs_give_two_units() {
        let file = "def a():\n    return 1\n\ndef b():\n    return 2\n";
        let units = segment_units(file, Language::Python);
        assert_eq!(units.len(), 2);
        assert_eq!(concat(&units), file);
    }

    #[test]
    fn python_dedent_starts_new_unit() {
        let file = "def a():\n    return 1\n\nx = compute()\nprint(x)\n";
        let units = segment_units(file, Language::Python);
        assert_eq!(units.len(), 2);
        assert!(units[1].text.starts_with("x = compute()"));
    }

    #[test]
    fn fallback_groups_by_blank_lines() {
        let file = "<p>one</p>\n<p>two</p>\n\n<div>\nblock\n</div>\n";
        let units = segment_units(file, Language::Html);
        assert_eq!(units.len(), 2);
        assert_eq!(concat(&units), file);
    }

    #[test]
    fn empty_file_has_no_units() {
        assert!(segment_units("", Language::Php).is_empty());
    }

    #[test]
    fn units_never_split_lines() {
        let file = "function a() {\n    x();\n}\nlet tail = 1;\n";
        for unit in segment_units(file, Language::JavaScript) {
            // Every unit except possibly the file tail ends on a line boundary.
            assert!(unit.text.ends_with('\n') || file.ends_with(&unit.text));
        }
    }

    proptest! {
        #[test]
        fn concatenation_restores_file(
            lines in proptest::collection::vec("[ ]{0,4}[a-z{}()+;]{0,12}", 0..40),
            lang_idx in 0usize..4,
        ) {
            let file = lines.join("\n");
            let language = [Language::Php, Language::Python, Language::Html, Language::Go][lang_idx];
            let units = segment_units(&file, language);
            prop_assert_eq!(concat(&units), file);
        }
    }
}
