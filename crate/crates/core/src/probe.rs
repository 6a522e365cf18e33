//! Detection probe: prompt rendering, response parsing, line matching and
//! classification metrics.
//!
//! A probe sends one file (or file chunk) to a model and asks for a single
//! structured verdict. The expected response carries three labeled fields:
//! `SE:` (short explanation), `BL:` (the bugged line, or `none`) and
//! `BUG FOUND:` (`YES`/`NO`). Chat models decorate their output with markdown,
//! so parsing is tolerant of backticks, bold markers and label case.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CweId, GroundTruth};

/// Everything needed to instantiate the detection prompt for one file.
#[derive(Debug, Clone)]
pub struct PromptSpec<'a> {
    pub cwe: CweId,
    pub cwe_label: &'a str,
    pub file_content: &'a str,
}

/// Prompt template. The in-context example is a fixed CWE-79 `user_input`
/// snippet and is used for every queried CWE type, so that the only variable
/// parts are the CWE id, its label, and the file content.
const PROMPT_TEMPLATE: &str = "Analyze the file content below and tell me if there's any line that may contain a bug of type CWE-{bug_type_id} ({bug_type_label}). Your output must adhere to the following structure.

Expected Output Structure:
SE: very Short Explanation of why the line may contain a bug of given type (e.g., The 'user_input' is directly concatenated into HTML content without sanitation).
BL: the Bugged Line, if any is found, else none (e.g., `response = \"<html><body><h1>Welcome, \" + user_input + \"!</h1></body></html>\"`).
BUG FOUND: YES if a bug is found, else NO.

Example output:
SE: The 'user_input' is directly concatenated into HTML content without sanitation.
BL: `response = \"<html><body><h1>Welcome, \" + user_input + \"!</h1></body></html>\"`
BUG FOUND: YES

File Content:
{file_content}";

/// Marker line that introduces the file body inside the rendered prompt.
/// Scriptable offline providers use it to recover the probed content.
pub const FILE_CONTENT_HEADER: &str = "File Content:\n";

/// Renders the detection prompt for `spec`. Substitution is literal: braces
/// in the file content are not re-expanded.
pub fn render_prompt(spec: &PromptSpec<'_>) -> String {
    PROMPT_TEMPLATE
        .replacen("{bug_type_id}", &spec.cwe.get().to_string(), 1)
        .replacen("{bug_type_label}", spec.cwe_label, 1)
        .replacen("{file_content}", spec.file_content, 1)
}

/// Number of characters the prompt adds on top of the file content, for a
/// given CWE id and label. Useful for context-window budgeting.
pub fn prompt_overhead(cwe: CweId, cwe_label: &str) -> usize {
    render_prompt(&PromptSpec {
        cwe,
        cwe_label,
        file_content: "",
    })
    .chars()
    .count()
}

/// Yes/no verdict recovered from a model response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "YES")]
    Yes,
    #[serde(rename = "NO")]
    No,
    #[serde(rename = "UNPARSEABLE")]
    Unparseable,
}

/// Parsed model response. `reported_line` holds the raw `BL:` field content;
/// it may span several lines when the model lists more than one candidate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelResponse {
    pub raw: String,
    pub explanation: Option<String>,
    pub reported_line: Option<String>,
    pub verdict: Verdict,
}

impl ModelResponse {
    /// Candidate bugged lines: the `BL:` field split on newlines, with empty
    /// entries dropped. Matching accepts the response if any candidate hits.
    pub fn reported_candidates(&self) -> Vec<&str> {
        self.reported_line
            .as_deref()
            .map(|text| {
                text.lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .collect()
            })
            .unwrap_or_default()
    }
}

/// Field labels in parse order of priority. The verdict label must win over
/// prefix collisions (`BUG FOUND` contains no other label, but `BL` is a
/// prefix of nothing here; order still matters for readability).
const FIELD_LABELS: [&str; 3] = ["BUG FOUND", "SE", "BL"];

fn match_label(line: &str) -> Option<(&'static str, String)> {
    let trimmed = line.trim_start();
    // Strip leading markdown decoration before the label.
    let stripped = trimmed.trim_start_matches(['*', '_', '`', '#', '>', '-', ' ']);
    for label in FIELD_LABELS {
        let Some(candidate) = stripped.get(..label.len()) else {
            continue;
        };
        if candidate.eq_ignore_ascii_case(label) {
            let rest = &stripped[label.len()..];
            // Allow closing markdown between label and colon: "**BUG FOUND**: YES".
            let rest = rest.trim_start_matches(['*', '_', '`', ' ']);
            if let Some(value) = rest.strip_prefix(':') {
                return Some((label, value.trim().to_string()));
            }
        }
    }
    None
}

/// Extracts the last `SE:`/`BL:`/`BUG FOUND:` fields from a raw response.
///
/// Labels are matched case-insensitively and tolerate markdown decoration.
/// Field content continues over following lines until the next label. When no
/// verdict field is recoverable the verdict is `Unparseable`; that is a value,
/// not an error.
pub fn parse_response(raw: &str) -> ModelResponse {
    let mut explanation: Option<String> = None;
    let mut reported: Option<String> = None;
    let mut verdict_field: Option<String> = None;

    let mut current: Option<(&'static str, Vec<String>)> = None;
    let mut flush = |cur: &mut Option<(&'static str, Vec<String>)>,
                     explanation: &mut Option<String>,
                     reported: &mut Option<String>,
                     verdict_field: &mut Option<String>| {
        if let Some((label, lines)) = cur.take() {
            let value = lines.join("\n").trim().to_string();
            // Last occurrence of each field wins.
            match label {
                "SE" => *explanation = Some(value),
                "BL" => *reported = Some(value),
                "BUG FOUND" => *verdict_field = Some(value),
                _ => unreachable!(),
            }
        }
    };

    for line in raw.lines() {
        if let Some((label, value)) = match_label(line) {
            flush(&mut current, &mut explanation, &mut reported, &mut verdict_field);
            current = Some((label, vec![value]));
        } else if let Some((_, lines)) = current.as_mut() {
            lines.push(line.to_string());
        }
    }
    flush(&mut current, &mut explanation, &mut reported, &mut verdict_field);

    let verdict = match verdict_field.as_deref().map(normalize_line) {
        Some(v) => {
            let v = v.to_ascii_lowercase();
            if v.starts_with("yes") {
                Verdict::Yes
            } else if v.starts_with("no") {
                Verdict::No
            } else {
                Verdict::Unparseable
            }
        }
        None => Verdict::Unparseable,
    };

    // "BL: none" means no line was reported.
    let reported_line = reported.filter(|v| {
        let n = normalize_line(v).to_ascii_lowercase();
        !n.is_empty() && n != "none" && n != "none."
    });

    ModelResponse {
        raw: raw.to_string(),
        explanation: explanation.filter(|v| !v.is_empty()),
        reported_line,
        verdict,
    }
}

/// Canonical form used for all line comparisons: trailing newlines removed,
/// wrapping backticks/quotes stripped, every run of spaces and tabs collapsed
/// to a single space, ends trimmed. Idempotent.
pub fn normalize_line(line: &str) -> String {
    let mut s = line.trim_end_matches(['\n', '\r']).trim();
    // Strip paired wrapping quotes/backticks, possibly nested (``x``, "`x`").
    loop {
        let mut chars = s.chars();
        match (chars.next(), chars.next_back()) {
            (Some(open), Some(close))
                if open == close && matches!(open, '`' | '"' | '\'') && s.len() >= 2 =>
            {
                s = s[open.len_utf8()..s.len() - close.len_utf8()].trim();
            }
            _ => break,
        }
    }
    let mut out = String::with_capacity(s.len());
    let mut in_gap = false;
    for ch in s.chars() {
        if ch == ' ' || ch == '\t' {
            in_gap = true;
        } else {
            if in_gap && !out.is_empty() {
                out.push(' ');
            }
            in_gap = false;
            out.push(ch);
        }
    }
    out
}

/// True when a reported line names a ground-truth line. Both sides are
/// normalized; equality or full-line containment in either direction counts,
/// because models often echo the line with surrounding context. Empty strings
/// never match.
pub fn lines_match(reported: &str, truth_line: &str) -> bool {
    let r = normalize_line(reported);
    let t = normalize_line(truth_line);
    if r.is_empty() || t.is_empty() {
        return false;
    }
    r == t || r.contains(&t) || t.contains(&r)
}

/// Outcome classification of one probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    #[serde(rename = "TP")]
    TruePositive,
    #[serde(rename = "FP")]
    FalsePositive,
    #[serde(rename = "TN")]
    TrueNegative,
    #[serde(rename = "FN")]
    FalseNegative,
}

impl Classification {
    pub fn code(self) -> &'static str {
        match self {
            Classification::TruePositive => "TP",
            Classification::FalsePositive => "FP",
            Classification::TrueNegative => "TN",
            Classification::FalseNegative => "FN",
        }
    }
}

#[derive(Debug, Error)]
pub enum ProbeError {
    /// `truth` must be present exactly when the probed input is vulnerable.
    #[error("ground truth presence does not match input kind (vulnerable={is_vulnerable})")]
    ContractViolation { is_vulnerable: bool },
    #[error("cannot compute metrics over an empty outcome collection")]
    EmptyInput,
}

/// Applies the classification decision table.
///
/// Vulnerable input: a `NO` or unparseable response is a false negative; a
/// `YES` is a true positive only if some reported candidate matches a
/// ground-truth line, otherwise a false negative. Non-vulnerable input: `NO`
/// is a true negative, `YES` a false positive, and an unparseable response is
/// counted as a false positive since a reader would still have to
/// investigate it.
///
/// Returns the classification and, for true positives, the normalized
/// reported line that matched.
pub fn classify(
    is_vulnerable_input: bool,
    response: &ModelResponse,
    truth: Option<&GroundTruth>,
) -> Result<(Classification, Option<String>), ProbeError> {
    if is_vulnerable_input != truth.is_some() {
        return Err(ProbeError::ContractViolation {
            is_vulnerable: is_vulnerable_input,
        });
    }
    if is_vulnerable_input {
        let truth = truth.expect("checked above");
        match response.verdict {
            Verdict::No | Verdict::Unparseable => Ok((Classification::FalseNegative, None)),
            Verdict::Yes => {
                for candidate in response.reported_candidates() {
                    for truth_line in &truth.removed_lines {
                        if lines_match(candidate, truth_line) {
                            return Ok((
                                Classification::TruePositive,
                                Some(normalize_line(candidate)),
                            ));
                        }
                    }
                }
                Ok((Classification::FalseNegative, None))
            }
        }
    } else {
        match response.verdict {
            Verdict::No => Ok((Classification::TrueNegative, None)),
            Verdict::Yes | Verdict::Unparseable => Ok((Classification::FalsePositive, None)),
        }
    }
}

/// One model query result, as persisted in the outcome log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub record_id: String,
    pub is_vulnerable_input: bool,
    pub response: ModelResponse,
    pub classification: Classification,
    pub matched_line: Option<String>,
}

impl ProbeOutcome {
    pub fn from_response(
        record_id: impl Into<String>,
        is_vulnerable_input: bool,
        response: ModelResponse,
        truth: Option<&GroundTruth>,
    ) -> Result<Self, ProbeError> {
        let (classification, matched_line) = classify(is_vulnerable_input, &response, truth)?;
        Ok(ProbeOutcome {
            record_id: record_id.into(),
            is_vulnerable_input,
            response,
            classification,
            matched_line,
        })
    }
}

/// Confusion counts with the derived rates. Rates whose denominator is zero
/// are reported as 0 and their names listed in `undefined`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub n_files: usize,
    pub undefined: Vec<String>,
}

/// Computes precision/recall/accuracy/F1 from raw confusion counts.
pub fn metrics_from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> MetricsReport {
    let n = tp + fp + tn + fn_;
    let mut undefined = Vec::new();
    let mut ratio = |num: usize, den: usize, name: &str| -> f64 {
        if den == 0 {
            undefined.push(name.to_string());
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(tp, tp + fp, "precision");
    let recall = ratio(tp, tp + fn_, "recall");
    let accuracy = ratio(tp + tn, n, "accuracy");
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        undefined.push("f1".to_string());
        0.0
    };
    MetricsReport {
        tp,
        fp,
        tn,
        fn_,
        precision,
        recall,
        accuracy,
        f1,
        n_files: n,
        undefined,
    }
}

/// Aggregates a collection of outcomes into a metrics report.
pub fn compute_metrics(outcomes: &[ProbeOutcome]) -> Result<MetricsReport, ProbeError> {
    if outcomes.is_empty() {
        return Err(ProbeError::EmptyInput);
    }
    let mut tp = 0;
    let mut fp = 0;
    let mut tn = 0;
    let mut fn_ = 0;
    for outcome in outcomes {
        match outcome.classification {
            Classification::TruePositive => tp += 1,
            Classification::FalsePositive => fp += 1,
            Classification::TrueNegative => tn += 1,
            Classification::FalseNegative => fn_ += 1,
        }
    }
    Ok(metrics_from_counts(tp, fp, tn, fn_))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn truth_of(lines: &[&str]) -> GroundTruth {
        GroundTruth {
            removed_lines: lines.iter().map(|l| normalize_line(l)).collect::<BTreeSet<_>>(),
            first_changed_offset: 0,
        }
    }

    #[test]
    fn prompt_contains_fixed_example_and_cwe() {
        let prompt = render_prompt(&PromptSpec {
            cwe: CweId::new(22).unwrap(),
            cwe_label: "Path Traversal",
            file_content: "x",
        });
        assert!(prompt.contains("CWE-22 (Path Traversal)"));
        // The in-context example stays the CWE-79 user_input one.
        assert!(prompt.contains("Welcome, \" + user_input + \"!"));
        assert!(prompt.ends_with("File Content:\nx"));
    }

    #[test]
    fn prompt_substitution_is_literal() {
        let content = "if (x) { template.render(\"{bug_type_id}\"); }";
        let prompt = render_prompt(&PromptSpec {
            cwe: CweId::new(79).unwrap(),
            cwe_label: "Cross-site Scripting",
            file_content: content,
        });
        assert!(prompt.contains(content));
    }

    #[test]
    fn prompt_length_is_additive_in_content() {
        let cwe = CweId::new(89).unwrap();
        let overhead = prompt_overhead(cwe, "SQL Injection");
        let content = "a".repeat(25_000);
        let prompt = render_prompt(&PromptSpec {
            cwe,
            cwe_label: "SQL Injection",
            file_content: &content,
        });
        assert_eq!(prompt.chars().count(), overhead + 25_000);
    }

    #[test]
    fn parses_canonical_example_output() {
        let raw = "SE: The 'user_input' is directly concatenated into HTML content without sanitation.\nBL: `response = \"<html><body><h1>Welcome, \" + user_input + \"!</h1></body></html>\"`\nBUG FOUND: YES";
        let resp = parse_response(raw);
        assert_eq!(resp.verdict, Verdict::Yes);
        assert_eq!(
            normalize_line(resp.reported_line.as_deref().unwrap()),
            "response = \"<html><body><h1>Welcome, \" + user_input + \"!</h1></body></html>\""
        );
        assert!(resp.explanation.is_some());
    }

    #[test]
    fn parses_no_verdict_without_line() {
        let resp = parse_response("BUG FOUND: NO");
        assert_eq!(resp.verdict, Verdict::No);
        assert!(resp.reported_line.is_none());
    }

    #[test]
    fn free_form_refusal_is_unparseable() {
        let resp = parse_response("I cannot help with analyzing this file.");
        assert_eq!(resp.verdict, Verdict::Unparseable);
    }

    #[test]
    fn tolerates_markdown_labels_and_takes_last_occurrence() {
        let raw = "Some preamble.\n**SE**: first guess\n**BL:** `a = b`\n**BUG FOUND**: NO\n\nOn reflection:\nSE: sink reached\nbl: `eval(input)`\nBug Found: yes";
        let resp = parse_response(raw);
        assert_eq!(resp.verdict, Verdict::Yes);
        assert_eq!(resp.reported_line.as_deref(), Some("`eval(input)`"));
        assert_eq!(resp.explanation.as_deref(), Some("sink reached"));
    }

    #[test]
    fn bl_none_means_no_reported_line() {
        let resp = parse_response("SE: nothing suspicious\nBL: none\nBUG FOUND: NO");
        assert!(resp.reported_line.is_none());
    }

    #[test]
    fn multi_line_bl_field_yields_multiple_candidates() {
        let raw = "SE: two sinks\nBL: `a = b`\n`c = d`\nBUG FOUND: YES";
        let resp = parse_response(raw);
        assert_eq!(resp.reported_candidates().len(), 2);
    }

    #[test]
    fn normalize_collapses_whitespace() {
        assert_eq!(normalize_line("\tx  =  1;\n"), "x = 1;");
        assert_eq!(normalize_line("`y=2`"), "y=2");
        assert_eq!(normalize_line("  \"quoted line\"  "), "quoted line");
        assert_eq!(normalize_line(""), "");
    }

    #[test]
    fn classify_decision_table_vulnerable() {
        let truth = truth_of(&["eval($_GET['q']);"]);
        let yes_match = parse_response("BL: `eval( $_GET['q'] );`\nBUG FOUND: YES");
        let yes_miss = parse_response("BL: `echo $safe;`\nBUG FOUND: YES");
        let no = parse_response("BUG FOUND: NO");
        let garbage = parse_response("cannot say");

        assert_eq!(
            classify(true, &yes_match, Some(&truth)).unwrap().0,
            Classification::TruePositive
        );
        assert_eq!(
            classify(true, &yes_miss, Some(&truth)).unwrap().0,
            Classification::FalseNegative
        );
        assert_eq!(
            classify(true, &no, Some(&truth)).unwrap().0,
            Classification::FalseNegative
        );
        assert_eq!(
            classify(true, &garbage, Some(&truth)).unwrap().0,
            Classification::FalseNegative
        );
    }

    #[test]
    fn classify_decision_table_patched() {
        let yes = parse_response("BL: `x`\nBUG FOUND: YES");
        let no = parse_response("BUG FOUND: NO");
        let garbage = parse_response("n/a");
        assert_eq!(classify(false, &yes, None).unwrap().0, Classification::FalsePositive);
        assert_eq!(classify(false, &no, None).unwrap().0, Classification::TrueNegative);
        assert_eq!(classify(false, &garbage, None).unwrap().0, Classification::FalsePositive);
    }

    #[test]
    fn classify_rejects_mismatched_truth() {
        let resp = parse_response("BUG FOUND: NO");
        assert!(classify(true, &resp, None).is_err());
        let truth = truth_of(&["x"]);
        assert!(classify(false, &resp, Some(&truth)).is_err());
    }

    #[test]
    fn yes_with_empty_bl_on_vulnerable_scores_fn() {
        let truth = truth_of(&["a = b;"]);
        let resp = parse_response("SE: something\nBL:\nBUG FOUND: YES");
        assert!(resp.reported_line.is_none());
        assert_eq!(
            classify(true, &resp, Some(&truth)).unwrap().0,
            Classification::FalseNegative
        );
    }

    #[test]
    fn any_one_matching_line_suffices() {
        let truth = truth_of(&["first changed line", "second changed line"]);
        let resp = parse_response("BL: second   changed line\nBUG FOUND: YES");
        assert_eq!(
            classify(true, &resp, Some(&truth)).unwrap().0,
            Classification::TruePositive
        );
    }

    #[test]
    fn metrics_basic_arithmetic() {
        let m = metrics_from_counts(3, 1, 4, 2);
        assert!((m.precision - 0.75).abs() < 1e-12);
        assert!((m.recall - 0.6).abs() < 1e-12);
        assert!((m.accuracy - 0.7).abs() < 1e-12);
        assert!((m.f1 - 2.0 * 0.75 * 0.6 / 1.35).abs() < 1e-12);
        assert_eq!(m.n_files, 10);
        assert!(m.undefined.is_empty());
    }

    #[test]
    fn metrics_flag_zero_divisions() {
        let m = metrics_from_counts(0, 0, 5, 0);
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.accuracy, 1.0);
        assert!(m.undefined.contains(&"precision".to_string()));
        assert!(m.undefined.contains(&"recall".to_string()));
        assert!(m.undefined.contains(&"f1".to_string()));
    }

    #[test]
    fn metrics_reject_empty_input() {
        assert!(compute_metrics(&[]).is_err());
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in ".{0,120}") {
            let once = normalize_line(&s);
            prop_assert_eq!(normalize_line(&once), once.clone());
        }

        #[test]
        fn matching_is_normalization_invariant(
            core in "[a-z]{1,12}( [a-z]{1,8}){0,3}",
            pre_ws in "[ \t]{0,4}",
            post_ws in "[ \t]{0,4}",
            backticked in proptest::bool::ANY,
        ) {
            let decorated = if backticked {
                format!("`{pre_ws}{core}{post_ws}`")
            } else {
                format!("{pre_ws}{core}{post_ws}")
            };
            prop_assert!(lines_match(&decorated, &core));
        }

        #[test]
        fn metric_rates_stay_in_unit_interval(
            tp in 0usize..200, fp in 0usize..200, tn in 0usize..200, fn_ in 0usize..200
        ) {
            prop_assume!(tp + fp + tn + fn_ > 0);
            let m = metrics_from_counts(tp, fp, tn, fn_);
            for rate in [m.precision, m.recall, m.accuracy, m.f1] {
                prop_assert!((0.0..=1.0).contains(&rate));
            }
            prop_assert_eq!(m.n_files, tp + fp + tn + fn_);
        }
    }
}
