//! Scoring haystack runs: per-cell ±1 means, heatmap grids and the
//! distribution of wrongly predicted bug positions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::CweId;
use crate::probe::{lines_match, Classification};

use super::{HaystackError, POSITION_STEP};

/// Bucket width of the wrong-position histogram, in characters.
pub const HISTOGRAM_BUCKET: usize = 1000;

/// One probed haystack instance, as persisted in the haystack outcome log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceOutcome {
    pub cwe: CweId,
    pub model: String,
    pub base_record_id: String,
    pub target_size: usize,
    pub position: usize,
    pub block_offset: usize,
    pub run: usize,
    pub classification: Classification,
    /// Raw reported line, when the response named one.
    pub reported_line: Option<String>,
    /// Char offset of the reported line inside the instance content, when
    /// the line could be located there.
    pub predicted_offset: Option<usize>,
}

impl InstanceOutcome {
    /// +1 when the vulnerability was correctly located, -1 otherwise.
    pub fn score(&self) -> f64 {
        if self.classification == Classification::TruePositive {
            1.0
        } else {
            -1.0
        }
    }

    /// An incorrect YES: the model reported a line, but it was not a
    /// ground-truth line.
    pub fn is_wrong_position(&self) -> bool {
        self.classification == Classification::FalseNegative && self.reported_line.is_some()
    }
}

/// Mean score of one (S, n) cell for one (model, CWE).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HaystackScore {
    pub cwe: CweId,
    pub model: String,
    pub target_size: usize,
    pub position: usize,
    pub mean_score: f64,
    pub runs: usize,
}

/// Expected shape of a completed grid, used to detect missing cells.
#[derive(Debug, Clone)]
pub struct GridShape {
    pub sizes: Vec<usize>,
    pub runs: usize,
}

impl GridShape {
    pub fn positions(size: usize) -> usize {
        size / POSITION_STEP
    }
}

/// Averages instance scores per (S, n) cell: first across the base records
/// of each run, then across runs. Every cell of the declared grid must have
/// at least one outcome.
pub fn score_runs(
    outcomes: &[InstanceOutcome],
    shape: &GridShape,
) -> Result<Vec<HaystackScore>, HaystackError> {
    // (model, cwe) -> (S, n) -> run -> scores
    type RunScores = BTreeMap<usize, Vec<f64>>;
    let mut cells: BTreeMap<(String, CweId), BTreeMap<(usize, usize), RunScores>> =
        BTreeMap::new();
    for outcome in outcomes {
        cells
            .entry((outcome.model.clone(), outcome.cwe))
            .or_default()
            .entry((outcome.target_size, outcome.position))
            .or_default()
            .entry(outcome.run)
            .or_default()
            .push(outcome.score());
    }

    let mut scores = Vec::new();
    for ((model, cwe), grid) in cells {
        for &size in &shape.sizes {
            for position in 1..=GridShape::positions(size) {
                let cell = grid
                    .get(&(size, position))
                    .ok_or(HaystackError::MissingCell {
                        target_size: size,
                        position,
                    })?;
                let run_means: Vec<f64> = cell
                    .values()
                    .map(|v| v.iter().sum::<f64>() / v.len() as f64)
                    .collect();
                let mean_score = run_means.iter().sum::<f64>() / run_means.len() as f64;
                scores.push(HaystackScore {
                    cwe,
                    model: model.clone(),
                    target_size: size,
                    position,
                    mean_score,
                    runs: cell.len(),
                });
            }
        }
    }
    Ok(scores)
}

/// Heatmap grid for one (model, CWE): rows are position indices, columns are
/// target sizes. Cells outside a size's grid stay empty.
#[derive(Debug, Clone)]
pub struct Heatmap {
    pub model: String,
    pub cwe: CweId,
    pub sizes: Vec<usize>,
    /// `cells[n - 1][size_idx]`, None where n exceeds the size's grid.
    pub cells: Vec<Vec<Option<f64>>>,
}

impl Heatmap {
    /// Builds per-(model, CWE) heatmaps from cell scores.
    pub fn from_scores(scores: &[HaystackScore], sizes: &[usize]) -> Vec<Heatmap> {
        let max_positions = sizes
            .iter()
            .map(|s| GridShape::positions(*s))
            .max()
            .unwrap_or(0);
        let mut maps: BTreeMap<(String, CweId), Heatmap> = BTreeMap::new();
        for score in scores {
            let entry = maps
                .entry((score.model.clone(), score.cwe))
                .or_insert_with(|| Heatmap {
                    model: score.model.clone(),
                    cwe: score.cwe,
                    sizes: sizes.to_vec(),
                    cells: vec![vec![None; sizes.len()]; max_positions],
                });
            if let Some(col) = sizes.iter().position(|s| *s == score.target_size) {
                entry.cells[score.position - 1][col] = Some(score.mean_score);
            }
        }
        maps.into_values().collect()
    }

    pub fn get(&self, size: usize, position: usize) -> Option<f64> {
        let col = self.sizes.iter().position(|s| *s == size)?;
        self.cells.get(position - 1)?.get(col).copied().flatten()
    }

    /// CSV rendering: header `position,<S1>,<S2>,...`, one row per position
    /// index, empty cells blank.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("position");
        for size in &self.sizes {
            out.push_str(&format!(",{size}"));
        }
        out.push('\n');
        for (row_idx, row) in self.cells.iter().enumerate() {
            out.push_str(&(row_idx + 1).to_string());
            for cell in row {
                match cell {
                    Some(v) => out.push_str(&format!(",{v}")),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Histogram of predicted offsets for incorrect YES answers, bucketed per
/// target size. Lines that cannot be located in the instance land in
/// `not_in_file`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PositionBuckets {
    /// bucket start (multiple of [`HISTOGRAM_BUCKET`]) -> count
    pub counts: BTreeMap<usize, usize>,
    pub not_in_file: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct WrongPositionHistogram {
    pub per_size: BTreeMap<usize, PositionBuckets>,
}

impl WrongPositionHistogram {
    /// Total mass at or beyond `offset`, across all sizes.
    pub fn mass_at_or_beyond(&self, offset: usize) -> usize {
        self.per_size
            .values()
            .flat_map(|b| &b.counts)
            .filter(|(bucket, _)| **bucket + HISTOGRAM_BUCKET > offset)
            .filter(|(bucket, _)| **bucket >= offset)
            .map(|(_, count)| *count)
            .sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("target_size,bucket_start,count\n");
        for (size, buckets) in &self.per_size {
            for (bucket, count) in &buckets.counts {
                out.push_str(&format!("{size},{bucket},{count}\n"));
            }
            if buckets.not_in_file > 0 {
                out.push_str(&format!("{size},not_in_file,{}\n", buckets.not_in_file));
            }
        }
        out
    }
}

/// Builds the wrong-position histogram from probed instances.
pub fn wrong_position_distribution(outcomes: &[InstanceOutcome]) -> WrongPositionHistogram {
    let mut histogram = WrongPositionHistogram::default();
    for outcome in outcomes {
        if !outcome.is_wrong_position() {
            continue;
        }
        let buckets = histogram.per_size.entry(outcome.target_size).or_default();
        match outcome.predicted_offset {
            Some(offset) => {
                let bucket = (offset / HISTOGRAM_BUCKET) * HISTOGRAM_BUCKET;
                *buckets.counts.entry(bucket).or_insert(0) += 1;
            }
            None => buckets.not_in_file += 1,
        }
    }
    histogram
}

/// Char offset of the first content line matching `reported` (normalized
/// comparison), or None when the line does not occur in the content.
pub fn locate_line_offset(content: &str, reported: &str) -> Option<usize> {
    let mut offset = 0usize;
    for line in content.split_inclusive('\n') {
        if lines_match(reported, line) {
            return Some(offset);
        }
        offset += line.chars().count();
    }
    None
}
