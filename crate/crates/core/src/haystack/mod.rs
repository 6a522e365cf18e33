//! Code-in-the-haystack synthesis: a ~500-character vulnerable block is
//! relocated across a uniform grid of positions inside padding assembled
//! from same-file and same-repository code units.
//!
//! For a target size `S`, the grid has `S / 500` positions; instance `n`
//! places the block after exactly `500 * (n - 1)` characters. Padding for
//! each side is selected by an exact 0/1 knapsack with a relaxed capacity
//! (±200 characters), and the before-segment is topped up with whitespace
//! filler so block offsets land exactly on the grid.

mod grid;
mod knapsack;
mod score;
mod segment;

pub use grid::{build_grid, build_pool, instance_rel_path, UnitPool};
pub use knapsack::{pack_padding, pack_padding_exact_cap, Packing};
pub use score::{
    locate_line_offset, score_runs, wrong_position_distribution, GridShape, Heatmap,
    InstanceOutcome, PositionBuckets, WrongPositionHistogram,
};
pub use segment::segment_units;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{GroundTruth, VulnRecord};
use crate::probe::normalize_line;

/// Target haystack file sizes in characters. The largest stays below the
/// smallest context ceiling among the benchmarked models (~30k characters).
pub const TARGET_SIZES: [usize; 4] = [4000, 8000, 16000, 25_000];

/// Grid step: one position every 500 characters.
pub const POSITION_STEP: usize = 500;

/// Knapsack capacity relaxation, in characters.
pub const DEFAULT_TOLERANCE: usize = 200;

/// Default repetitions of the whole experiment per model.
pub const DEFAULT_RUNS: usize = 5;

/// Default number of base vulnerability instances per CWE type.
pub const DEFAULT_RECORDS_PER_CWE: usize = 5;

/// Acceptable extracted block sizes: "approximately 500" as a testable bound.
pub const BLOCK_SIZE_RANGE: std::ops::RangeInclusive<usize> = 400..=600;

#[derive(Debug, Error)]
pub enum HaystackError {
    #[error("no pre-patch line matches the ground truth; cannot extract a block")]
    BlockNotExtractable,
    #[error(
        "padding infeasible for capacity {capacity} (best achievable gap {best_gap} > tolerance {tolerance})"
    )]
    InfeasiblePadding {
        capacity: usize,
        tolerance: usize,
        best_gap: usize,
    },
    #[error("padding infeasible for size {target_size}, position {position}: {source}")]
    GridPadding {
        target_size: usize,
        position: usize,
        #[source]
        source: Box<HaystackError>,
    },
    #[error("no outcome for grid cell (S={target_size}, n={position})")]
    MissingCell { target_size: usize, position: usize },
    #[error("instance integrity violated: {0}")]
    InstanceIntegrity(String),
}

/// Where a padding unit came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitOrigin {
    SameFile,
    SameRepoPool,
}

/// One function or independent logic unit used as padding material.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeUnit {
    pub text: String,
    pub origin: UnitOrigin,
}

impl CodeUnit {
    pub fn new(text: impl Into<String>, origin: UnitOrigin) -> Self {
        CodeUnit {
            text: text.into(),
            origin,
        }
    }

    /// Size in characters.
    pub fn size(&self) -> usize {
        self.text.chars().count()
    }
}

/// The relocatable block of vulnerable code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VulnBlock {
    pub text: String,
    /// Normalized form of the vulnerable core line contained in `text`.
    pub core_line: String,
}

impl VulnBlock {
    pub fn size(&self) -> usize {
        self.text.chars().count()
    }

    /// How far the block size strays from the nominal 500 characters.
    pub fn slack(&self) -> usize {
        self.size().abs_diff(POSITION_STEP)
    }
}

/// Padding provenance for one synthesized instance: pool indices for each
/// segment plus the exact-fit whitespace filler inserted before the block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaddingManifest {
    pub before: Vec<usize>,
    pub filler_before: usize,
    pub after: Vec<usize>,
}

/// One synthesized haystack file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HaystackInstance {
    pub cwe: crate::corpus::CweId,
    pub base_record_id: String,
    /// Target file size S in characters.
    pub target_size: usize,
    /// 1-based position index; the block starts after `500 * (n - 1)` chars.
    pub position: usize,
    pub content: String,
    pub block_offset: usize,
    pub manifest: PaddingManifest,
}

impl HaystackInstance {
    pub fn content_size(&self) -> usize {
        self.content.chars().count()
    }
}

/// Locates the vulnerable core line in the pre-patch file: the earliest line
/// whose normalized form is one of the ground-truth removed lines. Returns
/// (line index, char offset, raw line text).
fn locate_core_line<'a>(
    pre_file: &'a str,
    truth: &GroundTruth,
) -> Option<(usize, usize, &'a str)> {
    let mut offset = 0usize;
    for (idx, line) in pre_file.split_inclusive('\n').enumerate() {
        let normalized = normalize_line(line);
        if !normalized.is_empty() && truth.removed_lines.contains(&normalized) {
            return Some((idx, offset, line));
        }
        offset += line.chars().count();
    }
    None
}

/// Extracts the block of vulnerable code to relocate.
///
/// When the enclosing unit is smaller than 500 characters the whole unit is
/// the block. Otherwise a contiguous window of lines around the core line is
/// grown toward ~500 characters. The core line is preserved verbatim; the
/// block always ends with a newline so it can be placed between padding
/// units.
pub fn extract_block(
    record: &VulnRecord,
    truth: &GroundTruth,
) -> Result<VulnBlock, HaystackError> {
    let (core_idx, _, core_raw) =
        locate_core_line(&record.pre_file, truth).ok_or(HaystackError::BlockNotExtractable)?;

    let units = segment_units(&record.pre_file, record.language);
    // Find the unit containing the core line by cumulative line counts.
    let mut line_cursor = 0usize;
    let mut enclosing: Option<&CodeUnit> = None;
    let mut line_in_unit = 0usize;
    for unit in &units {
        let unit_lines = unit.text.split_inclusive('\n').count();
        if core_idx < line_cursor + unit_lines {
            line_in_unit = core_idx - line_cursor;
            enclosing = Some(unit);
            break;
        }
        line_cursor += unit_lines;
    }
    let unit = enclosing.ok_or(HaystackError::BlockNotExtractable)?;

    let mut text = if unit.size() < POSITION_STEP {
        unit.text.clone()
    } else {
        grow_window(&unit.text, line_in_unit)
    };
    if !text.ends_with('\n') {
        text.push('\n');
    }
    let core_line = normalize_line(core_raw);
    debug_assert!(text
        .split_inclusive('\n')
        .any(|l| normalize_line(l) == core_line));
    Ok(VulnBlock { text, core_line })
}

/// Grows a window of whole lines around `core_idx` toward 500 characters,
/// staying within [400, 600] when the line structure allows it.
fn grow_window(unit_text: &str, core_idx: usize) -> String {
    let lines: Vec<&str> = unit_text.split_inclusive('\n').collect();
    let sizes: Vec<usize> = lines.iter().map(|l| l.chars().count()).collect();
    let (mut lo, mut hi) = (core_idx, core_idx);
    let mut total = sizes[core_idx];

    loop {
        if total >= POSITION_STEP {
            break;
        }
        let prev = lo.checked_sub(1).map(|i| sizes[i]);
        let next = (hi + 1 < lines.len()).then(|| sizes[hi + 1]);
        let target = POSITION_STEP as i64;
        let gain = |cand: Option<usize>| {
            cand.map(|c| ((total + c) as i64 - target).abs())
        };
        let (take_prev, cand_size) = match (gain(prev), gain(next)) {
            (None, None) => break,
            (Some(_), None) => (true, prev.unwrap()),
            (None, Some(_)) => (false, next.unwrap()),
            (Some(p), Some(n)) => {
                if p <= n {
                    (true, prev.unwrap())
                } else {
                    (false, next.unwrap())
                }
            }
        };
        if total + cand_size > *BLOCK_SIZE_RANGE.end() && total >= *BLOCK_SIZE_RANGE.start() {
            break;
        }
        if take_prev {
            lo -= 1;
        } else {
            hi += 1;
        }
        total += cand_size;
    }
    lines[lo..=hi].concat()
}
