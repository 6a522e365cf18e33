//! Assembling haystack instances from a padding pool and a vulnerable block.

use crate::corpus::CweId;
use crate::probe::normalize_line;

use super::{
    knapsack, CodeUnit, HaystackError, HaystackInstance, PaddingManifest, UnitOrigin, VulnBlock,
    POSITION_STEP,
};

/// Padding material for one base record: same-file units first, then units
/// from other files of the same repository. Every unit ends with a newline
/// and none of them can collide with the vulnerable block.
#[derive(Debug, Clone)]
pub struct UnitPool {
    units: Vec<CodeUnit>,
}

impl UnitPool {
    pub fn units(&self) -> &[CodeUnit] {
        &self.units
    }

    pub fn total_size(&self) -> usize {
        self.units.iter().map(CodeUnit::size).sum()
    }

    fn sizes(&self) -> Vec<usize> {
        self.units.iter().map(CodeUnit::size).collect()
    }
}

/// Builds the padding pool for a record. Units that contain the block text
/// or any line matching its core line are dropped, so the block occurs in
/// each instance exactly once.
pub fn build_pool(
    same_file_units: Vec<CodeUnit>,
    repo_units: Vec<CodeUnit>,
    block: &VulnBlock,
) -> UnitPool {
    let mut units = Vec::with_capacity(same_file_units.len() + repo_units.len());
    let collides = |unit: &CodeUnit| {
        unit.text.contains(&block.text)
            || unit
                .text
                .split_inclusive('\n')
                .any(|line| normalize_line(line) == block.core_line)
    };
    for (source, origin) in [
        (same_file_units, UnitOrigin::SameFile),
        (repo_units, UnitOrigin::SameRepoPool),
    ] {
        for mut unit in source {
            if unit.text.is_empty() || collides(&unit) {
                continue;
            }
            if !unit.text.ends_with('\n') {
                unit.text.push('\n');
            }
            unit.origin = origin;
            units.push(unit);
        }
    }
    UnitPool { units }
}

/// Whitespace filler of exactly `chars` characters that never splits the
/// surrounding line structure.
fn filler(chars: usize) -> String {
    match chars {
        0 => String::new(),
        1 => "\n".to_string(),
        n => {
            let mut s = " ".repeat(n - 1);
            s.push('\n');
            s
        }
    }
}

/// Builds all `S / 500` instances of one grid. Instance `n` packs the
/// before-segment to capacity `500 * (n - 1)` (topped up with whitespace so
/// the block offset is exact) and the after-segment to `S - 500 * n`.
pub fn build_grid(
    cwe: CweId,
    base_record_id: &str,
    block: &VulnBlock,
    target_size: usize,
    pool: &UnitPool,
    tolerance: usize,
) -> Result<Vec<HaystackInstance>, HaystackError> {
    assert!(
        target_size >= POSITION_STEP && target_size % POSITION_STEP == 0,
        "target size must be a positive multiple of {POSITION_STEP}"
    );
    let positions = target_size / POSITION_STEP;
    let sizes = pool.sizes();
    let mut instances = Vec::with_capacity(positions);

    for n in 1..=positions {
        let before_cap = POSITION_STEP * (n - 1);
        let after_cap = target_size - POSITION_STEP * n;
        let grid_err = |source: HaystackError| HaystackError::GridPadding {
            target_size,
            position: n,
            source: Box::new(source),
        };

        let before = knapsack::pack_padding_exact_cap(&sizes, before_cap, tolerance)
            .map_err(grid_err)?;
        // Units are used at most once per instance: mask out the ones the
        // before-segment consumed.
        let mut remaining = sizes.clone();
        for &idx in &before.selected {
            remaining[idx] = 0;
        }
        let after = knapsack::pack_padding(&remaining, after_cap, tolerance).map_err(grid_err)?;

        let filler_before = before_cap - before.achieved;
        let mut content = String::with_capacity(target_size + tolerance);
        for &idx in &before.selected {
            content.push_str(&pool.units[idx].text);
        }
        content.push_str(&filler(filler_before));
        content.push_str(&block.text);
        for &idx in &after.selected {
            content.push_str(&pool.units[idx].text);
        }

        let occurrences = content.matches(&block.text).count();
        if occurrences != 1 {
            return Err(HaystackError::InstanceIntegrity(format!(
                "block occurs {occurrences} times in instance (S={target_size}, n={n})"
            )));
        }

        instances.push(HaystackInstance {
            cwe,
            base_record_id: base_record_id.to_string(),
            target_size,
            position: n,
            content,
            block_offset: before_cap,
            manifest: PaddingManifest {
                before: before.selected,
                filler_before,
                after: after.selected,
            },
        });
    }
    Ok(instances)
}

/// Relative path of a persisted instance below the haystack output root:
/// `<cwe>/<record>/<S>/<n>.txt`.
pub fn instance_rel_path(instance: &HaystackInstance) -> std::path::PathBuf {
    std::path::PathBuf::from(instance.cwe.to_string())
        .join(&instance.base_record_id)
        .join(instance.target_size.to_string())
        .join(format!("{}.txt", instance.position))
}
