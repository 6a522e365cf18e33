//! Relaxed 0/1 knapsack over code-unit sizes.
//!
//! Exact dynamic programming over character counts: capacities stay below
//! ~25k characters, so the full reachability table is cheap and the result
//! is deterministic and optimal. The relaxation allows the achieved size to
//! overshoot the capacity by at most `tolerance` characters; the selected
//! subset minimizes the absolute gap to the capacity.

use super::HaystackError;

/// A packing solution: indices into the input slice, in ascending order,
/// plus the total size achieved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packing {
    pub selected: Vec<usize>,
    pub achieved: usize,
}

#[derive(Clone, Copy)]
struct Node {
    unit: u32,
    parent: u32, // index into arena; u32::MAX = root
}

struct ReachEntry {
    count: u32,
    node: u32, // arena index; u32::MAX = empty selection
}

const NONE: u32 = u32::MAX;

/// Exact DP over achievable sums in `0..=max_sum`. Entries keep the
/// selection with the fewest units; among equal counts the selection
/// discovered first (built from the earliest units) is kept.
fn reachable_sums(sizes: &[usize], max_sum: usize) -> (Vec<Option<ReachEntry>>, Vec<Node>) {
    let mut dp: Vec<Option<ReachEntry>> = Vec::with_capacity(max_sum + 1);
    dp.resize_with(max_sum + 1, || None);
    dp[0] = Some(ReachEntry { count: 0, node: NONE });
    let mut arena: Vec<Node> = Vec::new();

    for (i, &size) in sizes.iter().enumerate() {
        if size == 0 || size > max_sum {
            continue;
        }
        for s in (0..=max_sum - size).rev() {
            let Some(entry) = dp[s].as_ref() else { continue };
            let cand_count = entry.count + 1;
            let parent = entry.node;
            let target = s + size;
            let better = match dp[target].as_ref() {
                None => true,
                Some(existing) => cand_count < existing.count,
            };
            if better {
                arena.push(Node {
                    unit: i as u32,
                    parent,
                });
                dp[target] = Some(ReachEntry {
                    count: cand_count,
                    node: (arena.len() - 1) as u32,
                });
            }
        }
    }
    (dp, arena)
}

fn reconstruct(entry: &ReachEntry, arena: &[Node]) -> Vec<usize> {
    let mut selected = Vec::with_capacity(entry.count as usize);
    let mut node = entry.node;
    while node != NONE {
        let n = arena[node as usize];
        selected.push(n.unit as usize);
        node = n.parent;
    }
    selected.reverse();
    selected
}

fn best_sum(
    dp: &[Option<ReachEntry>],
    capacity: usize,
) -> Option<usize> {
    let mut best: Option<(usize, usize, u32)> = None; // (gap, sum, count)
    for (sum, entry) in dp.iter().enumerate() {
        let Some(entry) = entry else { continue };
        let gap = sum.abs_diff(capacity);
        let candidate = (gap, sum, entry.count);
        // Smaller gap wins; ties prefer the smaller (undershooting) sum,
        // then fewer units.
        let better = match best {
            None => true,
            Some((bg, bs, bc)) => {
                gap < bg || (gap == bg && (sum < bs || (sum == bs && entry.count < bc)))
            }
        };
        if better {
            best = Some(candidate);
        }
    }
    best.map(|(_, sum, _)| sum)
}

fn pack(
    sizes: &[usize],
    capacity: usize,
    tolerance: usize,
    allow_overshoot: bool,
) -> Result<Packing, HaystackError> {
    let max_sum = if allow_overshoot {
        capacity + tolerance
    } else {
        capacity
    };
    let (dp, arena) = reachable_sums(sizes, max_sum);
    let sum = best_sum(&dp, capacity).expect("sum 0 is always reachable");
    let gap = sum.abs_diff(capacity);
    if gap > tolerance {
        return Err(HaystackError::InfeasiblePadding {
            capacity,
            tolerance,
            best_gap: gap,
        });
    }
    let entry = dp[sum].as_ref().expect("selected sum is reachable");
    Ok(Packing {
        selected: reconstruct(entry, &arena),
        achieved: sum,
    })
}

/// Selects a subset of `sizes` whose total is as close as possible to
/// `capacity`, overshooting by at most `tolerance`. Deterministic; errors
/// when even the best achievable total misses the capacity by more than the
/// tolerance.
pub fn pack_padding(
    sizes: &[usize],
    capacity: usize,
    tolerance: usize,
) -> Result<Packing, HaystackError> {
    pack(sizes, capacity, tolerance, true)
}

/// Like [`pack_padding`] but the total may never exceed `capacity`; the
/// remaining gap (at most `tolerance`) is left for exact-fit filler.
pub fn pack_padding_exact_cap(
    sizes: &[usize],
    capacity: usize,
    tolerance: usize,
) -> Result<Packing, HaystackError> {
    pack(sizes, capacity, tolerance, false)
}
