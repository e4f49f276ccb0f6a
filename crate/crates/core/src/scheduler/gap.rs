use super::{AssignmentMatrix, Schedule, ScheduleError};

/// One candidate chunk for a row's knapsack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowItem {
    pub col: usize,
    pub value: f64,
    pub weight: u32,
}

/// Per-row knapsack. `items` arrive in preference order; among equal-value
/// selections the solver keeps the earlier items. Returns indices into
/// `items`.
pub trait RowSolver {
    fn select(&self, items: &[RowItem], capacity: u32) -> Vec<usize>;
}

/// Take items in order while they fit. Exact for unit weights.
#[derive(Debug, Clone, Copy, Default)]
pub struct GreedyTopC;

impl RowSolver for GreedyTopC {
    fn select(&self, items: &[RowItem], capacity: u32) -> Vec<usize> {
        let mut left = capacity;
        let mut picked = Vec::new();
        for (i, item) in items.iter().enumerate() {
            if item.weight <= left {
                left -= item.weight;
                picked.push(i);
            }
            if left == 0 {
                break;
            }
        }
        picked
    }
}

/// Exact 0/1 knapsack by dynamic programming over integer capacity.
#[derive(Debug, Clone, Copy, Default)]
pub struct DpKnapsack;

impl RowSolver for DpKnapsack {
    fn select(&self, items: &[RowItem], capacity: u32) -> Vec<usize> {
        let n = items.len();
        let cap = capacity.min(items.iter().map(|i| i.weight).sum()) as usize;
        let width = cap + 1;
        // best[i][c]: best value from items i.. with capacity c
        let mut best = vec![0.0f64; (n + 1) * width];
        for i in (0..n).rev() {
            let w = items[i].weight as usize;
            for c in 0..width {
                let skip = best[(i + 1) * width + c];
                let take = if w <= c { items[i].value + best[(i + 1) * width + c - w] } else { f64::NEG_INFINITY };
                best[i * width + c] = skip.max(take);
            }
        }
        let mut picked = Vec::new();
        let mut c = cap;
        for (i, item) in items.iter().enumerate() {
            let w = item.weight as usize;
            if w > c {
                continue;
            }
            let skip = best[(i + 1) * width + c];
            let take = item.value + best[(i + 1) * width + c - w];
            if take >= skip - 1e-12 * skip.abs().max(1e-300) {
                picked.push(i);
                c -= w;
            }
        }
        picked
    }
}

/// Row-processing GAP heuristic with the default row solver: greedy for unit
/// weights, dynamic programming otherwise.
pub fn gap_schedule(matrix: &AssignmentMatrix, weights: Option<&[u32]>) -> Result<Schedule, ScheduleError> {
    let unit = weights.is_none_or(|w| w.iter().all(|&x| x == 1));
    if unit {
        gap_schedule_with(matrix, weights, &GreedyTopC, None)
    } else {
        gap_schedule_with(matrix, weights, &DpKnapsack, None)
    }
}

/// Rows are visited in matrix order. Each row fills its capacity from the
/// still-unassigned chunks it holds, ranked by priority, then by how few
/// later rows could still serve the chunk, then layer, then slot.
/// `budget` caps the total weight requested across all rows.
pub fn gap_schedule_with(
    matrix: &AssignmentMatrix,
    weights: Option<&[u32]>,
    solver: &dyn RowSolver,
    budget: Option<u32>,
) -> Result<Schedule, ScheduleError> {
    let weights = matrix.resolve_weights(weights)?;
    let cols = matrix.column_count();
    let mut later: Vec<usize> = (0..cols).map(|c| matrix.replicas(c)).collect();
    let mut taken = vec![false; cols];
    let mut left = budget.unwrap_or(u32::MAX);
    let mut picks = Vec::new();
    let chunks = matrix.chunks();
    let prio = matrix.priorities();
    for row in 0..matrix.row_count() {
        let mut candidates: Vec<usize> = Vec::new();
        for col in 0..cols {
            if matrix.is_available(row, col) {
                later[col] -= 1;
                if !taken[col] {
                    candidates.push(col);
                }
            }
        }
        let capacity = matrix.capacities()[row].min(left);
        if capacity == 0 || candidates.is_empty() {
            continue;
        }
        candidates.sort_by(|&a, &b| {
            prio[b]
                .total_cmp(&prio[a])
                .then(later[a].cmp(&later[b]))
                .then(chunks[a].layer.cmp(&chunks[b].layer))
                .then(chunks[a].slot.cmp(&chunks[b].slot))
        });
        let items: Vec<RowItem> =
            candidates.iter().map(|&col| RowItem { col, value: prio[col], weight: weights[col] }).collect();
        for i in solver.select(&items, capacity) {
            let col = items[i].col;
            taken[col] = true;
            left -= weights[col];
            picks.push((col, row));
        }
    }
    Ok(Schedule::from_columns(matrix, &picks))
}

#[cfg(test)]
mod tests {
    use super::super::{aggregate_priority, check_schedule, fixtures, oracle_schedule, NeighborView};
    use super::*;
    use crate::scheduler::build_matrix;
    use crate::stream::{BufferMap, ChunkId, PeerId};
    use proptest::prelude::*;

    #[test]
    fn three_neighbor_instance_assigns_all_five() {
        let m = fixtures::three_neighbors();
        let s = gap_schedule(&m, None).unwrap();
        check_schedule(&m, &s, None).unwrap();
        assert_eq!(s.len(), 5);
        let mut got = s.assignments.clone();
        got.sort();
        let c = |x| ChunkId::new(x, 0);
        let expected = vec![
            (c(1), PeerId(4)),
            (c(2), PeerId(2)),
            (c(3), PeerId(2)),
            (c(4), PeerId(3)),
            (c(5), PeerId(3)),
        ];
        assert_eq!(got, expected);
        let oracle = oracle_schedule(&m, None).unwrap();
        assert_eq!(aggregate_priority(&oracle, &m), aggregate_priority(&s, &m));
        assert_eq!(aggregate_priority(&s, &m), 5.0);
    }

    fn full_map(id: u32, slots: u32, layers: u8) -> BufferMap {
        let mut map = BufferMap::empty(PeerId(id), 0, layers, slots as u16);
        for l in 0..layers {
            for w in 0..slots as u16 {
                map.set(l, w, true);
            }
        }
        map
    }

    #[test]
    fn single_neighbor_with_room_takes_everything() {
        let missing: Vec<ChunkId> = (0..6).map(|s| ChunkId::new(s, 0)).collect();
        let n = NeighborView { id: PeerId(1), map: full_map(1, 6, 1), capacity: 10, reliability: 1.0 };
        let m = build_matrix(&missing, &[n], |c| 1.0 / (c.slot as f64 + 1.0));
        let s = gap_schedule(&m, None).unwrap();
        assert_eq!(s.len(), 6);
        assert!(s.unassigned.is_empty());
    }

    #[test]
    fn zero_capacity_assigns_nothing() {
        let missing: Vec<ChunkId> = (0..4).map(|s| ChunkId::new(s, 0)).collect();
        let views: Vec<NeighborView> = (1..4)
            .map(|id| NeighborView { id: PeerId(id), map: full_map(id, 4, 1), capacity: 0, reliability: 1.0 })
            .collect();
        let m = build_matrix(&missing, &views, |_| 1.0);
        let s = gap_schedule(&m, None).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.unassigned.len(), 4);
    }

    #[test]
    fn budget_caps_total_requests() {
        let m = fixtures::three_neighbors();
        let s = gap_schedule_with(&m, None, &GreedyTopC, Some(3)).unwrap();
        assert_eq!(s.len(), 3);
        check_schedule(&m, &s, None).unwrap();
    }

    #[test]
    fn weight_count_is_checked() {
        let m = fixtures::three_neighbors();
        assert!(matches!(gap_schedule(&m, Some(&[1, 1])), Err(ScheduleError::WeightCount { .. })));
        assert_eq!(gap_schedule(&m, Some(&[1, 0, 1, 1, 1])), Err(ScheduleError::ZeroWeight));
    }

    /// Reference knapsack by enumerating every subset.
    fn subset_best(items: &[RowItem], cap: u32) -> f64 {
        let mut best = 0.0f64;
        for mask in 0u32..(1 << items.len()) {
            let (mut w, mut v) = (0, 0.0);
            for (i, it) in items.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    w += it.weight;
                    v += it.value;
                }
            }
            if w <= cap {
                best = best.max(v);
            }
        }
        best
    }

    #[test]
    fn dp_prefers_value_over_order() {
        let items = [
            RowItem { col: 0, value: 5.0, weight: 3 },
            RowItem { col: 1, value: 4.0, weight: 2 },
            RowItem { col: 2, value: 4.0, weight: 2 },
        ];
        assert_eq!(DpKnapsack.select(&items, 4), vec![1, 2]);
        assert_eq!(GreedyTopC.select(&items, 4), vec![0]);
    }

    proptest! {
        #[test]
        fn dp_matches_subset_enumeration(
            raw in proptest::collection::vec((1u32..100, 1u32..5), 0..10),
            cap in 0u32..15,
        ) {
            let items: Vec<RowItem> = raw
                .iter()
                .enumerate()
                .map(|(col, &(v, weight))| RowItem { col, value: v as f64, weight })
                .collect();
            let picked = DpKnapsack.select(&items, cap);
            let w: u32 = picked.iter().map(|&i| items[i].weight).sum();
            let v: f64 = picked.iter().map(|&i| items[i].value).sum();
            prop_assert!(w <= cap);
            prop_assert!((v - subset_best(&items, cap)).abs() < 1e-9);
        }

        #[test]
        fn unit_weight_dp_equals_greedy(
            layers in 1u8..=4,
            slots in 1u32..8,
            neighbors in proptest::collection::vec((any::<u64>(), 0u32..6, 0u8..4), 1..6),
            now_offset in 0i64..3,
        ) {
            let missing: Vec<ChunkId> =
                (0..slots).flat_map(|s| (0..layers).map(move |l| ChunkId::new(s, l))).collect();
            let views: Vec<NeighborView> = neighbors
                .iter()
                .enumerate()
                .map(|(i, &(bits, cap, rel))| {
                    let id = i as u32 + 1;
                    let mut map = BufferMap::empty(PeerId(id), 0, layers, slots as u16);
                    for l in 0..layers {
                        for w in 0..slots as u16 {
                            map.set(l, w, bits >> ((l as u64 * slots as u64 + w as u64) % 64) & 1 == 1);
                        }
                    }
                    NeighborView { id: PeerId(id), map, capacity: cap, reliability: rel as f64 / 4.0 }
                })
                .collect();
            let params = crate::scheduler::PriorityParams::conservative(layers as usize);
            let m = build_matrix(&missing, &views, |c| crate::scheduler::priority(c, -now_offset, &params));
            let greedy = gap_schedule_with(&m, None, &GreedyTopC, None).unwrap();
            let dp = gap_schedule_with(&m, None, &DpKnapsack, None).unwrap();
            prop_assert_eq!(&greedy, &dp);
            check_schedule(&m, &greedy, None).unwrap();
        }
    }
}
