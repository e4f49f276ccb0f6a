use super::{AssignmentMatrix, Schedule, ScheduleError};

pub const ORACLE_MAX_CHUNKS: usize = 12;
pub const ORACLE_MAX_NEIGHBORS: usize = 5;

struct Search<'a> {
    matrix: &'a AssignmentMatrix,
    weights: Vec<u32>,
    unit: bool,
    residual: Vec<u32>,
    current: Vec<usize>,
    best: Vec<usize>,
    best_value: f64,
}

fn tolerance(v: f64) -> f64 {
    1e-12 * v.abs().max(1e-300)
}

impl Search<'_> {
    /// Optimistic value of columns `from..`: each column that some row could
    /// still take counts once; with unit weights at most the total residual
    /// capacity of them.
    fn bound(&self, from: usize) -> f64 {
        let rows = self.matrix.row_count();
        let mut values: Vec<f64> = (from..self.matrix.column_count())
            .filter(|&c| (0..rows).any(|r| self.matrix.is_available(r, c) && self.residual[r] >= self.weights[c]))
            .map(|c| self.matrix.priorities()[c])
            .collect();
        if self.unit {
            let k = self.residual.iter().map(|&r| r as usize).sum::<usize>();
            if k < values.len() {
                values.sort_by(|a, b| b.total_cmp(a));
                values.truncate(k);
            }
        }
        values.iter().sum()
    }

    fn dfs(&mut self, col: usize, value: f64) {
        let cols = self.matrix.column_count();
        let rows = self.matrix.row_count();
        if col == cols {
            if !self.best_value.is_finite() || value > self.best_value + tolerance(self.best_value) {
                self.best_value = value;
                self.best.clone_from(&self.current);
            }
            return;
        }
        if self.best_value.is_finite() && value + self.bound(col) <= self.best_value + tolerance(self.best_value) {
            return;
        }
        let w = self.weights[col];
        for row in 0..rows {
            if self.matrix.is_available(row, col) && self.residual[row] >= w {
                self.residual[row] -= w;
                self.current[col] = row;
                self.dfs(col + 1, value + self.matrix.priorities()[col]);
                self.residual[row] += w;
            }
        }
        self.current[col] = rows;
        self.dfs(col + 1, value);
    }
}

/// Exact maximizer of the aggregate priority by branch and bound.
///
/// Among optimal schedules it returns the lexicographically smallest column
/// to row mapping, with "unassigned" ranked after every row.
pub fn oracle_schedule(matrix: &AssignmentMatrix, weights: Option<&[u32]>) -> Result<Schedule, ScheduleError> {
    let (cols, rows) = (matrix.column_count(), matrix.row_count());
    if cols > ORACLE_MAX_CHUNKS || rows > ORACLE_MAX_NEIGHBORS {
        return Err(ScheduleError::TooLarge {
            chunks: cols,
            neighbors: rows,
            max_chunks: ORACLE_MAX_CHUNKS,
            max_neighbors: ORACLE_MAX_NEIGHBORS,
        });
    }
    let weights = matrix.resolve_weights(weights)?;
    let mut search = Search {
        matrix,
        unit: weights.iter().all(|&w| w == 1),
        weights,
        residual: matrix.capacities().to_vec(),
        current: vec![rows; cols],
        best: vec![rows; cols],
        best_value: f64::NEG_INFINITY,
    };
    search.dfs(0, 0.0);
    let picks: Vec<(usize, usize)> =
        search.best.iter().enumerate().filter(|(_, &r)| r < rows).map(|(c, &r)| (c, r)).collect();
    Ok(Schedule::from_columns(matrix, &picks))
}

#[cfg(test)]
mod tests {
    use super::super::{aggregate_priority, check_schedule, fixtures, gap_schedule};
    use super::*;
    use crate::stream::{ChunkId, PeerId};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn three_neighbor_optimum_is_five() {
        let m = fixtures::three_neighbors();
        let s = oracle_schedule(&m, None).unwrap();
        check_schedule(&m, &s, None).unwrap();
        assert_eq!(aggregate_priority(&s, &m), 5.0);
        // chunk 1 on the first row would strand chunk 2 or 3
        assert_eq!(s.assignments[0], (ChunkId::new(1, 0), PeerId(4)));
    }

    #[test]
    fn rejects_large_instances() {
        let chunks: Vec<ChunkId> = (0..13).map(|s| ChunkId::new(s, 0)).collect();
        let m = AssignmentMatrix::from_parts(chunks, vec![1.0; 13], vec![PeerId(1)], vec![1], vec![true; 13]);
        assert!(matches!(oracle_schedule(&m, None), Err(ScheduleError::TooLarge { .. })));
    }

    /// Every map from chunks to `{none} ∪ rows`, filtered by the constraints.
    fn enumerate_best(m: &AssignmentMatrix) -> f64 {
        let (cols, rows) = (m.column_count(), m.row_count());
        let choices = rows + 1;
        let mut best = 0.0f64;
        for code in 0..choices.pow(cols as u32) {
            let mut c = code;
            let mut used = vec![0u32; rows];
            let mut value = 0.0;
            let mut ok = true;
            for col in 0..cols {
                let r = c % choices;
                c /= choices;
                if r < rows {
                    if !m.is_available(r, col) {
                        ok = false;
                        break;
                    }
                    used[r] += 1;
                    value += m.priorities()[col];
                }
            }
            if ok && used.iter().zip(m.capacities()).all(|(u, c)| u <= c) {
                best = best.max(value);
            }
        }
        best
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> AssignmentMatrix {
        let chunks: Vec<ChunkId> = (0..cols as u32).map(|s| ChunkId::new(s, 0)).collect();
        let priorities = (0..cols).map(|_| rng.gen_range(0.01..2.0)).collect();
        let peers = (1..=rows as u32).map(PeerId).collect();
        let caps = (0..rows).map(|_| rng.gen_range(0..3)).collect();
        let available = (0..rows * cols).map(|_| rng.gen_bool(0.5)).collect();
        AssignmentMatrix::from_parts(chunks, priorities, peers, caps, available)
    }

    #[test]
    fn matches_enumeration_on_small_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let rows = rng.gen_range(1..=2);
            let cols = rng.gen_range(1..=3);
            let m = random_matrix(&mut rng, rows, cols);
            let s = oracle_schedule(&m, None).unwrap();
            check_schedule(&m, &s, None).unwrap();
            assert!((aggregate_priority(&s, &m) - enumerate_best(&m)).abs() < 1e-9);
        }
        for _ in 0..50 {
            let m = random_matrix(&mut rng, 3, 6);
            let s = oracle_schedule(&m, None).unwrap();
            assert!((aggregate_priority(&s, &m) - enumerate_best(&m)).abs() < 1e-9);
        }
    }

    #[test]
    fn dominates_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let m = random_matrix(&mut rng, 4, 8);
            let o = aggregate_priority(&oracle_schedule(&m, None).unwrap(), &m);
            let g = aggregate_priority(&gap_schedule(&m, None).unwrap(), &m);
            assert!(o + 1e-9 >= g);
        }
    }
}
