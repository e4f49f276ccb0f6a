use rand::seq::SliceRandom;
use rand::Rng;

use super::{AssignmentMatrix, Schedule, ScheduleError};
use crate::stream::Quality;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    /// Each chunk, in random order, to a uniformly random capable neighbor.
    Random,
    /// Rarest chunks first, each to the capable neighbor with the most
    /// residual capacity.
    Lrf,
    /// Neighbors take turns in id order, each claiming the next chunk it holds.
    RoundRobin,
    /// Layers up to `threshold` by the random rule, then higher layers one at
    /// a time in ascending order.
    LayerP2p { threshold: Quality },
}

struct State<'a> {
    matrix: &'a AssignmentMatrix,
    weights: Vec<u32>,
    residual: Vec<u32>,
    taken: Vec<bool>,
    picks: Vec<(usize, usize)>,
}

impl<'a> State<'a> {
    fn new(matrix: &'a AssignmentMatrix, weights: Option<&[u32]>) -> Result<Self, ScheduleError> {
        Ok(Self {
            matrix,
            weights: matrix.resolve_weights(weights)?,
            residual: matrix.capacities().to_vec(),
            taken: vec![false; matrix.column_count()],
            picks: Vec::new(),
        })
    }

    fn capable(&self, col: usize) -> impl Iterator<Item = usize> + '_ {
        let w = self.weights[col];
        (0..self.matrix.row_count()).filter(move |&r| self.matrix.is_available(r, col) && self.residual[r] >= w)
    }

    fn assign(&mut self, col: usize, row: usize) {
        self.residual[row] -= self.weights[col];
        self.taken[col] = true;
        self.picks.push((col, row));
    }

    fn random_rule(&mut self, cols: &[usize], rng: &mut impl Rng) {
        for &col in cols {
            let rows: Vec<usize> = self.capable(col).collect();
            if let Some(&row) = rows.choose(rng) {
                self.assign(col, row);
            }
        }
    }

    fn finish(self) -> Schedule {
        Schedule::from_columns(self.matrix, &self.picks)
    }
}

/// Run a baseline scheduler. `rng` drives every random choice and tie-break.
pub fn baseline_schedule(
    kind: BaselineKind,
    matrix: &AssignmentMatrix,
    weights: Option<&[u32]>,
    rng: &mut impl Rng,
) -> Result<Schedule, ScheduleError> {
    let mut st = State::new(matrix, weights)?;
    let cols = matrix.column_count();
    match kind {
        BaselineKind::Random => {
            let mut order: Vec<usize> = (0..cols).collect();
            order.shuffle(rng);
            st.random_rule(&order, rng);
        }
        BaselineKind::Lrf => {
            let mut order: Vec<usize> = (0..cols).collect();
            order.shuffle(rng);
            order.sort_by_key(|&c| matrix.replicas(c));
            for col in order {
                let best = st
                    .capable(col)
                    .max_by(|&a, &b| st.residual[a].cmp(&st.residual[b]).then(matrix.rows()[b].cmp(&matrix.rows()[a])));
                if let Some(row) = best {
                    st.assign(col, row);
                }
            }
        }
        BaselineKind::RoundRobin => {
            let mut turn: Vec<usize> = (0..matrix.row_count()).collect();
            turn.sort_by_key(|&r| matrix.rows()[r]);
            loop {
                let mut progressed = false;
                for &row in &turn {
                    let next = (0..cols).find(|&c| {
                        !st.taken[c] && matrix.is_available(row, c) && st.residual[row] >= st.weights[c]
                    });
                    if let Some(col) = next {
                        st.assign(col, row);
                        progressed = true;
                    }
                }
                if !progressed {
                    break;
                }
            }
        }
        BaselineKind::LayerP2p { threshold } => {
            let chunks = matrix.chunks();
            let mut regular: Vec<usize> = (0..cols).filter(|&c| (chunks[c].layer as Quality) <= threshold).collect();
            regular.shuffle(rng);
            st.random_rule(&regular, rng);
            let mut probing: Vec<usize> = (0..cols).filter(|&c| (chunks[c].layer as Quality) > threshold).collect();
            probing.sort_by_key(|&c| (chunks[c].layer, chunks[c].slot));
            st.random_rule(&probing, rng);
        }
    }
    Ok(st.finish())
}
