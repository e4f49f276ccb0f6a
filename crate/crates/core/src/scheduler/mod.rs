//! Chunk-to-neighbor scheduling.
//!
//! A receiver turns its missing chunks and its neighbors' buffer maps into an
//! [`AssignmentMatrix`] and hands it to one of the schedulers: the
//! row-processing GAP heuristic, an exhaustive oracle for small instances, or
//! a baseline (random, local-rarest-first, round-robin, layerp2p).

mod baseline;
mod gap;
mod oracle;

pub use baseline::{baseline_schedule, BaselineKind};
pub use gap::{gap_schedule, gap_schedule_with, DpKnapsack, GreedyTopC, RowItem, RowSolver};
pub use oracle::{oracle_schedule, ORACLE_MAX_CHUNKS, ORACLE_MAX_NEIGHBORS};

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::stream::{BufferMap, ChunkId, PeerId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("oracle limited to {max_chunks} chunks and {max_neighbors} neighbors, got {chunks} and {neighbors}")]
    TooLarge { chunks: usize, neighbors: usize, max_chunks: usize, max_neighbors: usize },
    #[error("unknown scheduler `{0}`")]
    UnknownKind(String),
    #[error("priority parameter invalid: {0}")]
    InvalidParams(&'static str),
    #[error("{expected} chunk weights expected, got {actual}")]
    WeightCount { expected: usize, actual: usize },
    #[error("chunk weight must be at least 1")]
    ZeroWeight,
}

/// Parameters of `P = E^(now - deadline) + θ·B^(L - (layer + 1))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorityParams {
    pub theta: f64,
    pub emergency_base: f64,
    pub layer_base: f64,
    pub layers: usize,
}

impl PriorityParams {
    pub fn new(theta: f64, emergency_base: f64, layer_base: f64, layers: usize) -> Result<Self, ScheduleError> {
        let params = Self { theta, emergency_base, layer_base, layers };
        params.validate()?;
        Ok(params)
    }

    /// Bases of 10 and `θ = 10^-L`.
    pub fn conservative(layers: usize) -> Self {
        Self { theta: 10f64.powi(-(layers as i32)), emergency_base: 10.0, layer_base: 10.0, layers }
    }

    /// `θ = 1`: the layer term outweighs any deadline difference inside the
    /// window, so every lower layer goes before any upper one.
    pub fn layer_major(layers: usize) -> Self {
        Self { theta: 1.0, ..Self::conservative(layers) }
    }

    /// `θ = 10^-(horizon + L + 1)`: the layer term only separates chunks with
    /// the same deadline within a `horizon`-slot window.
    pub fn time_major(layers: usize, horizon: u32) -> Self {
        Self { theta: 10f64.powi(-((horizon as usize + layers + 1) as i32)), ..Self::conservative(layers) }
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(ScheduleError::InvalidParams("theta must be positive"));
        }
        if !(self.emergency_base > 1.0 && self.layer_base > 1.0) {
            return Err(ScheduleError::InvalidParams("bases must exceed 1"));
        }
        if self.layers == 0 {
            return Err(ScheduleError::InvalidParams("layer count must be positive"));
        }
        Ok(())
    }
}

/// Named priority preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PriorityPreset {
    Conservative,
    LayerMajor,
    TimeMajor,
}

impl PriorityPreset {
    pub fn params(self, layers: usize, horizon: u32) -> PriorityParams {
        match self {
            PriorityPreset::Conservative => PriorityParams::conservative(layers),
            PriorityPreset::LayerMajor => PriorityParams::layer_major(layers),
            PriorityPreset::TimeMajor => PriorityParams::time_major(layers, horizon),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PriorityPreset::Conservative => "conservative",
            PriorityPreset::LayerMajor => "layer-major",
            PriorityPreset::TimeMajor => "time-major",
        }
    }
}

impl FromStr for PriorityPreset {
    type Err = ScheduleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [PriorityPreset::Conservative, PriorityPreset::LayerMajor, PriorityPreset::TimeMajor]
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| ScheduleError::UnknownKind(s.to_string()))
    }
}

/// Priority of `chunk` at slot `now`; the chunk's deadline is its slot.
pub fn priority(chunk: ChunkId, now: i64, params: &PriorityParams) -> f64 {
    let lateness = now - chunk.slot as i64;
    let layer_exp = params.layers as i32 - (chunk.layer as i32 + 1);
    params.emergency_base.powi(lateness as i32) + params.theta * params.layer_base.powi(layer_exp)
}

/// What a receiver knows about one neighbor when scheduling.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborView {
    pub id: PeerId,
    pub map: BufferMap,
    /// Chunks (or weight units) the neighbor serves per scheduling period.
    pub capacity: u32,
    /// Share of past requests it fulfilled, in `[0, 1]`.
    pub reliability: f64,
}

/// Rows are neighbors in processing order, columns the missing chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix {
    chunks: Vec<ChunkId>,
    priorities: Vec<f64>,
    rows: Vec<PeerId>,
    capacities: Vec<u32>,
    reliabilities: Vec<f64>,
    available: Vec<bool>,
}

/// Order rows by reliability (descending), then capacity (descending), then id.
fn row_order(a: &NeighborView, b: &NeighborView) -> Ordering {
    b.reliability
        .total_cmp(&a.reliability)
        .then(b.capacity.cmp(&a.capacity))
        .then(a.id.cmp(&b.id))
}

/// Build the matrix; an entry exists iff the neighbor advertises the chunk.
pub fn build_matrix(missing: &[ChunkId], neighbors: &[NeighborView], priority: impl Fn(ChunkId) -> f64) -> AssignmentMatrix {
    let mut sorted: Vec<&NeighborView> = neighbors.iter().collect();
    sorted.sort_by(|a, b| row_order(a, b));
    let mut available = Vec::with_capacity(sorted.len() * missing.len());
    for n in &sorted {
        available.extend(missing.iter().map(|&c| n.map.contains(c)));
    }
    AssignmentMatrix {
        chunks: missing.to_vec(),
        priorities: missing.iter().map(|&c| priority(c)).collect(),
        rows: sorted.iter().map(|n| n.id).collect(),
        capacities: sorted.iter().map(|n| n.capacity).collect(),
        reliabilities: sorted.iter().map(|n| n.reliability).collect(),
        available,
    }
}

impl AssignmentMatrix {
    /// Matrix from explicit parts; `available` is row-major.
    pub fn from_parts(
        chunks: Vec<ChunkId>,
        priorities: Vec<f64>,
        rows: Vec<PeerId>,
        capacities: Vec<u32>,
        available: Vec<bool>,
    ) -> Self {
        assert_eq!(chunks.len(), priorities.len());
        assert_eq!(rows.len(), capacities.len());
        assert_eq!(available.len(), rows.len() * chunks.len());
        let reliabilities = vec![1.0; rows.len()];
        Self { chunks, priorities, rows, capacities, reliabilities, available }
    }

    pub fn chunks(&self) -> &[ChunkId] {
        &self.chunks
    }

    pub fn priorities(&self) -> &[f64] {
        &self.priorities
    }

    pub fn rows(&self) -> &[PeerId] {
        &self.rows
    }

    pub fn capacities(&self) -> &[u32] {
        &self.capacities
    }

    pub fn reliabilities(&self) -> &[f64] {
        &self.reliabilities
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn column_count(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_available(&self, row: usize, col: usize) -> bool {
        self.available[row * self.chunks.len() + col]
    }

    pub fn entry_count(&self) -> usize {
        self.available.iter().filter(|&&a| a).count()
    }

    /// Number of rows advertising column `col`.
    pub fn replicas(&self, col: usize) -> usize {
        (0..self.rows.len()).filter(|&r| self.is_available(r, col)).count()
    }

    pub fn row_of(&self, peer: PeerId) -> Option<usize> {
        self.rows.iter().position(|&p| p == peer)
    }

    pub fn column_of(&self, chunk: ChunkId) -> Option<usize> {
        self.chunks.iter().position(|&c| c == chunk)
    }

    /// Per-column weights, all 1 when `weights` is `None`.
    pub(crate) fn resolve_weights(&self, weights: Option<&[u32]>) -> Result<Vec<u32>, ScheduleError> {
        match weights {
            None => Ok(vec![1; self.chunks.len()]),
            Some(w) if w.len() != self.chunks.len() => {
                Err(ScheduleError::WeightCount { expected: self.chunks.len(), actual: w.len() })
            }
            Some(w) if w.contains(&0) => Err(ScheduleError::ZeroWeight),
            Some(w) => Ok(w.to_vec()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Schedule {
    /// `(chunk, neighbor)` requests in the order they were decided.
    pub assignments: Vec<(ChunkId, PeerId)>,
    pub unassigned: Vec<ChunkId>,
}

impl Schedule {
    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    /// Fill `unassigned` from the matrix columns not in `assignments`.
    pub(crate) fn finish(mut self, matrix: &AssignmentMatrix) -> Self {
        let mut taken = vec![false; matrix.column_count()];
        for (chunk, _) in &self.assignments {
            if let Some(c) = matrix.column_of(*chunk) {
                taken[c] = true;
            }
        }
        self.unassigned = matrix.chunks.iter().zip(&taken).filter(|(_, &t)| !t).map(|(&c, _)| c).collect();
        self
    }

    pub(crate) fn from_columns(matrix: &AssignmentMatrix, picks: &[(usize, usize)]) -> Self {
        Schedule {
            assignments: picks.iter().map(|&(col, row)| (matrix.chunks[col], matrix.rows[row])).collect(),
            unassigned: Vec::new(),
        }
        .finish(matrix)
    }
}

/// Sum of the priorities of the assigned chunks.
pub fn aggregate_priority(schedule: &Schedule, matrix: &AssignmentMatrix) -> f64 {
    schedule
        .assignments
        .iter()
        .filter_map(|(c, _)| matrix.column_of(*c))
        .map(|col| matrix.priorities[col])
        .fold(0.0, |a, b| a + b)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    UnknownChunk(ChunkId),
    UnknownNeighbor(PeerId),
    NotAvailable(ChunkId, PeerId),
    DuplicateChunk(ChunkId),
    OverCapacity { neighbor: PeerId, used: u32, capacity: u32 },
    UnassignedMismatch,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownChunk(c) => write!(f, "chunk {c} is not a column"),
            Violation::UnknownNeighbor(p) => write!(f, "neighbor {p} is not a row"),
            Violation::NotAvailable(c, p) => write!(f, "chunk {c} requested from {p}, which does not hold it"),
            Violation::DuplicateChunk(c) => write!(f, "chunk {c} requested more than once"),
            Violation::OverCapacity { neighbor, used, capacity } => {
                write!(f, "neighbor {neighbor} assigned {used} units over capacity {capacity}")
            }
            Violation::UnassignedMismatch => write!(f, "unassigned list does not complement the assignments"),
        }
    }
}

/// Capacity, single-assignment and availability constraints.
pub fn check_schedule(matrix: &AssignmentMatrix, schedule: &Schedule, weights: Option<&[u32]>) -> Result<(), Violation> {
    let weights = matrix.resolve_weights(weights).expect("weights match the matrix");
    let mut used = vec![0u32; matrix.row_count()];
    let mut taken = vec![false; matrix.column_count()];
    for &(chunk, peer) in &schedule.assignments {
        let col = matrix.column_of(chunk).ok_or(Violation::UnknownChunk(chunk))?;
        let row = matrix.row_of(peer).ok_or(Violation::UnknownNeighbor(peer))?;
        if !matrix.is_available(row, col) {
            return Err(Violation::NotAvailable(chunk, peer));
        }
        if std::mem::replace(&mut taken[col], true) {
            return Err(Violation::DuplicateChunk(chunk));
        }
        used[row] += weights[col];
        if used[row] > matrix.capacities[row] {
            return Err(Violation::OverCapacity { neighbor: peer, used: used[row], capacity: matrix.capacities[row] });
        }
    }
    let mut expected: Vec<ChunkId> =
        matrix.chunks.iter().zip(&taken).filter(|(_, &t)| !t).map(|(&c, _)| c).collect();
    let mut actual = schedule.unassigned.clone();
    expected.sort();
    actual.sort();
    if expected != actual {
        return Err(Violation::UnassignedMismatch);
    }
    Ok(())
}

/// Scheduler selectable from a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchedulerKind {
    Gap,
    Random,
    Lrf,
    RoundRobin,
    LayerP2p,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 5] =
        [SchedulerKind::Gap, SchedulerKind::Random, SchedulerKind::Lrf, SchedulerKind::RoundRobin, SchedulerKind::LayerP2p];

    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::Gap => "gap",
            SchedulerKind::Random => "random",
            SchedulerKind::Lrf => "lrf",
            SchedulerKind::RoundRobin => "rr",
            SchedulerKind::LayerP2p => "layerp2p",
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchedulerKind {
    type Err = ScheduleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rnd" => return Ok(SchedulerKind::Random),
            "round-robin" => return Ok(SchedulerKind::RoundRobin),
            _ => {}
        }
        SchedulerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ScheduleError::UnknownKind(s.to_string()))
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn priority_examples() {
        let p = PriorityParams::conservative(4);
        assert!((priority(ChunkId::new(12, 0), 10, &p) - 0.11).abs() < 1e-12);
        assert!((priority(ChunkId::new(10, 0), 10, &p) - 1.1).abs() < 1e-12);
        assert!(priority(ChunkId::new(12, 1), 10, &p) > priority(ChunkId::new(12, 2), 10, &p));
    }

    #[test]
    fn priority_orderings() {
        for layers in 1..=12usize {
            let p = PriorityParams::conservative(layers);
            for layer in 0..layers as u8 {
                // deadlines within a 15-slot window
                for d in 0..15u32 {
                    // nearer deadline, same layer: strictly higher
                    assert!(priority(ChunkId::new(100 + d, layer), 100, &p) > priority(ChunkId::new(101 + d, layer), 100, &p));
                }
                if (layer as usize) + 1 < layers {
                    assert!(priority(ChunkId::new(105, layer), 100, &p) > priority(ChunkId::new(105, layer + 1), 100, &p));
                }
            }
        }
    }

    #[test]
    fn presets_separate_as_named() {
        let layers = 8;
        let horizon = 15;
        let lm = PriorityParams::layer_major(layers);
        let tm = PriorityParams::time_major(layers, horizon);
        for a in 0..horizon {
            for b in 0..horizon {
                for la in 0..layers as u8 {
                    for lb in 0..layers as u8 {
                        let ca = ChunkId::new(a, la);
                        let cb = ChunkId::new(b, lb);
                        if la < lb {
                            assert!(priority(ca, 0, &lm) > priority(cb, 0, &lm));
                        }
                        if a < b {
                            assert!(priority(ca, 0, &tm) > priority(cb, 0, &tm));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn params_validation() {
        assert!(PriorityParams::new(0.0, 10.0, 10.0, 4).is_err());
        assert!(PriorityParams::new(1.0, 1.0, 10.0, 4).is_err());
        assert!(PriorityParams::new(1.0, 10.0, 10.0, 0).is_err());
        assert!(PriorityParams::new(1e-4, 10.0, 10.0, 4).is_ok());
    }

    fn view(id: u32, reliability: f64, capacity: u32) -> NeighborView {
        NeighborView { id: PeerId(id), map: BufferMap::empty(PeerId(id), 0, 1, 1), capacity, reliability }
    }

    #[test]
    fn rows_follow_reliability_then_capacity_then_id() {
        let m = build_matrix(&[], &[view(1, 0.5, 3), view(2, 0.9, 1), view(3, 0.9, 2)], |_| 1.0);
        assert_eq!(m.rows(), &[PeerId(3), PeerId(2), PeerId(1)]);
        let m = build_matrix(&[], &[view(5, 0.9, 1), view(2, 0.9, 1)], |_| 1.0);
        assert_eq!(m.rows(), &[PeerId(2), PeerId(5)]);
    }

    #[test]
    fn no_neighbors_leaves_everything_unassignable() {
        let missing = [ChunkId::new(0, 0), ChunkId::new(1, 0)];
        let m = build_matrix(&missing, &[], |_| 1.0);
        assert_eq!(m.row_count(), 0);
        assert_eq!(m.replicas(0), 0);
        let s = gap_schedule(&m, None).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.unassigned, missing);
    }

    #[test]
    fn three_neighbor_matrix_shape() {
        let m = fixtures::three_neighbors();
        assert_eq!((m.row_count(), m.column_count()), (3, 5));
        assert_eq!(m.entry_count(), 8);
    }

    #[test]
    fn aggregate_of_small_schedules() {
        let m = fixtures::three_neighbors();
        assert_eq!(aggregate_priority(&Schedule::default(), &m), 0.0);
        let one = Schedule { assignments: vec![(ChunkId::new(1, 0), PeerId(4))], unassigned: vec![] };
        assert_eq!(aggregate_priority(&one, &m), 1.0);
    }

    #[test]
    fn checker_flags_each_violation() {
        let m = fixtures::three_neighbors();
        let c = |s| ChunkId::new(s, 0);
        let bad = |assignments: Vec<(ChunkId, PeerId)>| Schedule { assignments, unassigned: vec![] }.finish(&m);
        assert_eq!(check_schedule(&m, &bad(vec![(c(3), PeerId(3))]), None), Err(Violation::NotAvailable(c(3), PeerId(3))));
        assert_eq!(
            check_schedule(&m, &bad(vec![(c(1), PeerId(2)), (c(1), PeerId(4))]), None),
            Err(Violation::DuplicateChunk(c(1)))
        );
        assert!(matches!(
            check_schedule(&m, &bad(vec![(c(1), PeerId(2)), (c(2), PeerId(2)), (c(3), PeerId(2))]), None),
            Err(Violation::OverCapacity { .. })
        ));
        assert_eq!(check_schedule(&m, &bad(vec![(c(9), PeerId(2))]), None), Err(Violation::UnknownChunk(c(9))));
        let mut s = bad(vec![(c(1), PeerId(2))]);
        s.unassigned.pop();
        assert_eq!(check_schedule(&m, &s, None), Err(Violation::UnassignedMismatch));
    }

    #[test]
    fn kind_names_round_trip() {
        for k in SchedulerKind::ALL {
            assert_eq!(k.name().parse::<SchedulerKind>().unwrap(), k);
        }
        assert_eq!("rnd".parse::<SchedulerKind>().unwrap(), SchedulerKind::Random);
        assert!("fifo".parse::<SchedulerKind>().is_err());
    }
}
