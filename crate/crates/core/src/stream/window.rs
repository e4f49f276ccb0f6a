use std::ops::Range;
use std::sync::Arc;

use super::{ChunkId, Quality, StreamError, VideoProfile, NO_QUALITY};

/// Lengths of the three receiver-side intervals, in slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowConfig {
    pub playing_len: u32,
    /// Urgent interval length; doubles as the smoothing window `S_W`.
    pub urgent_len: u32,
    pub prefetch_len: u32,
    /// Consecutive base chunks required to resume after a stall.
    pub resume_threshold: u32,
}

impl WindowConfig {
    /// Playing and prefetch intervals default to twice the smoothing window.
    pub fn with_smoothing_window(smoothing_window: u32) -> Self {
        Self {
            playing_len: 2 * smoothing_window,
            urgent_len: smoothing_window,
            prefetch_len: 2 * smoothing_window,
            resume_threshold: 1,
        }
    }

    pub fn validate(&self) -> Result<(), StreamError> {
        if self.urgent_len == 0 {
            return Err(StreamError::InvalidWindow("urgent interval must be at least one slot"));
        }
        if self.resume_threshold == 0 {
            return Err(StreamError::InvalidWindow("resume threshold must be at least one chunk"));
        }
        Ok(())
    }

    /// Span from the playhead to the end of the prefetch interval.
    pub fn span(&self) -> u32 {
        self.playing_len + self.urgent_len + self.prefetch_len
    }
}

/// Where a delivered chunk ended up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Receipt {
    OnTime,
    /// The slot had already been consumed; kept only in the late ledger.
    Late,
    Duplicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaybackOutcome {
    /// Playback has not started yet.
    Startup,
    Played { slot: u32, quality: Quality },
    Stalled { slot: u32 },
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlaybackStep {
    /// Wall-clock slot at which the step happened.
    pub wall: u64,
    pub outcome: PlaybackOutcome,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PlaybackReport {
    pub steps: Vec<PlaybackStep>,
}

impl PlaybackReport {
    /// (slot, consumed quality) for every played slot, in order.
    pub fn played(&self) -> impl Iterator<Item = (u32, Quality)> + '_ {
        self.steps.iter().filter_map(|s| match s.outcome {
            PlaybackOutcome::Played { slot, quality } => Some((slot, quality)),
            _ => None,
        })
    }

    pub fn qualities(&self) -> Vec<Quality> {
        self.played().map(|(_, q)| q).collect()
    }

    /// Wall-clock slots during which playback was paused.
    pub fn stalled_walls(&self) -> Vec<u64> {
        self.steps
            .iter()
            .filter(|s| matches!(s.outcome, PlaybackOutcome::Stalled { .. }))
            .map(|s| s.wall)
            .collect()
    }

    pub fn extend(&mut self, other: PlaybackReport) {
        self.steps.extend(other.steps);
    }
}

/// Receiver-side chunk store split into playing, urgent and prefetch
/// intervals relative to the playhead.
///
/// The deadline of slot `j` is the moment the playhead consumes it. A
/// chunk delivered while `j >= playhead` is on time; anything later goes to
/// the late ledger and is never decoded. Before playback starts the
/// playhead is negative and counts up to zero.
#[derive(Debug, Clone)]
pub struct SlidingWindow {
    profile: Arc<VideoProfile>,
    config: WindowConfig,
    playhead: i64,
    clock: u64,
    receipts: Vec<Option<u64>>,
    late: Vec<(ChunkId, u64)>,
    targets: Vec<Option<Quality>>,
    stalled: bool,
}

impl SlidingWindow {
    pub fn new(profile: Arc<VideoProfile>, config: WindowConfig) -> Result<Self, StreamError> {
        config.validate()?;
        let cells = profile.total_slots() as usize * profile.layer_count();
        let slots = profile.total_slots() as usize;
        Ok(Self {
            profile,
            config,
            playhead: 0,
            clock: 0,
            receipts: vec![None; cells],
            late: Vec::new(),
            targets: vec![None; slots],
            stalled: false,
        })
    }

    /// Start with the playhead `startup` slots before the first stream slot.
    pub fn with_startup(mut self, startup: u32) -> Self {
        self.playhead = -(startup as i64);
        self
    }

    /// Place the playhead at an arbitrary stream slot.
    pub fn starting_at(mut self, playhead: i64) -> Self {
        self.playhead = playhead;
        self
    }

    pub fn profile(&self) -> &VideoProfile {
        &self.profile
    }

    pub fn shared_profile(&self) -> &Arc<VideoProfile> {
        &self.profile
    }

    pub fn config(&self) -> &WindowConfig {
        &self.config
    }

    pub fn playhead(&self) -> i64 {
        self.playhead
    }

    /// Wall-clock slots elapsed through [`advance_playhead`](Self::advance_playhead).
    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn is_stalled(&self) -> bool {
        self.stalled
    }

    pub fn is_finished(&self) -> bool {
        self.playhead >= self.profile.total_slots() as i64
    }

    fn clip(&self, start: i64, len: u32) -> Range<u32> {
        let total = self.profile.total_slots() as i64;
        let lo = start.clamp(0, total);
        let hi = (start + len as i64).clamp(0, total);
        lo as u32..hi as u32
    }

    pub fn playing_interval(&self) -> Range<u32> {
        self.clip(self.playhead, self.config.playing_len)
    }

    pub fn urgent_interval(&self) -> Range<u32> {
        self.clip(self.playhead + self.config.playing_len as i64, self.config.urgent_len)
    }

    pub fn prefetch_interval(&self) -> Range<u32> {
        let start = self.playhead + (self.config.playing_len + self.config.urgent_len) as i64;
        self.clip(start, self.config.prefetch_len)
    }

    /// Last stream slot of the urgent interval, unclipped.
    pub fn urgent_end(&self) -> i64 {
        self.playhead + (self.config.playing_len + self.config.urgent_len) as i64
    }

    pub fn deadline_passed(&self, slot: u32) -> bool {
        (slot as i64) < self.playhead
    }

    pub fn is_held(&self, chunk: ChunkId) -> bool {
        self.profile.contains(chunk) && self.receipts[self.profile.index(chunk)].is_some()
    }

    /// Wall-clock slot at which `chunk` arrived on time.
    pub fn receipt(&self, chunk: ChunkId) -> Option<u64> {
        if !self.profile.contains(chunk) {
            return None;
        }
        self.receipts[self.profile.index(chunk)]
    }

    pub fn late_chunks(&self) -> &[(ChunkId, u64)] {
        &self.late
    }

    /// Record a delivery at wall-clock slot `wall`.
    pub fn receive(&mut self, chunk: ChunkId, wall: u64) -> Receipt {
        assert!(self.profile.contains(chunk), "chunk {chunk} outside the stream");
        if self.deadline_passed(chunk.slot) {
            self.late.push((chunk, wall));
            return Receipt::Late;
        }
        let cell = &mut self.receipts[self.profile.index(chunk)];
        if cell.is_some() {
            return Receipt::Duplicate;
        }
        *cell = Some(wall);
        Receipt::OnTime
    }

    /// Mark every chunk as held on time (used for the stream source).
    pub fn fill_all(&mut self) {
        self.receipts.iter_mut().for_each(|r| *r = Some(0));
    }

    pub fn set_target(&mut self, slot: u32, quality: Quality) {
        self.targets[slot as usize] = Some(quality);
    }

    pub fn target(&self, slot: u32) -> Option<Quality> {
        self.targets.get(slot as usize).copied().flatten()
    }

    /// Highest `q` such that layers `0..=q` of `slot` are all held on time.
    pub fn decodable_level(&self, slot: u32) -> Quality {
        if slot >= self.profile.total_slots() {
            return NO_QUALITY;
        }
        let base = self.profile.index(ChunkId::new(slot, 0));
        let layers = self.profile.layer_count();
        self.receipts[base..base + layers].iter().take_while(|r| r.is_some()).count() as Quality - 1
    }

    /// Whether `chunk` and all lower layers of its slot were received before
    /// the deadline.
    pub fn decodable(&self, chunk: ChunkId) -> bool {
        self.profile.contains(chunk) && self.decodable_level(chunk.slot) >= chunk.layer as Quality
    }

    /// Urgent-interval chunks up to `target_quality` that are not held,
    /// ordered by slot then layer.
    pub fn missing_chunks(&self, target_quality: Quality) -> Vec<ChunkId> {
        self.missing_chunks_by(|_| target_quality)
    }

    /// Like [`missing_chunks`](Self::missing_chunks) with a per-slot target.
    pub fn missing_chunks_by(&self, target: impl Fn(u32) -> Quality) -> Vec<ChunkId> {
        self.missing_in(self.urgent_interval(), target)
    }

    /// Missing chunks over `slots` up to a per-slot target, ordered by slot
    /// then layer. Slots past their deadline are skipped.
    pub fn missing_in(&self, slots: Range<u32>, target: impl Fn(u32) -> Quality) -> Vec<ChunkId> {
        let mut out = Vec::new();
        for slot in slots {
            if self.deadline_passed(slot) {
                continue;
            }
            let q = target(slot).min(self.profile.top_quality());
            for layer in 0..=q {
                let chunk = ChunkId::new(slot, layer as u8);
                if !self.is_held(chunk) {
                    out.push(chunk);
                }
            }
        }
        out
    }

    /// Consume up to `slots` wall-clock slots of playback.
    ///
    /// Each played slot yields the highest decodable quality, capped by the
    /// slot's selected target when one is set. Playback pauses while the
    /// base chunk at the playhead is missing and resumes once
    /// `resume_threshold` consecutive base chunks are present.
    pub fn advance_playhead(&mut self, slots: u32) -> PlaybackReport {
        let mut report = PlaybackReport { steps: Vec::with_capacity(slots as usize) };
        for _ in 0..slots {
            let wall = self.clock;
            self.clock += 1;
            let outcome = self.step();
            report.steps.push(PlaybackStep { wall, outcome });
        }
        report
    }

    fn step(&mut self) -> PlaybackOutcome {
        let total = self.profile.total_slots() as i64;
        if self.playhead < 0 {
            self.playhead += 1;
            return PlaybackOutcome::Startup;
        }
        if self.playhead >= total {
            return PlaybackOutcome::Finished;
        }
        let slot = self.playhead as u32;
        let needed = if self.stalled { self.config.resume_threshold } else { 1 };
        let ready = (0..needed)
            .map(|i| slot as i64 + i as i64)
            .take_while(|&s| s < total)
            .all(|s| self.is_held(ChunkId::new(s as u32, 0)));
        if !ready {
            self.stalled = true;
            return PlaybackOutcome::Stalled { slot };
        }
        self.stalled = false;
        let cap = self.target(slot).map_or(self.profile.top_quality(), |t| t.max(0));
        let quality = self.decodable_level(slot).min(cap);
        self.playhead += 1;
        PlaybackOutcome::Played { slot, quality }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn profile(layers: usize) -> Arc<VideoProfile> {
        Arc::new(VideoProfile::uniform(layers, 100.0, 1.0, 40).unwrap())
    }

    fn window(layers: usize, urgent: u32) -> SlidingWindow {
        let cfg = WindowConfig { playing_len: 2, urgent_len: urgent, prefetch_len: 4, resume_threshold: 1 };
        SlidingWindow::new(profile(layers), cfg).unwrap().starting_at(10)
    }

    #[test]
    fn intervals_are_contiguous() {
        let w = window(3, 5);
        assert_eq!(w.playing_interval(), 10..12);
        assert_eq!(w.urgent_interval(), 12..17);
        assert_eq!(w.prefetch_interval(), 17..21);
        let w = w.starting_at(37);
        assert_eq!(w.urgent_interval(), 39..40);
        assert_eq!(w.prefetch_interval(), 40..40);
    }

    #[test]
    fn missing_with_empty_holdings() {
        let w = window(3, 2);
        let t = 12;
        assert_eq!(
            w.missing_chunks(1),
            vec![ChunkId::new(t, 0), ChunkId::new(t, 1), ChunkId::new(t + 1, 0), ChunkId::new(t + 1, 1)]
        );
        assert!(w.missing_chunks(-1).is_empty());
    }

    #[test]
    fn missing_with_full_holdings() {
        let mut w = window(3, 2);
        for slot in 12..14 {
            for layer in 0..3 {
                w.receive(ChunkId::new(slot, layer), 0);
            }
        }
        assert!(w.missing_chunks(2).is_empty());
    }

    #[test]
    fn missing_matches_reference_enumeration() {
        let mut w = window(4, 3);
        let t = 12;
        // everything up to layer 1 held except (t, 1); a few layer-2 chunks held
        for slot in t..t + 3 {
            for layer in 0..2 {
                if (slot, layer) != (t, 1) {
                    w.receive(ChunkId::new(slot, layer), 0);
                }
            }
        }
        w.receive(ChunkId::new(t + 1, 2), 0);
        let held: BTreeSet<ChunkId> =
            (t..t + 3).flat_map(|s| (0..4).map(move |l| ChunkId::new(s, l))).filter(|c| w.is_held(*c)).collect();
        let mut expected = Vec::new();
        for s in w.urgent_interval() {
            for l in 0..=2u8 {
                let c = ChunkId::new(s, l);
                if !held.contains(&c) {
                    expected.push(c);
                }
            }
        }
        assert_eq!(w.missing_chunks(2), expected);
        assert_eq!(expected, vec![ChunkId::new(t, 1), ChunkId::new(t, 2), ChunkId::new(t + 2, 2)]);
    }

    #[test]
    fn decodability_rules() {
        let mut w = window(3, 5);
        w.receive(ChunkId::new(12, 0), 0);
        assert!(w.decodable(ChunkId::new(12, 0)));
        // layer 2 held, base missing (the T = 5 column of the buffer-map figure)
        w.receive(ChunkId::new(13, 2), 0);
        assert!(!w.decodable(ChunkId::new(13, 2)));
        // layer 1 arrives after its slot was played
        let mut w = window(3, 5);
        w.receive(ChunkId::new(10, 0), 0);
        w.advance_playhead(1);
        assert_eq!(w.receive(ChunkId::new(10, 1), 1), Receipt::Late);
        assert!(!w.decodable(ChunkId::new(10, 1)));
        assert_eq!(w.late_chunks(), &[(ChunkId::new(10, 1), 1)]);
    }

    #[test]
    fn duplicate_delivery_is_flagged() {
        let mut w = window(2, 5);
        assert_eq!(w.receive(ChunkId::new(15, 0), 3), Receipt::OnTime);
        assert_eq!(w.receive(ChunkId::new(15, 0), 4), Receipt::Duplicate);
        assert_eq!(w.receipt(ChunkId::new(15, 0)), Some(3));
    }

    #[test]
    fn playback_all_layers() {
        let mut w = window(3, 5);
        for slot in 10..13 {
            for layer in 0..3 {
                w.receive(ChunkId::new(slot, layer), 0);
            }
        }
        assert_eq!(w.advance_playhead(3).qualities(), vec![2, 2, 2]);
        assert_eq!(w.playhead(), 13);
    }

    #[test]
    fn playback_stalls_on_missing_base() {
        let mut w = window(3, 5);
        let report = w.advance_playhead(2);
        assert_eq!(report.steps[0].outcome, PlaybackOutcome::Stalled { slot: 10 });
        assert_eq!(report.stalled_walls(), vec![0, 1]);
        assert_eq!(w.playhead(), 10);
        w.receive(ChunkId::new(10, 0), 2);
        assert_eq!(w.advance_playhead(1).qualities(), vec![0]);
    }

    #[test]
    fn playback_follows_layer_dependency() {
        let mut w = window(3, 5);
        for c in [(10, 0), (10, 1), (11, 0), (11, 2)] {
            w.receive(ChunkId::new(c.0, c.1), 0);
        }
        assert_eq!(w.advance_playhead(2).qualities(), vec![1, 0]);
    }

    #[test]
    fn playback_respects_target_cap() {
        let mut w = window(3, 5);
        for layer in 0..3 {
            w.receive(ChunkId::new(10, layer), 0);
        }
        w.set_target(10, 1);
        assert_eq!(w.advance_playhead(1).qualities(), vec![1]);
    }

    #[test]
    fn startup_counts_up_to_zero() {
        let cfg = WindowConfig::with_smoothing_window(3);
        let mut w = SlidingWindow::new(profile(2), cfg).unwrap().with_startup(2);
        assert_eq!(w.urgent_interval(), 4..7);
        let r = w.advance_playhead(2);
        assert!(r.steps.iter().all(|s| s.outcome == PlaybackOutcome::Startup));
        assert_eq!(w.playhead(), 0);
    }

    #[test]
    fn resume_threshold_waits_for_run_of_base_chunks() {
        let cfg = WindowConfig { playing_len: 1, urgent_len: 3, prefetch_len: 1, resume_threshold: 2 };
        let mut w = SlidingWindow::new(profile(1), cfg).unwrap();
        assert!(matches!(w.advance_playhead(1).steps[0].outcome, PlaybackOutcome::Stalled { .. }));
        w.receive(ChunkId::new(0, 0), 1);
        assert!(matches!(w.advance_playhead(1).steps[0].outcome, PlaybackOutcome::Stalled { .. }));
        w.receive(ChunkId::new(1, 0), 2);
        assert_eq!(w.advance_playhead(2).qualities(), vec![0, 0]);
    }

    proptest::proptest! {
        #[test]
        fn missing_chunks_stay_in_urgent_interval(
            playhead in 0i64..40,
            q in -1i32..4,
            held in proptest::collection::vec((0u32..40, 0u8..4), 0..80),
        ) {
            let mut w = window(4, 5).starting_at(playhead);
            for (s, l) in held {
                w.receive(ChunkId::new(s, l), 0);
            }
            let urgent = w.urgent_interval();
            for c in w.missing_chunks(q) {
                proptest::prop_assert!(c.layer as i32 <= q);
                proptest::prop_assert!(urgent.contains(&c.slot));
                proptest::prop_assert!(!w.deadline_passed(c.slot));
                proptest::prop_assert!(!w.is_held(c));
            }
        }

        #[test]
        fn decodable_is_monotone_in_layer(
            held in proptest::collection::vec((10u32..20, 0u8..4), 0..40),
        ) {
            let mut w = window(4, 5);
            for (s, l) in held {
                w.receive(ChunkId::new(s, l), 0);
            }
            for s in 10..20 {
                for l in 1..4u8 {
                    if w.decodable(ChunkId::new(s, l)) {
                        proptest::prop_assert!(w.decodable(ChunkId::new(s, l - 1)));
                    }
                }
            }
        }
    }
}
