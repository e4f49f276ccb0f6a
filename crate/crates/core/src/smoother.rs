//! Tradeoff quality selection.
//!
//! * `raw` tracks the last measured bandwidth directly.
//! * `amplitude` limits the size of per-slot jumps using the mean deviation
//!   of recent achievable levels.
//! * `frequency` holds one level for a whole smoothing window and only
//!   raises it when the next window's missing chunks are affordable.
//! * `hybrid` applies the frequency rule and additionally bounds the change
//!   between consecutive windows.

use std::collections::VecDeque;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use num_rational::Rational64;
use thiserror::Error;

use crate::forecast::{estimate_next, BandwidthTrace, ForecastConfig, DEFAULT_EWMA_FACTOR};
use crate::stream::{max_sustainable_quality, ChunkId, Quality, SlidingWindow, VideoProfile, NO_QUALITY};

/// Level used before any bandwidth has been measured.
pub const STARTUP_QUALITY: Quality = 0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmootherError {
    #[error("mean quality of an empty history")]
    EmptyHistory,
    #[error("unknown smoothing strategy `{0}`")]
    UnknownStrategy(String),
    #[error("smoothing window must be at least one slot")]
    EmptyWindow,
    #[error("ewma factor must lie in (0, 1], got {0}")]
    InvalidFactor(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Raw,
    Amplitude,
    Frequency,
    Hybrid,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Raw, Strategy::Amplitude, Strategy::Frequency, Strategy::Hybrid];

    /// Whether the level is chosen once per smoothing window.
    pub fn per_window(self) -> bool {
        matches!(self, Strategy::Frequency | Strategy::Hybrid)
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Raw => "raw",
            Strategy::Amplitude => "amplitude",
            Strategy::Frequency => "frequency",
            Strategy::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = SmootherError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| SmootherError::UnknownStrategy(s.to_string()))
    }
}

/// Mean of the achieved levels over the last smoothing window.
pub fn mean_quality(history: &[Quality]) -> Result<Rational64, SmootherError> {
    if history.is_empty() {
        return Err(SmootherError::EmptyHistory);
    }
    let sum: i64 = history.iter().map(|&q| q as i64).sum();
    Ok(Rational64::new(sum, history.len() as i64))
}

/// `|previous - mean|`.
pub fn mean_deviation(previous: Quality, mean: Rational64) -> Rational64 {
    let diff = Rational64::from_integer(previous as i64) - mean;
    if diff < Rational64::from_integer(0) {
        -diff
    } else {
        diff
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplitudeInputs {
    /// `L^{t-1}`.
    pub previous: Quality,
    /// `α^t`.
    pub deviation: Rational64,
    /// `B̂^t`, kbit/s.
    pub forecast: f64,
    /// `B^{t-1}`, kbit/s.
    pub last_measured: f64,
    /// `L̂^t`.
    pub sustainable: Quality,
    /// `L_r^t`; a missing base layer contributes nothing.
    pub prefetched: Quality,
    pub top: Quality,
}

/// One step of the per-slot amplitude reduction rule.
///
/// On an expected increase the level rises by at most `floor(α)` and never
/// past the sustainable level; otherwise it can only hold or fall, cushioned
/// by what is already prefetched.
pub fn amplitude_step(inputs: &AmplitudeInputs) -> Quality {
    let level = if inputs.forecast >= inputs.last_measured {
        let raised = (Rational64::from_integer(inputs.previous as i64) + inputs.deviation).floor().to_integer();
        (inputs.sustainable as i64).min(raised) as Quality
    } else {
        (inputs.sustainable + inputs.prefetched.max(0)).min(inputs.previous)
    };
    level.clamp(NO_QUALITY, inputs.top)
}

/// Per-slot, per-layer availability over the next smoothing window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefetchView {
    first_slot: u32,
    layers: usize,
    held: Vec<bool>,
}

impl PrefetchView {
    pub fn empty(slots: Range<u32>, layers: usize) -> Self {
        let len = slots.end.saturating_sub(slots.start) as usize;
        Self { first_slot: slots.start, layers, held: vec![false; len * layers] }
    }

    pub fn from_window(window: &SlidingWindow, slots: Range<u32>) -> Self {
        let layers = window.profile().layer_count();
        let mut view = Self::empty(slots.clone(), layers);
        for slot in slots {
            for layer in 0..layers {
                if window.is_held(ChunkId::new(slot, layer as u8)) {
                    view.set(slot, layer, true);
                }
            }
        }
        view
    }

    pub fn slots(&self) -> usize {
        self.held.len() / self.layers.max(1)
    }

    pub fn slot_range(&self) -> Range<u32> {
        self.first_slot..self.first_slot + self.slots() as u32
    }

    pub fn set(&mut self, slot: u32, layer: usize, value: bool) {
        let offset = (slot - self.first_slot) as usize;
        self.held[offset * self.layers + layer] = value;
    }

    pub fn is_held(&self, slot: u32, layer: usize) -> bool {
        let offset = (slot - self.first_slot) as usize;
        self.held[offset * self.layers + layer]
    }

    /// Highest `q` with layers `0..=q` held at `slot`.
    pub fn slot_level(&self, slot: u32) -> Quality {
        (0..self.layers).take_while(|&l| self.is_held(slot, l)).count() as Quality - 1
    }

    /// `L_r`: highest level fully available in every slot of the view.
    pub fn full_level(&self) -> Quality {
        self.slot_range().map(|s| self.slot_level(s)).min().unwrap_or(NO_QUALITY)
    }

    /// Highest layer with at least one prefetched chunk.
    pub fn highest_layer(&self) -> Quality {
        (0..self.layers)
            .rev()
            .find(|&l| self.slot_range().any(|s| self.is_held(s, l)))
            .map_or(NO_QUALITY, |l| l as Quality)
    }

    /// Kbit still missing to play every slot at quality `q`.
    pub fn missing_kbit(&self, q: Quality, profile: &VideoProfile) -> f64 {
        let mut total = 0.0;
        for slot in self.slot_range() {
            for layer in 0..=q.min(self.layers as Quality - 1) {
                if layer >= 0 && !self.is_held(slot, layer as usize) {
                    total += profile.chunk_kbit(layer as usize);
                }
            }
        }
        total
    }
}

#[derive(Debug, Clone, Copy)]
pub struct WindowInputs<'a> {
    /// Index of the smoothing window being decided.
    pub index: u64,
    pub prefetch: &'a PrefetchView,
    /// EWMA bandwidth estimate, kbit/s.
    pub forecast: f64,
    /// Level of the window currently playing out.
    pub current: Quality,
    pub profile: &'a VideoProfile,
}

/// Frequency reduction: one level per smoothing window.
///
/// The first window plays the base layer. Later windows take the largest
/// level, up to one above the current level or the highest prefetched
/// layer, whose still-missing chunks fit in the forecast volume for the
/// window.
pub fn frequency_step(inputs: &WindowInputs<'_>) -> Quality {
    if inputs.index == 0 {
        return STARTUP_QUALITY;
    }
    let top = inputs.profile.top_quality();
    let budget = inputs.forecast.max(0.0) * inputs.prefetch.slots() as f64 * inputs.profile.chunk_duration();
    let upper = inputs.prefetch.highest_layer().max(inputs.current + 1).min(top);
    (0..=upper)
        .rev()
        .find(|&q| inputs.prefetch.missing_kbit(q, inputs.profile) <= budget + 1e-9)
        .unwrap_or(NO_QUALITY)
}

/// Limit the move from `current` to `candidate` to
/// `max(|current - previous|, 1)` levels in either direction.
pub fn hybrid_clamp(candidate: Quality, current: Quality, previous: Quality) -> Quality {
    let bound = (current - previous).abs().max(1);
    candidate.clamp(current - bound, current + bound)
}

/// Hybrid reduction: frequency candidate, bounded window-to-window change.
pub fn hybrid_step(inputs: &WindowInputs<'_>, previous: Quality) -> Quality {
    if inputs.index == 0 {
        return STARTUP_QUALITY;
    }
    let candidate = frequency_step(inputs);
    hybrid_clamp(candidate, inputs.current, previous).clamp(NO_QUALITY, inputs.profile.top_quality())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmootherConfig {
    pub strategy: Strategy,
    /// Smoothing window `S_W` in slots.
    pub window: u32,
    pub ewma_factor: f64,
}

impl SmootherConfig {
    pub fn new(strategy: Strategy, window: u32) -> Self {
        Self { strategy, window, ewma_factor: DEFAULT_EWMA_FACTOR }
    }

    pub fn validate(&self) -> Result<(), SmootherError> {
        if self.window == 0 {
            return Err(SmootherError::EmptyWindow);
        }
        if !(self.ewma_factor > 0.0 && self.ewma_factor <= 1.0) {
            return Err(SmootherError::InvalidFactor(self.ewma_factor));
        }
        Ok(())
    }

    /// Estimator used by the strategy: last sample for raw, window mean for
    /// amplitude, EWMA for the per-window strategies.
    pub fn forecast(&self) -> ForecastConfig {
        match self.strategy {
            Strategy::Raw => ForecastConfig::window_mean(1),
            Strategy::Amplitude => ForecastConfig::window_mean(self.window),
            Strategy::Frequency | Strategy::Hybrid => ForecastConfig::ewma(self.ewma_factor, self.window),
        }
    }
}

/// One smoother decision with the inputs that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    /// Wall-clock slot of the decision.
    pub at: u64,
    /// First stream slot the level applies to.
    pub slot: u32,
    /// Smoothing window index for per-window strategies.
    pub window: Option<u64>,
    pub level: Quality,
    pub previous: Quality,
    pub forecast: Option<f64>,
    pub last_measured: Option<f64>,
    pub deviation: Option<Rational64>,
    pub prefetched: Quality,
}

/// Per-peer smoother. Decides a target level for every stream slot as it
/// enters the urgent interval.
#[derive(Debug, Clone)]
pub struct SmootherState {
    config: SmootherConfig,
    history: VecDeque<Quality>,
    window_index: u64,
    window_quality: Quality,
    prev_window_quality: Quality,
    last_level: Option<Quality>,
    next_slot: u32,
    journal: Vec<Decision>,
}

impl SmootherState {
    pub fn new(config: SmootherConfig) -> Result<Self, SmootherError> {
        config.validate()?;
        Ok(Self {
            config,
            history: VecDeque::with_capacity(config.window as usize),
            window_index: 0,
            window_quality: STARTUP_QUALITY,
            prev_window_quality: STARTUP_QUALITY,
            last_level: None,
            next_slot: 0,
            journal: Vec::new(),
        })
    }

    pub fn config(&self) -> &SmootherConfig {
        &self.config
    }

    pub fn strategy(&self) -> Strategy {
        self.config.strategy
    }

    /// Achievable levels over the last smoothing window.
    pub fn history(&self) -> &VecDeque<Quality> {
        &self.history
    }

    pub fn window_index(&self) -> u64 {
        self.window_index
    }

    pub fn window_quality(&self) -> Quality {
        self.window_quality
    }

    pub fn last_level(&self) -> Option<Quality> {
        self.last_level
    }

    pub fn journal(&self) -> &[Decision] {
        &self.journal
    }

    /// Next stream slot without a target.
    pub fn next_slot(&self) -> u32 {
        self.next_slot
    }

    /// Set targets for every slot that has entered the urgent interval.
    /// Returns the newly decided `(slot, level)` pairs.
    pub fn plan(&mut self, window: &mut SlidingWindow, trace: &BandwidthTrace, now: u64) -> Vec<(u32, Quality)> {
        let total = window.profile().total_slots();
        let horizon = window.urgent_end().clamp(0, total as i64) as u32;
        let mut decided = Vec::new();
        while self.next_slot < horizon {
            let slot = self.next_slot;
            if self.config.strategy.per_window() {
                let span = self.config.window;
                let start = slot - slot % span;
                let end = (start + span).min(total);
                let level = self.decide_window((start / span) as u64, start..end, window, trace, now);
                for s in slot..end {
                    window.set_target(s, level);
                    decided.push((s, level));
                }
                self.next_slot = end;
            } else {
                let level = self.decide_slot(slot, window, trace, now);
                window.set_target(slot, level);
                decided.push((slot, level));
                self.next_slot = slot + 1;
            }
        }
        decided
    }

    fn refresh_history(&mut self, trace: &BandwidthTrace, now: u64, profile: &VideoProfile) {
        self.history.clear();
        for s in trace.window_before(now, self.config.window as usize) {
            self.history.push_back(max_sustainable_quality(s.kbps, profile));
        }
    }

    /// Per-slot decision for the raw and amplitude strategies.
    pub fn decide_slot(&mut self, slot: u32, window: &SlidingWindow, trace: &BandwidthTrace, now: u64) -> Quality {
        let profile = window.profile();
        let previous = self.last_level.unwrap_or(STARTUP_QUALITY);
        let prefetched = window.decodable_level(slot);
        let last = trace.last_before(now).map(|s| s.kbps);
        let mut decision = Decision {
            at: now,
            slot,
            window: None,
            level: STARTUP_QUALITY,
            previous,
            forecast: None,
            last_measured: last,
            deviation: None,
            prefetched,
        };
        if let Some(last) = last {
            let forecast = estimate_next(trace, &self.config.forecast(), now).expect("trace has samples before now");
            decision.forecast = Some(forecast);
            let sustainable = max_sustainable_quality(forecast, profile);
            decision.level = match self.config.strategy {
                Strategy::Amplitude => {
                    self.refresh_history(trace, now, profile);
                    let history: Vec<Quality> = self.history.iter().copied().collect();
                    let deviation = mean_deviation(previous, mean_quality(&history).expect("history non-empty"));
                    decision.deviation = Some(deviation);
                    amplitude_step(&AmplitudeInputs {
                        previous,
                        deviation,
                        forecast,
                        last_measured: last,
                        sustainable,
                        prefetched,
                        top: profile.top_quality(),
                    })
                }
                _ => sustainable,
            };
        }
        self.last_level = Some(decision.level);
        self.journal.push(decision);
        decision.level
    }

    /// Per-window decision for the frequency and hybrid strategies.
    pub fn decide_window(
        &mut self,
        index: u64,
        slots: Range<u32>,
        window: &SlidingWindow,
        trace: &BandwidthTrace,
        now: u64,
    ) -> Quality {
        let profile = window.profile();
        let prefetch = PrefetchView::from_window(window, slots.clone());
        let forecast = estimate_next(trace, &self.config.forecast(), now).ok();
        let current = self.window_quality;
        let previous = if index <= 1 { current } else { self.prev_window_quality };
        let inputs = WindowInputs { index, prefetch: &prefetch, forecast: forecast.unwrap_or(0.0), current, profile };
        let level = match self.config.strategy {
            Strategy::Hybrid => hybrid_step(&inputs, previous),
            _ => frequency_step(&inputs),
        };
        self.journal.push(Decision {
            at: now,
            slot: slots.start,
            window: Some(index),
            level,
            previous: current,
            forecast,
            last_measured: trace.last_before(now).map(|s| s.kbps),
            deviation: None,
            prefetched: prefetch.full_level(),
        });
        if index > 0 {
            self.prev_window_quality = current;
        }
        self.window_index = index;
        self.window_quality = level;
        self.last_level = Some(level);
        level
    }
}
