//! Discrete-time overlay simulator.
//!
//! Every wall-clock slot runs, in order: buffer-map gossip, smoother
//! decisions, scheduling (at period boundaries), request service under
//! upload and download caps, and playback.

mod engine;
mod log;
mod overlay;
mod trace_gen;

pub use engine::{run, RunOutput, Simulation};
pub use log::{Event, EventKind, SimEventLog, LOG_HEADER};
pub use overlay::{build_overlay, class_counts, Overlay, PeerSpec, Role};
pub use trace_gen::{generate_trace, TraceShape};

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::forecast::BandwidthTrace;
use crate::scheduler::{PriorityPreset, SchedulerKind};
use crate::smoother::{SmootherConfig, SmootherError};
use crate::stream::{StreamError, VideoProfile, WindowConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("overlay: {0}")]
    Overlay(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Smoother(#[from] SmootherError),
}

/// Independent RNG stream for one purpose of one run.
pub(crate) fn seeded_rng(seed: u64, purpose: &str) -> ChaCha8Rng {
    // FNV-1a over the purpose label
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in purpose.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthClass {
    pub fraction: f64,
    pub download_kbps: f64,
}

/// Every `interval` slots each receiver's capacity is rescaled by a factor
/// drawn uniformly from `[min_scale, max_scale]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthChange {
    pub interval: u32,
    pub min_scale: f64,
    pub max_scale: f64,
}

/// Per-slot receiver download capacity taken from a trace.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceSpec {
    /// Each receiver gets its own trace drawn from the shape.
    Generated(TraceShape),
    /// All receivers share one trace.
    Fixed(Arc<BandwidthTrace>),
}

/// How a receiver converts a neighbor's upload capacity into a per-link
/// budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapacityModel {
    /// The neighbor's upload divided evenly over its neighbors.
    FairShare,
    /// The whole upload, capped by the receiver's own download.
    Optimistic,
}

impl std::str::FromStr for CapacityModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fair-share" => Ok(CapacityModel::FairShare),
            "optimistic" => Ok(CapacityModel::Optimistic),
            _ => Err(format!("unknown capacity model `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlayConfig {
    /// Receivers; the source comes on top.
    pub peer_count: usize,
    /// Target neighbor count per peer.
    pub neighbors: usize,
    pub max_degree: usize,
    pub classes: Vec<BandwidthClass>,
    /// Upload capacity as a fraction of download.
    pub upload_ratio: f64,
    pub source_upload_kbps: f64,
    pub change: Option<BandwidthChange>,
    pub trace: Option<TraceSpec>,
    /// Delivery delay in slots.
    pub delay: u32,
    pub gossip_period: u32,
    pub scheduling_period: u32,
}

impl Default for OverlayConfig {
    fn default() -> Self {
        Self {
            peer_count: 50,
            neighbors: 8,
            max_degree: 30,
            classes: vec![
                BandwidthClass { fraction: 0.4, download_kbps: 512.0 },
                BandwidthClass { fraction: 0.3, download_kbps: 1024.0 },
                BandwidthClass { fraction: 0.3, download_kbps: 2048.0 },
            ],
            upload_ratio: 0.5,
            source_upload_kbps: 4096.0,
            change: None,
            trace: None,
            delay: 0,
            gossip_period: 1,
            scheduling_period: 1,
        }
    }
}

impl OverlayConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let err = |m: &str| Err(SimError::Overlay(m.to_string()));
        if self.classes.is_empty() {
            return err("at least one bandwidth class is required");
        }
        let sum: f64 = self.classes.iter().map(|c| c.fraction).sum();
        if (sum - 1.0).abs() > 1e-9 || self.classes.iter().any(|c| c.fraction < 0.0) {
            return err("class fractions must be non-negative and sum to 1");
        }
        if self.classes.iter().any(|c| !(c.download_kbps >= 0.0)) {
            return err("class bandwidth must be non-negative");
        }
        if self.neighbors == 0 && self.peer_count > 0 {
            return err("neighbor count must be positive");
        }
        if self.max_degree == 0 || self.neighbors > self.max_degree {
            return err("neighbor count exceeds the degree cap");
        }
        if !(self.upload_ratio >= 0.0) || !(self.source_upload_kbps >= 0.0) {
            return err("upload capacities must be non-negative");
        }
        if self.gossip_period == 0 || self.scheduling_period == 0 {
            return err("gossip and scheduling periods must be positive");
        }
        if let Some(c) = self.change {
            if c.interval == 0 || !(c.min_scale > 0.0 && c.min_scale <= c.max_scale) {
                return err("bandwidth change needs a positive interval and 0 < min <= max scale");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub overlay: OverlayConfig,
    pub profile: Arc<VideoProfile>,
    pub smoother: SmootherConfig,
    pub scheduler: SchedulerKind,
    pub priority: PriorityPreset,
    pub window: WindowConfig,
    /// Slots of buffering before playback starts.
    pub startup: u32,
    /// Wall-clock slots to simulate.
    pub duration: u64,
    pub capacity_model: CapacityModel,
    /// Cap each receiver's requests per period at its download capacity.
    pub download_budget: bool,
    /// Spend forecast bandwidth above the target on prefetch-interval chunks.
    pub prefetch: bool,
    /// Scheduling periods of request history behind a neighbor's reliability.
    pub reliability_history: usize,
}

impl SimConfig {
    pub fn new(overlay: OverlayConfig, profile: VideoProfile, smoother: SmootherConfig, scheduler: SchedulerKind) -> Self {
        let window = WindowConfig::with_smoothing_window(smoother.window);
        // slot 0 reaches the end of the urgent interval as playback starts
        let startup = window.playing_len + window.urgent_len;
        Self {
            duration: profile.total_slots() as u64 + startup as u64,
            overlay,
            profile: Arc::new(profile),
            smoother,
            scheduler,
            priority: PriorityPreset::Conservative,
            window,
            startup,
            capacity_model: CapacityModel::FairShare,
            download_budget: true,
            prefetch: true,
            reliability_history: 10,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.overlay.validate()?;
        self.window.validate()?;
        self.smoother.validate()?;
        if self.reliability_history == 0 {
            return Err(SimError::Config("reliability history must be at least one period".into()));
        }
        if self.window.span() as usize * 2 > u16::MAX as usize {
            return Err(SimError::Config("window too wide for a buffer map".into()));
        }
        Ok(())
    }
}
