//! Layered stream model: video profiles, chunk identifiers, buffer maps and
//! the receiver-side sliding window.

mod buffer_map;
mod window;

pub use buffer_map::{BufferMap, HEADER_LEN};
pub use window::{PlaybackOutcome, PlaybackReport, PlaybackStep, Receipt, SlidingWindow, WindowConfig};

use std::fmt;

use thiserror::Error;

/// Quality level: layers `0..=q` are consumed. `-1` means not even the base
/// layer can be sustained.
pub type Quality = i32;

/// Sentinel for "the base layer does not fit".
pub const NO_QUALITY: Quality = -1;

/// Largest layer count the wire format can carry.
pub const MAX_LAYERS: usize = u8::MAX as usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StreamError {
    #[error("a video profile needs at least one layer")]
    NoLayers,
    #[error("{0} layers exceed the supported maximum of {MAX_LAYERS}")]
    TooManyLayers(usize),
    #[error("layer {layer} has non-positive rate {rate}")]
    InvalidRate { layer: usize, rate: f64 },
    #[error("chunk duration must be positive, got {0}")]
    InvalidDuration(f64),
    #[error("stream must span at least one slot")]
    EmptyStream,
    #[error("buffer map truncated: {0} bytes is shorter than the header")]
    TruncatedMap(usize),
    #[error("buffer map payload is {actual} bytes, header declares {expected}")]
    PayloadLength { expected: usize, actual: usize },
    #[error("buffer map declares zero layers")]
    ZeroLayers,
    #[error("buffer map padding bits are not zero")]
    DirtyPadding,
    #[error("window config invalid: {0}")]
    InvalidWindow(&'static str),
}

/// Identifier of a peer in an overlay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct PeerId(pub u32);

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One unit of exchange: a timestamp slot at a given layer (0 = base).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChunkId {
    pub slot: u32,
    pub layer: u8,
}

impl ChunkId {
    pub const fn new(slot: u32, layer: u8) -> Self {
        Self { slot, layer }
    }
}

impl fmt::Display for ChunkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.slot, self.layer)
    }
}

/// Static description of a layered stream, shared read-only by every peer.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoProfile {
    layer_rates: Vec<f64>,
    cumulative: Vec<f64>,
    chunk_duration: f64,
    total_slots: u32,
}

impl VideoProfile {
    /// `layer_rates` in kbit/s, base layer first; `chunk_duration` in seconds.
    pub fn new(layer_rates: Vec<f64>, chunk_duration: f64, total_slots: u32) -> Result<Self, StreamError> {
        if layer_rates.is_empty() {
            return Err(StreamError::NoLayers);
        }
        if layer_rates.len() > MAX_LAYERS {
            return Err(StreamError::TooManyLayers(layer_rates.len()));
        }
        for (layer, &rate) in layer_rates.iter().enumerate() {
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(StreamError::InvalidRate { layer, rate });
            }
        }
        if !(chunk_duration > 0.0 && chunk_duration.is_finite()) {
            return Err(StreamError::InvalidDuration(chunk_duration));
        }
        if total_slots == 0 {
            return Err(StreamError::EmptyStream);
        }
        let cumulative = layer_rates
            .iter()
            .scan(0.0, |acc, r| {
                *acc += r;
                Some(*acc)
            })
            .collect();
        Ok(Self { layer_rates, cumulative, chunk_duration, total_slots })
    }

    pub fn uniform(layers: usize, rate: f64, chunk_duration: f64, total_slots: u32) -> Result<Self, StreamError> {
        Self::new(vec![rate; layers], chunk_duration, total_slots)
    }

    pub fn layer_count(&self) -> usize {
        self.layer_rates.len()
    }

    /// Highest quality level of the stream (`L - 1`).
    pub fn top_quality(&self) -> Quality {
        self.layer_rates.len() as Quality - 1
    }

    pub fn layer_rates(&self) -> &[f64] {
        &self.layer_rates
    }

    pub fn layer_rate(&self, layer: usize) -> f64 {
        self.layer_rates[layer]
    }

    /// Sum of the rates of layers `0..=q`; zero for `q < 0`.
    pub fn cumulative_rate(&self, q: Quality) -> f64 {
        if q < 0 {
            return 0.0;
        }
        let idx = (q as usize).min(self.cumulative.len() - 1);
        self.cumulative[idx]
    }

    pub fn total_rate(&self) -> f64 {
        *self.cumulative.last().expect("profile has layers")
    }

    pub fn chunk_duration(&self) -> f64 {
        self.chunk_duration
    }

    pub fn total_slots(&self) -> u32 {
        self.total_slots
    }

    /// Size of one chunk of `layer` in kbit.
    pub fn chunk_kbit(&self, layer: usize) -> f64 {
        self.layer_rates[layer] * self.chunk_duration
    }

    /// Mean chunk size over all layers, the unit in which link capacities
    /// are expressed.
    pub fn mean_chunk_kbit(&self) -> f64 {
        self.total_rate() * self.chunk_duration / self.layer_count() as f64
    }

    pub fn contains(&self, chunk: ChunkId) -> bool {
        chunk.slot < self.total_slots && (chunk.layer as usize) < self.layer_count()
    }

    /// Flat index of a chunk, slot-major.
    pub(crate) fn index(&self, chunk: ChunkId) -> usize {
        chunk.slot as usize * self.layer_count() + chunk.layer as usize
    }
}

/// Largest `q` whose cumulative rate fits in `bandwidth` (kbit/s), or
/// [`NO_QUALITY`] if even the base layer does not.
pub fn max_sustainable_quality(bandwidth: f64, profile: &VideoProfile) -> Quality {
    let bandwidth = bandwidth.max(0.0);
    // cumulative sums of decimal rates pick up rounding noise
    let fits = |cum: f64| cum <= bandwidth + 1e-9 * cum.max(1.0);
    profile.cumulative.iter().take_while(|&&cum| fits(cum)).count() as Quality - 1
}
