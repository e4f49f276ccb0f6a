use super::{ChunkId, PeerId, SlidingWindow, StreamError};

/// Bytes before the bit payload: owner (u32 LE), window start (u32 LE),
/// layer count (u8), width (u16 LE).
pub const HEADER_LEN: usize = 11;

/// Availability bitmap a peer advertises to its neighbors.
///
/// Rows are layers, columns are slot offsets from `window_start`. Bit
/// `k = layer * width + offset` sits in byte `k / 8`, most significant bit
/// first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BufferMap {
    owner: PeerId,
    window_start: u32,
    layers: u8,
    width: u16,
    payload: Vec<u8>,
}

fn payload_len(layers: u8, width: u16) -> usize {
    (layers as usize * width as usize).div_ceil(8)
}

impl BufferMap {
    pub fn empty(owner: PeerId, window_start: u32, layers: u8, width: u16) -> Self {
        Self { owner, window_start, layers, width, payload: vec![0; payload_len(layers, width)] }
    }

    /// Snapshot of what `window` holds on time over `[window_start, window_start + width)`.
    pub fn from_window(window: &SlidingWindow, owner: PeerId, window_start: u32, width: u16) -> Self {
        let layers = window.profile().layer_count() as u8;
        let mut map = Self::empty(owner, window_start, layers, width);
        let total = window.profile().total_slots();
        for offset in 0..width {
            let Some(slot) = window_start.checked_add(offset as u32).filter(|&s| s < total) else {
                break;
            };
            for layer in 0..layers {
                if window.is_held(ChunkId::new(slot, layer)) {
                    map.set(layer, offset, true);
                }
            }
        }
        map
    }

    pub fn owner(&self) -> PeerId {
        self.owner
    }

    pub fn window_start(&self) -> u32 {
        self.window_start
    }

    pub fn layers(&self) -> u8 {
        self.layers
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    fn bit_index(&self, layer: u8, offset: u16) -> usize {
        layer as usize * self.width as usize + offset as usize
    }

    pub fn get(&self, layer: u8, offset: u16) -> bool {
        assert!(layer < self.layers && offset < self.width, "bit outside buffer map");
        let k = self.bit_index(layer, offset);
        self.payload[k / 8] & (0x80 >> (k % 8)) != 0
    }

    pub fn set(&mut self, layer: u8, offset: u16, value: bool) {
        assert!(layer < self.layers && offset < self.width, "bit outside buffer map");
        let k = self.bit_index(layer, offset);
        let mask = 0x80 >> (k % 8);
        if value {
            self.payload[k / 8] |= mask;
        } else {
            self.payload[k / 8] &= !mask;
        }
    }

    /// Whether the map advertises `chunk`. Chunks outside the window are
    /// reported absent.
    pub fn contains(&self, chunk: ChunkId) -> bool {
        if chunk.layer >= self.layers || chunk.slot < self.window_start {
            return false;
        }
        let offset = chunk.slot - self.window_start;
        if offset >= self.width as u32 {
            return false;
        }
        self.get(chunk.layer, offset as u16)
    }

    pub fn count(&self) -> usize {
        self.payload.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&self.owner.0.to_le_bytes());
        out.extend_from_slice(&self.window_start.to_le_bytes());
        out.push(self.layers);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, StreamError> {
        if bytes.len() < HEADER_LEN {
            return Err(StreamError::TruncatedMap(bytes.len()));
        }
        let owner = PeerId(u32::from_le_bytes(bytes[0..4].try_into().unwrap()));
        let window_start = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let layers = bytes[8];
        let width = u16::from_le_bytes(bytes[9..11].try_into().unwrap());
        if layers == 0 {
            return Err(StreamError::ZeroLayers);
        }
        let expected = payload_len(layers, width);
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != expected {
            return Err(StreamError::PayloadLength { expected, actual: payload.len() });
        }
        let used_bits = layers as usize * width as usize;
        if used_bits % 8 != 0 {
            let padding_mask = 0xFFu8 >> (used_bits % 8);
            if payload[expected - 1] & padding_mask != 0 {
                return Err(StreamError::DirtyPadding);
            }
        }
        Ok(Self { owner, window_start, layers, width, payload: payload.to_vec() })
    }
}
