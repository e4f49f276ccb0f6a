use rand::Rng;

use crate::forecast::{BandwidthTrace, TraceSource};

/// Piecewise-constant bandwidth with multiplicative jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceShape {
    pub min_kbps: f64,
    pub max_kbps: f64,
    /// Segment lengths are drawn uniformly from this range, in slots.
    pub min_segment: u32,
    pub max_segment: u32,
    /// Each sample is scaled by `1 + U(-noise, noise)`.
    pub noise: f64,
}

impl Default for TraceShape {
    fn default() -> Self {
        Self { min_kbps: 100.0, max_kbps: 900.0, min_segment: 10, max_segment: 40, noise: 0.1 }
    }
}

/// One sample per slot for `slots` slots, clamped to the shape's range.
pub fn generate_trace(shape: &TraceShape, slots: u64, rng: &mut impl Rng) -> BandwidthTrace {
    let mut trace = BandwidthTrace::new(TraceSource::Generated);
    let mut slot = 0;
    let (lo_seg, hi_seg) = (shape.min_segment.max(1), shape.max_segment.max(shape.min_segment.max(1)));
    while slot < slots {
        let level = rng.gen_range(shape.min_kbps..=shape.max_kbps);
        let len = rng.gen_range(lo_seg..=hi_seg) as u64;
        for s in slot..(slot + len).min(slots) {
            let jitter = if shape.noise > 0.0 { rng.gen_range(-shape.noise..=shape.noise) } else { 0.0 };
            let kbps = (level * (1.0 + jitter)).clamp(shape.min_kbps, shape.max_kbps);
            trace.push(s, kbps).expect("generated samples are increasing and finite");
        }
        slot += len;
    }
    trace
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stays_in_range_and_is_seeded() {
        let shape = TraceShape::default();
        let a = generate_trace(&shape, 400, &mut ChaCha8Rng::seed_from_u64(1));
        let b = generate_trace(&shape, 400, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        assert_eq!(a.len(), 400);
        let (lo, hi) = a.min_max().unwrap();
        assert!(lo >= 100.0 && hi <= 900.0);
        let c = generate_trace(&shape, 400, &mut ChaCha8Rng::seed_from_u64(2));
        assert_ne!(a, c);
    }
}
