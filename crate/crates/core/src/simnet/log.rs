use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::stream::{ChunkId, PeerId, Quality};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    /// Download capacity of the peer for the slot; `detail` in kbit/s.
    Capacity,
    /// Smoother target for a stream slot; `layer` is the level.
    Target,
    /// Request to `neighbor`; `detail` is the chunk priority.
    Request,
    /// On-time delivery from `neighbor`; `detail` is the size in kbit.
    Deliver,
    /// Delivery after the deadline; `detail` is the size in kbit.
    Late,
    /// Delivery of a chunk already held; `detail` is the size in kbit.
    Duplicate,
    /// Request still queued at `neighbor` when the period ended.
    Withdraw,
    /// Playback of stream slot `chunk_slot` at quality `layer`; `detail` is
    /// the target.
    Play,
    /// Playback paused at stream slot `chunk_slot`.
    Stall,
}

impl EventKind {
    pub const ALL: [EventKind; 9] = [
        EventKind::Capacity,
        EventKind::Target,
        EventKind::Request,
        EventKind::Deliver,
        EventKind::Late,
        EventKind::Duplicate,
        EventKind::Withdraw,
        EventKind::Play,
        EventKind::Stall,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EventKind::Capacity => "capacity",
            EventKind::Target => "target",
            EventKind::Request => "request",
            EventKind::Deliver => "deliver",
            EventKind::Late => "late",
            EventKind::Duplicate => "duplicate",
            EventKind::Withdraw => "withdraw",
            EventKind::Play => "play",
            EventKind::Stall => "stall",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| format!("unknown event `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub slot: u64,
    pub peer: PeerId,
    pub kind: EventKind,
    pub chunk_slot: Option<u32>,
    pub layer: Option<Quality>,
    pub neighbor: Option<PeerId>,
    pub detail: f64,
}

impl Event {
    pub fn chunk(&self) -> Option<ChunkId> {
        match (self.chunk_slot, self.layer) {
            (Some(s), Some(l)) if l >= 0 => Some(ChunkId::new(s, l as u8)),
            _ => None,
        }
    }
}

pub const LOG_HEADER: &str = "slot,peer,event,chunk_slot,layer,neighbor,detail";

/// Ordered record of everything a run did.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimEventLog {
    events: Vec<Event>,
}

impl SimEventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, event: Event) {
        debug_assert!(self.events.last().is_none_or(|e| e.slot <= event.slot), "log slots must not decrease");
        self.events.push(event);
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.events.len() * 32 + LOG_HEADER.len() + 1);
        out.push_str(LOG_HEADER);
        out.push('\n');
        let opt = |v: Option<String>| v.unwrap_or_default();
        for e in &self.events {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                e.slot,
                e.peer,
                e.kind,
                opt(e.chunk_slot.map(|s| s.to_string())),
                opt(e.layer.map(|l| l.to_string())),
                opt(e.neighbor.map(|n| n.to_string())),
                e.detail
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == LOG_HEADER => {}
            _ => return Err("missing event log header".into()),
        }
        let mut log = SimEventLog::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(format!("line {}: expected 7 fields", i + 1));
            }
            let err = |what: &str| format!("line {}: bad {what}", i + 1);
            let opt_u32 = |s: &str| if s.is_empty() { Ok(None) } else { s.parse().map(Some) };
            log.events.push(Event {
                slot: f[0].parse().map_err(|_| err("slot"))?,
                peer: PeerId(f[1].parse().map_err(|_| err("peer"))?),
                kind: f[2].parse().map_err(|_| err("event"))?,
                chunk_slot: opt_u32(f[3]).map_err(|_| err("chunk_slot"))?,
                layer: if f[4].is_empty() { None } else { Some(f[4].parse().map_err(|_| err("layer"))?) },
                neighbor: opt_u32(f[5]).map_err(|_| err("neighbor"))?.map(PeerId),
                detail: f[6].parse().map_err(|_| err("detail"))?,
            });
        }
        Ok(log)
    }
}
