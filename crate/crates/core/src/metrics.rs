//! Evaluation metrics over a run's event log.
//!
//! [`MetricsCollector`] accumulates them event by event while a simulation
//! runs; [`metrics_from_log`] recomputes them from a finished log. Both must
//! agree exactly.
//!
//! Chunk accounting: a received chunk counts once its slot has been played
//! (or it arrived late). It is *effective* if its layer was decoded at
//! playback and *useless* otherwise; late arrivals are always useless.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::simnet::{Event, EventKind, SimEventLog};
use crate::stream::{PeerId, Quality};

/// Number of adjacent entries that differ.
pub fn layer_changes(timeline: &[Quality]) -> usize {
    timeline.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Group stalled wall slots (ascending) into maximal runs; returns the run
/// lengths.
pub fn stall_runs(stalled: &[u64]) -> Vec<u64> {
    let mut runs: Vec<u64> = Vec::new();
    let mut prev: Option<u64> = None;
    for &s in stalled {
        match (prev, runs.last_mut()) {
            (Some(p), Some(len)) if s == p + 1 => *len += 1,
            _ => runs.push(1),
        }
        prev = Some(s);
    }
    runs
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Metrics of one receiver.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PeerMetrics {
    pub peer: PeerId,
    pub played: u64,
    pub layer_changes: u64,
    pub stall_durations: Vec<u64>,
    /// Download capacity summed over the run, kbit.
    pub capacity_kbit: f64,
    /// Everything delivered, kbit.
    pub delivered_kbit: f64,
    /// Delivered and decoded at playback, kbit.
    pub effective_kbit: f64,
    pub received: u64,
    pub late: u64,
    pub useless: u64,
    /// Per layer: played slots whose target included the layer.
    pub demanded: Vec<u64>,
    /// Per layer: of those, slots where the layer was decoded.
    pub proper: Vec<u64>,
}

impl PeerMetrics {
    fn new(peer: PeerId, layers: usize) -> Self {
        Self { peer, demanded: vec![0; layers], proper: vec![0; layers], ..Self::default() }
    }

    pub fn stall_events(&self) -> usize {
        self.stall_durations.len()
    }

    pub fn utilization(&self) -> f64 {
        ratio(self.delivered_kbit, self.capacity_kbit)
    }

    pub fn effective_utilization(&self) -> f64 {
        ratio(self.effective_kbit, self.capacity_kbit)
    }

    pub fn useless_ratio(&self) -> f64 {
        ratio(self.useless as f64, self.received as f64)
    }

    pub fn late_ratio(&self) -> f64 {
        ratio(self.late as f64, self.received as f64)
    }

    pub fn delivery_ratio(&self, layer: usize) -> Option<f64> {
        (self.demanded[layer] > 0).then(|| self.proper[layer] as f64 / self.demanded[layer] as f64)
    }

    /// Decoded layers over requested layers across played slots.
    pub fn relative_received(&self) -> f64 {
        ratio(self.proper.iter().sum::<u64>() as f64, self.demanded.iter().sum::<u64>() as f64)
    }

    fn record_play(&mut self, quality: Quality, target: Quality) {
        self.played += 1;
        let wanted = target.max(0);
        for l in 0..=wanted.min(self.demanded.len() as Quality - 1) {
            self.demanded[l as usize] += 1;
            if quality >= l {
                self.proper[l as usize] += 1;
            }
        }
    }
}

/// Metrics of a whole run, one entry per receiver in id order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunMetrics {
    pub layers: usize,
    pub peers: Vec<PeerMetrics>,
}

impl RunMetrics {
    fn mean(&self, f: impl Fn(&PeerMetrics) -> f64) -> f64 {
        ratio(self.peers.iter().map(f).sum(), self.peers.len() as f64)
    }

    pub fn mean_layer_changes(&self) -> f64 {
        self.mean(|p| p.layer_changes as f64)
    }

    pub fn max_layer_changes(&self) -> u64 {
        self.peers.iter().map(|p| p.layer_changes).max().unwrap_or(0)
    }

    pub fn mean_stall_events(&self) -> f64 {
        self.mean(|p| p.stall_events() as f64)
    }

    pub fn mean_stall_duration(&self) -> f64 {
        let all: Vec<u64> = self.peers.iter().flat_map(|p| p.stall_durations.iter().copied()).collect();
        ratio(all.iter().sum::<u64>() as f64, all.len() as f64)
    }

    pub fn max_stall_duration(&self) -> u64 {
        self.peers.iter().flat_map(|p| p.stall_durations.iter().copied()).max().unwrap_or(0)
    }

    fn pooled(&self, num: impl Fn(&PeerMetrics) -> f64, den: impl Fn(&PeerMetrics) -> f64) -> f64 {
        ratio(self.peers.iter().map(num).sum(), self.peers.iter().map(den).sum())
    }

    /// Delivered bits over download capacity, pooled over receivers.
    pub fn bandwidth_utilization(&self) -> f64 {
        self.pooled(|p| p.delivered_kbit, |p| p.capacity_kbit)
    }

    /// Decoded bits over download capacity, pooled over receivers.
    pub fn effective_utilization(&self) -> f64 {
        self.pooled(|p| p.effective_kbit, |p| p.capacity_kbit)
    }

    pub fn useless_chunk_ratio(&self) -> f64 {
        self.pooled(|p| p.useless as f64, |p| p.received as f64)
    }

    pub fn late_arrival_ratio(&self) -> f64 {
        self.pooled(|p| p.late as f64, |p| p.received as f64)
    }

    /// Per layer, the mean delivery ratio over receivers whose target ever
    /// included the layer.
    pub fn delivery_ratio_per_layer(&self) -> Vec<Option<f64>> {
        (0..self.layers)
            .map(|l| {
                let ratios: Vec<f64> = self.peers.iter().filter_map(|p| p.delivery_ratio(l)).collect();
                (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64)
            })
            .collect()
    }

    pub fn relative_received_layer_ratio(&self) -> f64 {
        self.pooled(|p| p.proper.iter().sum::<u64>() as f64, |p| p.demanded.iter().sum::<u64>() as f64)
    }

    /// Requested layers that were not decoded.
    pub fn useless_layer_ratio(&self) -> f64 {
        1.0 - self.relative_received_layer_ratio()
    }
}

#[derive(Debug, Default)]
struct PeerAcc {
    metrics: PeerMetrics,
    last_quality: Option<Quality>,
    last_stall: Option<u64>,
    /// On-time deliveries awaiting playback of their slot: `(layer, kbit)`.
    pending: HashMap<u32, Vec<(Quality, f64)>>,
}

/// Event-by-event metric accumulation.
#[derive(Debug)]
pub struct MetricsCollector {
    layers: usize,
    peers: BTreeMap<PeerId, PeerAcc>,
}

impl MetricsCollector {
    pub fn new(layers: usize) -> Self {
        Self { layers, peers: BTreeMap::new() }
    }

    fn acc(&mut self, peer: PeerId) -> &mut PeerAcc {
        let layers = self.layers;
        self.peers
            .entry(peer)
            .or_insert_with(|| PeerAcc { metrics: PeerMetrics::new(peer, layers), ..PeerAcc::default() })
    }

    pub fn observe(&mut self, e: &Event) {
        match e.kind {
            EventKind::Capacity => self.acc(e.peer).metrics.capacity_kbit += e.detail,
            EventKind::Deliver => {
                let acc = self.acc(e.peer);
                acc.metrics.delivered_kbit += e.detail;
                let slot = e.chunk_slot.expect("deliveries carry a chunk");
                acc.pending.entry(slot).or_default().push((e.layer.expect("deliveries carry a layer"), e.detail));
            }
            EventKind::Late | EventKind::Duplicate => {
                let m = &mut self.acc(e.peer).metrics;
                m.delivered_kbit += e.detail;
                m.received += 1;
                m.useless += 1;
                if e.kind == EventKind::Late {
                    m.late += 1;
                }
            }
            EventKind::Play => {
                let acc = self.acc(e.peer);
                let quality = e.layer.expect("plays carry a quality");
                if acc.last_quality.is_some_and(|q| q != quality) {
                    acc.metrics.layer_changes += 1;
                }
                acc.last_quality = Some(quality);
                acc.metrics.record_play(quality, e.detail as Quality);
                let slot = e.chunk_slot.expect("plays carry a slot");
                for (layer, kbit) in acc.pending.remove(&slot).unwrap_or_default() {
                    acc.metrics.received += 1;
                    if layer <= quality {
                        acc.metrics.effective_kbit += kbit;
                    } else {
                        acc.metrics.useless += 1;
                    }
                }
            }
            EventKind::Stall => {
                let acc = self.acc(e.peer);
                match (acc.last_stall, acc.metrics.stall_durations.last_mut()) {
                    (Some(prev), Some(len)) if e.slot == prev + 1 => *len += 1,
                    _ => acc.metrics.stall_durations.push(1),
                }
                acc.last_stall = Some(e.slot);
            }
            EventKind::Target | EventKind::Request | EventKind::Withdraw => {}
        }
    }

    pub fn finish(self) -> RunMetrics {
        RunMetrics { layers: self.layers, peers: self.peers.into_values().map(|a| a.metrics).collect() }
    }
}

/// Recompute every metric from a finished log.
pub fn metrics_from_log(log: &SimEventLog, layers: usize) -> RunMetrics {
    let mut by_peer: BTreeMap<PeerId, Vec<&Event>> = BTreeMap::new();
    for e in log.events() {
        if matches!(
            e.kind,
            EventKind::Capacity | EventKind::Deliver | EventKind::Late | EventKind::Duplicate | EventKind::Play | EventKind::Stall
        ) {
            by_peer.entry(e.peer).or_default().push(e);
        }
    }
    let mut peers = Vec::with_capacity(by_peer.len());
    for (peer, events) in by_peer {
        let mut m = PeerMetrics::new(peer, layers);
        let of = |k: EventKind| events.iter().copied().filter(move |e| e.kind == k);

        let plays: Vec<&Event> = of(EventKind::Play).collect();
        let qualities: Vec<Quality> = plays.iter().map(|e| e.layer.unwrap()).collect();
        m.layer_changes = layer_changes(&qualities) as u64;
        let stalled: Vec<u64> = of(EventKind::Stall).map(|e| e.slot).collect();
        m.stall_durations = stall_runs(&stalled);
        m.capacity_kbit = of(EventKind::Capacity).map(|e| e.detail).fold(0.0, |a, b| a + b);

        // played quality and play time per stream slot
        let played: HashMap<u32, (Quality, u64)> =
            plays.iter().map(|e| (e.chunk_slot.unwrap(), (e.layer.unwrap(), e.slot))).collect();
        for e in &events {
            match e.kind {
                EventKind::Deliver | EventKind::Late | EventKind::Duplicate => {
                    m.delivered_kbit += e.detail;
                }
                EventKind::Play => m.record_play(e.layer.unwrap(), e.detail as Quality),
                _ => {}
            }
            match e.kind {
                EventKind::Late | EventKind::Duplicate => {
                    m.received += 1;
                    m.useless += 1;
                    m.late += (e.kind == EventKind::Late) as u64;
                }
                EventKind::Deliver => {
                    if let Some(&(q, _)) = played.get(&e.chunk_slot.unwrap()) {
                        m.received += 1;
                        if e.layer.unwrap() <= q {
                            m.effective_kbit += e.detail;
                        } else {
                            m.useless += 1;
                        }
                    }
                }
                _ => {}
            }
        }
        peers.push(m);
    }
    RunMetrics { layers, peers }
}

pub fn metrics_csv_header(layers: usize) -> String {
    let mut h = String::from(
        "run,peer,played,layer_changes,stall_events,stall_mean,stall_max,utilization,effective_utilization,useless_ratio,late_ratio,relative_received",
    );
    for l in 0..layers {
        let _ = write!(h, ",delivery_{l}");
    }
    h
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// One row per receiver plus an `all` row, prefixed by the run label.
pub fn metrics_csv(run: &str, m: &RunMetrics, with_header: bool) -> String {
    let mut out = String::new();
    if with_header {
        out.push_str(&metrics_csv_header(m.layers));
        out.push('\n');
    }
    for p in &m.peers {
        let stall_mean = ratio(p.stall_durations.iter().sum::<u64>() as f64, p.stall_durations.len() as f64);
        let _ = write!(
            out,
            "{run},{},{},{},{},{:.6},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            p.peer,
            p.played,
            p.layer_changes,
            p.stall_events(),
            stall_mean,
            p.stall_durations.iter().max().unwrap_or(&0),
            p.utilization(),
            p.effective_utilization(),
            p.useless_ratio(),
            p.late_ratio(),
            p.relative_received()
        );
        for l in 0..m.layers {
            let _ = write!(out, ",{}", opt(p.delivery_ratio(l)));
        }
        out.push('\n');
    }
    let _ = write!(
        out,
        "{run},all,{},{:.6},{:.6},{:.6},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
        m.peers.iter().map(|p| p.played).sum::<u64>(),
        m.mean_layer_changes(),
        m.mean_stall_events(),
        m.mean_stall_duration(),
        m.max_stall_duration(),
        m.bandwidth_utilization(),
        m.effective_utilization(),
        m.useless_chunk_ratio(),
        m.late_arrival_ratio(),
        m.relative_received_layer_ratio()
    );
    for v in m.delivery_ratio_per_layer() {
        let _ = write!(out, ",{}", opt(v));
    }
    out.push('\n');
    out
}
