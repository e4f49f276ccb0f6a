use std::collections::VecDeque;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::log::{Event, EventKind, SimEventLog};
use super::overlay::{build_overlay, Overlay, Role};
use super::trace_gen::generate_trace;
use super::{seeded_rng, CapacityModel, SimConfig, SimError, TraceSpec};
use crate::forecast::{estimate_next, BandwidthTrace, TraceSource};
use crate::metrics::{MetricsCollector, RunMetrics};
use crate::scheduler::{
    baseline_schedule, build_matrix, gap_schedule_with, priority, BaselineKind, GreedyTopC, NeighborView,
    PriorityParams, Schedule, SchedulerKind,
};
use crate::smoother::SmootherState;
use crate::stream::{max_sustainable_quality, BufferMap, ChunkId, PeerId, PlaybackOutcome, Quality, SlidingWindow};

#[derive(Debug, Clone, Copy)]
struct Request {
    receiver: usize,
    chunk: ChunkId,
}

#[derive(Debug, Clone, Copy, Default)]
struct LinkStats {
    issued: u32,
    fulfilled: u32,
}

#[derive(Debug, Clone)]
struct PeerState {
    role: Role,
    window: SlidingWindow,
    smoother: Option<SmootherState>,
    measured: BandwidthTrace,
    trace: Option<Arc<BandwidthTrace>>,
    scale: f64,
    download_kbps: f64,
    upload_kbps: f64,
    /// Per neighbor (adjacency order): this period and completed periods.
    current: Vec<LinkStats>,
    history: Vec<VecDeque<LinkStats>>,
    /// Per neighbor link credit in kbit for the fair-share model.
    credit: Vec<f64>,
}

impl PeerState {
    fn reliability(&self, k: usize) -> f64 {
        let (i, f) = self.history[k].iter().fold((0u32, 0u32), |(i, f), s| (i + s.issued, f + s.fulfilled));
        if i == 0 {
            1.0
        } else {
            f as f64 / i as f64
        }
    }
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: SimEventLog,
    /// Metrics accumulated while the run progressed.
    pub metrics: RunMetrics,
    pub overlay: Overlay,
}

pub struct Simulation {
    cfg: SimConfig,
    overlay: Overlay,
    peers: Vec<PeerState>,
    maps: Vec<Option<Arc<BufferMap>>>,
    queues: Vec<Vec<Request>>,
    in_flight: VecDeque<(u64, usize, usize, ChunkId)>,
    params: PriorityParams,
    order_rng: ChaCha8Rng,
    sched_rng: ChaCha8Rng,
    change_rng: ChaCha8Rng,
    log: SimEventLog,
    collector: MetricsCollector,
    slot: u64,
}

impl Simulation {
    /// Simulation over a generated overlay.
    pub fn new(cfg: SimConfig, seed: u64) -> Result<Self, SimError> {
        cfg.validate()?;
        let overlay = build_overlay(&cfg.overlay, seed)?;
        Self::with_overlay(cfg, overlay, seed)
    }

    /// Simulation over a given overlay. Seeds start empty; use
    /// [`preload`](Self::preload) to give them chunks.
    pub fn with_overlay(cfg: SimConfig, overlay: Overlay, seed: u64) -> Result<Self, SimError> {
        cfg.validate()?;
        let profile = cfg.profile.clone();
        let mut trace_rng = seeded_rng(seed, "traces");
        let mut peers = Vec::with_capacity(overlay.len());
        for (i, spec) in overlay.peers().iter().enumerate() {
            let deg = overlay.degree(i);
            let mut window = SlidingWindow::new(profile.clone(), cfg.window)?.with_startup(cfg.startup);
            if spec.role == Role::Source {
                window.fill_all();
            }
            let receiver = spec.role == Role::Receiver;
            let trace = match (&cfg.overlay.trace, receiver) {
                (Some(TraceSpec::Fixed(t)), true) => Some(t.clone()),
                (Some(TraceSpec::Generated(shape)), true) => Some(Arc::new(generate_trace(shape, cfg.duration, &mut trace_rng))),
                _ => None,
            };
            peers.push(PeerState {
                role: spec.role,
                window,
                smoother: if receiver { Some(SmootherState::new(cfg.smoother)?) } else { None },
                measured: BandwidthTrace::new(TraceSource::Measured),
                trace,
                scale: 1.0,
                download_kbps: spec.download_kbps,
                upload_kbps: spec.upload_kbps,
                current: vec![LinkStats::default(); deg],
                history: vec![VecDeque::new(); deg],
                credit: vec![0.0; deg],
            });
        }
        let params = cfg.priority.params(profile.layer_count(), cfg.window.span());
        let n = overlay.len();
        Ok(Self {
            collector: MetricsCollector::new(profile.layer_count()),
            params,
            maps: vec![None; n],
            queues: vec![Vec::new(); n],
            in_flight: VecDeque::new(),
            order_rng: seeded_rng(seed, "order"),
            sched_rng: seeded_rng(seed, "scheduler"),
            change_rng: seeded_rng(seed, "bandwidth-change"),
            log: SimEventLog::new(),
            slot: 0,
            peers,
            overlay,
            cfg,
        })
    }

    /// Give a peer a chunk before the run starts.
    pub fn preload(&mut self, peer: usize, chunk: ChunkId) {
        self.peers[peer].window.receive(chunk, 0);
    }

    pub fn overlay(&self) -> &Overlay {
        &self.overlay
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn log(&self) -> &SimEventLog {
        &self.log
    }

    pub fn window(&self, peer: usize) -> &SlidingWindow {
        &self.peers[peer].window
    }

    pub fn smoother(&self, peer: usize) -> Option<&SmootherState> {
        self.peers[peer].smoother.as_ref()
    }

    pub fn measured(&self, peer: usize) -> &BandwidthTrace {
        &self.peers[peer].measured
    }

    fn emit(&mut self, event: Event) {
        self.collector.observe(&event);
        self.log.push(event);
    }

    fn event(&self, peer: usize, kind: EventKind) -> Event {
        Event {
            slot: self.slot,
            peer: self.overlay.peers()[peer].id,
            kind,
            chunk_slot: None,
            layer: None,
            neighbor: None,
            detail: 0.0,
        }
    }

    fn chunk_event(&self, peer: usize, kind: EventKind, chunk: ChunkId, neighbor: usize, detail: f64) -> Event {
        Event {
            chunk_slot: Some(chunk.slot),
            layer: Some(chunk.layer as Quality),
            neighbor: Some(self.overlay.peers()[neighbor].id),
            detail,
            ..self.event(peer, kind)
        }
    }

    fn receivers(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.peers.len()).filter(|&i| self.peers[i].role == Role::Receiver)
    }

    /// Advance one wall-clock slot.
    pub fn step(&mut self) {
        self.update_capacities();
        if self.slot % self.cfg.overlay.gossip_period as u64 == 0 {
            self.gossip();
        }
        self.smooth();
        if self.slot % self.cfg.overlay.scheduling_period as u64 == 0 {
            self.close_period();
            self.schedule();
        }
        self.serve();
        self.play();
        self.slot += 1;
    }

    pub fn is_done(&self) -> bool {
        self.slot >= self.cfg.duration
    }

    /// Run to the configured duration.
    pub fn run(mut self) -> RunOutput {
        while !self.is_done() {
            self.step();
        }
        self.finish()
    }

    pub fn finish(self) -> RunOutput {
        RunOutput { metrics: self.collector.finish(), log: self.log, overlay: self.overlay }
    }

    fn update_capacities(&mut self) {
        let t = self.slot;
        let chunk_s = self.cfg.profile.chunk_duration();
        if let Some(change) = self.cfg.overlay.change {
            if t > 0 && t % change.interval as u64 == 0 {
                for p in self.peers.iter_mut().filter(|p| p.role == Role::Receiver) {
                    p.scale = self.change_rng.gen_range(change.min_scale..=change.max_scale);
                }
            }
        }
        let specs = self.overlay.peers();
        for (i, p) in self.peers.iter_mut().enumerate() {
            if p.role != Role::Receiver {
                continue;
            }
            let base_down = match &p.trace {
                Some(trace) => trace.value_at(t).unwrap_or(0.0),
                None => specs[i].download_kbps,
            };
            p.download_kbps = base_down * p.scale;
            p.upload_kbps = match &p.trace {
                Some(_) => p.download_kbps * self.cfg.overlay.upload_ratio,
                None => specs[i].upload_kbps * p.scale,
            };
        }
        for i in self.receivers().collect::<Vec<_>>() {
            let mut e = self.event(i, EventKind::Capacity);
            e.detail = self.peers[i].download_kbps * chunk_s;
            self.emit(e);
        }
    }

    fn gossip(&mut self) {
        let total = self.cfg.profile.total_slots();
        let span = self.cfg.window.span() as i64;
        for (i, p) in self.peers.iter().enumerate() {
            let (start, width) = match p.role {
                Role::Source | Role::Seed => (0, total.min(u16::MAX as u32) as u16),
                Role::Receiver => ((p.window.playhead() - span).max(0) as u32, (2 * span) as u16),
            };
            let map = BufferMap::from_window(&p.window, self.overlay.peers()[i].id, start, width);
            let wire = map.encode();
            let decoded = BufferMap::decode(&wire).expect("encoded maps decode");
            self.maps[i] = Some(Arc::new(decoded));
        }
    }

    fn smooth(&mut self) {
        let now = self.slot;
        for i in self.receivers().collect::<Vec<_>>() {
            let p = &mut self.peers[i];
            let smoother = p.smoother.as_mut().expect("receivers smooth");
            let decided = smoother.plan(&mut p.window, &p.measured, now);
            for (slot, level) in decided {
                let mut e = self.event(i, EventKind::Target);
                e.chunk_slot = Some(slot);
                e.layer = Some(level);
                self.emit(e);
            }
        }
    }

    /// Withdraw what the senders did not serve and roll the reliability
    /// history forward.
    fn close_period(&mut self) {
        let mut withdrawn = Vec::new();
        for sender in 0..self.queues.len() {
            for r in std::mem::take(&mut self.queues[sender]) {
                withdrawn.push((r.receiver, sender, r.chunk));
            }
        }
        withdrawn.sort_by_key(|&(r, s, c)| (r, s, c));
        for (receiver, sender, chunk) in withdrawn {
            let e = self.chunk_event(receiver, EventKind::Withdraw, chunk, sender, 0.0);
            self.emit(e);
        }
        let keep = self.cfg.reliability_history;
        for p in self.peers.iter_mut() {
            for (k, stats) in p.current.iter_mut().enumerate() {
                if stats.issued > 0 {
                    p.history[k].push_back(std::mem::take(stats));
                    while p.history[k].len() > keep {
                        p.history[k].pop_front();
                    }
                }
            }
        }
    }

    fn link_kbps(&self, receiver: usize, sender: usize) -> f64 {
        let up = self.peers[sender].upload_kbps;
        match self.cfg.capacity_model {
            CapacityModel::FairShare => up / self.overlay.degree(sender).max(1) as f64,
            CapacityModel::Optimistic => up.min(self.peers[receiver].download_kbps),
        }
    }

    /// Bandwidth the receiver can expect from its neighbors this slot: each
    /// neighbor's upload split evenly over its neighbors.
    fn available_kbps(&self, receiver: usize) -> f64 {
        let supply: f64 = self
            .overlay
            .neighbors(receiver)
            .iter()
            .map(|&k| self.peers[k].upload_kbps / self.overlay.degree(k).max(1) as f64)
            .sum();
        self.peers[receiver].download_kbps.min(supply)
    }

    fn schedule(&mut self) {
        let period = self.cfg.overlay.scheduling_period as f64;
        let chunk_s = self.cfg.profile.chunk_duration();
        let unit = self.cfg.profile.mean_chunk_kbit();
        let mut order: Vec<usize> = self.receivers().collect();
        order.shuffle(&mut self.order_rng);
        for i in order {
            let plan = self.plan_requests(i, period, chunk_s, unit);
            for (chunk, k, prio) in plan {
                let pos = self.overlay.neighbors(i).binary_search(&k).expect("requests go to neighbors");
                self.peers[i].current[pos].issued += 1;
                if self.cfg.capacity_model == CapacityModel::FairShare {
                    self.peers[i].credit[pos] -= self.cfg.profile.chunk_kbit(chunk.layer as usize);
                }
                self.queues[k].push(Request { receiver: i, chunk });
                let e = self.chunk_event(i, EventKind::Request, chunk, k, prio);
                self.emit(e);
            }
        }
    }

    /// Missing chunks, neighbor views and the configured scheduler for one
    /// receiver. Returns `(chunk, sender, priority)` in decision order.
    fn plan_requests(&mut self, i: usize, period: f64, chunk_s: f64, unit: f64) -> Vec<(ChunkId, usize, f64)> {
        let now = self.slot;
        let profile = self.cfg.profile.clone();
        let p = &self.peers[i];
        let window = &p.window;
        let smoother = p.smoother.as_ref().expect("receivers smooth");
        let mut missing = Vec::new();
        if window.is_stalled() {
            // repair: base chunks of the playing interval
            missing.extend(window.missing_in(window.playing_interval(), |_| 0));
        }
        missing.extend(window.missing_chunks_by(|s| window.target(s).unwrap_or(0).max(0)));
        if self.cfg.prefetch {
            let forecast = estimate_next(&p.measured, &smoother.config().forecast(), now).unwrap_or(0.0);
            let level = smoother.last_level().unwrap_or(0).max(0);
            let mut budget = (forecast - profile.cumulative_rate(level)).max(0.0) * period * chunk_s;
            let range = window.prefetch_interval();
            'layers: for layer in 0..profile.layer_count() {
                for slot in range.clone() {
                    let c = ChunkId::new(slot, layer as u8);
                    if window.is_held(c) {
                        continue;
                    }
                    let size = profile.chunk_kbit(layer);
                    if size > budget {
                        break 'layers;
                    }
                    budget -= size;
                    missing.push(c);
                }
            }
        }
        if missing.is_empty() {
            return Vec::new();
        }

        let neighbors = self.overlay.neighbors(i).to_vec();
        let mut views = Vec::with_capacity(neighbors.len());
        for (pos, &k) in neighbors.iter().enumerate() {
            let Some(map) = self.maps[k].clone() else { continue };
            let grant = self.link_kbps(i, k) * period * chunk_s;
            let capacity = match self.cfg.capacity_model {
                CapacityModel::FairShare => {
                    let credit = &mut self.peers[i].credit[pos];
                    *credit = (*credit + grant).min(grant + unit);
                    (*credit / unit).floor() as u32
                }
                CapacityModel::Optimistic => (grant / unit).floor() as u32,
            };
            views.push(NeighborView {
                id: self.overlay.peers()[k].id,
                map: (*map).clone(),
                capacity,
                reliability: self.peers[i].reliability(pos),
            });
        }
        let playhead = self.peers[i].window.playhead();
        let params = self.params;
        let matrix = build_matrix(&missing, &views, |c| priority(c, playhead, &params));
        let budget = self
            .cfg
            .download_budget
            .then(|| (self.peers[i].download_kbps * period * chunk_s / unit).floor() as u32);
        let schedule = match self.cfg.scheduler {
            SchedulerKind::Gap => gap_schedule_with(&matrix, None, &GreedyTopC, budget),
            kind => {
                let baseline = match kind {
                    SchedulerKind::Random => BaselineKind::Random,
                    SchedulerKind::Lrf => BaselineKind::Lrf,
                    SchedulerKind::RoundRobin => BaselineKind::RoundRobin,
                    _ => {
                        let last = self.peers[i].measured.last_before(now).map_or(0.0, |s| s.kbps);
                        BaselineKind::LayerP2p { threshold: max_sustainable_quality(last, &profile) - 1 }
                    }
                };
                baseline_schedule(baseline, &matrix, None, &mut self.sched_rng).map(|mut s: Schedule| {
                    if let Some(b) = budget {
                        s.assignments.truncate(b as usize);
                    }
                    s
                })
            }
        }
        .expect("unit weights always resolve");

        let index_of = |id: PeerId| id.0 as usize;
        schedule
            .assignments
            .iter()
            .map(|&(c, k)| {
                let col = matrix.column_of(c).expect("assigned chunks are columns");
                (c, index_of(k), matrix.priorities()[col])
            })
            .collect()
    }

    fn serve(&mut self) {
        let chunk_s = self.cfg.profile.chunk_duration();
        let mut down_left: Vec<f64> = self.peers.iter().map(|p| p.download_kbps * chunk_s).collect();
        let mut senders: Vec<usize> = (0..self.peers.len()).filter(|&k| !self.queues[k].is_empty()).collect();
        senders.shuffle(&mut self.order_rng);
        let mut served = Vec::new();
        for k in senders {
            let mut up_left = self.peers[k].upload_kbps * chunk_s;
            let queue = std::mem::take(&mut self.queues[k]);
            let mut keep = Vec::with_capacity(queue.len());
            let mut exhausted = false;
            for r in queue {
                let size = self.cfg.profile.chunk_kbit(r.chunk.layer as usize);
                if exhausted || size > up_left + 1e-9 {
                    exhausted = true;
                    keep.push(r);
                    continue;
                }
                if size > down_left[r.receiver] + 1e-9 {
                    keep.push(r);
                    continue;
                }
                debug_assert!(self.peers[k].window.is_held(r.chunk));
                up_left -= size;
                down_left[r.receiver] -= size;
                served.push((k, r));
            }
            self.queues[k] = keep;
        }
        let arrival = self.slot + self.cfg.overlay.delay as u64;
        for (k, r) in served {
            let pos = self.overlay.neighbors(r.receiver).binary_search(&k).expect("served by a neighbor");
            self.peers[r.receiver].current[pos].fulfilled += 1;
            self.in_flight.push_back((arrival, r.receiver, k, r.chunk));
        }
        while self.in_flight.front().is_some_and(|f| f.0 <= self.slot) {
            let (_, i, k, chunk) = self.in_flight.pop_front().expect("checked non-empty");
            let size = self.cfg.profile.chunk_kbit(chunk.layer as usize);
            let kind = match self.peers[i].window.receive(chunk, self.slot) {
                crate::stream::Receipt::OnTime => EventKind::Deliver,
                crate::stream::Receipt::Late => EventKind::Late,
                crate::stream::Receipt::Duplicate => EventKind::Duplicate,
            };
            let e = self.chunk_event(i, kind, chunk, k, size);
            self.emit(e);
        }
    }

    fn play(&mut self) {
        let now = self.slot;
        for i in self.receivers().collect::<Vec<_>>() {
            let report = self.peers[i].window.advance_playhead(1);
            for step in report.steps {
                match step.outcome {
                    PlaybackOutcome::Played { slot, quality } => {
                        let target = self.peers[i].window.target(slot).unwrap_or(self.cfg.profile.top_quality());
                        let mut e = self.event(i, EventKind::Play);
                        e.chunk_slot = Some(slot);
                        e.layer = Some(quality);
                        e.detail = target as f64;
                        self.emit(e);
                    }
                    PlaybackOutcome::Stalled { slot } => {
                        let mut e = self.event(i, EventKind::Stall);
                        e.chunk_slot = Some(slot);
                        self.emit(e);
                    }
                    PlaybackOutcome::Startup | PlaybackOutcome::Finished => {}
                }
            }
            let sample = match self.peers[i].trace {
                Some(_) => self.peers[i].download_kbps,
                None => self.available_kbps(i),
            };
            self.peers[i].measured.push(now, sample).expect("samples are increasing");
        }
    }
}

/// Build, run and collect one simulation.
pub fn run(cfg: SimConfig, seed: u64) -> Result<RunOutput, SimError> {
    Ok(Simulation::new(cfg, seed)?.run())
}
