//! Deterministic list scheduler: host pages are routed round-robin over
//! planes, each plane serves its operations FIFO, and idle windows run
//! per-plane idle programs one atomic action at a time.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flash::{FlashError, GeometryConfig, Lpn, PhysAddr, TimingConfig};
use crate::ftl::{AgcStepResult, Ftl, FtlConfig, FtlError};
use crate::op::{ms_to_ns, Category, FlashOp, Nanos, OpKind};
use crate::policy::{apply_idle_action, next_idle_action, route_write, PolicyError, Scheme, SchemeKind};
use crate::workload::{IoOp, Trace};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Flash(#[from] FlashError),
    #[error(transparent)]
    Ftl(#[from] FtlError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invariant violated at {time_ms} ms: {msg}")]
    Invariant { time_ms: f64, msg: String },
}

/// Ages the device before the trace starts. Fractions are of the logical
/// page count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Precondition {
    pub fill_fraction: f64,
    pub overwrite_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub timing: TimingConfig,
    #[serde(default)]
    pub ftl: FtlConfig,
    /// Quiet time after the last activity before idle work starts.
    #[serde(default = "default_idle_threshold")]
    pub idle_threshold_ms: f64,
    #[serde(default)]
    pub precondition: Option<Precondition>,
}

fn default_idle_threshold() -> f64 {
    100.0
}

impl SimConfig {
    pub fn new(geometry: GeometryConfig) -> Self {
        Self {
            geometry,
            timing: TimingConfig::default(),
            ftl: FtlConfig::default(),
            idle_threshold_ms: default_idle_threshold(),
            precondition: None,
        }
    }

    pub fn desk() -> Self {
        Self::new(GeometryConfig::desk())
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        self.geometry.validate()?;
        self.timing.validate()?;
        let bad = |m: &str| Err(EngineError::Config(m.to_string()));
        if !(self.idle_threshold_ms.is_finite() && self.idle_threshold_ms >= 0.0) {
            return bad("idle threshold must be a non-negative number of ms");
        }
        let f = &self.ftl;
        if !(0.0..1.0).contains(&f.gc_low_watermark) {
            return bad("gc_low_watermark must be in [0, 1)");
        }
        if !(f.logical_fraction > 0.0 && f.logical_fraction <= 1.0) {
            return bad("logical_fraction must be in (0, 1]");
        }
        if let Some(p) = self.precondition {
            if !(0.0..=1.0).contains(&p.fill_fraction) || p.overwrite_fraction.is_nan() || p.overwrite_fraction < 0.0 {
                return bad("precondition fractions out of range");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Program(Category),
    Erase,
    Read,
    ReadMiss,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::Program(c) => c.name(),
            EventKind::Erase => "erase",
            EventKind::Read => "read",
            EventKind::ReadMiss => "read_miss",
        }
    }
}

/// One logged event. `time_ns` is the completion time of the operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRecord {
    pub time_ns: Nanos,
    pub plane: usize,
    pub kind: EventKind,
    /// Host writes and reads only.
    pub latency_ns: Option<Nanos>,
    pub lpn: Option<Lpn>,
    pub src: Option<PhysAddr>,
    pub dst: Option<PhysAddr>,
    pub block: Option<usize>,
    /// Set for events produced by idle work.
    pub idle: bool,
    /// FTL mutation order; reads carry the sequence of the last mutation
    /// before them.
    pub seq: u64,
    /// Flash operation behind the event; `None` for read misses.
    pub op: Option<OpKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HostWrite {
    pub arrival_ns: Nanos,
    pub completion_ns: Nanos,
    pub plane: usize,
    pub lpn: Lpn,
    pub category: Category,
}

impl HostWrite {
    pub fn latency_ns(&self) -> Nanos {
        self.completion_ns - self.arrival_ns
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Counters {
    pub host_page_writes: u64,
    pub host_page_reads: u64,
    pub read_misses: u64,
    pub programs: [u64; 8],
    pub erases: u64,
    pub sync_gc_victims: u64,
    pub idle_actions: u64,
}

impl Counters {
    pub fn programs_of(&self, c: Category) -> u64 {
        self.programs[c.index()]
    }

    pub fn data_programs(&self) -> u64 {
        Category::ALL.iter().filter(|c| c.carries_data()).map(|&c| self.programs_of(c)).sum()
    }

    pub fn host_programs(&self) -> u64 {
        Category::ALL.iter().filter(|c| c.is_host()).map(|&c| self.programs_of(c)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub scheme: SchemeKind,
    pub page_size: u64,
    pub events: Vec<EventRecord>,
    /// Completed host writes, in submission order.
    pub host_writes: Vec<HostWrite>,
    pub counters: Counters,
    /// Erase count of every block, indexed `[plane][block]`.
    pub erase_histogram: Vec<Vec<u64>>,
    pub device_full: bool,
    pub end_ns: Nanos,
}

/// Called after every host page and every idle action.
pub type Observer<'a> = &'a mut dyn FnMut(&Ftl, &Scheme) -> Result<(), String>;

struct Engine<'a> {
    scheme: Scheme,
    ftl: Ftl,
    channels: usize,
    transfer: Nanos,
    idle_threshold: Nanos,
    plane_busy: Vec<Nanos>,
    channel_busy: Vec<Nanos>,
    next_plane: usize,
    idle_cursor: usize,
    pending: HashMap<u64, (Nanos, usize, Lpn)>,
    writes: Vec<Option<HostWrite>>,
    events: Vec<EventRecord>,
    counters: Counters,
    last_activity: Nanos,
    observer: Option<Observer<'a>>,
}

impl Engine<'_> {
    fn observe(&mut self, now: Nanos) -> Result<(), EngineError> {
        debug_assert_eq!(self.ftl.check_conservation(), Ok(()));
        if let Some(obs) = self.observer.as_mut() {
            obs(&self.ftl, &self.scheme)
                .map_err(|msg| EngineError::Invariant { time_ms: now as f64 / 1e6, msg })?;
        }
        Ok(())
    }

    /// Schedules queued FTL ops, none starting before `ready`. Returns the
    /// latest completion time.
    fn schedule(&mut self, ready: Nanos, idle: bool) -> Nanos {
        let mut last = ready;
        for op in self.ftl.take_ops() {
            last = last.max(self.schedule_op(op, ready, idle));
        }
        last
    }

    fn schedule_op(&mut self, op: FlashOp, ready: Nanos, idle: bool) -> Nanos {
        let start = ready.max(self.plane_busy[op.plane]);
        let end = start + op.duration;
        self.plane_busy[op.plane] = end;
        let base = EventRecord {
            time_ns: end,
            plane: op.plane,
            kind: EventKind::Erase,
            latency_ns: None,
            lpn: None,
            src: None,
            dst: None,
            block: op.block,
            idle,
            seq: op.seq,
            op: Some(op.kind),
        };
        match op.kind {
            OpKind::Erase => {
                self.counters.erases += 1;
                self.events.push(base);
            }
            OpKind::InternalRead | OpKind::Read => {}
            OpKind::SlcProgram | OpKind::Reprogram | OpKind::TlcProgram => {
                for p in op.pages {
                    self.counters.programs[p.category.index()] += 1;
                    let latency_ns = p.tag.map(|tag| self.complete(tag, end, p.category));
                    self.events.push(EventRecord {
                        kind: EventKind::Program(p.category),
                        latency_ns,
                        lpn: p.lpn,
                        src: p.src,
                        dst: p.dst,
                        block: p.dst.map(|d| d.block as usize).or(op.block),
                        seq: p.seq,
                        ..base.clone()
                    });
                }
            }
        }
        end
    }

    fn complete(&mut self, tag: u64, end: Nanos, category: Category) -> Nanos {
        let (arrival_ns, plane, lpn) = self.pending.remove(&tag).expect("host tag completes once");
        self.writes[tag as usize] = Some(HostWrite { arrival_ns, completion_ns: end, plane, lpn, category });
        end - arrival_ns
    }

    fn host_write(&mut self, arrival: Nanos, lpn: Lpn) -> Result<bool, EngineError> {
        let plane = self.next_plane;
        self.next_plane = (self.next_plane + 1) % self.plane_busy.len();
        let ready = self.transfer_at(plane, arrival);
        let gc = self.ftl.ensure_space(plane)?;
        self.counters.sync_gc_victims += gc as u64;
        let action = match route_write(&self.scheme, &self.ftl, plane) {
            Ok(a) => a,
            Err(PolicyError::DeviceFull(_)) => {
                self.ftl.take_ops();
                return Ok(false);
            }
            Err(e) => return Err(e.into()),
        };
        let tag = self.writes.len() as u64;
        self.writes.push(None);
        self.pending.insert(tag, (arrival, plane, lpn));
        self.counters.host_page_writes += 1;
        self.ftl.host_write_commit(lpn, action, tag)?;
        let end = self.schedule(ready, false);
        self.last_activity = self.last_activity.max(end);
        self.observe(arrival)?;
        Ok(true)
    }

    fn host_read(&mut self, arrival: Nanos, lpn: Lpn) {
        self.counters.host_page_reads += 1;
        let base = EventRecord {
            time_ns: arrival,
            plane: 0,
            kind: EventKind::ReadMiss,
            latency_ns: Some(0),
            lpn: Some(lpn),
            src: None,
            dst: None,
            block: None,
            idle: false,
            seq: self.ftl.mutations(),
            op: None,
        };
        if !self.ftl.read(lpn) {
            self.counters.read_misses += 1;
            self.events.push(base);
            return;
        }
        let mut end = arrival;
        for op in self.ftl.take_ops() {
            let ready = self.transfer_at(op.plane, arrival);
            let plane = op.plane;
            let block = op.block;
            end = end.max(self.schedule_op(op, ready, false));
            self.events.push(EventRecord {
                time_ns: end,
                plane,
                kind: EventKind::Read,
                latency_ns: Some(end - arrival),
                block,
                op: Some(OpKind::Read),
                ..base.clone()
            });
        }
        self.last_activity = self.last_activity.max(end);
    }

    fn transfer_at(&mut self, plane: usize, at: Nanos) -> Nanos {
        let ch = plane % self.channels;
        let start = at.max(self.channel_busy[ch]);
        self.channel_busy[ch] = start + self.transfer;
        start + self.transfer
    }

    /// Runs idle actions in `[quiet + threshold, until)`. With `until =
    /// None` it runs every plane's idle program to completion.
    fn idle_window(&mut self, until: Option<Nanos>) -> Result<(), EngineError> {
        let busy = self.plane_busy.iter().copied().max().unwrap_or(0);
        let start = busy.max(self.last_activity) + self.idle_threshold;
        if until.is_some_and(|u| start >= u) {
            return Ok(());
        }
        let planes = self.plane_busy.len();
        let mut done = vec![false; planes];
        loop {
            // Earliest-available plane with work; ties go round-robin.
            let pick = (0..planes)
                .map(|i| (self.idle_cursor + i) % planes)
                .filter(|&p| !done[p])
                .min_by_key(|&p| self.plane_busy[p].max(start));
            let Some(plane) = pick else { break };
            let at = self.plane_busy[plane].max(start);
            if until.is_some_and(|u| at >= u) {
                break;
            }
            let Some(action) = next_idle_action(&self.scheme, &self.ftl, plane) else {
                done[plane] = true;
                continue;
            };
            let result = apply_idle_action(&mut self.ftl, plane, action)?;
            if result == Some(AgcStepResult::NothingToDo) {
                self.ftl.take_ops();
                done[plane] = true;
                continue;
            }
            self.counters.idle_actions += 1;
            self.idle_cursor = (plane + 1) % planes;
            let end = self.schedule(at, true);
            self.observe(end)?;
        }
        Ok(())
    }

    fn flush_buffers(&mut self) -> Result<(), EngineError> {
        for plane in 0..self.plane_busy.len() {
            if self.ftl.buffered_pages(plane) > 0 {
                self.ftl.commit_tlc(plane)?;
                let end = self.schedule(self.last_activity.min(self.plane_busy[plane]), false);
                self.last_activity = self.last_activity.max(end);
            }
        }
        Ok(())
    }
}

/// Runs `trace` under `scheme`. Deterministic in all inputs.
pub fn run(config: &SimConfig, scheme: &Scheme, trace: &Trace, seed: u64) -> Result<RunReport, EngineError> {
    run_observed(config, scheme, trace, seed, None)
}

pub fn run_observed(
    config: &SimConfig,
    scheme: &Scheme,
    trace: &Trace,
    seed: u64,
    observer: Option<Observer<'_>>,
) -> Result<RunReport, EngineError> {
    config.validate()?;
    scheme.validate(&config.geometry)?;
    let g = config.geometry;
    let mut ftl = Ftl::new(g, &config.timing, &config.ftl, scheme.ips_donor_blocks, scheme.gc_mode());
    if let Some(p) = config.precondition {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logical = ftl.logical_pages() as f64;
        ftl.precondition((p.fill_fraction * logical) as u64, (p.overwrite_fraction * logical) as u64, &mut rng)?;
    }
    let planes = g.planes();
    let mut e = Engine {
        scheme: *scheme,
        ftl,
        channels: g.channels as usize,
        transfer: ms_to_ns(config.timing.channel_transfer_per_page),
        idle_threshold: ms_to_ns(config.idle_threshold_ms),
        plane_busy: vec![0; planes],
        channel_busy: vec![0; g.channels as usize],
        next_plane: 0,
        idle_cursor: 0,
        pending: HashMap::new(),
        writes: Vec::new(),
        events: Vec::new(),
        counters: Counters::default(),
        last_activity: 0,
        observer,
    };

    let mut device_full = false;
    let mut started = false;
    'trace: for page in trace.pages(g.page_size) {
        if started {
            e.idle_window(Some(page.arrival_ns))?;
        }
        started = true;
        e.last_activity = e.last_activity.max(page.arrival_ns);
        let lpn = e.ftl.wrap_lpn(page.lpn);
        match page.op {
            IoOp::Write => {
                if !e.host_write(page.arrival_ns, lpn)? {
                    device_full = true;
                    break 'trace;
                }
            }
            IoOp::Read => e.host_read(page.arrival_ns, lpn),
        }
    }
    if trace.drain && !device_full {
        e.idle_window(None)?;
    }
    e.flush_buffers()?;

    let end_ns = e.plane_busy.iter().copied().max().unwrap_or(0).max(e.last_activity);
    let mut events = e.events;
    events.sort_by_key(|ev| (ev.time_ns, ev.seq));
    let erase_histogram =
        e.ftl.planes.iter().map(|p| p.blocks.iter().map(|b| b.erase_count).collect()).collect();
    Ok(RunReport {
        scheme: scheme.kind,
        page_size: g.page_size,
        events,
        host_writes: e.writes.into_iter().flatten().collect(),
        counters: e.counters,
        erase_histogram,
        device_full,
        end_ns: if trace.requests.is_empty() { 0 } else { end_ns },
    })
}
