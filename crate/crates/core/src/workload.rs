//! Host traces: MSR Cambridge parsing, page decomposition, and synthetic
//! generators for bursty and daily-use runs.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use thiserror::Error;

use crate::flash::Lpn;
use crate::op::{ms_to_ns, Nanos};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("malformed trace line: {0}")]
    MalformedLine(String),
    #[error("cannot read trace {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad generator spec {spec:?}: {reason}")]
    BadGenerator { spec: String, reason: String },
    #[error("bad size {0:?}")]
    BadSize(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IoOp {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Request {
    pub arrival_ns: Nanos,
    pub op: IoOp,
    pub offset: u64,
    pub size: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PageOp {
    pub arrival_ns: Nanos,
    pub op: IoOp,
    pub lpn: Lpn,
}

/// A host trace. `drain` asks the engine to run idle programs to
/// quiescence after the last request.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub requests: Vec<Request>,
    pub drain: bool,
}

impl Trace {
    pub fn new(mut requests: Vec<Request>) -> Self {
        requests.sort_by_key(|r| r.arrival_ns);
        Self { requests, drain: false }
    }

    pub fn write_bytes(&self) -> u64 {
        self.requests.iter().filter(|r| r.op == IoOp::Write).map(|r| r.size).sum()
    }

    pub fn pages(&self, page_size: u64) -> impl Iterator<Item = PageOp> + '_ {
        self.requests.iter().flat_map(move |r| split_request(r, page_size))
    }
}

/// Page-aligned cover of `[offset, offset + size)`.
pub fn split_request(req: &Request, page_size: u64) -> impl Iterator<Item = PageOp> {
    let (first, last) = if req.size == 0 {
        (1, 0)
    } else {
        (req.offset / page_size, (req.offset + req.size - 1) / page_size)
    };
    let (arrival_ns, op) = (req.arrival_ns, req.op);
    (first..=last).map(move |lpn| PageOp { arrival_ns, op, lpn })
}

/// Stateful MSR Cambridge parser: timestamps are relative to the first
/// accepted record, and records for other disks are dropped.
#[derive(Debug, Clone, Default)]
pub struct MsrParser {
    epoch: Option<u64>,
    pub disk: Option<u32>,
    pub malformed: usize,
}

impl MsrParser {
    pub fn new(disk: Option<u32>) -> Self {
        Self { epoch: None, disk, malformed: 0 }
    }

    /// Parses one line. `Ok(None)` for records filtered by disk or with zero
    /// size.
    pub fn parse_line(&mut self, line: &str) -> Result<Option<Request>, WorkloadError> {
        let bad = || WorkloadError::MalformedLine(line.to_string());
        let fields: Vec<&str> = line.trim().split(',').map(str::trim).collect();
        if fields.len() != 7 {
            return Err(bad());
        }
        let ticks: u64 = fields[0].parse().map_err(|_| bad())?;
        let disk: u32 = fields[2].parse().map_err(|_| bad())?;
        let op = match fields[3].to_ascii_lowercase().as_str() {
            "write" => IoOp::Write,
            "read" => IoOp::Read,
            _ => return Err(bad()),
        };
        let offset: u64 = fields[4].parse().map_err(|_| bad())?;
        let size: u64 = fields[5].parse().map_err(|_| bad())?;
        fields[6].parse::<u64>().map_err(|_| bad())?;
        if self.disk.is_some_and(|d| d != disk) || size == 0 {
            return Ok(None);
        }
        let epoch = *self.epoch.get_or_insert(ticks);
        let arrival_ns = ticks.saturating_sub(epoch) * 100;
        Ok(Some(Request { arrival_ns, op, offset, size }))
    }

    /// Reads a whole trace, skipping (and counting) malformed lines.
    pub fn read<R: BufRead>(&mut self, input: R) -> std::io::Result<Trace> {
        let mut out = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match self.parse_line(&line) {
                Ok(Some(r)) => out.push(r),
                Ok(None) => {}
                Err(_) => self.malformed += 1,
            }
        }
        Ok(Trace::new(out))
    }
}

/// Parses a single line with the line itself as epoch.
pub fn parse_msr_line(line: &str) -> Result<Request, WorkloadError> {
    MsrParser::new(None)
        .parse_line(line)?
        .ok_or_else(|| WorkloadError::MalformedLine(line.to_string()))
}

/// Loads an MSR trace; gzip input is detected from its magic bytes.
pub fn load_msr(path: &Path, disk: Option<u32>) -> Result<(Trace, usize), WorkloadError> {
    let io = |source| WorkloadError::Io { path: path.display().to_string(), source };
    let mut file = BufReader::new(File::open(path).map_err(io)?);
    let gz = file.fill_buf().map_err(io)?.starts_with(&[0x1f, 0x8b]);
    let reader: Box<dyn Read> = if gz { Box::new(MultiGzDecoder::new(file)) } else { Box::new(file) };
    let mut parser = MsrParser::new(disk);
    let trace = parser.read(BufReader::new(reader)).map_err(io)?;
    Ok((trace, parser.malformed))
}

pub const BURST_IO: u64 = 32 * 1024;

/// Keeps the written byte count and replays it as back-to-back sequential
/// 32 KiB writes at t=0. The last write may be shorter.
pub fn to_bursty(trace: &Trace) -> Trace {
    let total = trace.write_bytes();
    let mut t = gen_sequential(total, BURST_IO, 0);
    t.drain = false;
    t
}

/// `total_bytes` of sequential writes from offset 0 in `io_size` requests,
/// one every `inter_arrival_ns`.
pub fn gen_sequential(total_bytes: u64, io_size: u64, inter_arrival_ns: Nanos) -> Trace {
    let mut out = Vec::new();
    let mut offset = 0;
    while offset < total_bytes {
        let size = io_size.min(total_bytes - offset);
        out.push(Request { arrival_ns: out.len() as u64 * inter_arrival_ns, op: IoOp::Write, offset, size });
        offset += size;
    }
    Trace::new(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeriodicSpec {
    pub streams: u32,
    pub bytes_per_stream: u64,
    /// Idle time between the last request of a stream and the next stream.
    pub idle_gap_ns: Nanos,
    pub io_size: u64,
    /// Spacing of requests inside a stream.
    pub intra_gap_ns: Nanos,
    /// Every stream rewrites the same address range instead of a fresh one.
    pub rewrite: bool,
}

impl PeriodicSpec {
    pub fn new(streams: u32, bytes_per_stream: u64, idle_gap_ns: Nanos) -> Self {
        Self { streams, bytes_per_stream, idle_gap_ns, io_size: BURST_IO, intra_gap_ns: 0, rewrite: false }
    }
}

/// Daily-use pattern: `streams` sequential write streams separated by idle
/// gaps, over disjoint address ranges unless `rewrite` is set.
pub fn gen_periodic(spec: &PeriodicSpec) -> Trace {
    let mut out = Vec::new();
    let mut start = 0;
    for s in 0..spec.streams as u64 {
        let stream = gen_sequential(spec.bytes_per_stream, spec.io_size, spec.intra_gap_ns);
        let mut last = start;
        for r in stream.requests {
            last = start + r.arrival_ns;
            let base = if spec.rewrite { 0 } else { s * spec.bytes_per_stream };
            out.push(Request { arrival_ns: last, offset: r.offset + base, ..r });
        }
        start = last + spec.idle_gap_ns;
    }
    Trace::new(out)
}

/// Marks the trace so the engine drains idle programs after the last
/// request.
pub fn daily_epilogue(mut trace: Trace) -> Trace {
    trace.drain = true;
    trace
}

/// Parses sizes like `4096`, `32KiB`, `64MiB`, `20MB`, `1GiB`.
pub fn parse_size(s: &str) -> Result<u64, WorkloadError> {
    let s = s.trim();
    let split = s.find(|c: char| !c.is_ascii_digit() && c != '.').unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let value: f64 = num.parse().map_err(|_| WorkloadError::BadSize(s.to_string()))?;
    let mult: u64 = match unit.trim().to_ascii_lowercase().as_str() {
        "" | "b" => 1,
        "k" | "kib" => 1 << 10,
        "m" | "mib" => 1 << 20,
        "g" | "gib" => 1 << 30,
        "kb" => 1_000,
        "mb" => 1_000_000,
        "gb" => 1_000_000_000,
        _ => return Err(WorkloadError::BadSize(s.to_string())),
    };
    Ok((value * mult as f64).round() as u64)
}

/// Builds a trace from a generator spec:
/// `seq:TOTAL:IO[:GAP_MS]` or
/// `periodic:STREAMS:BYTES:IDLE_GAP_MS[:IO[:INTRA_GAP_MS]]`.
pub fn from_generator(spec: &str) -> Result<Trace, WorkloadError> {
    let bad = |reason: &str| WorkloadError::BadGenerator { spec: spec.to_string(), reason: reason.to_string() };
    let parts: Vec<&str> = spec.split(':').collect();
    let ms = |s: &str| -> Result<Nanos, WorkloadError> {
        let v: f64 = s.parse().map_err(|_| bad("bad duration"))?;
        if v < 0.0 {
            return Err(bad("negative duration"));
        }
        Ok(ms_to_ns(v))
    };
    match parts.as_slice() {
        ["seq", total, io, rest @ ..] if rest.len() <= 1 => {
            let io = parse_size(io)?;
            if io == 0 {
                return Err(bad("zero io size"));
            }
            let gap = rest.first().map(|g| ms(g)).transpose()?.unwrap_or(0);
            Ok(gen_sequential(parse_size(total)?, io, gap))
        }
        ["periodic", streams, bytes, gap, rest @ ..] if rest.len() <= 2 => {
            let mut p = PeriodicSpec::new(
                streams.parse().map_err(|_| bad("bad stream count"))?,
                parse_size(bytes)?,
                ms(gap)?,
            );
            if let Some(io) = rest.first() {
                p.io_size = parse_size(io)?;
                if p.io_size == 0 {
                    return Err(bad("zero io size"));
                }
            }
            if let Some(g) = rest.get(1) {
                p.intra_gap_ns = ms(g)?;
            }
            Ok(gen_periodic(&p))
        }
        _ => Err(bad("expected seq:TOTAL:IO[:GAP_MS] or periodic:STREAMS:BYTES:GAP_MS[:IO[:INTRA_MS]]")),
    }
}
