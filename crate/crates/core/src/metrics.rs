//! Quantities derived from a [`RunReport`], plus the artifact writers.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::engine::RunReport;
use crate::op::{ns_to_ms, Category};
use crate::policy::SchemeKind;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("run has no host writes")]
    EmptyRun,
    #[error("no baseline row to normalize against")]
    MissingBaseline,
    #[error("window must be positive")]
    BadWindow,
}

/// Data-carrying programs over host page writes; `None` without writes.
pub fn write_amplification(report: &RunReport) -> Option<f64> {
    let host = report.counters.host_page_writes;
    (host > 0).then(|| report.counters.data_programs() as f64 / host as f64)
}

/// Fraction of data-carrying programs per category, in [`Category::ALL`]
/// order without padding.
pub fn breakdown(report: &RunReport) -> Result<Vec<(Category, f64)>, MetricsError> {
    if report.counters.host_page_writes == 0 {
        return Err(MetricsError::EmptyRun);
    }
    let total = report.counters.data_programs() as f64;
    Ok(Category::ALL
        .iter()
        .filter(|c| c.carries_data())
        .map(|&c| (c, report.counters.programs_of(c) as f64 / total))
        .collect())
}

/// Host-write bandwidth per window: `(window start ms, MB/s)` with
/// MB = 10^6 bytes.
pub fn bandwidth_series(report: &RunReport, window_ms: f64) -> Result<Vec<(f64, f64)>, MetricsError> {
    if !(window_ms > 0.0 && window_ms.is_finite()) {
        return Err(MetricsError::BadWindow);
    }
    let Some(last) = report.host_writes.iter().map(|w| w.completion_ns).max() else {
        return Ok(Vec::new());
    };
    let n = (ns_to_ms(last) / window_ms).floor() as usize + 1;
    let mut bytes = vec![0u64; n];
    for w in &report.host_writes {
        let i = ((ns_to_ms(w.completion_ns) / window_ms).floor() as usize).min(n - 1);
        bytes[i] += report.page_size;
    }
    Ok(bytes
        .iter()
        .enumerate()
        .map(|(i, &b)| (i as f64 * window_ms, b as f64 / 1e6 / (window_ms / 1e3)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
}

/// Nearest-rank percentile of a sorted slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Write latency statistics in ms.
pub fn latency_stats(report: &RunReport) -> Option<LatencyStats> {
    let mut v: Vec<f64> = report.host_writes.iter().map(|w| ns_to_ms(w.latency_ns())).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let sum: u128 = report.host_writes.iter().map(|w| w.latency_ns() as u128).sum();
    Some(LatencyStats {
        count: v.len(),
        mean: sum as f64 / v.len() as f64 / 1e6,
        p50: percentile(&v, 50.0),
        p95: percentile(&v, 95.0),
        p99: percentile(&v, 99.0),
        max: v[v.len() - 1],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scheme: SchemeKind,
    pub avg_write_latency_ms: f64,
    pub p99_latency_ms: f64,
    pub write_amplification: Option<f64>,
    pub breakdown: Vec<(Category, f64)>,
    pub total_runtime_ms: f64,
}

pub fn summarize(report: &RunReport) -> SummaryRow {
    let lat = latency_stats(report);
    SummaryRow {
        scheme: report.scheme,
        avg_write_latency_ms: lat.map_or(0.0, |l| l.mean),
        p99_latency_ms: lat.map_or(0.0, |l| l.p99),
        write_amplification: write_amplification(report),
        breakdown: breakdown(report).unwrap_or_default(),
        total_runtime_ms: ns_to_ms(report.end_ns),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedRow {
    pub scheme: SchemeKind,
    pub latency: f64,
    pub p99: f64,
    pub write_amplification: Option<f64>,
}

fn ratio(a: f64, b: f64) -> f64 {
    if a == b {
        1.0
    } else {
        a / b
    }
}

/// Divides each row's metrics by the baseline row's.
pub fn normalize(rows: &[SummaryRow]) -> Result<Vec<NormalizedRow>, MetricsError> {
    let base = rows.iter().find(|r| r.scheme == SchemeKind::Baseline).ok_or(MetricsError::MissingBaseline)?;
    Ok(rows
        .iter()
        .map(|r| NormalizedRow {
            scheme: r.scheme,
            latency: ratio(r.avg_write_latency_ms, base.avg_write_latency_ms),
            p99: ratio(r.p99_latency_ms, base.p99_latency_ms),
            write_amplification: r.write_amplification.zip(base.write_amplification).map(|(a, b)| ratio(a, b)),
        })
        .collect())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

pub fn summary_kv(report: &RunReport) -> String {
    let row = summarize(report);
    let lat = latency_stats(report);
    let c = &report.counters;
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k}={v}");
    };
    kv("scheme", row.scheme.to_string());
    kv("host_page_writes", c.host_page_writes.to_string());
    kv("host_page_reads", c.host_page_reads.to_string());
    kv("read_misses", c.read_misses.to_string());
    kv("write_amplification", opt(row.write_amplification));
    kv("avg_write_latency_ms", opt(lat.map(|l| l.mean)));
    kv("p50_latency_ms", opt(lat.map(|l| l.p50)));
    kv("p95_latency_ms", opt(lat.map(|l| l.p95)));
    kv("p99_latency_ms", opt(lat.map(|l| l.p99)));
    kv("max_latency_ms", opt(lat.map(|l| l.max)));
    kv("total_runtime_ms", format!("{:.6}", row.total_runtime_ms));
    for cat in Category::ALL {
        kv(&format!("programs.{cat}"), c.programs_of(cat).to_string());
    }
    for (cat, f) in &row.breakdown {
        kv(&format!("fraction.{cat}"), format!("{f:.6}"));
    }
    kv("erases", c.erases.to_string());
    kv("sync_gc_victims", c.sync_gc_victims.to_string());
    kv("idle_actions", c.idle_actions.to_string());
    let all = report.erase_histogram.iter().flatten();
    kv("erase_count_max", all.clone().max().copied().unwrap_or(0).to_string());
    kv("erase_count_min", all.min().copied().unwrap_or(0).to_string());
    kv("device_full", report.device_full.to_string());
    s
}

pub fn events_csv(report: &RunReport) -> String {
    let mut s = String::from("time_ms,plane,category,latency_ms\n");
    for e in &report.events {
        let lat = e.latency_ns.map_or(String::new(), |l| format!("{:.6}", ns_to_ms(l)));
        let _ = writeln!(s, "{:.6},{},{},{}", ns_to_ms(e.time_ns), e.plane, e.kind.name(), lat);
    }
    s
}

pub fn bandwidth_csv(series: &[(f64, f64)]) -> String {
    let mut s = String::from("time_ms,mb_per_s\n");
    for (t, bw) in series {
        let _ = writeln!(s, "{t:.3},{bw:.6}");
    }
    s
}

pub fn compare_csv(rows: &[SummaryRow], norm: &[NormalizedRow]) -> String {
    let mut s = String::from(
        "scheme,avg_write_latency_ms,p99_latency_ms,write_amplification,norm_latency,norm_p99,norm_wa\n",
    );
    for (r, n) in rows.iter().zip(norm) {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{},{:.6},{:.6},{}",
            r.scheme,
            r.avg_write_latency_ms,
            r.p99_latency_ms,
            opt(r.write_amplification),
            n.latency,
            n.p99,
            opt(n.write_amplification)
        );
    }
    s
}

/// Writes via a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}
