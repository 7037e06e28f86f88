//! Built-in reproduction suites on the desk geometry. Each check reports
//! the measured value next to what was expected.

use std::collections::HashMap;
use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{run, run_observed, EngineError, EventKind, Precondition, RunReport, SimConfig};
use crate::flash::{BlockRole, GeometryConfig, PhysAddr, TimingConfig};
use crate::ftl::{AgcStepResult, Ftl, FtlConfig, GcMode, MigrationDest};
use crate::metrics::{bandwidth_series, events_csv, latency_stats, write_amplification};
use crate::op::{ms_to_ns, Category, Nanos, OpKind};
use crate::policy::{Scheme, SchemeKind};
use crate::workload::{daily_epilogue, gen_periodic, gen_sequential, IoOp, PeriodicSpec, Request, Trace, BURST_IO};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, clap::ValueEnum)]
pub enum Suite {
    BurstyCliff,
    DailyWa,
    IpsSuite,
    CoopSuite,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::BurstyCliff, Suite::DailyWa, Suite::IpsSuite, Suite::CoopSuite];

    pub fn name(self) -> &'static str {
        match self {
            Suite::BurstyCliff => "bursty-cliff",
            Suite::DailyWa => "daily-wa",
            Suite::IpsSuite => "ips-suite",
            Suite::CoopSuite => "coop-suite",
        }
    }

    pub fn parse(s: &str) -> Option<Suite> {
        Suite::ALL.into_iter().find(|x| x.name() == s)
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub criterion: u8,
    pub name: String,
    pub measured: String,
    pub expected: String,
    pub passed: bool,
}

impl Check {
    fn new(criterion: u8, name: impl Into<String>, measured: impl Into<String>, expected: impl Into<String>, passed: bool) -> Self {
        Self { criterion, name: name.into(), measured: measured.into(), expected: expected.into(), passed }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] criterion {}: {}: measured {} (expected {})",
            if self.passed { "PASS" } else { "FAIL" },
            self.criterion,
            self.name,
            self.measured,
            self.expected
        )
    }
}

#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub suite: Suite,
    pub checks: Vec<Check>,
    /// Every run of the suite, labelled, for determinism comparison.
    pub runs: Vec<(String, RunReport)>,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Concatenated event logs of all runs.
    pub fn event_logs(&self) -> String {
        self.runs.iter().map(|(label, r)| format!("# {label}\n{}", events_csv(r))).collect()
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<SuiteOutcome, EngineError> {
    match suite {
        Suite::BurstyCliff => bursty_cliff(seed),
        Suite::DailyWa => daily_wa(seed),
        Suite::IpsSuite => ips_suite(seed),
        Suite::CoopSuite => coop_suite(seed),
    }
}

/// SLC cache size of a scheme across the whole device, in bytes.
pub fn cache_bytes(scheme: &Scheme, g: &GeometryConfig) -> u64 {
    scheme.slc_quota_pages as u64 * g.planes() as u64 * g.page_size
}

// ---- bursty cliff ---------------------------------------------------------

pub const CLIFF_WINDOW_MS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CliffAnalysis {
    pub pre_mb_s: f64,
    pub post_mb_s: f64,
    /// Host bytes completed before the first low-bandwidth window.
    pub step_bytes: u64,
    pub down_steps: usize,
    pub up_steps: usize,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Finds the bandwidth step in a windowed series. The last window is
/// partial and ignored.
pub fn analyze_cliff(series: &[(f64, f64)], window_bytes: impl Fn(usize) -> u64) -> Option<CliffAnalysis> {
    let body = &series[..series.len().saturating_sub(1)];
    if body.len() < 4 {
        return None;
    }
    let peak = body.iter().map(|x| x.1).fold(0.0, f64::max);
    let trough = body.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    let mid = (peak + trough) / 2.0;
    let high: Vec<bool> = body.iter().map(|x| x.1 > mid).collect();
    let first_low = high.iter().position(|h| !h)?;
    let down_steps = high.windows(2).filter(|w| w[0] && !w[1]).count();
    let up_steps = high.windows(2).filter(|w| !w[0] && w[1]).count();
    let mut pre: Vec<f64> = body[..first_low].iter().map(|x| x.1).collect();
    let mut post: Vec<f64> = body[first_low + 1..].iter().map(|x| x.1).collect();
    if pre.is_empty() || post.is_empty() {
        return None;
    }
    Some(CliffAnalysis {
        pre_mb_s: median(&mut pre),
        post_mb_s: median(&mut post),
        step_bytes: (0..first_low).map(&window_bytes).sum(),
        down_steps,
        up_steps,
    })
}

fn bursty_cliff(seed: u64) -> Result<SuiteOutcome, EngineError> {
    let started = Instant::now();
    let mut checks = Vec::new();
    let mut runs = Vec::new();
    for per_page in [false, true] {
        let mut cfg = SimConfig::desk();
        cfg.timing.tlc_per_page = per_page;
        let g = cfg.geometry;
        let scheme = Scheme::preset(SchemeKind::Baseline, &g);
        let quota = cache_bytes(&scheme, &g);
        let report = run(&cfg, &scheme, &gen_sequential(3 * quota, BURST_IO, 0), seed)?;
        let series = bandwidth_series(&report, CLIFF_WINDOW_MS).expect("positive window");
        let window = ms_to_ns(CLIFF_WINDOW_MS);
        let mut per_window = vec![0u64; series.len()];
        for w in &report.host_writes {
            per_window[((w.completion_ns / window) as usize).min(series.len() - 1)] += g.page_size;
        }
        let mode = if per_page { "per-page TLC" } else { "one-shot TLC" };
        let expected_ratio = if per_page { cfg.timing.tlc_program / cfg.timing.slc_program } else {
            cfg.timing.tlc_program / cfg.timing.slc_program / 3.0
        };
        let block_bytes = g.wordlines_per_block() as u64 * g.page_size;
        match analyze_cliff(&series, |i| per_window[i]) {
            None => checks.push(Check::new(1, format!("cliff present ({mode})"), "no step", "one step", false)),
            Some(a) => {
                checks.push(Check::new(
                    1,
                    format!("single downward step ({mode})"),
                    format!("{} down / {} up", a.down_steps, a.up_steps),
                    "1 down / 0 up",
                    a.down_steps == 1 && a.up_steps == 0,
                ));
                let off = a.step_bytes.abs_diff(quota);
                checks.push(Check::new(
                    1,
                    format!("step position ({mode})"),
                    format!("{} bytes", a.step_bytes),
                    format!("{quota} +- {block_bytes} bytes"),
                    off <= block_bytes,
                ));
                let ratio = a.pre_mb_s / a.post_mb_s;
                checks.push(Check::new(
                    1,
                    format!("pre/post bandwidth ratio ({mode})"),
                    format!("{ratio:.3} ({:.3} -> {:.3} MB/s)", a.pre_mb_s, a.post_mb_s),
                    format!("{expected_ratio:.3} +- 10%"),
                    (ratio / expected_ratio - 1.0).abs() <= 0.10,
                ));
            }
        }
        runs.push((format!("baseline {mode}"), report));
    }
    let secs = started.elapsed().as_secs_f64();
    checks.push(Check::new(1, "runtime", format!("{secs:.2} s"), "< 10 s", secs < 10.0));
    Ok(SuiteOutcome { suite: Suite::BurstyCliff, checks, runs })
}

// ---- daily WA ---------------------------------------------------------------

/// Five 2 MiB sequential streams over fresh addresses, ten minutes apart,
/// drained at the end.
pub fn daily_no_overwrite_trace() -> Trace {
    daily_epilogue(gen_periodic(&PeriodicSpec::new(5, 2 << 20, ms_to_ns(600_000.0))))
}

fn daily_wa(seed: u64) -> Result<SuiteOutcome, EngineError> {
    let started = Instant::now();
    let cfg = SimConfig::desk();
    let trace = daily_no_overwrite_trace();
    let mut checks = Vec::new();
    let mut runs = Vec::new();
    let mut was = HashMap::new();
    for (kind, expected) in [(SchemeKind::Baseline, 2u64), (SchemeKind::Ips, 1)] {
        let r = run(&cfg, &Scheme::preset(kind, &cfg.geometry), &trace, seed)?;
        let c = &r.counters;
        let exact = c.host_page_writes > 0 && c.data_programs() == expected * c.host_page_writes;
        checks.push(Check::new(
            2,
            format!("{kind} write amplification"),
            format!("{} / {} = {:.6}", c.data_programs(), c.host_page_writes, write_amplification(&r).unwrap_or(f64::NAN)),
            format!("{expected}.0 exactly"),
            exact,
        ));
        was.insert(kind, write_amplification(&r).unwrap_or(f64::NAN));
        runs.push((kind.to_string(), r));
    }
    let norm = was[&SchemeKind::Ips] / was[&SchemeKind::Baseline];
    checks.push(Check::new(2, "normalized WA ips/baseline", format!("{norm:.6}"), "0.500000", norm == 0.5));
    let secs = started.elapsed().as_secs_f64();
    checks.push(Check::new(2, "runtime", format!("{secs:.2} s"), "< 5 s", secs < 5.0));
    Ok(SuiteOutcome { suite: Suite::DailyWa, checks, runs })
}

// ---- IPS suite ----------------------------------------------------------------

/// Per-plane service gaps between consecutive host-write completions,
/// for the writes submitted after `skip` pages.
fn service_gaps(r: &RunReport, planes: usize, skip: usize) -> Vec<Vec<Nanos>> {
    let mut by_plane: Vec<Vec<Nanos>> = vec![Vec::new(); planes];
    for w in &r.host_writes {
        by_plane[w.plane].push(w.completion_ns);
    }
    let per_plane_skip = skip / planes;
    by_plane
        .into_iter()
        .map(|c| c.windows(2).skip(per_plane_skip.saturating_sub(1)).map(|w| w[1] - w[0]).collect())
        .collect()
}

/// Runs of SLC-speed service after the cache is first exhausted.
fn slc_phases(gaps: &[Nanos], slc: Nanos) -> usize {
    let fast: Vec<bool> = gaps.iter().map(|&g| g <= slc).collect();
    fast.windows(2).filter(|w| !w[0] && w[1]).count()
}

/// Aged desk device shared by the daily latency checks.
fn aged_desk() -> SimConfig {
    let mut cfg = SimConfig::desk();
    cfg.precondition = Some(Precondition { fill_fraction: 0.3, overwrite_fraction: 0.1 });
    cfg
}

/// Three 12 MiB streams whose gaps all stay below the idle threshold, so
/// no scheme ever sees idle time. One-shot TLC timing.
pub fn daily_dense_setup() -> (SimConfig, Trace) {
    let cfg = aged_desk();
    let gap = ms_to_ns(cfg.idle_threshold_ms / 2.0);
    (cfg, daily_epilogue(gen_periodic(&PeriodicSpec::new(3, 12 << 20, gap))))
}

/// The same streams ten minutes apart, with per-page TLC timing.
pub fn daily_idle_setup() -> (SimConfig, Trace) {
    let mut cfg = aged_desk();
    cfg.timing.tlc_per_page = true;
    (cfg, daily_epilogue(gen_periodic(&PeriodicSpec::new(3, 12 << 20, ms_to_ns(600_000.0)))))
}

fn ips_suite(seed: u64) -> Result<SuiteOutcome, EngineError> {
    let mut checks = Vec::new();
    let mut runs = Vec::new();

    // Bursty direction and phase shape.
    let mut cfg = SimConfig::desk();
    cfg.timing.tlc_per_page = true;
    let g = cfg.geometry;
    let base_s = Scheme::preset(SchemeKind::Baseline, &g);
    let quota = cache_bytes(&base_s, &g);
    let trace = gen_sequential(3 * quota, BURST_IO, 0);
    let base = run(&cfg, &base_s, &trace, seed)?;
    let ips = run(&cfg, &Scheme::preset(SchemeKind::Ips, &g), &trace, seed)?;
    let mean = |r: &RunReport| latency_stats(r).map_or(f64::NAN, |l| l.mean);
    let ratio = mean(&ips) / mean(&base);
    checks.push(Check::new(3, "bursty mean latency ips/baseline", format!("{ratio:.4}"), "< 1.0", ratio < 1.0));
    let quota_pages = (quota / g.page_size) as usize;
    let same_prefix = base.host_writes.len() >= quota_pages
        && ips.host_writes.len() >= quota_pages
        && base.host_writes[..quota_pages]
            .iter()
            .zip(&ips.host_writes[..quota_pages])
            .all(|(a, b)| a.latency_ns() == b.latency_ns());
    checks.push(Check::new(
        3,
        "identical latency before cache exhaustion",
        if same_prefix { "identical" } else { "differs" },
        "identical",
        same_prefix,
    ));
    let slc = ms_to_ns(cfg.timing.slc_program);
    let ips_phases: Vec<usize> = service_gaps(&ips, g.planes(), quota_pages).iter().map(|v| slc_phases(v, slc)).collect();
    let base_phases: Vec<usize> =
        service_gaps(&base, g.planes(), quota_pages).iter().map(|v| slc_phases(v, slc)).collect();
    let shape = ips_phases.iter().all(|&n| n >= 2) && base_phases.iter().all(|&n| n == 0);
    checks.push(Check::new(
        3,
        "intermittent SLC phases after exhaustion",
        format!("ips {ips_phases:?}, baseline {base_phases:?} per plane"),
        "ips >= 2 per plane, baseline 0",
        shape,
    ));
    runs.push(("bursty baseline".into(), base));
    runs.push(("bursty ips".into(), ips));

    // Daily direction.
    let (cfg, trace) = daily_dense_setup();
    let base = run(&cfg, &Scheme::preset(SchemeKind::Baseline, &cfg.geometry), &trace, seed)?;
    let ips = run(&cfg, &Scheme::preset(SchemeKind::Ips, &cfg.geometry), &trace, seed)?;
    let dense = mean(&ips) / mean(&base);
    checks.push(Check::new(4, "idle-less daily mean latency ips/baseline", format!("{dense:.4}"), ">= 1.0", dense >= 1.0));
    runs.push(("dense daily baseline".into(), base));
    runs.push(("dense daily ips".into(), ips));

    let (cfg, trace) = daily_idle_setup();
    let mut means = HashMap::new();
    let mut was = HashMap::new();
    for kind in [SchemeKind::Baseline, SchemeKind::Ips, SchemeKind::IpsAgc] {
        let r = run(&cfg, &Scheme::preset(kind, &cfg.geometry), &trace, seed)?;
        means.insert(kind, mean(&r));
        was.insert(kind, write_amplification(&r).unwrap_or(f64::NAN));
        runs.push((format!("daily {kind}"), r));
    }
    let ips_ratio = means[&SchemeKind::Ips] / means[&SchemeKind::Baseline];
    let agc_ratio = means[&SchemeKind::IpsAgc] / means[&SchemeKind::Baseline];
    checks.push(Check::new(4, "idle daily mean latency ips-agc/baseline", format!("{agc_ratio:.4}"), "< 1.0", agc_ratio < 1.0));
    checks.push(Check::new(4, "idle daily mean latency ips/baseline", format!("{ips_ratio:.4}"), ">= 1.0", ips_ratio >= 1.0));

    // AGC oracle and WA direction.
    let mut mismatches = 0;
    let mut victims = 0;
    for s in 0..100 {
        match agc_equivalence_case(seed.wrapping_mul(1000).wrapping_add(s), &AgcCaseParams::default()) {
            Ok(Some(_)) => victims += 1,
            Ok(None) => {}
            Err(_) => mismatches += 1,
        }
    }
    checks.push(Check::new(
        5,
        "agc_step drain equals run_gc migrations",
        format!("{mismatches} mismatches over 100 seeds ({victims} with a victim)"),
        "0 mismatches",
        mismatches == 0 && victims > 0,
    ));
    let (wa_ips, wa_agc) = (was[&SchemeKind::Ips], was[&SchemeKind::IpsAgc]);
    checks.push(Check::new(
        5,
        "daily WA ips-agc >= ips",
        format!("{wa_agc:.4} vs {wa_ips:.4}"),
        "ips-agc >= ips",
        wa_agc >= wa_ips,
    ));
    let mut wa_violations = 0;
    for s in 0..20 {
        let (a, b) = small_trace_wa_pair(seed.wrapping_mul(1000).wrapping_add(s))?;
        if b < a {
            wa_violations += 1;
        }
    }
    checks.push(Check::new(
        5,
        "random small traces WA ips-agc >= ips",
        format!("{wa_violations} violations over 20 seeds"),
        "0",
        wa_violations == 0,
    ));
    Ok(SuiteOutcome { suite: Suite::IpsSuite, checks, runs })
}

/// Parameters of a random AGC equivalence case.
#[derive(Debug, Clone, Copy)]
pub struct AgcCaseParams {
    pub blocks: u32,
    pub writes: usize,
    pub footprint: u64,
}

impl Default for AgcCaseParams {
    fn default() -> Self {
        Self { blocks: 12, writes: 400, footprint: 90 }
    }
}

/// One plane, 4 layers x 2 word lines per block.
pub fn tiny_geometry(blocks: u32) -> GeometryConfig {
    GeometryConfig {
        channels: 1,
        chips_per_channel: 1,
        dies_per_chip: 1,
        planes_per_die: 1,
        blocks_per_plane: blocks,
        wordlines_per_layer: 2,
        layers_per_block: 4,
        page_size: 4096,
    }
}

/// Ages a one-plane FTL with random TLC writes, then drains the GC victim
/// both ways on copies. Returns the migrated page count when a victim
/// exists, or an error describing the mismatch.
pub fn agc_equivalence_case(seed: u64, p: &AgcCaseParams) -> Result<Option<usize>, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = tiny_geometry(p.blocks);
    let mut ftl = Ftl::new(g, &TimingConfig::default(), &FtlConfig::default(), 0, GcMode::FreeBlocks);
    for i in 0..p.writes {
        if ftl.planes[0].free.len() <= 2 {
            break;
        }
        let lpn = rng.gen_range(0..p.footprint);
        ftl.host_write_commit(lpn, crate::policy::WriteAction::TlcProgram { plane: 0 }, i as u64)
            .map_err(|e| e.to_string())?;
    }
    ftl.commit_tlc(0).map_err(|e| e.to_string())?;
    ftl.take_ops();
    let Some(victim) = ftl.select_gc_victim(0) else { return Ok(None) };

    let mut by_gc = ftl.clone();
    let gc_count = by_gc.run_gc(0, MigrationDest::PlainTlc).map_err(|e| e.to_string())?;

    let mut by_agc = ftl.clone();
    by_agc.planes[0].agc_victim = Some(victim);
    let mut steps = 0;
    let mut migrated = 0;
    loop {
        steps += 1;
        if steps > 10_000 {
            return Err("agc did not terminate".into());
        }
        match by_agc.agc_step(0, MigrationDest::PlainTlc).map_err(|e| e.to_string())? {
            AgcStepResult::MigratedPage { from, .. } => {
                if from.block as usize != victim {
                    return Err(format!("agc migrated from block {} instead of victim {victim}", from.block));
                }
                migrated += 1;
            }
            AgcStepResult::EraseIssued(b) if b == victim => break,
            other => return Err(format!("unexpected agc result {other:?}")),
        }
    }
    if migrated != gc_count || steps != gc_count + 1 {
        return Err(format!("agc migrated {migrated} in {steps} steps, gc migrated {gc_count}"));
    }
    by_agc.commit_tlc(0).map_err(|e| e.to_string())?;
    by_gc.commit_tlc(0).map_err(|e| e.to_string())?;
    by_agc.audit()?;
    by_gc.audit()?;
    Ok(Some(gc_count))
}

/// A random daily-style trace: bursts of page writes over a small
/// footprint, separated by gaps longer than the idle threshold.
pub fn random_daily_trace(rng: &mut ChaCha8Rng, footprint_pages: u64, bursts: usize, max_burst: usize) -> Trace {
    let mut reqs = Vec::new();
    let mut t: Nanos = 0;
    for _ in 0..bursts {
        let n = rng.gen_range(1..=max_burst);
        for _ in 0..n {
            t += ms_to_ns(rng.gen_range(0.0..2.0));
            let lpn = rng.gen_range(0..footprint_pages);
            reqs.push(Request { arrival_ns: t, op: IoOp::Write, offset: lpn * 4096, size: 4096 });
        }
        t += ms_to_ns(rng.gen_range(500.0..5_000.0));
    }
    let mut trace = Trace::new(reqs);
    trace.drain = rng.gen_bool(0.5);
    trace
}

/// WA of IPS and IPS/agc on the same random aged run.
pub fn small_trace_wa_pair(seed: u64) -> Result<(f64, f64), EngineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = SimConfig::desk();
    cfg.precondition = Some(Precondition { fill_fraction: 0.2, overwrite_fraction: 0.1 });
    let trace = random_daily_trace(&mut rng, 3000, 4, 600);
    let wa = |k| -> Result<f64, EngineError> {
        let r = run(&cfg, &Scheme::preset(k, &cfg.geometry), &trace, seed)?;
        Ok(write_amplification(&r).unwrap_or(1.0))
    };
    Ok((wa(SchemeKind::Ips)?, wa(SchemeKind::IpsAgc)?))
}

// ---- coop suite -------------------------------------------------------------

/// Checks quota limits on live device state.
pub fn check_quotas(ftl: &Ftl, scheme: &Scheme) -> Result<(), String> {
    let wpp = ftl.geometry().wordlines_per_pair();
    for (i, p) in ftl.planes.iter().enumerate() {
        let trad_quota = match scheme.kind {
            SchemeKind::Baseline => scheme.slc_quota_pages,
            SchemeKind::Coop => scheme.trad_quota_pages,
            _ => 0,
        };
        let trad_live: usize = p
            .blocks
            .iter()
            .filter(|b| b.role == BlockRole::TradSlc)
            .map(|b| b.valid_count())
            .sum();
        if trad_live > trad_quota || p.trad_slc_pages > trad_quota {
            return Err(format!("plane {i}: {} traditional SLC pages over quota {trad_quota}", p.trad_slc_pages));
        }
        let ips_live = p.ips_slc_pages();
        let ips_quota = scheme.ips_donor_blocks * wpp;
        if ips_live > ips_quota {
            return Err(format!("plane {i}: {ips_live} IPS SLC pages over quota {ips_quota}"));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CoopAudit {
    pub trad_writes: usize,
    pub to_ips: usize,
    pub to_tlc: usize,
    pub overwritten: usize,
    pub trad_erases: usize,
}

/// Replays a coop event log in mutation order. Every traditional SLC page
/// that is still valid when reclaimed must leave exactly once, through an
/// SLC-to-TLC migration, before its block is erased.
pub fn audit_coop_events(report: &RunReport) -> Result<CoopAudit, String> {
    let mut events: Vec<_> = report.events.iter().filter(|e| e.kind != EventKind::Read && e.kind != EventKind::ReadMiss).collect();
    events.sort_by_key(|e| e.seq);
    let key = |a: PhysAddr| (a.plane, a.block, a.wordline, a.slot);
    // Live traditional pages: address -> lpn, and lpn -> address.
    let mut trad: HashMap<(u32, u32, u32, u8), u64> = HashMap::new();
    let mut where_is: HashMap<u64, (u32, u32, u32, u8)> = HashMap::new();
    let mut trad_blocks: std::collections::HashSet<(usize, usize)> = Default::default();
    let mut audit = CoopAudit::default();
    for e in events {
        match e.kind {
            EventKind::Program(cat) => {
                let lpn = e.lpn;
                if cat.is_host() {
                    let lpn = lpn.ok_or("host program without lpn")?;
                    if let Some(old) = where_is.remove(&lpn) {
                        trad.remove(&old);
                        audit.overwritten += 1;
                    }
                    if cat == Category::TradSlcWrite {
                        let dst = e.dst.ok_or("traditional write without address")?;
                        trad.insert(key(dst), lpn);
                        where_is.insert(lpn, key(dst));
                        trad_blocks.insert((dst.plane as usize, dst.block as usize));
                        audit.trad_writes += 1;
                    }
                } else if let Some(src) = e.src {
                    let from_trad = trad_blocks.contains(&(src.plane as usize, src.block as usize));
                    if !from_trad {
                        continue;
                    }
                    let lpn = lpn.ok_or("migration without lpn")?;
                    match trad.remove(&key(src)) {
                        Some(l) if l == lpn => {
                            where_is.remove(&lpn);
                        }
                        Some(l) => return Err(format!("migration of lpn {lpn} from {src} which holds {l}")),
                        None => return Err(format!("page {src} migrated twice or after invalidation")),
                    }
                    if cat != Category::Slc2Tlc {
                        return Err(format!("traditional page {src} left as {cat}"));
                    }
                    if e.op == Some(OpKind::Reprogram) {
                        audit.to_ips += 1;
                    } else {
                        audit.to_tlc += 1;
                    }
                }
            }
            EventKind::Erase => {
                let (plane, block) = (e.plane, e.block.ok_or("erase without block")?);
                if !trad_blocks.remove(&(plane, block)) {
                    continue;
                }
                audit.trad_erases += 1;
                let left: Vec<_> = trad.keys().filter(|k| k.0 as usize == plane && k.1 as usize == block).copied().collect();
                if !left.is_empty() {
                    return Err(format!("block {block} on plane {plane} erased with {} unaccounted pages", left.len()));
                }
            }
            _ => {}
        }
    }
    Ok(audit)
}

/// One randomized coop run with quota checks after every step and the
/// event-log audit at the end. `small_pool` draws a donor count far below
/// the preset so donors run out and reclaim falls back to TLC.
pub fn coop_random_case(seed: u64, per_page: bool, small_pool: bool) -> Result<(RunReport, CoopAudit), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = SimConfig::desk();
    cfg.timing.tlc_per_page = per_page;
    let scheme = if small_pool {
        Scheme::coop(rng.gen_range(2..=8), &cfg.geometry)
    } else {
        Scheme::preset(SchemeKind::Coop, &cfg.geometry)
    };
    let footprint = rng.gen_range(500..2500);
    let bursts = rng.gen_range(2..6);
    let trace = random_daily_trace(&mut rng, footprint, bursts, 1500);
    let mut obs = |ftl: &Ftl, s: &Scheme| check_quotas(ftl, s);
    let report = run_observed(&cfg, &scheme, &trace, seed, Some(&mut obs)).map_err(|e| e.to_string())?;
    let audit = audit_coop_events(&report)?;
    Ok((report, audit))
}

fn coop_suite(seed: u64) -> Result<SuiteOutcome, EngineError> {
    let mut checks = Vec::new();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    let mut total = CoopAudit::default();
    for s in 0..12u64 {
        let case_seed = seed.wrapping_mul(1000).wrapping_add(s);
        match coop_random_case(case_seed, s % 2 == 1, s % 3 == 2) {
            Ok((r, a)) => {
                total.trad_writes += a.trad_writes;
                total.to_ips += a.to_ips;
                total.to_tlc += a.to_tlc;
                total.overwritten += a.overwritten;
                total.trad_erases += a.trad_erases;
                runs.push((format!("coop case {case_seed}"), r));
            }
            Err(e) => failures.push(format!("seed {case_seed}: {e}")),
        }
    }
    checks.push(Check::new(
        6,
        "traditional pages reclaimed exactly once, quotas respected",
        if failures.is_empty() {
            format!(
                "12 runs: {} trad writes, {} to IPS, {} to TLC, {} overwritten, {} erases",
                total.trad_writes, total.to_ips, total.to_tlc, total.overwritten, total.trad_erases
            )
        } else {
            failures.join("; ")
        },
        "no audit failures, both reclaim paths exercised",
        failures.is_empty() && total.to_ips > 0 && total.to_tlc > 0 && total.trad_erases > 0,
    ));
    Ok(SuiteOutcome { suite: Suite::CoopSuite, checks, runs })
}

/// Runs a suite twice and compares the event logs byte for byte.
pub fn determinism_check(suite: Suite, seed: u64) -> Result<Check, EngineError> {
    let a = run_suite(suite, seed)?.event_logs();
    let b = run_suite(suite, seed)?.event_logs();
    Ok(Check::new(
        8,
        format!("{suite} event logs identical across runs"),
        format!("{} bytes, {}", a.len(), if a == b { "identical" } else { "different" }),
        "identical",
        a == b && !a.is_empty(),
    ))
}
