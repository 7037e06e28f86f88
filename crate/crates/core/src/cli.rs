//! Command-line front end: experiment configs, flag overrides and the
//! `run`, `compare` and `reproduce` commands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{run, EngineError, Precondition, RunReport, SimConfig};
use crate::flash::{GeometryConfig, TimingConfig};
use crate::ftl::FtlConfig;
use crate::metrics::{bandwidth_csv, bandwidth_series, compare_csv, events_csv, normalize, summarize, summary_kv, write_atomic};
use crate::policy::{PolicyError, Scheme, SchemeKind};
use crate::suites::{determinism_check, run_suite, Check, Suite};
use crate::workload::{daily_epilogue, from_generator, load_msr, to_bursty, Trace, WorkloadError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read config {path}: {source}")]
    ConfigIo { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    ConfigParse { path: PathBuf, source: Box<toml::de::Error> },
    #[error("trace file not found: {0}")]
    TraceNotFound(PathBuf),
    #[error("trace {path}: {source}")]
    Trace { path: PathBuf, source: WorkloadError },
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("{0}")]
    Invalid(String),
    #[error("scheme {scheme}: {source}")]
    Scheme { scheme: SchemeKind, source: PolicyError },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("writing {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Replay the written bytes back to back at t=0.
    Bursty,
    /// Keep arrival times and drain idle work at the end.
    #[default]
    Daily,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Full,
}

impl Preset {
    pub fn geometry(self) -> GeometryConfig {
        match self {
            Preset::Desk => GeometryConfig::desk(),
            Preset::Full => GeometryConfig::full(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryOverride {
    #[arg(long)]
    pub channels: Option<u32>,
    #[arg(long)]
    pub chips_per_channel: Option<u32>,
    #[arg(long)]
    pub dies_per_chip: Option<u32>,
    #[arg(long)]
    pub planes_per_die: Option<u32>,
    #[arg(long)]
    pub blocks_per_plane: Option<u32>,
    #[arg(long)]
    pub wordlines_per_layer: Option<u32>,
    #[arg(long)]
    pub layers_per_block: Option<u32>,
    #[arg(long)]
    pub page_size: Option<u64>,
}

impl GeometryOverride {
    fn merge(self, over: Self) -> Self {
        Self {
            channels: over.channels.or(self.channels),
            chips_per_channel: over.chips_per_channel.or(self.chips_per_channel),
            dies_per_chip: over.dies_per_chip.or(self.dies_per_chip),
            planes_per_die: over.planes_per_die.or(self.planes_per_die),
            blocks_per_plane: over.blocks_per_plane.or(self.blocks_per_plane),
            wordlines_per_layer: over.wordlines_per_layer.or(self.wordlines_per_layer),
            layers_per_block: over.layers_per_block.or(self.layers_per_block),
            page_size: over.page_size.or(self.page_size),
        }
    }

    fn apply(&self, g: &mut GeometryConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { g.$f = v; })* };
        }
        set!(channels, chips_per_channel, dies_per_chip, planes_per_die, blocks_per_plane, wordlines_per_layer, layers_per_block, page_size);
    }
}

/// Timing overrides, all in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct TimingOverride {
    #[arg(long = "slc-read-ms")]
    pub slc_read: Option<f64>,
    #[arg(long = "tlc-read-ms")]
    pub tlc_read: Option<f64>,
    #[arg(long = "slc-program-ms")]
    pub slc_program: Option<f64>,
    #[arg(long = "tlc-program-ms")]
    pub tlc_program: Option<f64>,
    #[arg(long = "reprogram-ms")]
    pub reprogram: Option<f64>,
    #[arg(long = "erase-ms")]
    pub erase: Option<f64>,
    #[arg(long = "transfer-ms")]
    pub channel_transfer_per_page: Option<f64>,
    /// Charge tlc_program per TLC page rather than per one-shot word line.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub tlc_per_page: Option<bool>,
}

impl TimingOverride {
    fn merge(self, over: Self) -> Self {
        Self {
            slc_read: over.slc_read.or(self.slc_read),
            tlc_read: over.tlc_read.or(self.tlc_read),
            slc_program: over.slc_program.or(self.slc_program),
            tlc_program: over.tlc_program.or(self.tlc_program),
            reprogram: over.reprogram.or(self.reprogram),
            erase: over.erase.or(self.erase),
            channel_transfer_per_page: over.channel_transfer_per_page.or(self.channel_transfer_per_page),
            tlc_per_page: over.tlc_per_page.or(self.tlc_per_page),
        }
    }

    fn apply(&self, t: &mut TimingConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { t.$f = v; })* };
        }
        set!(slc_read, tlc_read, slc_program, tlc_program, reprogram, erase, channel_transfer_per_page, tlc_per_page);
    }
}

/// Per-plane quota overrides applied on top of each scheme's preset. Each
/// field only touches the schemes it belongs to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct QuotaOverride {
    /// Baseline SLC cache pages per plane.
    #[arg(long)]
    pub slc_quota_pages: Option<usize>,
    /// Donor blocks per plane for ips, ips-agc and coop.
    #[arg(long)]
    pub donor_blocks: Option<usize>,
    /// Coop traditional SLC pages per plane.
    #[arg(long)]
    pub trad_quota_pages: Option<usize>,
}

impl QuotaOverride {
    fn merge(self, over: Self) -> Self {
        Self {
            slc_quota_pages: over.slc_quota_pages.or(self.slc_quota_pages),
            donor_blocks: over.donor_blocks.or(self.donor_blocks),
            trad_quota_pages: over.trad_quota_pages.or(self.trad_quota_pages),
        }
    }

    fn apply(&self, s: &mut Scheme, g: &GeometryConfig) {
        if s.kind == SchemeKind::Baseline {
            if let Some(v) = self.slc_quota_pages {
                s.slc_quota_pages = v;
            }
            return;
        }
        if let Some(v) = self.donor_blocks {
            s.ips_donor_blocks = v;
            s.slc_quota_pages = v * g.wordlines_per_pair();
        }
        if let (SchemeKind::Coop, Some(v)) = (s.kind, self.trad_quota_pages) {
            s.trad_quota_pages = v;
        }
    }
}

/// Experiment description as read from a TOML file. Every field is
/// optional; flags override file values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Option<Preset>,
    pub geometry: GeometryOverride,
    pub timing: TimingOverride,
    pub ftl: Option<FtlConfig>,
    pub idle_threshold_ms: Option<f64>,
    pub precondition: Option<Precondition>,
    pub schemes: Vec<SchemeKind>,
    pub quota: QuotaOverride,
    pub trace: Option<PathBuf>,
    /// Disk number filter for MSR traces.
    pub disk: Option<u32>,
    #[serde(rename = "gen")]
    pub generator: Option<String>,
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub window_ms: Option<f64>,
}

pub const DEFAULT_WINDOW_MS: f64 = 10.0;

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::ConfigParse { path: path.to_path_buf(), source: Box::new(e) })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::ConfigIo { path: path.to_path_buf(), source: e })?;
        Self::from_toml(&text, path)
    }

    /// `over` wins wherever it sets a value.
    pub fn merge(self, over: ExperimentConfig) -> Self {
        Self {
            preset: over.preset.or(self.preset),
            geometry: self.geometry.merge(over.geometry),
            timing: self.timing.merge(over.timing),
            ftl: over.ftl.or(self.ftl),
            idle_threshold_ms: over.idle_threshold_ms.or(self.idle_threshold_ms),
            precondition: over.precondition.or(self.precondition),
            schemes: if over.schemes.is_empty() { self.schemes } else { over.schemes },
            quota: self.quota.merge(over.quota),
            trace: over.trace.or(self.trace),
            disk: over.disk.or(self.disk),
            generator: over.generator.or(self.generator),
            mode: over.mode.or(self.mode),
            seed: over.seed.or(self.seed),
            out: over.out.or(self.out),
            window_ms: over.window_ms.or(self.window_ms),
        }
    }

    pub fn sim_config(&self) -> Result<SimConfig, CliError> {
        let mut geometry = self.preset.unwrap_or_default().geometry();
        self.geometry.apply(&mut geometry);
        let mut sim = SimConfig::new(geometry);
        self.timing.apply(&mut sim.timing);
        if let Some(f) = self.ftl {
            sim.ftl = f;
        }
        if let Some(t) = self.idle_threshold_ms {
            sim.idle_threshold_ms = t;
        }
        sim.precondition = self.precondition;
        sim.validate()?;
        Ok(sim)
    }

    /// Scheme presets for the geometry with quota overrides, validated.
    pub fn schemes(&self, geometry: &GeometryConfig, default: &[SchemeKind]) -> Result<Vec<Scheme>, CliError> {
        let kinds = if self.schemes.is_empty() { default } else { &self.schemes };
        kinds
            .iter()
            .map(|&kind| {
                let mut s = Scheme::preset(kind, geometry);
                self.quota.apply(&mut s, geometry);
                s.validate(geometry).map_err(|source| CliError::Scheme { scheme: kind, source })?;
                Ok(s)
            })
            .collect()
    }

    pub fn load_trace(&self) -> Result<Trace, CliError> {
        let trace = match (&self.trace, &self.generator) {
            (Some(_), Some(_)) => return Err(CliError::Invalid("give either a trace file or a generator, not both".into())),
            (None, None) => return Err(CliError::Invalid("no workload: pass --trace or --gen".into())),
            (Some(path), None) => {
                if !path.is_file() {
                    return Err(CliError::TraceNotFound(path.clone()));
                }
                load_msr(path, self.disk).map_err(|source| CliError::Trace { path: path.clone(), source })?.0
            }
            (None, Some(spec)) => from_generator(spec)?,
        };
        Ok(match self.mode.unwrap_or_default() {
            Mode::Bursty => to_bursty(&trace),
            Mode::Daily => daily_epilogue(trace),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn window_ms(&self) -> Result<f64, CliError> {
        let w = self.window_ms.unwrap_or(DEFAULT_WINDOW_MS);
        if !(w.is_finite() && w > 0.0) {
            return Err(CliError::Invalid(format!("window must be positive, got {w}")));
        }
        Ok(w)
    }
}

/// Flags shared by `run` and `compare`.
#[derive(Debug, Clone, Default, Args)]
pub struct ExperimentArgs {
    /// TOML experiment file. `compare` accepts several.
    #[arg(long = "config")]
    pub configs: Vec<PathBuf>,
    /// MSR-format trace, optionally gzip compressed.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Only replay requests of this disk number.
    #[arg(long)]
    pub disk: Option<u32>,
    /// Synthetic workload, `seq:TOTAL:IO[:GAP_MS]` or
    /// `periodic:STREAMS:BYTES:IDLE_GAP_MS[:IO[:INTRA_GAP_MS]]`.
    #[arg(long = "gen")]
    pub generator: Option<String>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long = "scheme", value_enum)]
    pub schemes: Vec<SchemeKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub window_ms: Option<f64>,
    #[arg(long)]
    pub idle_threshold_ms: Option<f64>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Fill this fraction of the logical space before the trace.
    #[arg(long)]
    pub precondition_fill: Option<f64>,
    /// Random overwrites during preconditioning, as a fraction of the
    /// logical space.
    #[arg(long, requires = "precondition_fill")]
    pub precondition_overwrite: Option<f64>,
    #[command(flatten)]
    pub geometry: GeometryOverride,
    #[command(flatten)]
    pub timing: TimingOverride,
    #[command(flatten)]
    pub quota: QuotaOverride,
}

impl ExperimentArgs {
    pub fn overrides(&self) -> ExperimentConfig {
        ExperimentConfig {
            preset: self.preset,
            geometry: self.geometry,
            timing: self.timing,
            ftl: None,
            idle_threshold_ms: self.idle_threshold_ms,
            precondition: self.precondition_fill.map(|fill_fraction| Precondition {
                fill_fraction,
                overwrite_fraction: self.precondition_overwrite.unwrap_or(0.0),
            }),
            schemes: self.schemes.clone(),
            quota: self.quota,
            trace: self.trace.clone(),
            disk: self.disk,
            generator: self.generator.clone(),
            mode: self.mode,
            seed: self.seed,
            out: self.out.clone(),
            window_ms: self.window_ms,
        }
    }

    /// One resolved config per `--config` file, or one from flags alone.
    pub fn resolve(&self) -> Result<Vec<ExperimentConfig>, CliError> {
        let over = self.overrides();
        if self.configs.is_empty() {
            return Ok(vec![over]);
        }
        self.configs.iter().map(|p| Ok(ExperimentConfig::load(p)?.merge(over.clone()))).collect()
    }
}

#[derive(Debug, Parser)]
#[command(name = "slcsim", version, about = "Hybrid SLC/TLC SSD cache simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scheme and write summary.kv, events.csv and bandwidth.csv.
    Run(ExperimentArgs),
    /// Run several schemes on one workload and write a table normalized to
    /// the baseline.
    Compare(ExperimentArgs),
    /// Run built-in reproduction suites and report each check.
    Reproduce {
        /// Suites to run; all when omitted.
        #[arg(value_enum)]
        suites: Vec<Suite>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also rerun each suite and compare event logs.
        #[arg(long)]
        determinism: bool,
    },
}

fn output(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    write_atomic(&path, contents).map_err(|source| CliError::Output { path, source })
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Output { path: dir.to_path_buf(), source })
}

fn write_run(dir: &Path, report: &RunReport, window_ms: f64) -> Result<(), CliError> {
    create_dir(dir)?;
    let series = bandwidth_series(report, window_ms).map_err(|e| CliError::Invalid(e.to_string()))?;
    output(dir, "summary.kv", &summary_kv(report))?;
    output(dir, "events.csv", &events_csv(report))?;
    output(dir, "bandwidth.csv", &bandwidth_csv(&series))
}

/// Single run. Exactly one scheme; defaults to the baseline.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunReport, CliError> {
    let sim = cfg.sim_config()?;
    let schemes = cfg.schemes(&sim.geometry, &[SchemeKind::Baseline])?;
    let [scheme] = schemes.as_slice() else {
        return Err(CliError::Invalid(format!("run takes one scheme, got {}; use compare", schemes.len())));
    };
    let window = cfg.window_ms()?;
    let trace = cfg.load_trace()?;
    let report = run(&sim, scheme, &trace, cfg.seed())?;
    write_run(&cfg.out_dir(), &report, window)?;
    Ok(report)
}

pub struct CompareOutput {
    pub reports: Vec<RunReport>,
    pub table: String,
}

/// Runs every scheme named by the configs on their shared workload. The
/// baseline is always included and comes first.
pub fn cmd_compare(configs: &[ExperimentConfig]) -> Result<CompareOutput, CliError> {
    let first = configs.first().ok_or_else(|| CliError::Invalid("nothing to compare".into()))?;
    let sim = first.sim_config()?;
    for c in &configs[1..] {
        if c.seed() != first.seed() {
            return Err(CliError::Invalid(format!("configs disagree on seed: {} vs {}", first.seed(), c.seed())));
        }
        if c.sim_config()? != sim {
            return Err(CliError::Invalid("configs disagree on geometry, timing or FTL settings".into()));
        }
        if (&c.trace, &c.generator, c.disk, c.mode) != (&first.trace, &first.generator, first.disk, first.mode) {
            return Err(CliError::Invalid("configs disagree on workload".into()));
        }
    }
    let mut schemes = vec![Scheme::preset(SchemeKind::Baseline, &sim.geometry)];
    for c in configs {
        for s in c.schemes(&sim.geometry, &SchemeKind::ALL)? {
            if let Some(existing) = schemes.iter_mut().find(|x| x.kind == s.kind) {
                *existing = s;
            } else {
                schemes.push(s);
            }
        }
    }
    let window = first.window_ms()?;
    let trace = first.load_trace()?;
    let seed = first.seed();
    let reports: Vec<RunReport> = std::thread::scope(|scope| {
        let handles: Vec<_> = schemes.iter().map(|s| scope.spawn(|| run(&sim, s, &trace, seed))).collect();
        handles.into_iter().map(|h| h.join().expect("run thread panicked")).collect::<Result<_, _>>()
    })?;
    let out = first.out_dir();
    for r in &reports {
        write_run(&out.join(r.scheme.name()), r, window)?;
    }
    let rows: Vec<_> = reports.iter().map(summarize).collect();
    let norm = normalize(&rows).map_err(|e| CliError::Invalid(e.to_string()))?;
    let table = compare_csv(&rows, &norm);
    output(&out, "compare.csv", &table)?;
    Ok(CompareOutput { reports, table })
}

/// Runs the suites and renders one line per check. Returns the report and
/// whether every check passed.
pub fn cmd_reproduce(suites: &[Suite], seed: u64, determinism: bool) -> Result<(String, bool), CliError> {
    let suites = if suites.is_empty() { &Suite::ALL[..] } else { suites };
    let mut text = String::new();
    let mut ok = true;
    for &suite in suites {
        let outcome = run_suite(suite, seed)?;
        let mut checks: Vec<Check> = outcome.checks;
        if determinism {
            checks.push(determinism_check(suite, seed)?);
        }
        let _ = writeln!(text, "== {suite}");
        for c in &checks {
            ok &= c.passed;
            let _ = writeln!(text, "{c}");
        }
    }
    Ok((text, ok))
}
