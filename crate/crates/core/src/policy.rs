//! The four SLC cache schemes: where host writes go, and what each plane
//! does with idle time.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flash::{BlockRole, GeometryConfig, PhysAddr};
use crate::ftl::{AgcStepResult, Ftl, FtlError, GcMode, MigrationDest};
use crate::op::Category;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    Baseline,
    Ips,
    IpsAgc,
    Coop,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 4] = [SchemeKind::Baseline, SchemeKind::Ips, SchemeKind::IpsAgc, SchemeKind::Coop];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Baseline => "baseline",
            SchemeKind::Ips => "ips",
            SchemeKind::IpsAgc => "ips-agc",
            SchemeKind::Coop => "coop",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "baseline" => Some(SchemeKind::Baseline),
            "ips" => Some(SchemeKind::Ips),
            "ips-agc" | "ipsagc" | "ips/agc" => Some(SchemeKind::IpsAgc),
            "coop" | "cooperative" => Some(SchemeKind::Coop),
            _ => None,
        }
    }

    pub fn uses_ips(self) -> bool {
        self != SchemeKind::Baseline
    }
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyError {
    #[error("no write destination left on plane {0}")]
    DeviceFull(usize),
    #[error("traditional SLC quota exhausted on plane {0}")]
    QuotaExhausted(usize),
    #[error("invalid scheme: {0}")]
    InvalidScheme(String),
    #[error(transparent)]
    Ftl(#[from] FtlError),
}

/// Scheme parameters. All quotas are per plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scheme {
    pub kind: SchemeKind,
    /// Baseline: traditional SLC pages. IPS schemes: SLC pages in donor
    /// frontiers (informational; follows from `ips_donor_blocks`).
    pub slc_quota_pages: usize,
    /// Blocks at the bottom of each plane that carry IPS layers.
    pub ips_donor_blocks: usize,
    /// Coop only: traditional SLC pages.
    pub trad_quota_pages: usize,
}

/// Fraction of blocks per plane that carry IPS layers in the cooperative
/// design at full scale.
pub const COOP_DONOR_FRACTION: f64 = 1600.0 / 2048.0;
/// Traditional to IPS cache size ratio in the cooperative design.
pub const COOP_TRAD_RATIO: f64 = 60.875 / 3.125;

impl Scheme {
    /// Default sizing. Baseline and IPS caches hold one SLC page per word
    /// line over two layers of every block. Coop scales the 1600/2048 donor
    /// split and caps the traditional cache at half the non-donor blocks.
    pub fn preset(kind: SchemeKind, geometry: &GeometryConfig) -> Self {
        let bpp = geometry.blocks_per_plane as usize;
        let wpp = geometry.wordlines_per_pair();
        match kind {
            SchemeKind::Baseline => {
                Scheme { kind, slc_quota_pages: bpp * wpp, ips_donor_blocks: 0, trad_quota_pages: 0 }
            }
            SchemeKind::Ips | SchemeKind::IpsAgc => {
                Scheme { kind, slc_quota_pages: bpp * wpp, ips_donor_blocks: bpp, trad_quota_pages: 0 }
            }
            SchemeKind::Coop => Self::coop((bpp as f64 * COOP_DONOR_FRACTION).round() as usize, geometry),
        }
    }

    /// Coop with a chosen donor count. The traditional quota is the fixed
    /// ratio of the IPS cache, capped at half the non-donor blocks.
    pub fn coop(donors: usize, geometry: &GeometryConfig) -> Self {
        let bpp = geometry.blocks_per_plane as usize;
        let donors = donors.clamp(1, bpp);
        let ips_pages = donors * geometry.wordlines_per_pair();
        let by_ratio = (ips_pages as f64 * COOP_TRAD_RATIO).round() as usize;
        let cap = (bpp - donors) / 2 * geometry.wordlines_per_block();
        Scheme {
            kind: SchemeKind::Coop,
            slc_quota_pages: ips_pages,
            ips_donor_blocks: donors,
            trad_quota_pages: by_ratio.min(cap),
        }
    }

    pub fn validate(&self, geometry: &GeometryConfig) -> Result<(), PolicyError> {
        let bpp = geometry.blocks_per_plane as usize;
        let wpb = geometry.wordlines_per_block();
        let bad = |m: String| Err(PolicyError::InvalidScheme(m));
        if self.ips_donor_blocks > bpp {
            return bad(format!("{} donor blocks exceed {bpp} blocks per plane", self.ips_donor_blocks));
        }
        match self.kind {
            SchemeKind::Baseline => {
                if self.ips_donor_blocks != 0 {
                    return bad("baseline has no donor blocks".into());
                }
                if self.slc_quota_pages > bpp * wpb {
                    return bad(format!("SLC quota {} exceeds plane SLC capacity {}", self.slc_quota_pages, bpp * wpb));
                }
            }
            SchemeKind::Ips | SchemeKind::IpsAgc => {
                if self.ips_donor_blocks == 0 {
                    return bad("IPS needs donor blocks".into());
                }
            }
            SchemeKind::Coop => {
                if self.ips_donor_blocks == 0 {
                    return bad("coop needs donor blocks".into());
                }
                let room = (bpp - self.ips_donor_blocks) * wpb;
                if self.trad_quota_pages > room {
                    return bad(format!("traditional quota {} exceeds non-donor SLC capacity {room}", self.trad_quota_pages));
                }
            }
        }
        Ok(())
    }

    pub fn gc_mode(&self) -> GcMode {
        match self.kind {
            SchemeKind::Ips | SchemeKind::IpsAgc => GcMode::DonorCapacity,
            _ => GcMode::FreeBlocks,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteAction {
    /// SLC page in a donor frontier, or (baseline) in a traditional SLC
    /// block. The block may still be on the free list.
    SlcProgram(PhysAddr),
    Reprogram(PhysAddr),
    /// Into the plane's TLC word-line buffer.
    TlcProgram { plane: usize },
    TradSlcProgram(PhysAddr),
}

impl WriteAction {
    pub fn category(&self) -> Category {
        match self {
            WriteAction::SlcProgram(_) => Category::SlcWrite,
            WriteAction::Reprogram(_) => Category::ReprogramWrite,
            WriteAction::TlcProgram { .. } => Category::TlcWrite,
            WriteAction::TradSlcProgram(_) => Category::TradSlcWrite,
        }
    }
}

/// Chooses the destination of one host page on `plane`.
pub fn route_write(scheme: &Scheme, ftl: &Ftl, plane: usize) -> Result<WriteAction, PolicyError> {
    let p = &ftl.planes[plane];
    let trad_ok = |quota: usize| p.trad_slc_pages < quota;
    let tlc = || p.tlc_room().then_some(WriteAction::TlcProgram { plane });
    let action = match scheme.kind {
        SchemeKind::Baseline => trad_ok(scheme.slc_quota_pages)
            .then(|| ftl.trad_target(plane).map(WriteAction::SlcProgram))
            .flatten()
            .or_else(tlc),
        SchemeKind::Ips | SchemeKind::IpsAgc => ftl
            .slc_target(plane)
            .map(WriteAction::SlcProgram)
            .or_else(|| ftl.reprogram_target(plane).map(WriteAction::Reprogram)),
        SchemeKind::Coop => ftl
            .slc_target(plane)
            .map(WriteAction::SlcProgram)
            .or_else(|| {
                trad_ok(scheme.trad_quota_pages)
                    .then(|| ftl.trad_target(plane).map(WriteAction::TradSlcProgram))
                    .flatten()
            })
            .or_else(|| ftl.reprogram_target(plane).map(WriteAction::Reprogram))
            .or_else(tlc),
    };
    action.ok_or(PolicyError::DeviceFull(plane))
}

/// Converts a free block into the plane's traditional SLC block.
pub fn traditional_slc_alloc(scheme: &Scheme, ftl: &mut Ftl, plane: usize) -> Result<usize, PolicyError> {
    let quota = match scheme.kind {
        SchemeKind::Baseline => scheme.slc_quota_pages,
        SchemeKind::Coop => scheme.trad_quota_pages,
        _ => 0,
    };
    if ftl.planes[plane].trad_slc_pages >= quota {
        return Err(PolicyError::QuotaExhausted(plane));
    }
    Ok(ftl.allocate_trad_slc(plane)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdleAction {
    AgcStep { dest: MigrationDest },
    BaselineMigratePage { src: PhysAddr },
    /// Reprogram a traditional SLC page into the next IPS slot.
    TradToIpsReprogram { src: PhysAddr },
    TradToTlcMigrate { src: PhysAddr },
    TradErase { block: usize },
    /// Program the pending TLC word line, padding empty slots.
    FlushTlcBuffer,
}

fn first_trad_block(ftl: &Ftl, plane: usize) -> Option<usize> {
    ftl.planes[plane]
        .blocks
        .iter()
        .position(|b| b.role == BlockRole::TradSlc && !b.is_empty())
}

/// Next atomic idle action for `plane`, or `None` when there is nothing
/// left to do. Re-planned after every action so that host preemption needs
/// no rollback.
pub fn next_idle_action(scheme: &Scheme, ftl: &Ftl, plane: usize) -> Option<IdleAction> {
    if ftl.buffer_has_host_pages(plane) {
        return Some(IdleAction::FlushTlcBuffer);
    }
    let p = &ftl.planes[plane];
    let trad = || -> Option<IdleAction> {
        let b = first_trad_block(ftl, plane)?;
        let src = ftl.valid_pages(plane, b).into_iter().next();
        match src {
            None => Some(IdleAction::TradErase { block: b }),
            Some(src) if scheme.kind == SchemeKind::Baseline => {
                p.tlc_room().then_some(IdleAction::BaselineMigratePage { src })
            }
            Some(src) if p.ips_reprogram_target().is_some() => Some(IdleAction::TradToIpsReprogram { src }),
            Some(src) => p.tlc_room().then_some(IdleAction::TradToTlcMigrate { src }),
        }
    };
    let agc = || {
        let dest = MigrationDest::ReprogramIntoUsedSlc;
        ftl.agc_has_work(plane, dest).then_some(IdleAction::AgcStep { dest })
    };
    let action = match scheme.kind {
        SchemeKind::Baseline => trad(),
        SchemeKind::Ips => None,
        SchemeKind::IpsAgc => agc(),
        SchemeKind::Coop => trad().or_else(agc),
    };
    action.or_else(|| (ftl.buffered_pages(plane) > 0).then_some(IdleAction::FlushTlcBuffer))
}

/// Applies one idle action. Returns the AGC step result for `AgcStep`.
pub fn apply_idle_action(ftl: &mut Ftl, plane: usize, action: IdleAction) -> Result<Option<AgcStepResult>, FtlError> {
    match action {
        IdleAction::AgcStep { dest } => return ftl.agc_step(plane, dest).map(Some),
        IdleAction::BaselineMigratePage { src } | IdleAction::TradToTlcMigrate { src } => {
            ftl.migrate_page(src, MigrationDest::PlainTlc, Category::Slc2Tlc)?;
        }
        IdleAction::TradToIpsReprogram { src } => {
            ftl.migrate_page(src, MigrationDest::ReprogramIntoUsedSlc, Category::Slc2Tlc)?;
        }
        IdleAction::TradErase { block } => {
            ftl.release_active(plane, block);
            ftl.erase_block(plane, block)?;
        }
        IdleAction::FlushTlcBuffer => ftl.commit_tlc(plane)?,
    }
    Ok(None)
}

/// The full idle program the plane would run if never interrupted,
/// obtained by replaying [`next_idle_action`] on a copy of the device.
pub fn idle_program(scheme: &Scheme, ftl: &Ftl, plane: usize) -> Result<Vec<IdleAction>, FtlError> {
    let mut sim = ftl.clone();
    let mut out = Vec::new();
    while let Some(a) = next_idle_action(scheme, &sim, plane) {
        let r = apply_idle_action(&mut sim, plane, a)?;
        sim.take_ops();
        if r == Some(AgcStepResult::NothingToDo) {
            break;
        }
        out.push(a);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_full_scale_sizes() {
        let g = GeometryConfig::full();
        let planes = g.planes() as u64;
        let gib = |pages: usize| pages as u64 * planes * g.page_size;
        let b = Scheme::preset(SchemeKind::Baseline, &g);
        assert_eq!(gib(b.slc_quota_pages), 4 << 30);
        let c = Scheme::preset(SchemeKind::Coop, &g);
        assert_eq!(c.ips_donor_blocks, 1600);
        assert_eq!(gib(c.slc_quota_pages) as f64 / (1u64 << 30) as f64, 3.125);
        c.validate(&g).unwrap();
    }

    #[test]
    fn desk_coop_preset() {
        let g = GeometryConfig::desk();
        let c = Scheme::preset(SchemeKind::Coop, &g);
        assert_eq!(c.ips_donor_blocks, 50);
        assert_eq!(c.trad_quota_pages, 7 * 24);
        c.validate(&g).unwrap();
    }

    #[test]
    fn parse_names() {
        for k in SchemeKind::ALL {
            assert_eq!(SchemeKind::parse(k.name()), Some(k));
        }
        assert_eq!(SchemeKind::parse("nope"), None);
    }

    #[test]
    fn validate_rejects_oversized_quota() {
        let g = GeometryConfig::desk();
        let mut s = Scheme::preset(SchemeKind::Baseline, &g);
        s.slc_quota_pages = 64 * 24 + 1;
        assert!(s.validate(&g).is_err());
        let mut s = Scheme::preset(SchemeKind::Coop, &g);
        s.trad_quota_pages = 15 * 24;
        assert!(s.validate(&g).is_err());
    }
}
