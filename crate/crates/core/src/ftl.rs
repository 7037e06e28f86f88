//! Page-level FTL: mapping, allocation, garbage collection, the atomic steps
//! of advanced GC, and erase-count based block selection.
//!
//! Every mutation that costs device time pushes a [`FlashOp`] onto an
//! internal queue that the engine drains and schedules.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flash::{
    Block, BlockRole, FlashError, GeometryConfig, Lpn, PhysAddr, ProgramMode, Slot, TimingConfig,
    WlMode, SLOTS_PER_WORDLINE,
};
use crate::op::{ms_to_ns, Category, FlashOp, Nanos, OpKind, PageWrite};
use crate::policy::WriteAction;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FtlError {
    #[error(transparent)]
    Flash(#[from] FlashError),
    #[error("plane {0} has no free block")]
    OutOfFreeBlocks(usize),
    #[error("plane {0}: destination cannot absorb the victim's valid pages")]
    NoSpaceForMigration(usize),
    #[error("plane {0} has no GC victim")]
    NoVictim(usize),
    #[error("erase of block {1} on plane {0} which still holds valid data")]
    EraseWithValidData(usize, usize),
    #[error("action does not match device state: {0}")]
    InvalidAction(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FtlConfig {
    /// Synchronous GC starts when free space on a plane falls below this
    /// fraction of its blocks.
    pub gc_low_watermark: f64,
    /// Logical capacity as a fraction of raw TLC capacity; host lpns wrap
    /// modulo the logical page count.
    pub logical_fraction: f64,
}

impl Default for FtlConfig {
    fn default() -> Self {
        Self { gc_low_watermark: 0.05, logical_fraction: 0.85 }
    }
}

/// How a plane decides that it is short on space, and where synchronous GC
/// sends valid data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GcMode {
    /// Free-block list below the watermark; migrate into plain TLC blocks.
    FreeBlocks,
    /// Remaining donor capacity below the watermark; migrate into the IPS
    /// cache (reprogram slots first, then SLC frontier pages).
    DonorCapacity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MigrationDest {
    PlainTlc,
    ReprogramIntoUsedSlc,
    /// Reprogram slots when available, else SLC pages of a donor frontier.
    IpsCache,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Flash(PhysAddr),
    /// Waiting in the plane's TLC word-line buffer.
    Buffered { plane: u32, index: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BufferedPage {
    pub lpn: Lpn,
    pub live: bool,
    pub category: Category,
    pub src: Option<PhysAddr>,
    pub tag: Option<u64>,
    pub seq: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ActiveBlocks {
    pub ips_slc: Option<usize>,
    pub ips_reprogram: Option<usize>,
    pub trad_slc: Option<usize>,
    pub plain_tlc: Option<usize>,
}

impl ActiveBlocks {
    pub fn contains(&self, block: usize) -> bool {
        [self.ips_slc, self.ips_reprogram, self.trad_slc, self.plain_tlc].contains(&Some(block))
    }
}

#[derive(Debug, Clone)]
pub struct PlaneState {
    pub blocks: Vec<Block>,
    pub free: BTreeSet<usize>,
    pub active: ActiveBlocks,
    pub gc_low_watermark: f64,
    pub agc_victim: Option<usize>,
    pub tlc_buffer: Vec<BufferedPage>,
    /// Occupied page slots in non-erased traditional SLC blocks.
    pub trad_slc_pages: usize,
}

impl PlaneState {
    pub fn watermark_blocks(&self) -> usize {
        ((self.gc_low_watermark * self.blocks.len() as f64).ceil() as usize).max(1)
    }

    pub fn donor_capacity(&self) -> usize {
        self.blocks
            .iter()
            .filter(|b| b.role == BlockRole::IpsDonor)
            .map(Block::donor_capacity_left)
            .sum()
    }

    pub fn ips_slc_target(&self) -> Option<(usize, usize)> {
        if let Some(b) = self.active.ips_slc {
            if let Some(wl) = self.blocks[b].free_slc_wordline() {
                return Some((b, wl));
            }
        }
        self.blocks.iter().enumerate().find_map(|(i, b)| {
            (b.role == BlockRole::IpsDonor).then(|| b.free_slc_wordline().map(|wl| (i, wl))).flatten()
        })
    }

    pub fn ips_free_slc_pages(&self) -> usize {
        self.blocks
            .iter()
            .filter(|b| b.role == BlockRole::IpsDonor)
            .map(Block::free_slc_pages)
            .sum()
    }

    pub fn ips_reprogram_target(&self) -> Option<(usize, usize)> {
        if let Some(b) = self.active.ips_reprogram {
            if let Some(wl) = self.blocks[b].next_reprogram_wordline() {
                return Some((b, wl));
            }
        }
        self.blocks.iter().enumerate().find_map(|(i, b)| {
            (b.role == BlockRole::IpsDonor)
                .then(|| b.next_reprogram_wordline().map(|wl| (i, wl)))
                .flatten()
        })
    }

    pub fn ips_reprogram_slots_left(&self) -> usize {
        self.blocks
            .iter()
            .filter(|b| b.role == BlockRole::IpsDonor)
            .map(Block::reprogram_slots_left)
            .sum()
    }

    /// Live SLC pages held in donor frontiers.
    pub fn ips_slc_pages(&self) -> usize {
        self.blocks
            .iter()
            .filter(|b| b.role == BlockRole::IpsDonor)
            .map(Block::slc_wordlines)
            .sum()
    }

    /// Active traditional SLC block with room, else the block a fresh
    /// allocation would pick.
    pub fn trad_slc_target(&self) -> Option<(usize, usize)> {
        if let Some(b) = self.active.trad_slc {
            let blk = &self.blocks[b];
            if blk.program_cursor < blk.len() {
                return Some((b, blk.program_cursor));
            }
        }
        (self.spare_free() > 0).then(|| self.min_erase_free().map(|b| (b, 0))).flatten()
    }

    pub fn min_erase_free(&self) -> Option<usize> {
        self.free.iter().copied().min_by_key(|&b| (self.blocks[b].erase_count, b))
    }

    fn open_tlc_room(&self) -> bool {
        self.active.plain_tlc.is_some_and(|b| {
            let blk = &self.blocks[b];
            blk.program_cursor < blk.len()
        })
    }

    pub fn tlc_room(&self) -> bool {
        self.open_tlc_room() || !self.free.is_empty()
    }

    /// Free blocks other allocations may take. A buffered word line with no
    /// open TLC block to land in keeps one free block for itself.
    pub fn spare_free(&self) -> usize {
        let reserve = !self.tlc_buffer.is_empty() && !self.open_tlc_room();
        self.free.len().saturating_sub(reserve as usize)
    }

    pub fn valid_slots(&self) -> usize {
        self.blocks.iter().map(Block::valid_count).sum()
    }

    /// Fully programmed blocks that are not allocation targets, by index.
    /// Traditional SLC blocks are left to the idle reclaim program.
    fn gc_candidates(&self) -> impl Iterator<Item = usize> + '_ {
        self.blocks
            .iter()
            .enumerate()
            .filter(|(i, b)| b.is_fully_programmed() && b.role != BlockRole::TradSlc && !self.active.contains(*i))
            .map(|(i, _)| i)
    }

    fn reclaimable(&self, block: usize) -> bool {
        let b = &self.blocks[block];
        b.valid_count() < b.occupied_slots()
    }

    fn refresh_actives(&mut self) {
        let a = &mut self.active;
        if let Some(b) = a.ips_slc {
            if self.blocks[b].free_slc_wordline().is_none() {
                a.ips_slc = None;
            }
        }
        if let Some(b) = a.ips_reprogram {
            if self.blocks[b].next_reprogram_wordline().is_none() {
                a.ips_reprogram = None;
            }
        }
        if let Some(b) = a.trad_slc {
            if self.blocks[b].program_cursor >= self.blocks[b].len() {
                a.trad_slc = None;
            }
        }
        if let Some(b) = a.plain_tlc {
            if self.blocks[b].program_cursor >= self.blocks[b].len() {
                a.plain_tlc = None;
            }
        }
    }
}

/// Result of one atomic advanced-GC step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgcStepResult {
    MigratedPage { lpn: Lpn, from: PhysAddr, to: Location },
    EraseIssued(usize),
    NothingToDo,
}

#[derive(Debug, Clone, Copy)]
struct TimingNs {
    slc_read: Nanos,
    tlc_read: Nanos,
    slc_program: Nanos,
    tlc_program: Nanos,
    reprogram: Nanos,
    erase: Nanos,
    tlc_per_page: bool,
}

impl From<&TimingConfig> for TimingNs {
    fn from(t: &TimingConfig) -> Self {
        Self {
            slc_read: ms_to_ns(t.slc_read),
            tlc_read: ms_to_ns(t.tlc_read),
            slc_program: ms_to_ns(t.slc_program),
            tlc_program: ms_to_ns(t.tlc_program),
            reprogram: ms_to_ns(t.reprogram),
            erase: ms_to_ns(t.erase),
            tlc_per_page: t.tlc_per_page,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ftl {
    geometry: GeometryConfig,
    timing: TimingNs,
    gc_mode: GcMode,
    pub planes: Vec<PlaneState>,
    map: HashMap<Lpn, Location>,
    logical_pages: u64,
    valid_total: usize,
    buffered_live: usize,
    ops: Vec<FlashOp>,
    seq: u64,
}

impl Ftl {
    /// Builds an erased device. The first `donors_per_plane` blocks of every
    /// plane become IPS donors; the rest go on the free list.
    pub fn new(
        geometry: GeometryConfig,
        timing: &TimingConfig,
        config: &FtlConfig,
        donors_per_plane: usize,
        gc_mode: GcMode,
    ) -> Self {
        let bpp = geometry.blocks_per_plane as usize;
        let planes = (0..geometry.planes())
            .map(|_| {
                let blocks: Vec<Block> = (0..bpp)
                    .map(|i| {
                        let role = if i < donors_per_plane { BlockRole::IpsDonor } else { BlockRole::PlainTlc };
                        Block::new(&geometry, role)
                    })
                    .collect();
                PlaneState {
                    blocks,
                    free: (donors_per_plane.min(bpp)..bpp).collect(),
                    active: ActiveBlocks::default(),
                    gc_low_watermark: config.gc_low_watermark,
                    agc_victim: None,
                    tlc_buffer: Vec::new(),
                    trad_slc_pages: 0,
                }
            })
            .collect();
        let raw = (geometry.total_blocks() * geometry.tlc_pages_per_block()) as f64;
        let logical_pages = ((raw * config.logical_fraction).floor() as u64).max(1);
        Self {
            geometry,
            timing: timing.into(),
            gc_mode,
            planes,
            map: HashMap::new(),
            logical_pages,
            valid_total: 0,
            buffered_live: 0,
            ops: Vec::new(),
            seq: 0,
        }
    }

    pub fn geometry(&self) -> &GeometryConfig {
        &self.geometry
    }

    pub fn logical_pages(&self) -> u64 {
        self.logical_pages
    }

    pub fn wrap_lpn(&self, lpn: Lpn) -> Lpn {
        lpn % self.logical_pages
    }

    pub fn mapped_count(&self) -> usize {
        self.map.len()
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    /// Number of page and erase mutations so far.
    pub fn mutations(&self) -> u64 {
        self.seq
    }

    pub fn take_ops(&mut self) -> Vec<FlashOp> {
        std::mem::take(&mut self.ops)
    }

    pub fn lookup(&self, lpn: Lpn) -> Option<Location> {
        self.map.get(&lpn).copied()
    }

    pub fn translate(&self, lpn: Lpn) -> Option<PhysAddr> {
        match self.lookup(lpn)? {
            Location::Flash(a) => Some(a),
            Location::Buffered { .. } => None,
        }
    }

    pub fn slot(&self, addr: PhysAddr) -> Slot {
        self.planes[addr.plane as usize].blocks[addr.block as usize].wordlines[addr.wordline as usize].slots
            [addr.slot as usize]
    }

    pub fn wordline_mode(&self, addr: PhysAddr) -> WlMode {
        self.planes[addr.plane as usize].blocks[addr.block as usize].wordlines[addr.wordline as usize].mode
    }

    fn set_location(&mut self, lpn: Lpn, loc: Location) {
        if let Some(old) = self.map.insert(lpn, loc) {
            match old {
                Location::Flash(a) => {
                    let b = &mut self.planes[a.plane as usize].blocks[a.block as usize];
                    b.invalidate(a.wordline as usize, a.slot as usize);
                    self.valid_total -= 1;
                }
                Location::Buffered { plane, index } => {
                    self.planes[plane as usize].tlc_buffer[index as usize].live = false;
                    self.buffered_live -= 1;
                }
            }
        }
        match loc {
            Location::Flash(_) => self.valid_total += 1,
            Location::Buffered { .. } => self.buffered_live += 1,
        }
    }

    // ---- allocation -------------------------------------------------------

    pub fn pick_free_block(&mut self, plane: usize, role: BlockRole) -> Result<usize, FtlError> {
        let p = &mut self.planes[plane];
        if role != BlockRole::PlainTlc && p.spare_free() == 0 {
            return Err(FtlError::OutOfFreeBlocks(plane));
        }
        let b = p.min_erase_free().ok_or(FtlError::OutOfFreeBlocks(plane))?;
        p.free.remove(&b);
        p.blocks[b].assign_role(role);
        Ok(b)
    }

    /// Allocates a traditional SLC block from the free list and makes it the
    /// plane's active traditional SLC target.
    pub fn allocate_trad_slc(&mut self, plane: usize) -> Result<usize, FtlError> {
        let b = self.pick_free_block(plane, BlockRole::TradSlc)?;
        self.planes[plane].active.trad_slc = Some(b);
        Ok(b)
    }

    // ---- host path --------------------------------------------------------

    /// Applies a routed host write. Returns where the data now lives.
    pub fn host_write_commit(&mut self, lpn: Lpn, action: WriteAction, tag: u64) -> Result<Location, FtlError> {
        match action {
            WriteAction::SlcProgram(addr) => {
                let role = self.planes[addr.plane as usize].blocks[addr.block as usize].role;
                if role == BlockRole::IpsDonor {
                    self.program_donor_slc(addr, lpn, Category::SlcWrite, None, Some(tag))
                } else {
                    self.program_trad_slc(addr, lpn, Category::SlcWrite, Some(tag))
                }
            }
            WriteAction::TradSlcProgram(addr) => self.program_trad_slc(addr, lpn, Category::TradSlcWrite, Some(tag)),
            WriteAction::Reprogram(addr) => {
                self.reprogram_into(addr, lpn, Category::ReprogramWrite, None, Some(tag))
            }
            WriteAction::TlcProgram { plane } => {
                self.enqueue_tlc(plane, lpn, Category::TlcWrite, None, Some(tag))
            }
        }
    }

    fn program_donor_slc(
        &mut self,
        addr: PhysAddr,
        lpn: Lpn,
        category: Category,
        src: Option<PhysAddr>,
        tag: Option<u64>,
    ) -> Result<Location, FtlError> {
        let (plane, block, wl) = (addr.plane as usize, addr.block as usize, addr.wordline as usize);
        if addr.slot != 0 {
            return Err(FtlError::InvalidAction(format!("SLC program must target slot 0, got {addr}")));
        }
        let p = &mut self.planes[plane];
        if p.blocks[block].role != BlockRole::IpsDonor {
            return Err(FtlError::InvalidAction(format!("{addr} is not in a donor block")));
        }
        p.blocks[block].program(wl, ProgramMode::Slc, &[Some(lpn)])?;
        p.active.ips_slc = Some(block);
        p.refresh_actives();
        self.set_location(lpn, Location::Flash(addr));
        self.push_program(plane, OpKind::SlcProgram, self.timing.slc_program, lpn, category, src, addr, tag);
        Ok(Location::Flash(addr))
    }

    fn program_trad_slc(
        &mut self,
        addr: PhysAddr,
        lpn: Lpn,
        category: Category,
        tag: Option<u64>,
    ) -> Result<Location, FtlError> {
        let (plane, block, wl) = (addr.plane as usize, addr.block as usize, addr.wordline as usize);
        if self.planes[plane].free.contains(&block) {
            if self.planes[plane].min_erase_free() != Some(block) {
                return Err(FtlError::InvalidAction(format!("{addr} is not the next free block")));
            }
            self.allocate_trad_slc(plane)?;
        }
        let p = &mut self.planes[plane];
        if p.blocks[block].role != BlockRole::TradSlc || addr.slot != 0 {
            return Err(FtlError::InvalidAction(format!("{addr} is not a traditional SLC page")));
        }
        p.blocks[block].program(wl, ProgramMode::Slc, &[Some(lpn)])?;
        p.trad_slc_pages += 1;
        p.active.trad_slc = Some(block);
        p.refresh_actives();
        self.set_location(lpn, Location::Flash(addr));
        self.push_program(plane, OpKind::SlcProgram, self.timing.slc_program, lpn, category, None, addr, tag);
        Ok(Location::Flash(addr))
    }

    fn reprogram_into(
        &mut self,
        addr: PhysAddr,
        lpn: Lpn,
        category: Category,
        src: Option<PhysAddr>,
        tag: Option<u64>,
    ) -> Result<Location, FtlError> {
        let (plane, block, wl) = (addr.plane as usize, addr.block as usize, addr.wordline as usize);
        let p = &mut self.planes[plane];
        let blk = &mut p.blocks[block];
        if blk.next_reprogram_wordline() != Some(wl) {
            return Err(FtlError::InvalidAction(format!("{addr} is not the next reprogram target")));
        }
        let slot = blk.reprogram(wl, lpn)?;
        if slot != addr.slot as usize {
            return Err(FtlError::InvalidAction(format!("{addr}: reprogram filled slot {slot}")));
        }
        if blk.frontier_fully_tlc() {
            blk.advance_frontier()?;
            p.active.ips_reprogram = None;
        } else {
            p.active.ips_reprogram = Some(block);
        }
        p.refresh_actives();
        self.set_location(lpn, Location::Flash(addr));
        self.push_program(plane, OpKind::Reprogram, self.timing.reprogram, lpn, category, src, addr, tag);
        Ok(Location::Flash(addr))
    }

    #[allow(clippy::too_many_arguments)]
    fn push_program(
        &mut self,
        plane: usize,
        kind: OpKind,
        duration: Nanos,
        lpn: Lpn,
        category: Category,
        src: Option<PhysAddr>,
        dst: PhysAddr,
        tag: Option<u64>,
    ) {
        let mut op = FlashOp::new(plane, kind, duration);
        let seq = self.next_seq();
        op.pages.push(PageWrite { lpn: Some(lpn), category, src, dst: Some(dst), tag, seq });
        op.block = Some(dst.block as usize);
        self.ops.push(op);
    }

    /// Address the next reprogram on this plane would fill.
    pub fn reprogram_target(&self, plane: usize) -> Option<PhysAddr> {
        let p = &self.planes[plane];
        let (b, wl) = p.ips_reprogram_target()?;
        let slot = match p.blocks[b].wordlines[wl].mode {
            WlMode::Slc => 1,
            _ => 2,
        };
        Some(PhysAddr::new(plane, b, wl, slot))
    }

    pub fn slc_target(&self, plane: usize) -> Option<PhysAddr> {
        let (b, wl) = self.planes[plane].ips_slc_target()?;
        Some(PhysAddr::new(plane, b, wl, 0))
    }

    pub fn trad_target(&self, plane: usize) -> Option<PhysAddr> {
        let (b, wl) = self.planes[plane].trad_slc_target()?;
        Some(PhysAddr::new(plane, b, wl, 0))
    }

    // ---- TLC word-line buffer --------------------------------------------

    fn enqueue_tlc(
        &mut self,
        plane: usize,
        lpn: Lpn,
        category: Category,
        src: Option<PhysAddr>,
        tag: Option<u64>,
    ) -> Result<Location, FtlError> {
        if !self.planes[plane].tlc_room() && self.planes[plane].tlc_buffer.is_empty() {
            return Err(FtlError::OutOfFreeBlocks(plane));
        }
        let index = self.planes[plane].tlc_buffer.len();
        let seq = self.next_seq();
        self.planes[plane].tlc_buffer.push(BufferedPage { lpn, live: true, category, src, tag, seq });
        let loc = Location::Buffered { plane: plane as u32, index: index as u32 };
        self.set_location(lpn, loc);
        if self.timing.tlc_per_page {
            let mut op = FlashOp::new(plane, OpKind::TlcProgram, self.timing.tlc_program);
            op.pages.push(PageWrite { lpn: Some(lpn), category, src, dst: None, tag, seq });
            self.ops.push(op);
        }
        if index + 1 == SLOTS_PER_WORDLINE {
            return self.commit_tlc(plane).map(|_| self.lookup(lpn).unwrap_or(loc));
        }
        Ok(loc)
    }

    /// Programs the buffered pages as one word line, padding empty slots.
    pub fn commit_tlc(&mut self, plane: usize) -> Result<(), FtlError> {
        if self.planes[plane].tlc_buffer.is_empty() {
            return Ok(());
        }
        let block = match self.planes[plane].active.plain_tlc {
            Some(b) if self.planes[plane].blocks[b].program_cursor < self.planes[plane].blocks[b].len() => b,
            _ => {
                let b = self.pick_free_block(plane, BlockRole::PlainTlc)?;
                self.planes[plane].active.plain_tlc = Some(b);
                b
            }
        };
        let entries = std::mem::take(&mut self.planes[plane].tlc_buffer);
        let wl = self.planes[plane].blocks[block].program_cursor;
        let lpns: Vec<Option<Lpn>> = entries.iter().map(|e| e.live.then_some(e.lpn)).collect();
        self.planes[plane].blocks[block].program(wl, ProgramMode::TlcOneShot, &lpns)?;
        self.planes[plane].refresh_actives();

        let pads = SLOTS_PER_WORDLINE - entries.len();
        let per_page = self.timing.tlc_per_page;
        let duration = if per_page { self.timing.tlc_program * pads as Nanos } else { self.timing.tlc_program };
        let mut op = FlashOp::new(plane, OpKind::TlcProgram, duration);
        op.block = Some(block);
        for (slot, e) in entries.iter().enumerate() {
            let addr = PhysAddr::new(plane, block, wl, slot);
            if e.live {
                // Bypass set_location: the old location is this buffer entry.
                self.map.insert(e.lpn, Location::Flash(addr));
                self.buffered_live -= 1;
                self.valid_total += 1;
            }
            if !per_page {
                op.pages.push(PageWrite {
                    lpn: Some(e.lpn),
                    category: e.category,
                    src: e.src,
                    dst: Some(addr),
                    tag: e.tag,
                    seq: e.seq,
                });
            }
        }
        for slot in entries.len()..SLOTS_PER_WORDLINE {
            let addr = PhysAddr::new(plane, block, wl, slot);
            let seq = self.next_seq();
            op.pages.push(PageWrite { lpn: None, category: Category::PadInvalid, src: None, dst: Some(addr), tag: None, seq });
        }
        if !op.pages.is_empty() || duration > 0 {
            self.ops.push(op);
        }
        Ok(())
    }

    pub fn buffered_pages(&self, plane: usize) -> usize {
        self.planes[plane].tlc_buffer.len()
    }

    pub fn buffer_has_host_pages(&self, plane: usize) -> bool {
        self.planes[plane].tlc_buffer.iter().any(|e| e.tag.is_some()) && !self.timing.tlc_per_page
    }

    // ---- reads ------------------------------------------------------------

    /// Host read. Returns `false` for an unmapped lpn (no device time used).
    pub fn read(&mut self, lpn: Lpn) -> bool {
        match self.lookup(lpn) {
            None => false,
            Some(Location::Buffered { plane, .. }) => {
                self.ops.push(FlashOp::new(plane as usize, OpKind::Read, 0));
                true
            }
            Some(Location::Flash(a)) => {
                let d = self.read_cost(a);
                let mut op = FlashOp::new(a.plane as usize, OpKind::Read, d);
                op.block = Some(a.block as usize);
                self.ops.push(op);
                true
            }
        }
    }

    fn read_cost(&self, a: PhysAddr) -> Nanos {
        match self.wordline_mode(a) {
            WlMode::Slc => self.timing.slc_read,
            _ => self.timing.tlc_read,
        }
    }

    // ---- migration, GC, AGC -----------------------------------------------

    /// Moves one valid page to `dest`. The source slot becomes invalid.
    pub fn migrate_page(
        &mut self,
        src: PhysAddr,
        dest: MigrationDest,
        category: Category,
    ) -> Result<Location, FtlError> {
        let lpn = self
            .slot(src)
            .lpn()
            .ok_or_else(|| FtlError::InvalidAction(format!("migration source {src} holds no valid page")))?;
        let plane = src.plane as usize;
        let mut read = FlashOp::new(plane, OpKind::InternalRead, self.read_cost(src));
        read.block = Some(src.block as usize);
        let target = match dest {
            MigrationDest::PlainTlc => None,
            MigrationDest::ReprogramIntoUsedSlc => {
                Some(self.reprogram_target(plane).ok_or(FtlError::NoSpaceForMigration(plane))?)
            }
            MigrationDest::IpsCache => Some(
                self.reprogram_target(plane)
                    .or_else(|| self.slc_target(plane))
                    .ok_or(FtlError::NoSpaceForMigration(plane))?,
            ),
        };
        self.ops.push(read);
        match target {
            None => self.enqueue_tlc(plane, lpn, category, Some(src), None),
            Some(t) if t.slot == 0 => self.program_donor_slc(t, lpn, category, Some(src), None),
            Some(t) => self.reprogram_into(t, lpn, category, Some(src), None),
        }
    }

    fn dest_capacity(&self, plane: usize, dest: MigrationDest, exclude: usize) -> usize {
        let p = &self.planes[plane];
        match dest {
            MigrationDest::ReprogramIntoUsedSlc => p.ips_reprogram_slots_left(),
            MigrationDest::IpsCache => p
                .blocks
                .iter()
                .enumerate()
                .filter(|(i, b)| *i != exclude && b.role == BlockRole::IpsDonor)
                .map(|(_, b)| b.reprogram_slots_left() + b.free_slc_pages())
                .sum(),
            MigrationDest::PlainTlc => {
                let open = p.active.plain_tlc.map_or(0, |b| {
                    let blk = &p.blocks[b];
                    (blk.len() - blk.program_cursor) * SLOTS_PER_WORDLINE
                });
                let free = p.free.iter().filter(|&&b| b != exclude).count();
                (open + free * self.geometry.tlc_pages_per_block()).saturating_sub(p.tlc_buffer.len())
            }
        }
    }

    /// Greedy victim: fewest valid pages, then lowest erase count, then
    /// lowest index, among fully programmed non-active blocks.
    pub fn select_gc_victim(&self, plane: usize) -> Option<usize> {
        let p = &self.planes[plane];
        p.gc_candidates().min_by_key(|&b| (p.blocks[b].valid_count(), p.blocks[b].erase_count, b))
    }

    fn select_reclaimable_victim(&self, plane: usize) -> Option<usize> {
        let p = &self.planes[plane];
        p.gc_candidates()
            .filter(|&b| p.reclaimable(b))
            .min_by_key(|&b| (p.blocks[b].valid_count(), p.blocks[b].erase_count, b))
    }

    fn valid_addrs(&self, plane: usize, block: usize) -> Vec<PhysAddr> {
        let blk = &self.planes[plane].blocks[block];
        blk.wordlines
            .iter()
            .enumerate()
            .flat_map(|(w, wl)| {
                wl.slots
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| matches!(s, Slot::Valid(_)))
                    .map(move |(s, _)| PhysAddr::new(plane, block, w, s))
            })
            .collect()
    }

    /// Valid pages of a block in migration order.
    pub fn valid_pages(&self, plane: usize, block: usize) -> Vec<PhysAddr> {
        self.valid_addrs(plane, block)
    }

    /// Erases a drained block. Non-donor blocks return to the free list.
    pub fn erase_block(&mut self, plane: usize, block: usize) -> Result<(), FtlError> {
        let p = &mut self.planes[plane];
        if p.active.contains(block) {
            return Err(FlashError::EraseActiveBlock(block).into());
        }
        if p.blocks[block].valid_count() > 0 {
            return Err(FtlError::EraseWithValidData(plane, block));
        }
        if p.blocks[block].role == BlockRole::TradSlc {
            p.trad_slc_pages -= p.blocks[block].occupied_slots();
        }
        p.blocks[block].erase();
        if p.blocks[block].role != BlockRole::IpsDonor {
            p.free.insert(block);
        }
        if p.agc_victim == Some(block) {
            p.agc_victim = None;
        }
        let mut op = FlashOp::new(plane, OpKind::Erase, self.timing.erase);
        op.block = Some(block);
        op.seq = self.next_seq();
        self.ops.push(op);
        Ok(())
    }

    /// Drops any active-target reference to `block` so it can be reclaimed.
    pub fn release_active(&mut self, plane: usize, block: usize) {
        let a = &mut self.planes[plane].active;
        for slot in [&mut a.ips_slc, &mut a.ips_reprogram, &mut a.trad_slc, &mut a.plain_tlc] {
            if *slot == Some(block) {
                *slot = None;
            }
        }
    }

    /// Collects one victim: migrates its valid pages to `dest` and erases
    /// it. Returns the number of migrated pages.
    pub fn run_gc(&mut self, plane: usize, dest: MigrationDest) -> Result<usize, FtlError> {
        let victim = self.select_gc_victim(plane).ok_or(FtlError::NoVictim(plane))?;
        self.collect_block(plane, victim, dest, Category::GcMigration)
    }

    fn collect_block(
        &mut self,
        plane: usize,
        victim: usize,
        dest: MigrationDest,
        category: Category,
    ) -> Result<usize, FtlError> {
        let pages = self.valid_addrs(plane, victim);
        if self.dest_capacity(plane, dest, victim) < pages.len() {
            return Err(FtlError::NoSpaceForMigration(plane));
        }
        for &src in &pages {
            self.migrate_page(src, dest, category)?;
        }
        self.erase_block(plane, victim)?;
        Ok(pages.len())
    }

    pub fn gc_mode(&self) -> GcMode {
        self.gc_mode
    }

    pub fn needs_gc(&self, plane: usize) -> bool {
        let p = &self.planes[plane];
        let wm = p.watermark_blocks();
        match self.gc_mode {
            GcMode::FreeBlocks => p.free.len() < wm,
            GcMode::DonorCapacity => p.donor_capacity() < wm * self.geometry.tlc_pages_per_block(),
        }
    }

    /// Runs synchronous GC until the plane is above its watermark or no
    /// victim would free space. Returns the number of victims collected.
    pub fn ensure_space(&mut self, plane: usize) -> Result<usize, FtlError> {
        let dest = match self.gc_mode {
            GcMode::FreeBlocks => MigrationDest::PlainTlc,
            GcMode::DonorCapacity => MigrationDest::IpsCache,
        };
        let mut runs = 0;
        while self.needs_gc(plane) {
            let Some(victim) = self.select_reclaimable_victim(plane) else { break };
            match self.collect_block(plane, victim, dest, Category::GcMigration) {
                Ok(_) => runs += 1,
                Err(FtlError::NoSpaceForMigration(_)) => break,
                Err(e) => return Err(e),
            }
        }
        Ok(runs)
    }

    /// One interruptible AGC step: migrate a single valid page of the current
    /// victim, or erase the victim once drained.
    pub fn agc_step(&mut self, plane: usize, dest: MigrationDest) -> Result<AgcStepResult, FtlError> {
        let victim = match self.planes[plane].agc_victim {
            Some(v) if self.planes[plane].blocks[v].is_fully_programmed() => v,
            _ => {
                self.planes[plane].agc_victim = None;
                match self.select_reclaimable_victim(plane) {
                    Some(v) => v,
                    None => return Ok(AgcStepResult::NothingToDo),
                }
            }
        };
        self.planes[plane].agc_victim = Some(victim);
        let Some(&src) = self.valid_addrs(plane, victim).first() else {
            self.erase_block(plane, victim)?;
            return Ok(AgcStepResult::EraseIssued(victim));
        };
        if self.dest_capacity(plane, dest, victim) == 0 {
            return Ok(AgcStepResult::NothingToDo);
        }
        let lpn = self.slot(src).lpn().expect("valid slot");
        let to = self.migrate_page(src, dest, Category::AgcMigration)?;
        Ok(AgcStepResult::MigratedPage { lpn, from: src, to })
    }

    /// Whether an AGC step on this plane could make progress towards
    /// `dest` (a victim to drain or erase, and room for its data).
    pub fn agc_has_work(&self, plane: usize, dest: MigrationDest) -> bool {
        let p = &self.planes[plane];
        let victim = p
            .agc_victim
            .filter(|&v| p.blocks[v].is_fully_programmed())
            .or_else(|| self.select_reclaimable_victim(plane));
        match victim {
            None => false,
            Some(v) => p.blocks[v].valid_count() == 0 || self.dest_capacity(plane, dest, v) > 0,
        }
    }

    // ---- preconditioning ----------------------------------------------------

    /// Ages the device without charging time or counters: writes lpns
    /// `0..fill_pages` sequentially as TLC data, then rewrites
    /// `overwrite_pages` random lpns from that range. Data is placed into
    /// whole blocks taken from the top of each plane; the last partial block
    /// of every plane is padded so that all aged blocks are GC candidates.
    pub fn precondition<R: Rng>(&mut self, fill_pages: u64, overwrite_pages: u64, rng: &mut R) -> Result<(), FtlError> {
        let fill_pages = fill_pages.min(self.logical_pages);
        let planes = self.planes.len();
        let mut open: Vec<Option<(usize, BlockRole)>> = vec![None; planes];
        let mut pending: Vec<Vec<Lpn>> = vec![Vec::new(); planes];
        let writes = (0..fill_pages).chain((0..overwrite_pages).map(|_| {
            if fill_pages == 0 {
                0
            } else {
                rng.gen_range(0..fill_pages)
            }
        }));
        let total = fill_pages + if fill_pages == 0 { 0 } else { overwrite_pages };
        for (i, lpn) in writes.take(total as usize).enumerate() {
            let plane = i % planes;
            pending[plane].push(lpn);
            if pending[plane].len() == SLOTS_PER_WORDLINE {
                let lpns = std::mem::take(&mut pending[plane]);
                self.precondition_wordline(plane, &mut open[plane], &lpns)?;
            }
        }
        for plane in 0..planes {
            let lpns = std::mem::take(&mut pending[plane]);
            if !lpns.is_empty() {
                self.precondition_wordline(plane, &mut open[plane], &lpns)?;
            }
            if let Some((b, role)) = open[plane].take() {
                while self.planes[plane].blocks[b].program_cursor < self.planes[plane].blocks[b].len() {
                    let wl = self.planes[plane].blocks[b].program_cursor;
                    self.planes[plane].blocks[b].program(wl, ProgramMode::TlcOneShot, &[None])?;
                }
                self.planes[plane].blocks[b].role = role;
            }
        }
        Ok(())
    }

    fn precondition_wordline(
        &mut self,
        plane: usize,
        open: &mut Option<(usize, BlockRole)>,
        lpns: &[Lpn],
    ) -> Result<(), FtlError> {
        let block = match *open {
            Some((b, _)) if self.planes[plane].blocks[b].program_cursor < self.planes[plane].blocks[b].len() => b,
            prev => {
                if let Some((b, r)) = prev {
                    self.planes[plane].blocks[b].role = r;
                }
                let p = &mut self.planes[plane];
                let pick = (0..p.blocks.len()).rev().find(|&b| {
                    let blk = &p.blocks[b];
                    blk.is_empty()
                        && !p.active.contains(b)
                        && (p.free.contains(&b) || blk.role == BlockRole::IpsDonor)
                });
                let b = pick.ok_or(FtlError::OutOfFreeBlocks(plane))?;
                let final_role = p.blocks[b].role;
                p.free.remove(&b);
                // Aged donors keep their role but lose their frontier.
                p.blocks[b].role = BlockRole::PlainTlc;
                p.blocks[b].slc_frontier = None;
                *open = Some((b, final_role));
                b
            }
        };
        let wl = self.planes[plane].blocks[block].program_cursor;
        let slots: Vec<Option<Lpn>> = lpns.iter().map(|&l| Some(l)).collect();
        self.planes[plane].blocks[block].program(wl, ProgramMode::TlcOneShot, &slots)?;
        for (s, &lpn) in lpns.iter().enumerate() {
            self.set_location(lpn, Location::Flash(PhysAddr::new(plane, block, wl, s)));
        }
        Ok(())
    }

    // ---- invariants -------------------------------------------------------

    /// Cheap conservation check: valid slots plus live buffered pages equals
    /// mapped lpns.
    pub fn check_conservation(&self) -> Result<(), String> {
        if self.valid_total + self.buffered_live != self.map.len() {
            return Err(format!(
                "conservation: {} valid + {} buffered != {} mapped",
                self.valid_total,
                self.buffered_live,
                self.map.len()
            ));
        }
        Ok(())
    }

    /// Full scan of the device against the mapping table.
    pub fn audit(&self) -> Result<(), String> {
        let mut valid = 0usize;
        for (pi, p) in self.planes.iter().enumerate() {
            for (bi, b) in p.blocks.iter().enumerate() {
                let mut block_valid = 0;
                for (wi, wl) in b.wordlines.iter().enumerate() {
                    if wl.reprogram_count > crate::flash::MAX_REPROGRAMS {
                        return Err(format!("p{pi}/b{bi}/w{wi}: reprogram count {}", wl.reprogram_count));
                    }
                    for (si, s) in wl.slots.iter().enumerate() {
                        if let Slot::Valid(lpn) = s {
                            block_valid += 1;
                            let here = Location::Flash(PhysAddr::new(pi, bi, wi, si));
                            if self.map.get(lpn) != Some(&here) {
                                return Err(format!("lpn {lpn} valid at {here:?} but mapped elsewhere"));
                            }
                        }
                    }
                    let occupied = wl.slots.iter().filter(|s| s.is_occupied()).count();
                    let expect = match wl.mode {
                        WlMode::Erased => 0,
                        WlMode::Slc => 1,
                        WlMode::Reprog1 => 2,
                        WlMode::Tlc => 3,
                    };
                    if occupied != expect {
                        return Err(format!("p{pi}/b{bi}/w{wi}: {occupied} slots occupied in mode {:?}", wl.mode));
                    }
                }
                if block_valid != b.valid_count() {
                    return Err(format!("p{pi}/b{bi}: valid counter drift"));
                }
                if p.free.contains(&bi) && (!b.is_empty() || p.active.contains(bi)) {
                    return Err(format!("p{pi}/b{bi}: free block is programmed or active"));
                }
                valid += block_valid;
            }
            let trad: usize = p
                .blocks
                .iter()
                .filter(|b| b.role == BlockRole::TradSlc)
                .map(Block::occupied_slots)
                .sum();
            if trad != p.trad_slc_pages {
                return Err(format!("p{pi}: traditional SLC page counter drift"));
            }
        }
        let buffered = self.planes.iter().flat_map(|p| &p.tlc_buffer).filter(|e| e.live).count();
        if valid + buffered != self.map.len() {
            return Err(format!("audit: {valid} valid + {buffered} buffered != {} mapped", self.map.len()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// 1 plane, `blocks` blocks of 4 layers x 2 word lines (24 TLC pages).
    fn tiny(blocks: u32) -> GeometryConfig {
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

    fn ftl(blocks: u32, donors: usize, mode: GcMode) -> Ftl {
        Ftl::new(tiny(blocks), &TimingConfig::default(), &FtlConfig::default(), donors, mode)
    }

    fn write_tlc(f: &mut Ftl, lpn: Lpn) {
        f.host_write_commit(lpn, WriteAction::TlcProgram { plane: 0 }, lpn).unwrap();
    }

    #[test]
    fn translate_and_overwrite() {
        let mut f = ftl(4, 4, GcMode::DonorCapacity);
        assert_eq!(f.translate(5), None);
        let a = f.slc_target(0).unwrap();
        f.host_write_commit(5, WriteAction::SlcProgram(a), 0).unwrap();
        assert_eq!(f.translate(5), Some(a));
        let b = f.slc_target(0).unwrap();
        assert_ne!(a, b);
        f.host_write_commit(5, WriteAction::SlcProgram(b), 1).unwrap();
        assert_eq!(f.translate(5), Some(b));
        assert_eq!(f.slot(a), Slot::Invalid);
        f.audit().unwrap();
    }

    #[test]
    fn reprogram_path_fills_slot_one() {
        let mut f = ftl(1, 1, GcMode::DonorCapacity);
        for lpn in 0..4 {
            let a = f.slc_target(0).unwrap();
            f.host_write_commit(lpn, WriteAction::SlcProgram(a), lpn).unwrap();
        }
        assert_eq!(f.slc_target(0), None);
        let r = f.reprogram_target(0).unwrap();
        assert_eq!((r.wordline, r.slot), (0, 1));
        f.host_write_commit(3, WriteAction::Reprogram(r), 9).unwrap();
        assert_eq!(f.wordline_mode(r), WlMode::Reprog1);
        assert_eq!(f.slot(r), Slot::Valid(3));
        f.audit().unwrap();
    }

    #[test]
    fn three_tlc_writes_fill_one_wordline() {
        let mut f = ftl(4, 0, GcMode::FreeBlocks);
        write_tlc(&mut f, 3);
        write_tlc(&mut f, 4);
        assert!(matches!(f.lookup(3), Some(Location::Buffered { .. })));
        assert!(f.take_ops().is_empty());
        write_tlc(&mut f, 5);
        let a = f.translate(3).unwrap();
        assert_eq!(f.wordline_mode(a), WlMode::Tlc);
        assert_eq!((a.wordline, a.slot), (0, 0));
        assert_eq!(f.translate(5).unwrap().slot, 2);
        let ops = f.take_ops();
        assert_eq!(ops.len(), 1);
        assert_eq!(ops[0].pages.iter().map(|p| p.tag).collect::<Vec<_>>(), vec![Some(3), Some(4), Some(5)]);
        assert_eq!(ops[0].duration, ms_to_ns(3.0));
        f.audit().unwrap();
    }

    #[test]
    fn flush_pads_with_invalid() {
        let mut f = ftl(4, 0, GcMode::FreeBlocks);
        write_tlc(&mut f, 1);
        f.commit_tlc(0).unwrap();
        let a = f.translate(1).unwrap();
        let ops = f.take_ops();
        let pads = ops[0].pages.iter().filter(|p| p.category == Category::PadInvalid).count();
        assert_eq!(pads, 2);
        assert_eq!(f.slot(PhysAddr { slot: 1, ..a }), Slot::Invalid);
        f.audit().unwrap();
    }

    /// Fills blocks from the top with TLC data so they are GC candidates.
    fn fill_block(f: &mut Ftl, lpns: std::ops::Range<Lpn>) {
        for l in lpns {
            write_tlc(f, l);
        }
    }

    #[test]
    fn victim_is_min_valid_then_min_erase_count() {
        let mut f = ftl(8, 0, GcMode::FreeBlocks);
        fill_block(&mut f, 0..72); // blocks 0, 1, 2
        fill_block(&mut f, 5..24);
        fill_block(&mut f, 26..48);
        fill_block(&mut f, 55..72);
        let counts: Vec<usize> = (0..3).map(|b| f.planes[0].blocks[b].valid_count()).collect();
        assert_eq!(counts, vec![5, 2, 7]);
        assert_eq!(f.select_gc_victim(0), Some(1));
    }

    #[test]
    fn victim_tie_break_by_erase_count() {
        let mut f = ftl(3, 0, GcMode::FreeBlocks);
        fill_block(&mut f, 0..24);
        fill_block(&mut f, 24..48);
        f.planes[0].blocks[0].erase_count = 4;
        f.planes[0].blocks[1].erase_count = 1;
        // equal valid counts
        assert_eq!(f.select_gc_victim(0), Some(1));
        f.planes[0].blocks[1].erase_count = 4;
        assert_eq!(f.select_gc_victim(0), Some(0));
    }

    #[test]
    fn no_victim_on_erased_device() {
        let f = ftl(3, 0, GcMode::FreeBlocks);
        assert_eq!(f.select_gc_victim(0), None);
    }

    #[test]
    fn gc_of_empty_victim_is_one_erase() {
        let mut f = ftl(3, 0, GcMode::FreeBlocks);
        fill_block(&mut f, 0..24);
        fill_block(&mut f, 0..24);
        f.take_ops();
        let free_before = f.planes[0].free.len();
        assert_eq!(f.run_gc(0, MigrationDest::PlainTlc).unwrap(), 0);
        assert_eq!(f.planes[0].free.len(), free_before + 1);
        let ops = f.take_ops();
        assert_eq!(ops.len(), 1);
        assert_eq!(ops[0].kind, OpKind::Erase);
    }

    #[test]
    fn gc_migrates_valid_pages_then_erases() {
        let mut f = ftl(4, 0, GcMode::FreeBlocks);
        fill_block(&mut f, 0..24);
        fill_block(&mut f, 4..24);
        f.commit_tlc(0).unwrap();
        f.take_ops();
        let mapped = f.mapped_count();
        assert_eq!(f.run_gc(0, MigrationDest::PlainTlc).unwrap(), 4);
        f.commit_tlc(0).unwrap();
        let ops = f.take_ops();
        let migrated = ops
            .iter()
            .flat_map(|o| &o.pages)
            .filter(|p| p.category == Category::GcMigration)
            .count();
        assert_eq!(migrated, 4);
        assert_eq!(ops.iter().filter(|o| o.kind == OpKind::Erase).count(), 1);
        assert_eq!(f.mapped_count(), mapped);
        f.audit().unwrap();
        f.check_conservation().unwrap();
    }

    #[test]
    fn gc_without_room_fails_before_mutating() {
        let mut f = ftl(2, 0, GcMode::FreeBlocks);
        fill_block(&mut f, 0..24);
        fill_block(&mut f, 100..121);
        // No free block, one open word line, and a victim with 24 valid pages.
        assert_eq!(f.planes[0].free.len(), 0);
        let before = f.clone();
        let err = f.collect_block(0, 0, MigrationDest::PlainTlc, Category::GcMigration);
        assert_eq!(err, Err(FtlError::NoSpaceForMigration(0)));
        assert_eq!(f.planes[0].blocks, before.planes[0].blocks);
    }

    #[test]
    fn agc_drains_in_valid_plus_one_steps() {
        let mut f = ftl(4, 0, GcMode::FreeBlocks);
        fill_block(&mut f, 0..24);
        fill_block(&mut f, 2..24);
        f.commit_tlc(0).unwrap();
        assert_eq!(f.planes[0].blocks[0].valid_count(), 2);
        let r = f.agc_step(0, MigrationDest::PlainTlc).unwrap();
        assert!(matches!(r, AgcStepResult::MigratedPage { lpn: 0, .. }));
        assert_eq!(f.planes[0].blocks[0].valid_count(), 1);
        assert!(matches!(f.agc_step(0, MigrationDest::PlainTlc).unwrap(), AgcStepResult::MigratedPage { .. }));
        assert_eq!(f.agc_step(0, MigrationDest::PlainTlc).unwrap(), AgcStepResult::EraseIssued(0));
        f.commit_tlc(0).unwrap();
        f.audit().unwrap();
    }

    #[test]
    fn agc_without_victims_does_nothing() {
        let mut f = ftl(4, 0, GcMode::FreeBlocks);
        assert_eq!(f.agc_step(0, MigrationDest::PlainTlc).unwrap(), AgcStepResult::NothingToDo);
    }

    #[test]
    fn free_block_selection_by_erase_count() {
        let mut f = ftl(10, 0, GcMode::FreeBlocks);
        f.planes[0].free = [3, 9].into_iter().collect();
        f.planes[0].blocks[3].erase_count = 2;
        assert_eq!(f.pick_free_block(0, BlockRole::PlainTlc), Ok(9));
        assert_eq!(f.pick_free_block(0, BlockRole::PlainTlc), Ok(3));
        assert_eq!(f.pick_free_block(0, BlockRole::PlainTlc), Err(FtlError::OutOfFreeBlocks(0)));
    }

    #[test]
    fn erase_of_active_block_is_rejected() {
        let mut f = ftl(4, 0, GcMode::FreeBlocks);
        fill_block(&mut f, 0..3);
        let b = f.planes[0].active.plain_tlc.unwrap();
        f.planes[0].blocks[b].invalidate(0, 0);
        assert!(f.erase_block(0, b).is_err());
    }

    #[test]
    fn precondition_ages_whole_blocks() {
        let mut f = ftl(8, 8, GcMode::DonorCapacity);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        f.precondition(40, 20, &mut rng).unwrap();
        f.audit().unwrap();
        assert_eq!(f.mapped_count(), 40);
        assert_eq!(f.planes[0].blocks[7].role, BlockRole::IpsDonor);
        assert!(f.planes[0].blocks[7].is_fully_programmed());
        assert!(f.planes[0].blocks[5].is_fully_programmed());
        assert!(f.planes[0].blocks[4].is_empty());
        assert!(f.take_ops().is_empty());
        assert!(f.select_gc_victim(0).is_some());
    }

    #[test]
    fn ensure_space_restores_watermark() {
        let mut f = ftl(20, 0, GcMode::FreeBlocks);
        for l in 0..(19 * 24 + 3) {
            write_tlc(&mut f, l % 30);
        }
        assert!(f.needs_gc(0));
        assert!(f.ensure_space(0).unwrap() > 0);
        assert!(!f.needs_gc(0));
        f.audit().unwrap();
    }
}
