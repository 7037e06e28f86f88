//! Physical operations emitted by the FTL and the write categories they are
//! accounted under.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::flash::{Lpn, PhysAddr};

/// Nanoseconds of simulated time.
pub type Nanos = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    SlcWrite,
    ReprogramWrite,
    TlcWrite,
    TradSlcWrite,
    Slc2Tlc,
    GcMigration,
    AgcMigration,
    PadInvalid,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::SlcWrite,
        Category::ReprogramWrite,
        Category::TlcWrite,
        Category::TradSlcWrite,
        Category::Slc2Tlc,
        Category::GcMigration,
        Category::AgcMigration,
        Category::PadInvalid,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Counted as a host write (one per host page).
    pub fn is_host(self) -> bool {
        matches!(
            self,
            Category::SlcWrite | Category::ReprogramWrite | Category::TlcWrite | Category::TradSlcWrite
        )
    }

    /// Carries data, i.e. counts towards write amplification.
    pub fn carries_data(self) -> bool {
        self != Category::PadInvalid
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::SlcWrite => "slc_write",
            Category::ReprogramWrite => "reprogram_write",
            Category::TlcWrite => "tlc_write",
            Category::TradSlcWrite => "trad_slc_write",
            Category::Slc2Tlc => "slc2tlc",
            Category::GcMigration => "gc_migration",
            Category::AgcMigration => "agc_migration",
            Category::PadInvalid => "pad_invalid",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpKind {
    SlcProgram,
    Reprogram,
    TlcProgram,
    Erase,
    /// Host read of a mapped page.
    Read,
    /// Read half of a migration.
    InternalRead,
}

/// One page carried by a program operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageWrite {
    pub lpn: Option<Lpn>,
    pub category: Category,
    /// Where migrated data came from.
    pub src: Option<PhysAddr>,
    /// Final physical location; `None` while the page sits in the TLC
    /// word-line buffer.
    pub dst: Option<PhysAddr>,
    /// Host write tag when this page is host data.
    pub tag: Option<u64>,
    /// Position in FTL mutation order.
    pub seq: u64,
}

/// A unit of plane occupancy produced by the FTL.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlashOp {
    pub plane: usize,
    pub kind: OpKind,
    pub duration: Nanos,
    pub pages: Vec<PageWrite>,
    /// Erased block, or the block read from.
    pub block: Option<usize>,
    /// Position in FTL mutation order.
    pub seq: u64,
}

impl FlashOp {
    pub fn new(plane: usize, kind: OpKind, duration: Nanos) -> Self {
        Self { plane, kind, duration, pages: Vec::new(), block: None, seq: 0 }
    }
}

pub fn ms_to_ns(ms: f64) -> Nanos {
    (ms * 1e6).round() as Nanos
}

pub fn ns_to_ms(ns: Nanos) -> f64 {
    ns as f64 / 1e6
}
