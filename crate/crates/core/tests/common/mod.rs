#![allow(dead_code)]

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slcsim::flash::{Block, BlockRole, GeometryConfig, Lpn, ProgramMode, Slot, TimingConfig, WlMode};
use slcsim::ftl::{Ftl, FtlConfig};
use slcsim::op::OpKind;
use slcsim::policy::{apply_idle_action, next_idle_action, route_write, PolicyError, Scheme, SchemeKind, WriteAction};
use slcsim::suites::check_quotas;

pub fn geometry(planes_per_die: u32, blocks: u32, wl_per_layer: u32, layers: u32) -> GeometryConfig {
    GeometryConfig {
        channels: 1,
        chips_per_channel: 1,
        dies_per_chip: 1,
        planes_per_die,
        blocks_per_plane: blocks,
        wordlines_per_layer: wl_per_layer,
        layers_per_block: layers,
        page_size: 4096,
    }
}

fn legal_transition(from: WlMode, to: WlMode, erased: bool) -> bool {
    use WlMode::*;
    from == to
        || matches!((from, to), (Erased, Slc) | (Slc, Reprog1) | (Reprog1, Tlc) | (Erased, Tlc))
        || (erased && to == Erased)
}

/// Structural checks on one block: occupancy per mode, reprogram budget,
/// valid counter and frontier shape.
pub fn check_block(b: &Block, wl_per_layer: usize) -> Result<(), String> {
    let mut valid = 0;
    for (i, wl) in b.wordlines.iter().enumerate() {
        if wl.reprogram_count > 4 {
            return Err(format!("wl {i}: reprogram count {}", wl.reprogram_count));
        }
        let occupied = wl.slots.iter().filter(|s| s.is_occupied()).count();
        let expect = match wl.mode {
            WlMode::Erased => 0,
            WlMode::Slc => 1,
            WlMode::Reprog1 => 2,
            WlMode::Tlc => 3,
        };
        if occupied != expect || wl.slots[..occupied].contains(&Slot::Free) {
            return Err(format!("wl {i}: slots {:?} in mode {:?}", wl.slots, wl.mode));
        }
        valid += wl.valid_count();
        if i >= b.program_cursor && wl.mode != WlMode::Erased {
            return Err(format!("wl {i} programmed at or above cursor {}", b.program_cursor));
        }
        if i < b.program_cursor && wl.mode == WlMode::Erased {
            return Err(format!("wl {i} erased below cursor {}", b.program_cursor));
        }
    }
    if valid != b.valid_count() {
        return Err(format!("valid counter {} but {valid} valid slots", b.valid_count()));
    }
    if let Some(pair) = b.slc_frontier {
        if b.role != BlockRole::IpsDonor {
            return Err("frontier on a non-donor block".into());
        }
        let wpp = 2 * wl_per_layer;
        for (i, wl) in b.wordlines.iter().enumerate() {
            let p = i / wpp;
            if p < pair && wl.mode != WlMode::Tlc {
                return Err(format!("wl {i} below frontier {pair} is {:?}", wl.mode));
            }
            if p > pair && wl.mode != WlMode::Erased {
                return Err(format!("wl {i} above frontier {pair} is {:?}", wl.mode));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FuzzStats {
    pub accepted: usize,
    pub rejected: usize,
    pub reprograms: usize,
    pub erases: usize,
    pub advances: usize,
    pub device_full: usize,
}

/// Random legal and illegal operations on a set of raw blocks, with a
/// shadow mapping kept by the harness. Rejected operations must leave the
/// block untouched.
pub fn flash_fuzz(seed: u64, steps: usize) -> Result<FuzzStats, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wpl = 2;
    let g = geometry(1, 6, wpl as u32, 6);
    let wpp = g.wordlines_per_pair();
    let mut blocks: Vec<Block> = (0..6)
        .map(|i| Block::new(&g, if i % 2 == 0 { BlockRole::IpsDonor } else { BlockRole::PlainTlc }))
        .collect();
    let mut map: HashMap<Lpn, (usize, usize, usize)> = HashMap::new();
    let mut last_programmed: Vec<Option<usize>> = vec![None; blocks.len()];
    let mut next_lpn: Lpn = 0;
    let mut stats = FuzzStats::default();

    for step in 0..steps {
        let b = rng.gen_range(0..blocks.len());
        let before = blocks[b].clone();
        let op = rng.gen_range(0..100);
        let legal_bias = rng.gen_bool(0.85);
        let mut erased = false;
        let res: Result<(), String> = match op {
            0..=39 => {
                let wl = if legal_bias { before.program_cursor } else { rng.gen_range(0..before.len() + 1) };
                let mode = if rng.gen_bool(0.5) { ProgramMode::Slc } else { ProgramMode::TlcOneShot };
                let n = match mode {
                    ProgramMode::Slc => 1,
                    ProgramMode::TlcOneShot => rng.gen_range(1..=3),
                };
                let lpns: Vec<Option<Lpn>> = (0..n)
                    .map(|_| {
                        if rng.gen_bool(0.1) {
                            None
                        } else {
                            next_lpn += 1;
                            Some(next_lpn)
                        }
                    })
                    .collect();
                match blocks[b].program(wl, mode, &lpns) {
                    Ok(()) => {
                        if let Some(prev) = last_programmed[b] {
                            if wl <= prev {
                                return Err(format!("step {step}: program of wl {wl} after {prev}"));
                            }
                        }
                        last_programmed[b] = Some(wl);
                        for (s, l) in lpns.iter().enumerate() {
                            if let Some(l) = l {
                                map.insert(*l, (b, wl, s));
                            }
                        }
                        Ok(())
                    }
                    Err(e) => Err(e.to_string()),
                }
            }
            40..=69 => {
                let wl = match (legal_bias, before.next_reprogram_wordline()) {
                    (true, Some(w)) => w,
                    _ => rng.gen_range(0..before.len()),
                };
                next_lpn += 1;
                let lpn = next_lpn;
                match blocks[b].reprogram(wl, lpn) {
                    Ok(slot) => {
                        let pair = before.slc_frontier.ok_or(format!("step {step}: reprogram without frontier"))?;
                        if wl / wpp != pair {
                            return Err(format!("step {step}: reprogram of wl {wl} outside frontier pair {pair}"));
                        }
                        map.insert(lpn, (b, wl, slot));
                        stats.reprograms += 1;
                        Ok(())
                    }
                    Err(e) => Err(e.to_string()),
                }
            }
            70..=79 => match blocks[b].advance_frontier() {
                Ok(_) => {
                    stats.advances += 1;
                    Ok(())
                }
                Err(e) => Err(e.to_string()),
            },
            80..=94 => {
                // Overwrite or trim of a random mapped page.
                if let Some(&lpn) = map.keys().nth(rng.gen_range(0..map.len().max(1)).min(map.len().saturating_sub(1))) {
                    let (blk, wl, slot) = map.remove(&lpn).unwrap();
                    if blocks[blk].invalidate(wl, slot) != Some(lpn) {
                        return Err(format!("step {step}: invalidate of lpn {lpn} failed"));
                    }
                }
                Ok(())
            }
            _ => {
                if rng.gen_bool(0.5) || before.is_fully_programmed() {
                    map.retain(|_, v| v.0 != b);
                    blocks[b].erase();
                    last_programmed[b] = None;
                    erased = true;
                    stats.erases += 1;
                    if before.is_empty() && rng.gen_bool(0.5) {
                        let role = [BlockRole::IpsDonor, BlockRole::TradSlc, BlockRole::PlainTlc][rng.gen_range(0..3)];
                        blocks[b].assign_role(role);
                    }
                }
                Ok(())
            }
        };
        match res {
            Ok(()) => stats.accepted += 1,
            Err(_) => {
                stats.rejected += 1;
                if blocks[b] != before {
                    return Err(format!("step {step}: rejected op changed block {b}"));
                }
            }
        }
        for (i, (w, o)) in blocks[b].wordlines.iter().zip(&before.wordlines).enumerate() {
            if !legal_transition(o.mode, w.mode, erased) {
                return Err(format!("step {step}: wl {i} went {:?} -> {:?}", o.mode, w.mode));
            }
        }
        if erased && blocks[b].erase_count != before.erase_count + 1 {
            return Err(format!("step {step}: erase count not bumped"));
        }
        for (i, blk) in blocks.iter().enumerate() {
            check_block(blk, wpl).map_err(|e| format!("step {step}: block {i}: {e}"))?;
        }
        let valid: usize = blocks.iter().map(Block::valid_count).sum();
        if valid != map.len() {
            return Err(format!("step {step}: {valid} valid slots vs {} mapped lpns", map.len()));
        }
        for (lpn, &(blk, wl, slot)) in &map {
            if blocks[blk].wordlines[wl].slots[slot] != Slot::Valid(*lpn) {
                return Err(format!("step {step}: lpn {lpn} not valid at its address"));
            }
        }
    }
    Ok(stats)
}

/// Which write actions each scheme may take in the given state.
pub fn route_invariant(kind: SchemeKind, ftl: &Ftl, plane: usize, action: WriteAction) -> Result<(), String> {
    let p = &ftl.planes[plane];
    match (kind, action) {
        (SchemeKind::Baseline, WriteAction::Reprogram(_) | WriteAction::TradSlcProgram(_)) => {
            Err(format!("baseline chose {action:?}"))
        }
        (SchemeKind::Ips | SchemeKind::IpsAgc, WriteAction::TradSlcProgram(_) | WriteAction::TlcProgram { .. }) => {
            Err(format!("{kind} chose {action:?}"))
        }
        (SchemeKind::Coop, WriteAction::TradSlcProgram(_)) if p.ips_free_slc_pages() > 0 => {
            Err(format!("coop went traditional with {} free IPS SLC pages", p.ips_free_slc_pages()))
        }
        _ => Ok(()),
    }
}

/// Random host writes, reads, idle actions and flushes through the FTL and
/// policy layer, with a full device audit after every step.
pub fn ftl_fuzz(seed: u64, steps: usize, kind: SchemeKind, footprint_pct: u64) -> Result<FuzzStats, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = GeometryConfig { channels: 2, ..geometry(1, 12, 2, 4) };
    let scheme = Scheme::preset(kind, &g);
    let mut ftl = Ftl::new(g, &TimingConfig::default(), &FtlConfig::default(), scheme.ips_donor_blocks, scheme.gc_mode());
    let footprint = (ftl.logical_pages() * footprint_pct / 100).max(1);
    let planes = g.planes();
    let wpp = g.wordlines_per_pair();
    let mut stats = FuzzStats::default();
    let mut next_plane = 0;
    for step in 0..steps {
        let snapshot: Vec<Vec<(Option<usize>, u64, usize)>> = ftl
            .planes
            .iter()
            .map(|p| p.blocks.iter().map(|b| (b.slc_frontier, b.erase_count, b.program_cursor)).collect())
            .collect();
        let op = rng.gen_range(0..100);
        let ok = match op {
            0..=59 => {
                let plane = next_plane;
                next_plane = (next_plane + 1) % planes;
                ftl.ensure_space(plane).map_err(|e| format!("step {step}: ensure_space: {e}"))?;
                match route_write(&scheme, &ftl, plane) {
                    Ok(action) => {
                        route_invariant(kind, &ftl, plane, action).map_err(|e| format!("step {step}: {e}"))?;
                        let lpn = rng.gen_range(0..footprint);
                        ftl.host_write_commit(lpn, action, step as u64).map_err(|e| format!("step {step}: {e}"))?;
                        true
                    }
                    Err(PolicyError::DeviceFull(_)) => {
                        stats.device_full += 1;
                        false
                    }
                    Err(e) => return Err(format!("step {step}: {e}")),
                }
            }
            60..=64 => {
                ftl.read(rng.gen_range(0..footprint));
                true
            }
            65..=94 => {
                let plane = rng.gen_range(0..planes);
                match next_idle_action(&scheme, &ftl, plane) {
                    Some(a) => {
                        apply_idle_action(&mut ftl, plane, a).map_err(|e| format!("step {step}: {a:?}: {e}"))?;
                        true
                    }
                    None => false,
                }
            }
            _ => {
                ftl.commit_tlc(rng.gen_range(0..planes)).map_err(|e| format!("step {step}: flush: {e}"))?;
                true
            }
        };
        if ok {
            stats.accepted += 1;
        } else {
            stats.rejected += 1;
        }
        for op in ftl.take_ops() {
            match op.kind {
                OpKind::Erase => stats.erases += 1,
                OpKind::Reprogram => {
                    for p in &op.pages {
                        let d = p.dst.ok_or("reprogram without destination")?;
                        let (pl, bl, wl) = (d.plane as usize, d.block as usize, d.wordline as usize);
                        let (front, erases, _) = snapshot[pl][bl];
                        let now = &ftl.planes[pl].blocks[bl];
                        if now.erase_count != erases {
                            continue;
                        }
                        let lo = front.ok_or(format!("step {step}: reprogram into block without frontier"))?;
                        let hi = now.slc_frontier.unwrap_or(now.pairs() - 1);
                        let pair = wl / wpp;
                        if pair < lo || pair > hi || now.role != BlockRole::IpsDonor {
                            return Err(format!("step {step}: reprogram of {d} outside frontier window {lo}..={hi}"));
                        }
                        stats.reprograms += 1;
                    }
                }
                OpKind::SlcProgram | OpKind::TlcProgram => {
                    for p in &op.pages {
                        let Some(d) = p.dst else { continue };
                        let (pl, bl) = (d.plane as usize, d.block as usize);
                        let (_, erases, cursor) = snapshot[pl][bl];
                        if ftl.planes[pl].blocks[bl].erase_count == erases && (d.wordline as usize) < cursor {
                            return Err(format!("step {step}: program of {d} below cursor {cursor}"));
                        }
                    }
                }
                _ => {}
            }
        }
        for (pi, p) in ftl.planes.iter().enumerate() {
            for (bi, b) in p.blocks.iter().enumerate() {
                check_block(b, 2).map_err(|e| format!("step {step}: p{pi}/b{bi}: {e}"))?;
                let (_, erases, cursor) = snapshot[pi][bi];
                if b.erase_count == erases && b.program_cursor < cursor {
                    return Err(format!("step {step}: p{pi}/b{bi} cursor went back"));
                }
            }
        }
        ftl.audit().map_err(|e| format!("step {step}: {e}"))?;
        check_quotas(&ftl, &scheme).map_err(|e| format!("step {step}: {e}"))?;
    }
    Ok(stats)
}
