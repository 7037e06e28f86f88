mod common;

use proptest::prelude::*;
use slcsim::flash::*;

/// Counts pages by walking every plane, block, word line and slot.
fn enumerate_capacity(g: &GeometryConfig, mode: CapacityMode) -> u64 {
    let mut pages = 0u64;
    for _plane in 0..g.planes() {
        for _block in 0..g.blocks_per_plane {
            for layer in 0..g.layers_per_block {
                for _wl in 0..g.wordlines_per_layer {
                    pages += match mode {
                        CapacityMode::Tlc => SLOTS_PER_WORDLINE as u64,
                        CapacityMode::SlcWholeBlock => 1,
                        CapacityMode::IpsTwoLayer => u64::from(layer < 2),
                    };
                }
            }
        }
    }
    pages * g.page_size
}

fn small_geometry() -> impl Strategy<Value = GeometryConfig> {
    (1u32..3, 1u32..3, 1u32..3, 1u32..3, 1u32..9, 1u32..4, 1u32..5, 9u32..14).prop_map(
        |(channels, chips, dies, planes, blocks, wpl, layer_pairs, page_shift)| GeometryConfig {
            channels,
            chips_per_channel: chips,
            dies_per_chip: dies,
            planes_per_die: planes,
            blocks_per_plane: blocks,
            wordlines_per_layer: wpl,
            layers_per_block: 2 * layer_pairs,
            page_size: 1 << page_shift,
        },
    )
}

proptest! {
    #[test]
    fn capacity_matches_enumeration(g in small_geometry()) {
        prop_assert!(g.validate().is_ok());
        for mode in [CapacityMode::Tlc, CapacityMode::SlcWholeBlock, CapacityMode::IpsTwoLayer] {
            prop_assert_eq!(capacity_of(&g, mode), enumerate_capacity(&g, mode));
        }
    }

    #[test]
    fn flash_fuzz_holds_invariants(seed in any::<u64>()) {
        let stats = common::flash_fuzz(seed, 2_000).map_err(TestCaseError::fail)?;
        prop_assert!(stats.accepted > 0);
    }

    #[test]
    fn wordline_transitions_are_legal(ops in proptest::collection::vec(0u8..4, 1..40)) {
        let mut wl = WordLine::default();
        let mut reprograms = 0u8;
        for (i, op) in ops.into_iter().enumerate() {
            let before = wl.clone();
            let lpn = i as Lpn;
            let res = match op {
                0 => wl.program(ProgramMode::Slc, &[Some(lpn)]).map(|_| ()),
                1 => wl.program(ProgramMode::TlcOneShot, &[Some(lpn), None]).map(|_| ()),
                2 => wl.reprogram(lpn).map(|_| ()),
                _ => {
                    wl = WordLine::default();
                    reprograms = 0;
                    Ok(())
                }
            };
            if res.is_err() {
                prop_assert_eq!(&wl, &before);
            } else if op == 2 {
                reprograms += 1;
                prop_assert_eq!(wl.slots[0], before.slots[0]);
            }
            prop_assert!(wl.reprogram_count <= MAX_REPROGRAMS);
            prop_assert_eq!(wl.reprogram_count, reprograms);
            prop_assert!(reprograms <= 2, "a word line takes at most two reprograms per erase");
        }
    }
}

#[test]
fn full_ips_cache_is_4_gib_by_scaled_enumeration() {
    // Enumerate a geometry that keeps the per-block layout but shrinks the
    // block and plane counts, then scale by the remaining factor.
    let full = GeometryConfig::full();
    let scaled = GeometryConfig { channels: 1, chips_per_channel: 1, dies_per_chip: 1, planes_per_die: 1, blocks_per_plane: 2, ..full };
    let per_block = enumerate_capacity(&scaled, CapacityMode::IpsTwoLayer) / 2;
    let blocks = full.planes() as u64 * full.blocks_per_plane as u64;
    assert_eq!(per_block * blocks, 4 << 30);
    assert_eq!(capacity_of(&full, CapacityMode::IpsTwoLayer), 4 << 30);
    let per_block_tlc = enumerate_capacity(&scaled, CapacityMode::Tlc) / 2;
    assert_eq!(per_block_tlc * blocks, 384 << 30);
}

#[test]
fn odd_layer_count_still_has_tlc_capacity() {
    // 1 plane, 2 blocks, 3 layers x 2 word lines: not a valid IPS geometry,
    // but the TLC count is plain arithmetic.
    let g = GeometryConfig { layers_per_block: 3, ..common::geometry(1, 2, 2, 4) };
    assert!(g.validate().is_err());
    assert_eq!(capacity_of(&g, CapacityMode::Tlc), 144 * 1024);
    assert_eq!(enumerate_capacity(&g, CapacityMode::Tlc), 144 * 1024);
}

fn fill_pair_with_tlc(b: &mut Block, pair: usize, next: &mut Lpn) {
    for wl in b.pair_range(pair) {
        b.program(wl, ProgramMode::Slc, &[Some(*next)]).unwrap();
        *next += 1;
    }
    while let Some(wl) = b.next_reprogram_wordline() {
        b.reprogram(wl, *next).unwrap();
        *next += 1;
    }
}

#[test]
fn frontier_lifecycle_on_four_layer_block() {
    let g = common::geometry(1, 1, 2, 4);
    let mut b = Block::new(&g, BlockRole::IpsDonor);
    let mut next = 0;
    assert_eq!(b.slc_frontier, Some(0));
    fill_pair_with_tlc(&mut b, 0, &mut next);
    assert_eq!(b.advance_frontier(), Ok(FrontierAdvance::NewFrontier(1)));
    // Pair 1 with one SLC word line is not ready.
    b.program(4, ProgramMode::Slc, &[Some(100)]).unwrap();
    assert_eq!(b.advance_frontier(), Err(FlashError::FrontierNotFullyReprogrammed));
    for wl in 5..8 {
        b.program(wl, ProgramMode::Slc, &[Some(100 + wl as Lpn)]).unwrap();
    }
    while let Some(wl) = b.next_reprogram_wordline() {
        b.reprogram(wl, next).unwrap();
        next += 1;
    }
    assert_eq!(b.advance_frontier(), Ok(FrontierAdvance::BlockExhausted));
    assert!(b.is_fully_programmed());
    assert_eq!(b.valid_count(), 24);
    // Two SLC word lines absorb four operations to become two TLC word lines.
    assert!(b.wordlines.iter().all(|w| w.mode == WlMode::Tlc && w.reprogram_count == 2));
}

#[test]
fn erase_mid_frontier_resets_to_pair_zero() {
    let g = common::geometry(1, 1, 2, 4);
    let mut b = Block::new(&g, BlockRole::IpsDonor);
    let mut next = 0;
    fill_pair_with_tlc(&mut b, 0, &mut next);
    b.advance_frontier().unwrap();
    b.program(4, ProgramMode::Slc, &[Some(99)]).unwrap();
    b.erase_count = 3;
    b.erase();
    assert_eq!(b.slc_frontier, Some(0));
    assert_eq!(b.erase_count, 4);
    assert_eq!(b.program_cursor, 0);
    assert!(b.wordlines.iter().all(|w| *w == WordLine::default()));
}

#[test]
fn reprogram_rules_on_blocks() {
    let g = common::geometry(1, 1, 2, 4);
    let mut plain = Block::new(&g, BlockRole::PlainTlc);
    plain.program(0, ProgramMode::Slc, &[Some(1)]).unwrap();
    assert_eq!(plain.reprogram(0, 2), Err(FlashError::ReprogramOutsideFrontier(0)));
    assert_eq!(plain.program(2, ProgramMode::Slc, &[Some(3)]), Err(FlashError::OutOfOrderProgram { wordline: 2, cursor: 1 }));

    let mut donor = Block::new(&g, BlockRole::IpsDonor);
    for wl in 0..4 {
        donor.program(wl, ProgramMode::Slc, &[Some(wl as Lpn)]).unwrap();
    }
    assert_eq!(donor.program(4, ProgramMode::Slc, &[Some(9)]), Err(FlashError::SlcOutsideFrontier(4)));
    assert_eq!(donor.reprogram(1, 10), Ok(1));
    assert_eq!(donor.reprogram(1, 11), Ok(2));
    assert_eq!(donor.reprogram(1, 12), Err(FlashError::ReprogramOnFullTlc));
    assert_eq!(donor.wordlines[1].slots, [Slot::Valid(1), Slot::Valid(10), Slot::Valid(11)]);
}
