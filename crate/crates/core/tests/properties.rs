use std::collections::HashSet;

use kittensim::grid::*;
use kittensim::layouts::{check_bijective, SharedLayout, SwizzleMode};
use kittensim::lcsf::{simulate_timed, LatencyProfile, PipelineConfig, SimOptions, Workload};
use kittensim::machine::{estimate_cost, preset_h100, CostTerm, WorkProfile};
use proptest::prelude::*;

fn work() -> impl Strategy<Value = WorkProfile> {
    let q = || prop_oneof![Just(0.0), 0.0..1e12f64];
    (q(), q(), q(), q(), q(), q(), q(), q(), 0.0..200.0f64, 0.0..1e4f64).prop_map(|t| WorkProfile {
        bytes_hbm: t.0,
        bytes_l2: t.1,
        bytes_l1: t.2,
        bytes_shared: t.3,
        ops_tensor: t.4,
        ops_alu: t.5,
        ops_fma: t.6,
        ops_xu: t.7,
        num_setups: t.8,
        num_syncs: t.9,
    })
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-30)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn cost_is_max_plus_overhead(w in work()) {
        let c = estimate_cost(&w, &preset_h100()).unwrap();
        let max = CostTerm::TIE_ORDER.iter().map(|&t| c.terms.get(t)).fold(0.0, f64::max);
        prop_assert!(close(c.overall, max + c.terms.overhead()));
        prop_assert_eq!(c.terms.get(c.bound_by), max);
        prop_assert!(c.overall <= c.sum * (1.0 + 1e-12));
    }

    #[test]
    fn cost_is_monotone(w in work(), field in 0usize..10, extra in 0.0..1e12f64) {
        let m = preset_h100();
        let mut more = w;
        let slot = [
            &mut more.bytes_hbm, &mut more.bytes_l2, &mut more.bytes_l1, &mut more.bytes_shared,
            &mut more.ops_tensor, &mut more.ops_alu, &mut more.ops_fma, &mut more.ops_xu,
            &mut more.num_setups, &mut more.num_syncs,
        ];
        *slot.into_iter().nth(field).unwrap() += extra;
        prop_assert!(estimate_cost(&more, &m).unwrap().overall >= estimate_cost(&w, &m).unwrap().overall);
    }

    #[test]
    fn cost_scales_inversely_with_rates(w in work(), f in 0.1..10.0f64) {
        let m = preset_h100();
        let base = estimate_cost(&w, &m).unwrap();
        let fast = estimate_cost(&w, &m.scaled_rates(f)).unwrap();
        let bmax = base.overall - base.terms.overhead();
        let fmax = fast.overall - fast.terms.overhead();
        prop_assert!(close(fmax * f, bmax));
        prop_assert!(close(fast.terms.overhead(), base.terms.overhead()));
    }

    #[test]
    fn attention_orders_are_permutations(b in 1usize..6, h in 1usize..6, n in 1usize..6, perm in 0usize..6) {
        let all = ["NHB", "NBH", "HNB", "HBN", "BNH", "BHN"];
        let order = BlockOrder::Attention { batch: b, heads: h, seq_blocks: n, axes: parse_axes(all[perm]).unwrap() };
        let blocks = order.blocks().unwrap();
        prop_assert_eq!(blocks.len(), b * h * n);
        prop_assert_eq!(blocks.iter().collect::<HashSet<_>>().len(), b * h * n);
    }

    #[test]
    fn unbounded_cache_misses_are_compulsory(
        blocks in prop::collection::vec(prop::collection::vec((0u64..64, 1u64..300), 1..6), 1..8),
        wave in 1usize..5,
        seed in any::<u64>(),
    ) {
        let fps: Vec<Vec<TileAccess>> = blocks
            .iter()
            .map(|b| b.iter().map(|&(line, len)| TileAccess::read(vec![(line * 128 + 7, len)])).collect())
            .collect();
        let mut distinct = HashSet::new();
        for b in &blocks {
            for &(line, len) in b {
                let start = line * 128 + 7;
                for l in start / 128..=(start + len - 1) / 128 {
                    distinct.insert(l);
                }
            }
        }
        for interleave in [Interleave::RoundRobin, Interleave::Shuffled { seed }] {
            let r = simulate_l2(&fps, &L2Config::unbounded(128), &Replay { wave_blocks: wave, interleave }).unwrap();
            prop_assert_eq!(r.l2_misses, distinct.len() as u64);
            prop_assert_eq!(r.hbm_bytes, r.l2_misses * 128);
            prop_assert_eq!(r.block_misses.iter().sum::<u64>(), r.l2_misses);
        }
    }

    #[test]
    fn hbm_bytes_identity_with_small_caches(
        blocks in prop::collection::vec(prop::collection::vec(0u64..40, 1..10), 1..8),
        lines in 1u64..16,
        ways in prop_oneof![Just(None), Just(Some(1u64)), Just(Some(2u64))],
    ) {
        let fps: Vec<Vec<TileAccess>> = blocks
            .iter()
            .map(|b| b.iter().map(|&l| TileAccess::read(vec![(l * 64, 64)])).collect())
            .collect();
        let mut cfg = L2Config::fully_associative(lines * 64, 64);
        if let Some(w) = ways {
            if lines % w == 0 {
                cfg.ways = Some(w);
            }
        }
        let r = simulate_l2(&fps, &cfg, &Replay { wave_blocks: 3, interleave: Interleave::RoundRobin }).unwrap();
        prop_assert_eq!(r.hbm_bytes, r.l2_misses * 64);
        prop_assert_eq!(r.l2_hits + r.l2_misses, blocks.iter().map(Vec::len).sum::<usize>() as u64);
    }

    #[test]
    fn one_line_cache_never_hits_without_reuse(lines in prop::collection::vec(0u64..8, 1..40)) {
        let mut seq = lines.clone();
        seq.dedup();
        let fps = vec![seq.iter().map(|&l| TileAccess::read(vec![(l * 128, 128)])).collect::<Vec<_>>()];
        let r = simulate_l2(&fps, &L2Config::fully_associative(128, 128), &Replay { wave_blocks: 1, interleave: Interleave::RoundRobin }).unwrap();
        prop_assert_eq!(r.l2_hits, 0);
    }

    #[test]
    fn deeper_pipelines_never_slow_down(
        load in 1e-7..1e-5f64,
        compute in 1e-7..1e-5f64,
        iters in 1usize..40,
        consumers in 1usize..4,
    ) {
        let p = LatencyProfile::new(load, compute);
        let w = Workload::single_task(iters);
        let mut prev = f64::INFINITY;
        for stages in 1..=5 {
            let t = simulate_timed(&w, &PipelineConfig::lcsf(consumers, 1, stages), &p, &SimOptions::default()).unwrap();
            prop_assert!(t.makespan <= prev * (1.0 + 1e-12), "stages {} makespan {} > {}", stages, t.makespan, prev);
            prev = t.makespan;
        }
    }

    #[test]
    fn persistent_never_loses(tasks in 1usize..2000, sms in 1usize..200, per_task in 1e-7..1e-3f64, setup in 0.0..1e-4f64) {
        let r = persistent_assign(tasks, sms, per_task, setup).unwrap();
        prop_assert!(r.makespan_persistent <= r.makespan_relaunch * (1.0 + 1e-12));
        let mut all: Vec<usize> = r.per_sm.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..tasks).collect::<Vec<_>>());
    }

    #[test]
    fn swizzled_layouts_are_bijective(r in 1usize..9, c in 1usize..9, wide in any::<bool>(), m in 0usize..4) {
        let (rows, cols, eb) = (r * 8, c * 16, if wide { 4 } else { 2 });
        let mode = [SwizzleMode::Sw32, SwizzleMode::Sw64, SwizzleMode::Sw128, SwizzleMode::RowXor][m];
        if let Ok(layout) = SharedLayout::new(rows, cols, eb, mode) {
            prop_assert!(check_bijective(&layout));
        }
    }
}

#[test]
fn block_orders_exhaustive_small_extents() {
    for rows in 1..=16 {
        for cols in 1..=16 {
            let rm = BlockOrder::RowMajor { rows, cols }.blocks().unwrap();
            assert_eq!(rm.iter().collect::<HashSet<_>>().len(), rows * cols);
            for super_m in 1..=16 {
                let order = supergroup_order(rows, cols, super_m).unwrap();
                assert_eq!(order.len(), rows * cols);
                assert_eq!(
                    order.iter().collect::<HashSet<_>>().len(),
                    rows * cols,
                    "{rows}x{cols} group {super_m}"
                );
                assert!(order.iter().all(|&(r, c)| r < rows && c < cols));
            }
        }
    }
}
