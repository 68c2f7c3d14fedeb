mod common;

use std::collections::HashMap;
use std::path::Path;

use common::{to_events, RefCbs, ROWS};
use mithril_core::bounds::{
    compute_m, compute_m_adaptive, compute_n_star, compute_w, find_min_nentry, intervals_per_window, is_safe,
    BlastRadius, MithrilConfig, SearchOutcome,
};
use mithril_core::oracle::{verify_mithril, VerifyOptions, ViolationKind};
use mithril_core::parfm::{fail_single_row, FailureModel};
use mithril_core::tracker::wrapped_compare;
use mithril_core::workload::{parse_trace, write_trace, TraceLimits};
use mithril_core::{MithrilTable, Row, TimingParams, WorkloadSpec};
use proptest::prelude::*;

fn small_trace(max_row: u32, max_len: usize) -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(1..max_row, 1..max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn wrapped_compare_matches_unbounded(bits in 2u32..=20, a in 0u64..1_000_000, d in 0u64..(1 << 19)) {
        let half = 1u64 << (bits - 1);
        let d = d % half;
        let b = a + d;
        let m = (1u64 << bits) - 1;
        let (wa, wb) = ((a & m) as u32, (b & m) as u32);
        prop_assert_eq!(wrapped_compare(wb, wa, bits), b.cmp(&a));
        prop_assert_eq!(wrapped_compare(wa, wb, bits), a.cmp(&b));
    }

    #[test]
    fn table_invariants_hold_with_unbounded_actuals(
        n in 2u32..12,
        r in 1u32..16,
        ad in prop_oneof![Just(0u32), 1u32..30],
        rows in small_trace(40, 3_000),
    ) {
        let mut table = MithrilTable::with_rows(n, 20, ROWS).unwrap();
        // Actual ACTs since the row last got a preventive refresh.
        let mut actual: HashMap<u32, u64> = HashMap::new();
        for (i, &row) in rows.iter().enumerate() {
            table.on_activate(Row(row));
            *actual.entry(row).or_default() += 1;
            if (i + 1) % r as usize == 0 {
                let d = table.on_rfm(ad, BlastRadius::One);
                if d.refreshed {
                    actual.remove(&d.aggressor.unwrap().0);
                }
            }
            prop_assert!(table.check_invariants().is_ok(), "{:?}", table.check_invariants());
            let min = table.shadow_min();
            for (&row, &a) in &actual {
                let est = table.shadow_estimate(Row(row));
                prop_assert!(a <= est, "row {} actual {} > estimate {}", row, a, est);
                prop_assert!(est - min <= a, "row {} estimate {} - min {} > actual {}", row, est, min, a);
            }
        }
    }

    #[test]
    fn table_agrees_with_reference(n in 2u32..10, r in 1u32..12, ad in 0u32..20, rows in small_trace(30, 2_000)) {
        let mut table = MithrilTable::with_rows(n, 20, ROWS).unwrap();
        let mut reference = RefCbs::new(n as usize, 20);
        for (i, &row) in rows.iter().enumerate() {
            table.on_activate(Row(row));
            reference.act(row);
            if (i + 1) % r as usize == 0 {
                let d = table.on_rfm(ad, BlastRadius::One);
                let got = if d.refreshed { d.aggressor.map(|x| x.0) } else { None };
                prop_assert_eq!(got, reference.rfm(ad));
            }
            prop_assert!(common::table_matches(&table, &reference).is_ok());
        }
    }

    /// Sorted shadow counts taken right after each RFM: the maximum never
    /// drops and the minimum is non-decreasing from one RFM to the next.
    #[test]
    fn min_is_monotone_across_intervals(n in 2u32..10, r in 1u32..10, rows in small_trace(50, 2_000)) {
        let mut table = MithrilTable::with_rows(n, 20, ROWS).unwrap();
        let mut prev_min = 0;
        for (i, &row) in rows.iter().enumerate() {
            table.on_activate(Row(row));
            if (i + 1) % r as usize == 0 {
                let before_max = table.shadow_max();
                let before_min = table.shadow_min();
                table.on_rfm(0, BlastRadius::One);
                prop_assert_eq!(table.shadow_min(), before_min);
                prop_assert!(table.shadow_max() <= before_max);
                prop_assert!(table.shadow_min() >= prev_min);
                prev_min = table.shadow_min();
            }
        }
    }

    #[test]
    fn adaptive_bound_dominates_plain(n in 1u32..5_000, r in 1u32..512, ad in 0u32..2_000) {
        let t = TimingParams::ddr5_32ms();
        let m = compute_m(n, r, &t).unwrap();
        let cfg = MithrilConfig::new(n, r, ad, 1_000, 1).unwrap();
        let mp = compute_m_adaptive(&cfg, &t).unwrap();
        prop_assert!(mp >= m - 1e-9 * m.abs(), "M' {} < M {}", mp, m);
        let ns = compute_n_star(n, r, ad).unwrap();
        prop_assert!(ns >= 1 && ns <= n);
        if ad == 0 {
            prop_assert_eq!(ns, n);
        }
    }

    #[test]
    fn w_is_ceiling_of_x(r in 1u32..2_048, refw_ms in prop_oneof![Just(32u64), Just(64u64)]) {
        let t = TimingParams::ddr5(refw_ms);
        let w = compute_w(&t, r).unwrap();
        let x = intervals_per_window(&t, r).unwrap();
        prop_assert!((w as f64) >= x && (w as f64) < x + 1.0);
        let avail = t.t_refw().0 as f64 * (t.t_refi().0 - t.t_rfc().0) as f64 / t.t_refi().0 as f64;
        let x_float = avail / (t.t_rc().0 as f64 * r as f64 + t.t_rfm().0 as f64);
        prop_assert!((x - x_float).abs() <= 1e-9 * x_float);
    }

    #[test]
    fn min_nentry_is_minimal(flip in 200u32..60_000, r in prop_oneof![Just(16u32), Just(64), Just(128), Just(256)], ad in prop_oneof![Just(0u32), Just(50), Just(200)]) {
        let t = TimingParams::ddr5_32ms();
        if let SearchOutcome::Found(n) = find_min_nentry(flip, r, ad, &t, BlastRadius::One).unwrap() {
            let cfg = MithrilConfig::new(n, r, ad, flip, 1).unwrap();
            prop_assert!(is_safe(&cfg, &t).safe);
            if n > 1 {
                let smaller = MithrilConfig::new(n - 1, r, ad, flip, 1).unwrap();
                prop_assert!(!is_safe(&smaller, &t).safe);
            }
        }
    }

    #[test]
    fn parfm_failure_grows_with_horizon(half in 2u32..40, r in 1u32..32, h in 1u64..200) {
        let model = |h| FailureModel { rfm_th: r, flip_th: 2 * half, horizon_intervals: h, n_banks: 1 };
        let a = fail_single_row(&model(h)).unwrap();
        let b = fail_single_row(&model(h + 1)).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b >= a - 1e-12, "P[{}] = {} > P[{}] = {}", h, a, h + 1, b);
        let harder = fail_single_row(&FailureModel { flip_th: 2 * half + 2, ..model(h) }).unwrap();
        prop_assert!(harder <= a + 1e-12);
        let sparser = fail_single_row(&FailureModel { rfm_th: r + 1, ..model(h) }).unwrap();
        prop_assert!(sparser >= a - 1e-12, "R {} gives {} but R {} gives {}", r, a, r + 1, sparser);
    }

    #[test]
    fn generators_are_deterministic(lo in 0u32..100, span in 1u32..500, len in 1u64..5_000, seed in any::<u64>()) {
        let spec = WorkloadSpec::UniformRandom { lo, hi: lo + span, length: len, seed };
        let a = spec.generate(ROWS).unwrap();
        prop_assert_eq!(&a, &spec.generate(ROWS).unwrap());
        prop_assert_eq!(a.len() as u64, len);
        prop_assert!(a.iter().all(|e| e.row.0 >= lo && e.row.0 < lo + span));
    }

    #[test]
    fn trace_round_trips(rows in small_trace(ROWS, 500)) {
        let ev = to_events(rows);
        let mut buf = Vec::new();
        write_trace(&ev, &mut buf).unwrap();
        let back = parse_trace(&buf[..], Path::new("mem"), TraceLimits::default()).unwrap();
        prop_assert_eq!(back, ev);
    }
}

fn hot_rows(seed: u64, hot: u32, len: usize) -> Vec<u32> {
    let mut s = seed;
    (0..len)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            100 + 2 * ((s >> 33) as u32 % hot)
        })
        .collect()
}

fn adaptive_cfg(n: u32, r: u32, ad: u32, t: &TimingParams) -> (MithrilConfig, f64) {
    let m = compute_m_adaptive(&MithrilConfig::new(n, r, ad, 1_000, 1).unwrap(), t).unwrap();
    (MithrilConfig::new(n, r, ad, (2.0 * m) as u32 + 1, 1).unwrap(), m)
}

/// The closed-form M' assumes the table starts a window with the same spread
/// as it would without skipping. A skipped refresh can leave up to Ad_TH of
/// spread behind, so a two-row hammer overshoots M' by a few counts.
#[test]
fn adaptive_growth_can_exceed_closed_form() {
    let t = TimingParams::synthetic();
    let (cfg, m) = adaptive_cfg(2, 4, 14, &t);
    assert_eq!(m, 409.0);
    let v = verify_mithril(
        &cfg,
        &t,
        ROWS,
        &to_events(hot_rows(8613707640405071978, 2, 3_088)),
        VerifyOptions::default(),
    )
    .unwrap();
    assert_eq!(v.count(ViolationKind::BoundM), 1);
    assert!(v.max_window_growth as f64 > m);
    assert!(v.max_window_growth as f64 <= m + 7.0);
    assert_eq!(v.count(ViolationKind::FlipThReached), 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// With adaptive refresh on, growth stays within M' plus the spread a
    /// skipped refresh can leave behind, and the safety verdict still holds.
    #[test]
    fn adaptive_growth_stays_near_bound(
        n in 2u32..8,
        r in prop_oneof![Just(4u32), Just(8), Just(16)],
        ad in 1u32..60,
        hot in 1u32..16,
        len in 2_000usize..6_000,
        seed in any::<u64>(),
    ) {
        let t = TimingParams::synthetic();
        let (cfg, m) = adaptive_cfg(n, r, ad, &t);
        prop_assert!(m >= compute_m(n, r, &t).unwrap());
        let v = verify_mithril(&cfg, &t, ROWS, &to_events(hot_rows(seed, hot, len)), VerifyOptions::default()).unwrap();
        let slack = (n - 1) as f64 * ad as f64 / n as f64;
        prop_assert!(v.max_window_growth as f64 <= m + slack, "growth {} vs M' {} + {}", v.max_window_growth, m, slack);
        prop_assert_eq!(v.count(ViolationKind::Ineq1) + v.count(ViolationKind::Ineq2), 0);
        prop_assert_eq!(v.count(ViolationKind::FlipThReached), 0);
    }
}
